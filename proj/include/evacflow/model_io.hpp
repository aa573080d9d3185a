#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "evacflow/models.hpp"
#include "evacflow/trainer.hpp"

namespace evacflow {

inline constexpr const char* kModelFormatName = "evacflow-model";
inline constexpr int kModelFormatVersion = 1;

/// Every parameter tensor of a model in a stable order: the trainable set
/// first, then (for transfer models) the frozen pretrained block.
inline ParamSet all_params(const Model& m) {
    if (m.spec.kind != ModelKind::transfer) return m.trainable();
    Model base = m;
    base.unfreeze_pretrained = false;
    ParamSet out = base.trainable();
    ParamSet froz = frozen_params(m);
    out.insert(out.end(), froz.begin(), froz.end());
    return out;
}

/// Fingerprint of the raw dataset buffers, recorded as training provenance.
inline std::uint64_t dataset_fingerprint(const EvacDataset& d) {
    std::uint64_t h = fnv1a64(d.features);
    h = fnv1a64(d.demand, h);
    h = fnv1a64(d.target, h);
    const int dims[6] = {d.l, d.p, d.n, d.c, d.c_d, d.hours};
    return fnv1a64(dims, sizeof(dims), h);
}

namespace detail {

inline nlohmann::json minmax_to_json(const MinMaxScaler& s) {
    return {{"min", s.min}, {"max", s.max}, {"fitted", s.fitted}};
}

inline MinMaxScaler minmax_from_json(const nlohmann::json& j) {
    MinMaxScaler s;
    s.min = j.at("min").get<double>();
    s.max = j.at("max").get<double>();
    s.fitted = j.at("fitted").get<bool>();
    return s;
}

inline nlohmann::json columns_to_json(const ColumnScaler& s) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : s.columns) arr.push_back(minmax_to_json(c));
    return arr;
}

inline ColumnScaler columns_from_json(const nlohmann::json& j) {
    ColumnScaler s;
    for (const auto& c : j) s.columns.push_back(minmax_from_json(c));
    return s;
}

inline nlohmann::json spec_to_json(const ModelSpec& spec) {
    return {{"kind", kind_to_string(spec.kind)},
            {"n", spec.n},
            {"l", spec.l},
            {"p", spec.p},
            {"c", spec.c},
            {"c_d", spec.c_d},
            {"hidden_size", spec.hidden_size},
            {"kernel_size", spec.kernel_size},
            {"seed", spec.seed},
            {"tt_std", spec.tt_std},
            {"kernel_threshold", spec.kernel_threshold},
            {"degree_mode",
             spec.degree_mode == DegreeMode::weighted ? "weighted" : "link_count"},
            {"target_scaler", minmax_to_json(spec.target_scaler)},
            {"feature_scaler", columns_to_json(spec.feature_scaler)},
            {"demand_scaler", columns_to_json(spec.demand_scaler)}};
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
    ModelSpec spec;
    spec.kind = kind_from_string(j.at("kind").get<std::string>());
    spec.n = j.at("n").get<int>();
    spec.l = j.at("l").get<int>();
    spec.p = j.at("p").get<int>();
    spec.c = j.at("c").get<int>();
    spec.c_d = j.at("c_d").get<int>();
    spec.hidden_size = j.at("hidden_size").get<int>();
    spec.kernel_size = j.at("kernel_size").get<int>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.tt_std = j.at("tt_std").get<double>();
    spec.kernel_threshold = j.at("kernel_threshold").get<double>();
    const std::string mode = j.at("degree_mode").get<std::string>();
    require<ArtifactError>(mode == "weighted" || mode == "link_count",
                           "unknown degree mode '" + mode + "'");
    spec.degree_mode =
        mode == "weighted" ? DegreeMode::weighted : DegreeMode::link_count;
    spec.target_scaler = minmax_from_json(j.at("target_scaler"));
    spec.feature_scaler = columns_from_json(j.at("feature_scaler"));
    spec.demand_scaler = columns_from_json(j.at("demand_scaler"));
    return spec;
}

inline nlohmann::json tensor_to_json(const Tensor& t) {
    return {{"shape", t.shape()}, {"data", t.values()}};
}

/// Covers every numeric array in the file: parameters plus, when present, the
/// static adjacency.
inline std::uint64_t artifact_checksum(const Model& m, const ParamSet& params) {
    std::uint64_t h = params_hash(params);
    if (m.static_ahat.defined()) h = fnv1a64(m.static_ahat.values(), h);
    return h;
}

}  // namespace detail

struct ModelArtifact {
    Model model;
    nlohmann::json provenance;
};

/// Serializes the model as versioned JSON. Keys are sorted and doubles use
/// shortest round-trip decimal form, so save -> load -> save is byte-stable.
inline void save_model(const Model& m, const std::string& path,
                       const nlohmann::json& provenance = nlohmann::json()) {
    nlohmann::json j;
    j["format"] = kModelFormatName;
    j["version"] = kModelFormatVersion;
    j["spec"] = detail::spec_to_json(m.spec);
    if (m.spec.kind == ModelKind::transfer)
        j["frozen_spec"] = detail::spec_to_json(m.frozen_spec);
    if (m.spec.kind == ModelKind::convlstm) j["segments"] = m.conv.segments;
    if (m.static_ahat.defined())
        j["static_ahat"] = detail::tensor_to_json(m.static_ahat);

    ParamSet params = all_params(m);
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : params)
        arr.push_back({{"name", p.name},
                       {"shape", p.value.shape()},
                       {"data", p.value.values()}});
    j["params"] = std::move(arr);
    j["checksum"] = to_hex(detail::artifact_checksum(m, params));
    if (!provenance.is_null() && !provenance.empty())
        j["provenance"] = provenance;

    std::ofstream out(path);
    require<ArtifactError>(out.good(), "cannot write model file '" + path + "'");
    out << j.dump(2) << '\n';
    require<ArtifactError>(out.good(), "write to '" + path + "' failed");
}

inline ModelArtifact load_model(const std::string& path) {
    std::ifstream in(path);
    require<ArtifactError>(in.good(), "cannot open model file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactError("'" + path + "' is not a model artifact: " +
                            std::string(e.what()));
    }

    require<ArtifactError>(j.value("format", std::string()) == kModelFormatName,
                           "'" + path + "' is not an evacflow model file");
    const int version = j.value("version", -1);
    require<ArtifactError>(version == kModelFormatVersion,
                           "unsupported artifact version " +
                               std::to_string(version) + " (this build reads version " +
                               std::to_string(kModelFormatVersion) + ")");

    ModelArtifact art;
    try {
        const ModelSpec spec = detail::spec_from_json(j.at("spec"));
        if (spec.kind == ModelKind::transfer) {
            const ModelSpec frozen = detail::spec_from_json(j.at("frozen_spec"));
            Model pre = init_params(frozen);
            art.model = init_transfer(spec, pre);
        } else if (spec.kind == ModelKind::convlstm) {
            std::vector<std::vector<int>> segments;
            if (j.contains("segments"))
                segments = j.at("segments").get<std::vector<std::vector<int>>>();
            art.model = init_params(spec, segments);
        } else {
            art.model = init_params(spec);
        }
    } catch (const ArtifactError&) {
        throw;
    } catch (const EvacflowError& e) {
        throw ArtifactError("artifact spec in '" + path + "' is invalid: " +
                            std::string(e.what()));
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactError("artifact spec in '" + path + "' is malformed: " +
                            std::string(e.what()));
    }

    ParamSet params = all_params(art.model);
    try {
        const auto& arr = j.at("params");
        require<ArtifactError>(arr.size() == params.size(),
                               "artifact lists " + std::to_string(arr.size()) +
                                   " parameters, this model kind has " +
                                   std::to_string(params.size()));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& pj = arr.at(i);
            const std::string name = pj.at("name").get<std::string>();
            require<ArtifactError>(name == params[i].name,
                                   "parameter " + std::to_string(i) + " is '" +
                                       name + "', expected '" + params[i].name +
                                       "'");
            const auto shape = pj.at("shape").get<std::vector<int>>();
            require<ArtifactError>(shape == params[i].value.shape(),
                                   "parameter '" + name + "' has shape " +
                                       shape_string(shape) + ", expected " +
                                       shape_string(params[i].value.shape()));
            auto data = pj.at("data").get<std::vector<double>>();
            require<ArtifactError>(data.size() == params[i].value.numel(),
                                   "parameter '" + name + "' carries " +
                                       std::to_string(data.size()) +
                                       " values, expected " +
                                       std::to_string(params[i].value.numel()));
            params[i].value.values() = std::move(data);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactError("parameter table in '" + path + "' is malformed: " +
                            std::string(e.what()));
    }

    if (j.contains("static_ahat")) {
        try {
            const auto shape = j.at("static_ahat").at("shape").get<std::vector<int>>();
            auto data = j.at("static_ahat").at("data").get<std::vector<double>>();
            require<ArtifactError>(
                shape == std::vector<int>({art.model.spec.n, art.model.spec.n}),
                "static adjacency has shape " + shape_string(shape) +
                    ", expected square over " + std::to_string(art.model.spec.n) +
                    " nodes");
            art.model.static_ahat = Tensor::from_data(shape, std::move(data));
        } catch (const nlohmann::json::exception& e) {
            throw ArtifactError("static adjacency in '" + path +
                                "' is malformed: " + std::string(e.what()));
        }
    }

    const std::string stored = j.value("checksum", std::string());
    require<ArtifactError>(
        stored == to_hex(detail::artifact_checksum(art.model, params)),
        "checksum mismatch in '" + path + "': file is corrupted");
    if (j.contains("provenance")) art.provenance = j.at("provenance");
    return art;
}

}  // namespace evacflow

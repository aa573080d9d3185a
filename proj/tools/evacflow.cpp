// Command-line front end: scenario generation, training, transfer, metrics,
// predictions, gradient checking, experiments, and congestion-map export.
//
// Exit codes: 0 success, 2 configuration or data problem, 3 missing or
// invalid model artifact, 4 training divergence, 5 gradient-check failure.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "evacflow/gradcheck.hpp"
#include "evacflow/model_io.hpp"
#include "evacflow/synth.hpp"
#include "evacflow/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace evacflow;

namespace {

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    require<ConfigError>(in.good(), "cannot open config file '" + path + "'");
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " +
                          std::string(e.what()));
    }
}

void write_text(const std::string& path, const std::string& text) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p);
    require<DataError>(out.good(), "cannot write '" + path + "'");
    out << text;
    require<DataError>(out.good(), "write to '" + path + "' failed");
}

std::string timestamp_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&tt));
    return buf;
}

/// Fills option targets from a JSON config file wherever the flag was not
/// given on the command line, so flags always win.
struct ConfigMerge {
    const CLI::App* cmd;
    json cfg;

    template <typename T>
    void take(const std::string& flag, const std::string& key, T& target) const {
        if (!cfg.contains(key)) return;
        const CLI::Option* opt = cmd->get_option(flag);
        if (opt->count() > 0) return;
        try {
            target = cfg.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config key '" + key + "' has the wrong type");
        }
    }
};

json metrics_to_json(const MetricsReport& rep) {
    return {{"rmse", rep.rmse},
            {"mae", rep.mae},
            {"r2", rep.r2},
            {"per_horizon_rmse", rep.per_horizon_rmse},
            {"per_node_rmse", rep.per_node_rmse}};
}

// ---------------------------------------------------------------------------
// Data directory layout, as written by `synth` and read by everything else.
// ---------------------------------------------------------------------------

struct DataBundle {
    DetectorNetwork net;
    DetectorSeries regular;
    DetectorSeries evacuation;
    std::vector<EvacZone> zones;
    ScenarioConfig scenario;
    bool has_evac = false;
};

std::string data_file(const std::string& dir, const std::string& name) {
    const std::string path = (fs::path(dir) / name).string();
    require<DataError>(fs::exists(path),
                       "missing '" + name + "' in data directory '" + dir + "'");
    return path;
}

DataBundle load_data_dir(const std::string& dir, bool need_evac) {
    require<DataError>(fs::is_directory(dir),
                       "data directory '" + dir + "' does not exist");
    DataBundle b;
    b.net = load_network(data_file(dir, "network.json"));
    b.scenario = load_scenario_config(data_file(dir, "scenario.json"));
    b.regular = load_series_csv(data_file(dir, "regular.csv"), b.net);
    if (need_evac) {
        b.evacuation = load_series_csv(data_file(dir, "evacuation.csv"), b.net);
        b.zones = load_zones(data_file(dir, "zones.json"));
        b.has_evac = true;
    }
    return b;
}

struct EvacContext {
    RegularPipeline reg;
    EvacPipeline evac;
};

RegularPipeline regular_pipeline(const DataBundle& b, std::uint64_t seed) {
    return build_regular_pipeline(b.net, b.regular, 6, 6,
                                  regular_split_ratios(), seed, {},
                                  b.scenario.capacity_per_lane);
}

/// Rebuilds the evacuation dataset with the graph parameters the given model
/// was trained with, so its adjacency inputs match training time.
EvacContext evac_pipeline_for(const DataBundle& b, const ModelSpec& spec,
                              std::uint64_t seed) {
    EvacContext ctx{regular_pipeline(b, seed), {}};
    GraphConfig gcfg = ctx.reg.graph_cfg;
    gcfg.threshold = spec.kernel_threshold;
    gcfg.degree_mode = spec.degree_mode;
    const double tt_std = spec.tt_std > 0.0 ? spec.tt_std : ctx.reg.tt_std;
    ctx.evac = build_evac_pipeline(ctx.reg.net, ctx.reg.series, b.evacuation,
                                   b.zones, b.scenario.landfall_hour, 6, 6,
                                   evacuation_split_ratios(), seed, gcfg,
                                   tt_std, b.scenario.capacity_per_lane);
    return ctx;
}

const std::vector<int>& split_of(const EvacDataset& d, const std::string& name) {
    if (name == "train") return d.split.train;
    if (name == "val") return d.split.val;
    if (name == "test") return d.split.test;
    throw ConfigError("unknown split '" + name + "' (train, val, test)");
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthOpts {
    std::string config_path;
    std::string out = "data";
    std::uint64_t seed = 0;
    int nodes = 0;
};

int cmd_synth(const CLI::App* cmd, const SynthOpts& opt) {
    ScenarioConfig cfg;
    if (!opt.config_path.empty())
        cfg = scenario_from_json(read_json_file(opt.config_path));
    if (cmd->get_option("--seed")->count() > 0) cfg.seed = opt.seed;
    if (cmd->get_option("--nodes")->count() > 0) {
        require<ConfigError>(opt.nodes >= 1 &&
                                 opt.nodes % cfg.corridors == 0,
                             "--nodes must be a positive multiple of the " +
                                 std::to_string(cfg.corridors) + " corridors");
        cfg.nodes_per_corridor = opt.nodes / cfg.corridors;
    }

    SyntheticScenario sc = generate_synthetic(cfg);
    fs::create_directories(opt.out);
    save_network(sc.net, (fs::path(opt.out) / "network.json").string());
    save_zones((fs::path(opt.out) / "zones.json").string(), sc.zones);
    save_series_csv((fs::path(opt.out) / "regular.csv").string(), sc.net,
                    sc.regular);
    save_series_csv((fs::path(opt.out) / "evacuation.csv").string(), sc.net,
                    sc.evacuation);
    write_text((fs::path(opt.out) / "scenario.json").string(),
               scenario_to_json(sc.config).dump(2) + "\n");

    std::cout << "wrote scenario: " << sc.net.size() << " detectors, "
              << sc.regular.hours << " regular + " << sc.evacuation.hours
              << " evacuation hours, landfall at hour "
              << sc.config.landfall_hour << " -> " << opt.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOpts {
    std::string config_path;
    std::string data = "data";
    std::string out = "run";
    std::string model = "dgcnlstm";
    std::uint64_t seed = 1;
    int epochs = 70;
    double lr = 0.001;
    int batch = 16;
    int hidden = 0;
    bool no_timestamps = false;
};

int cmd_train(const TrainOpts& opt) {
    const ModelKind kind = kind_from_string(opt.model);
    require<ConfigError>(kind != ModelKind::transfer,
                         "transfer models are trained with the 'transfer' "
                         "subcommand (they need a pretrained artifact)");
    DataBundle bundle = load_data_dir(opt.data, false);
    RegularPipeline pipe = regular_pipeline(bundle, opt.seed);

    ModelSpec spec;
    spec.kind = kind;
    spec.n = pipe.net.size();
    spec.l = pipe.data.l;
    spec.p = pipe.data.p;
    spec.c = pipe.data.c;
    spec.c_d = 0;
    spec.hidden_size = opt.hidden;
    spec.seed = opt.seed;
    spec.tt_std = pipe.tt_std;
    spec.kernel_threshold = pipe.graph_cfg.threshold;
    spec.degree_mode = pipe.graph_cfg.degree_mode;

    Model model = kind == ModelKind::convlstm
                      ? init_params(spec, corridor_segments(pipe.net))
                      : init_params(spec);

    TrainConfig cfg = regular_train_config();
    cfg.lr = opt.lr;
    cfg.epochs = opt.epochs;
    cfg.batch_size = opt.batch;
    cfg.seed = opt.seed;
    FitResult fitres = fit(model, pipe.data, cfg);
    const MetricsReport val = evaluate(model, pipe.data, pipe.data.split.val);
    const MetricsReport test = evaluate(model, pipe.data, pipe.data.split.test);

    json prov = {{"seed", opt.seed},
                 {"epochs", opt.epochs},
                 {"lr", opt.lr},
                 {"batch_size", opt.batch},
                 {"best_epoch", fitres.best_epoch + 1},
                 {"best_val_loss", fitres.best_val},
                 {"data_fingerprint", to_hex(dataset_fingerprint(pipe.data))},
                 {"test_rmse", test.rmse}};
    if (!opt.no_timestamps) prov["trained_at"] = timestamp_now();

    fs::create_directories(opt.out);
    save_model(model, (fs::path(opt.out) / "model.json").string(), prov);
    write_text((fs::path(opt.out) / "loss_history.csv").string(),
               loss_history_csv(fitres));
    json mj = {{"model", opt.model},
               {"val", metrics_to_json(val)},
               {"test", metrics_to_json(test)}};
    if (!opt.no_timestamps) mj["generated_at"] = timestamp_now();
    write_text((fs::path(opt.out) / "metrics.json").string(), mj.dump(2) + "\n");

    std::cout << "trained " << opt.model << ": best val loss "
              << format_double(fitres.best_val) << " (epoch "
              << fitres.best_epoch + 1 << "), test rmse "
              << format_double(test.rmse) << ", r2 " << format_double(test.r2)
              << " -> " << opt.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// transfer
// ---------------------------------------------------------------------------

struct TransferOpts {
    std::string config_path;
    std::string data = "data";
    std::string out = "run_transfer";
    std::string pretrained;
    std::uint64_t seed = 1;
    int epochs = 150;
    double lr = 0.001;
    int batch = 16;
    int hidden = 0;
    bool no_timestamps = false;
};

int cmd_transfer(const TransferOpts& opt) {
    require<ConfigError>(!opt.pretrained.empty(),
                         "--pretrained model artifact is required");
    ModelArtifact pre = load_model(opt.pretrained);
    DataBundle bundle = load_data_dir(opt.data, true);
    EvacContext ctx = evac_pipeline_for(bundle, pre.model.spec, opt.seed);

    ModelSpec spec = pre.model.spec;
    spec.kind = ModelKind::transfer;
    spec.c_d = ctx.evac.data.c_d;
    spec.hidden_size = opt.hidden;
    spec.seed = opt.seed;
    if (spec.hidden_size == 0) spec.hidden_size = spec.n * spec.p;

    Model model = init_transfer(spec, pre.model);
    TrainConfig cfg = transfer_train_config();
    cfg.lr = opt.lr;
    cfg.epochs = opt.epochs;
    cfg.batch_size = opt.batch;
    cfg.seed = opt.seed;
    FitResult fitres = fit_transfer(model, ctx.evac.data, cfg);
    const MetricsReport test =
        evaluate(model, ctx.evac.data, ctx.evac.data.split.test);
    const MetricsReport direct =
        evaluate(pre.model, ctx.evac.data, ctx.evac.data.split.test);

    json prov = {{"seed", opt.seed},
                 {"epochs", opt.epochs},
                 {"pretrained", opt.pretrained},
                 {"best_epoch", fitres.best_epoch + 1},
                 {"best_val_loss", fitres.best_val},
                 {"data_fingerprint",
                  to_hex(dataset_fingerprint(ctx.evac.data))},
                 {"test_rmse", test.rmse}};
    if (!opt.no_timestamps) prov["trained_at"] = timestamp_now();

    fs::create_directories(opt.out);
    save_model(model, (fs::path(opt.out) / "transfer_model.json").string(),
               prov);
    write_text((fs::path(opt.out) / "loss_history.csv").string(),
               loss_history_csv(fitres));
    json mj = {{"transfer", metrics_to_json(test)},
               {"direct_pretrained", metrics_to_json(direct)}};
    if (!opt.no_timestamps) mj["generated_at"] = timestamp_now();
    write_text((fs::path(opt.out) / "metrics.json").string(), mj.dump(2) + "\n");

    std::cout << "transfer model: test rmse " << format_double(test.rmse)
              << " r2 " << format_double(test.r2)
              << " | pretrained applied directly: rmse "
              << format_double(direct.rmse) << " -> " << opt.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate / predict
// ---------------------------------------------------------------------------

struct EvalOpts {
    std::string config_path;
    std::string data = "data";
    std::string out = "eval";
    std::string model_path;
    std::string phase = "regular";
    std::string split = "test";
    std::uint64_t seed = 1;
    bool no_timestamps = false;
};

const EvacDataset& phase_dataset(const std::string& phase,
                                 const DataBundle& bundle,
                                 const ModelSpec& spec, std::uint64_t seed,
                                 RegularPipeline& reg_store,
                                 EvacContext& evac_store) {
    if (phase == "regular") {
        reg_store = regular_pipeline(bundle, seed);
        return reg_store.data;
    }
    if (phase == "evacuation") {
        evac_store = evac_pipeline_for(bundle, spec, seed);
        return evac_store.evac.data;
    }
    throw ConfigError("unknown phase '" + phase + "' (regular, evacuation)");
}

int cmd_evaluate(const EvalOpts& opt) {
    require<ConfigError>(!opt.model_path.empty(), "--model artifact is required");
    ModelArtifact art = load_model(opt.model_path);
    DataBundle bundle = load_data_dir(opt.data, opt.phase == "evacuation");
    RegularPipeline reg;
    EvacContext evac;
    const EvacDataset& data =
        phase_dataset(opt.phase, bundle, art.model.spec, opt.seed, reg, evac);
    const MetricsReport rep = evaluate(art.model, data, split_of(data, opt.split));

    fs::create_directories(opt.out);
    json mj = {{"model", kind_to_string(art.model.spec.kind)},
               {"phase", opt.phase},
               {"split", opt.split},
               {"metrics", metrics_to_json(rep)}};
    if (!opt.no_timestamps) mj["generated_at"] = timestamp_now();
    write_text((fs::path(opt.out) / "metrics.json").string(), mj.dump(2) + "\n");
    write_text((fs::path(opt.out) / "metrics.csv").string(),
               std::string("model,phase,split,rmse,mae,r2\n") +
                   kind_to_string(art.model.spec.kind) + "," + opt.phase + "," +
                   opt.split + "," + format_double(rep.rmse) + "," +
                   format_double(rep.mae) + "," + format_double(rep.r2) + "\n");

    std::cout << opt.phase << "/" << opt.split << ": rmse "
              << format_double(rep.rmse) << " mae " << format_double(rep.mae)
              << " r2 " << format_double(rep.r2) << "\n";
    return 0;
}

int cmd_predict(const EvalOpts& opt) {
    require<ConfigError>(!opt.model_path.empty(), "--model artifact is required");
    ModelArtifact art = load_model(opt.model_path);
    DataBundle bundle = load_data_dir(opt.data, opt.phase == "evacuation");
    RegularPipeline reg;
    EvacContext evac;
    const EvacDataset& data =
        phase_dataset(opt.phase, bundle, art.model.spec, opt.seed, reg, evac);
    const std::vector<int>& windows = split_of(data, opt.split);
    require<DataError>(!windows.empty(), "split '" + opt.split + "' is empty");

    const Model& m = art.model;
    NoRecordScope quiet;
    std::string csv = "sample,horizon_step,node_id,flow_pred,flow_true\n";
    const DetectorNetwork& net =
        opt.phase == "regular" ? reg.net : evac.reg.net;
    for (std::size_t s = 0; s < windows.size(); ++s) {
        ModelInput in = model_input(m, data, windows[s]);
        Tensor out = model_forward_batch(m, {&in});
        const auto& ov = out.values();
        const auto tv = data.target_raw(windows[s]);
        for (int step = 0; step < m.spec.p; ++step)
            for (int i = 0; i < m.spec.n; ++i) {
                const std::size_t k =
                    static_cast<std::size_t>(step) * m.spec.n + i;
                csv += std::to_string(s) + "," + std::to_string(step + 1) + "," +
                       std::to_string(net.nodes()[static_cast<std::size_t>(i)].id) +
                       "," + format_double(m.spec.target_scaler.invert(ov[k])) +
                       "," + format_double(tv[k]) + "\n";
            }
    }
    fs::create_directories(opt.out);
    write_text((fs::path(opt.out) / "predictions.csv").string(), csv);
    std::cout << "wrote " << windows.size() << " samples ("
              << windows.size() * static_cast<std::size_t>(m.spec.p) * m.spec.n
              << " rows) -> " << opt.out << "/predictions.csv\n";
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradcheckOpts {
    std::uint64_t seed = 1;
    double tol = 1e-4;
};

Tensor small_random_ahat(Rng& rng, int n) {
    std::vector<double> abar(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        abar[static_cast<std::size_t>(i) * n + i] = 1.0 + rng.uniform();
        for (int k = i + 1; k < n; ++k) {
            const double w = rng.uniform() < 0.7 ? rng.uniform() : 0.0;
            abar[static_cast<std::size_t>(i) * n + k] = w;
            abar[static_cast<std::size_t>(k) * n + i] = w;
        }
    }
    return Tensor::from_data({n, n}, normalize(abar, n));
}

int cmd_gradcheck(const GradcheckOpts& opt) {
    const int n = 5, l = 2, p = 2, c = 3, c_d = 3;
    bool all_ok = true;
    for (ModelKind kind :
         {ModelKind::lstm, ModelKind::convlstm, ModelKind::gcnlstm,
          ModelKind::dgcnlstm, ModelKind::transfer}) {
        ModelSpec spec;
        spec.kind = kind;
        spec.n = n;
        spec.l = l;
        spec.p = p;
        spec.c = c;
        spec.c_d = c_d;
        spec.hidden_size = 8;
        spec.seed = mix_seed(opt.seed, static_cast<std::uint64_t>(kind));
        Model model;
        if (kind == ModelKind::transfer) {
            ModelSpec pre_spec = spec;
            pre_spec.kind = ModelKind::dgcnlstm;
            pre_spec.seed = mix_seed(spec.seed, 100);
            model = init_transfer(spec, init_params(pre_spec));
        } else {
            model = init_params(spec);
        }

        Rng rng(mix_seed(opt.seed, 0x67636bULL + static_cast<std::uint64_t>(kind)));
        std::vector<ModelInput> inputs(2);
        for (auto& in : inputs)
            for (int t = 0; t < l; ++t) {
                std::vector<double> x(static_cast<std::size_t>(n) * c);
                // Positive activations keep the graph convolution's rectifier
                // away from its kink during finite differencing.
                for (auto& v : x) v = rng.uniform(0.2, 1.0);
                in.x.push_back(Tensor::from_data({n, c}, std::move(x)));
                in.ahat.push_back(small_random_ahat(rng, n));
                std::vector<double> xd(static_cast<std::size_t>(n) * c_d);
                for (auto& v : xd) v = rng.uniform(-0.8, 0.8);
                in.x_demand.push_back(Tensor::from_data({n, c_d}, std::move(xd)));
            }
        std::vector<double> tv(2 * static_cast<std::size_t>(p) * n);
        for (auto& v : tv) v = rng.uniform(-0.9, 0.9);
        Tensor target = Tensor::from_data({2, p * n}, std::move(tv));

        ParamSet params = model.trainable();
        auto loss_fn = [&]() {
            return mse_loss(
                model_forward_batch(model, {&inputs[0], &inputs[1]}), target);
        };
        GradCheckReport report = gradcheck(loss_fn, params, 1e-5, opt.tol);
        std::cout << kind_to_string(kind) << ": max rel err "
                  << format_double(report.max_rel_err)
                  << (report.passed() ? " ok" : " FAIL") << "\n";
        if (!report.passed()) {
            const GradCheckEntry& worst = report.worst();
            std::cerr << "worst parameter: " << worst.name << "["
                      << worst.worst_index << "] analytic "
                      << format_double(worst.analytic_at_worst) << " numeric "
                      << format_double(worst.numeric_at_worst) << " rel err "
                      << format_double(worst.max_rel_err) << "\n";
            all_ok = false;
        }
    }
    if (!all_ok) return 5;
    std::cout << "gradient check passed for every model kind (tol "
              << format_double(opt.tol) << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// experiment
// ---------------------------------------------------------------------------

struct ExperimentOpts {
    std::string config_path;
    std::string data = "data";
    std::string out = "experiment";
    std::string models = "lstm,dgcnlstm";
    std::uint64_t seed = 1;
    int seeds = 10;
    int epochs = 70;
    double lr = 0.001;
    int batch = 16;
    int hidden = 0;
    int jobs = 1;
    bool no_timestamps = false;
};

int cmd_experiment(const ExperimentOpts& opt) {
    DataBundle bundle = load_data_dir(opt.data, false);
    RegularPipeline pipe = regular_pipeline(bundle, opt.seed);
    if (opt.jobs > 1)
        std::cout << "note: running seeds sequentially; results are merged in "
                     "seed order either way\n";

    std::vector<ModelSpec> specs;
    std::stringstream ss(opt.models);
    std::string token;
    while (std::getline(ss, token, ',')) {
        if (token.empty()) continue;
        ModelSpec spec;
        spec.kind = kind_from_string(token);
        spec.n = pipe.net.size();
        spec.l = pipe.data.l;
        spec.p = pipe.data.p;
        spec.c = pipe.data.c;
        spec.c_d = 0;
        spec.hidden_size = opt.hidden;
        spec.seed = opt.seed;
        spec.tt_std = pipe.tt_std;
        spec.kernel_threshold = pipe.graph_cfg.threshold;
        spec.degree_mode = pipe.graph_cfg.degree_mode;
        specs.push_back(spec);
    }
    require<ConfigError>(!specs.empty(), "--models lists no models");

    TrainConfig cfg = regular_train_config();
    cfg.lr = opt.lr;
    cfg.epochs = opt.epochs;
    cfg.batch_size = opt.batch;
    cfg.seed = opt.seed;
    ExperimentResult result = run_experiment(
        specs, pipe.data, cfg, opt.seeds, corridor_segments(pipe.net));

    fs::create_directories(opt.out);
    write_text((fs::path(opt.out) / "metrics.csv").string(),
               experiment_csv(result));
    json summary = experiment_summary_json(result);
    if (!opt.no_timestamps) summary["generated_at"] = timestamp_now();
    write_text((fs::path(opt.out) / "summary.json").string(),
               summary.dump(2) + "\n");
    for (const auto& run : result.runs) {
        if (!run.ok) continue;
        FitResult hist;
        hist.history = run.history;
        write_text((fs::path(opt.out) /
                    ("loss_" + run.model + "_" + std::to_string(run.seed) + ".csv"))
                       .string(),
                   loss_history_csv(hist));
    }

    for (const auto& agg : result.aggregates)
        std::cout << agg.model << ": rmse " << format_double(agg.rmse.mean)
                  << " +/- " << format_double(agg.rmse.stddev) << " ("
                  << agg.rmse.runs << "/" << opt.seeds << " runs)\n";
    for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// congestion-map
// ---------------------------------------------------------------------------

struct MapOpts {
    std::string config_path;
    std::string data = "data";
    std::string out = "map";
    std::string model_path;
    std::vector<int> hours;
    std::uint64_t seed = 1;
};

int cmd_congestion_map(const MapOpts& opt) {
    require<ConfigError>(!opt.model_path.empty(), "--model artifact is required");
    require<ConfigError>(!opt.hours.empty(),
                         "at least one --hour must be requested");
    ModelArtifact art = load_model(opt.model_path);
    DataBundle bundle = load_data_dir(opt.data, true);
    EvacContext ctx = evac_pipeline_for(bundle, art.model.spec, opt.seed);
    const EvacDataset& data = ctx.evac.data;
    const DetectorNetwork& net = ctx.reg.net;
    const Model& m = art.model;

    struct Row {
        int hour;
        std::string corridor;
        double milepost;
        int node_id;
        double lat, lon, flow;
    };
    std::vector<Row> rows;
    NoRecordScope quiet;
    for (int hour : opt.hours) {
        int window = -1;
        for (int w = 0; w < data.window_count(); ++w)
            if (data.start_hour + data.starts[w] + data.l == hour) {
                window = w;
                break;
            }
        const int lo = data.start_hour + data.l;
        const int hi = data.start_hour + data.hours - data.p;
        require<DataError>(window >= 0,
                           "hour " + std::to_string(hour) +
                               " is outside the forecastable range [" +
                               std::to_string(lo) + ", " + std::to_string(hi) +
                               "]");
        ModelInput in = model_input(m, data, window);
        Tensor out = model_forward_batch(m, {&in});
        const auto& ov = out.values();
        for (int step = 0; step < m.spec.p; ++step)
            for (int i = 0; i < m.spec.n; ++i) {
                const DetectorNode& node = net.nodes()[static_cast<std::size_t>(i)];
                rows.push_back({hour + step, node.corridor, node.milepost,
                                node.id, node.lat, node.lon,
                                m.spec.target_scaler.invert(
                                    ov[static_cast<std::size_t>(step) * m.spec.n + i])});
            }
    }
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        if (a.hour != b.hour) return a.hour < b.hour;
        if (a.corridor != b.corridor) return a.corridor < b.corridor;
        if (a.milepost != b.milepost) return a.milepost < b.milepost;
        return a.node_id < b.node_id;
    });

    std::string csv = "hour,node_id,lat,lon,corridor,milepost,flow_pred\n";
    for (const Row& r : rows)
        csv += std::to_string(r.hour) + "," + std::to_string(r.node_id) + "," +
               format_double(r.lat) + "," + format_double(r.lon) + "," +
               r.corridor + "," + format_double(r.milepost) + "," +
               format_double(r.flow) + "\n";
    fs::create_directories(opt.out);
    write_text((fs::path(opt.out) / "congestion_map.csv").string(), csv);
    std::cout << "wrote " << rows.size() << " rows -> " << opt.out
              << "/congestion_map.csv\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"evacuation traffic forecasting toolkit"};
    app.require_subcommand(1);
    int rc = 0;

    SynthOpts synth_opt;
    CLI::App* synth = app.add_subcommand(
        "synth", "generate a seeded synthetic scenario dataset");
    synth->add_option("--config", synth_opt.config_path,
                      "scenario config JSON");
    synth->add_option("--out", synth_opt.out, "output directory");
    synth->add_option("--seed", synth_opt.seed, "scenario seed");
    synth->add_option("--nodes", synth_opt.nodes, "total detector count");
    synth->callback([&] { rc = cmd_synth(synth, synth_opt); });

    TrainOpts train_opt;
    CLI::App* train = app.add_subcommand(
        "train", "train a forecasting model on the regular phase");
    train->add_option("--config", train_opt.config_path, "run config JSON");
    train->add_option("--data", train_opt.data, "data directory from synth");
    train->add_option("--out", train_opt.out, "output directory");
    train->add_option("--model", train_opt.model,
                      "lstm | convlstm | gcnlstm | dgcnlstm");
    train->add_option("--seed", train_opt.seed, "training seed");
    train->add_option("--epochs", train_opt.epochs, "training epochs");
    train->add_option("--lr", train_opt.lr, "learning rate");
    train->add_option("--batch", train_opt.batch, "mini-batch size");
    train->add_option("--hidden", train_opt.hidden,
                      "hidden width (0 = nodes x horizon)");
    train->add_flag("--no-timestamps", train_opt.no_timestamps,
                    "omit wall-clock fields for byte-stable outputs");
    train->callback([&] {
        ConfigMerge merge{train, train_opt.config_path.empty()
                                     ? json::object()
                                     : read_json_file(train_opt.config_path)};
        merge.take("--data", "data", train_opt.data);
        merge.take("--out", "out", train_opt.out);
        merge.take("--model", "model", train_opt.model);
        merge.take("--seed", "seed", train_opt.seed);
        merge.take("--epochs", "epochs", train_opt.epochs);
        merge.take("--lr", "lr", train_opt.lr);
        merge.take("--batch", "batch", train_opt.batch);
        merge.take("--hidden", "hidden", train_opt.hidden);
        rc = cmd_train(train_opt);
    });

    TransferOpts transfer_opt;
    CLI::App* transfer = app.add_subcommand(
        "transfer", "train the gated transfer model on the evacuation phase");
    transfer->add_option("--config", transfer_opt.config_path, "run config JSON");
    transfer->add_option("--data", transfer_opt.data, "data directory");
    transfer->add_option("--out", transfer_opt.out, "output directory");
    transfer->add_option("--pretrained", transfer_opt.pretrained,
                         "regular-phase model artifact");
    transfer->add_option("--seed", transfer_opt.seed, "training seed");
    transfer->add_option("--epochs", transfer_opt.epochs, "training epochs");
    transfer->add_option("--lr", transfer_opt.lr, "learning rate");
    transfer->add_option("--batch", transfer_opt.batch, "mini-batch size");
    transfer->add_option("--hidden", transfer_opt.hidden,
                         "demand branch hidden width");
    transfer->add_flag("--no-timestamps", transfer_opt.no_timestamps,
                       "omit wall-clock fields for byte-stable outputs");
    transfer->callback([&] {
        ConfigMerge merge{transfer,
                          transfer_opt.config_path.empty()
                              ? json::object()
                              : read_json_file(transfer_opt.config_path)};
        merge.take("--data", "data", transfer_opt.data);
        merge.take("--out", "out", transfer_opt.out);
        merge.take("--pretrained", "pretrained", transfer_opt.pretrained);
        merge.take("--seed", "seed", transfer_opt.seed);
        merge.take("--epochs", "epochs", transfer_opt.epochs);
        merge.take("--lr", "lr", transfer_opt.lr);
        merge.take("--batch", "batch", transfer_opt.batch);
        merge.take("--hidden", "hidden", transfer_opt.hidden);
        rc = cmd_transfer(transfer_opt);
    });

    EvalOpts eval_opt;
    CLI::App* eval_cmd = app.add_subcommand(
        "evaluate", "score a model artifact on a dataset split");
    eval_cmd->add_option("--config", eval_opt.config_path, "run config JSON");
    eval_cmd->add_option("--data", eval_opt.data, "data directory");
    eval_cmd->add_option("--out", eval_opt.out, "output directory");
    eval_cmd->add_option("--model", eval_opt.model_path, "model artifact");
    eval_cmd->add_option("--phase", eval_opt.phase, "regular | evacuation");
    eval_cmd->add_option("--split", eval_opt.split, "train | val | test");
    eval_cmd->add_option("--seed", eval_opt.seed, "split seed");
    eval_cmd->add_flag("--no-timestamps", eval_opt.no_timestamps,
                       "omit wall-clock fields for byte-stable outputs");
    eval_cmd->callback([&] {
        ConfigMerge merge{eval_cmd, eval_opt.config_path.empty()
                                        ? json::object()
                                        : read_json_file(eval_opt.config_path)};
        merge.take("--data", "data", eval_opt.data);
        merge.take("--out", "out", eval_opt.out);
        merge.take("--model", "model", eval_opt.model_path);
        merge.take("--phase", "phase", eval_opt.phase);
        merge.take("--split", "split", eval_opt.split);
        merge.take("--seed", "seed", eval_opt.seed);
        rc = cmd_evaluate(eval_opt);
    });

    EvalOpts predict_opt;
    predict_opt.out = "predictions";
    CLI::App* predict = app.add_subcommand(
        "predict", "write per-sample flow predictions as CSV");
    predict->add_option("--config", predict_opt.config_path, "run config JSON");
    predict->add_option("--data", predict_opt.data, "data directory");
    predict->add_option("--out", predict_opt.out, "output directory");
    predict->add_option("--model", predict_opt.model_path, "model artifact");
    predict->add_option("--phase", predict_opt.phase, "regular | evacuation");
    predict->add_option("--split", predict_opt.split, "train | val | test");
    predict->add_option("--seed", predict_opt.seed, "split seed");
    predict->callback([&] {
        ConfigMerge merge{predict, predict_opt.config_path.empty()
                                       ? json::object()
                                       : read_json_file(predict_opt.config_path)};
        merge.take("--data", "data", predict_opt.data);
        merge.take("--out", "out", predict_opt.out);
        merge.take("--model", "model", predict_opt.model_path);
        merge.take("--phase", "phase", predict_opt.phase);
        merge.take("--split", "split", predict_opt.split);
        merge.take("--seed", "seed", predict_opt.seed);
        rc = cmd_predict(predict_opt);
    });

    GradcheckOpts grad_opt;
    CLI::App* grad = app.add_subcommand(
        "gradcheck", "finite-difference gradient check for every model kind");
    grad->add_option("--seed", grad_opt.seed, "instance seed");
    grad->add_option("--tol", grad_opt.tol, "relative error tolerance");
    grad->callback([&] { rc = cmd_gradcheck(grad_opt); });

    ExperimentOpts exp_opt;
    CLI::App* exp = app.add_subcommand(
        "experiment", "multi-seed model comparison on the regular phase");
    exp->add_option("--config", exp_opt.config_path, "run config JSON");
    exp->add_option("--data", exp_opt.data, "data directory");
    exp->add_option("--out", exp_opt.out, "output directory");
    exp->add_option("--models", exp_opt.models, "comma-separated model kinds");
    exp->add_option("--seed", exp_opt.seed, "base seed");
    exp->add_option("--seeds", exp_opt.seeds, "number of seeded runs");
    exp->add_option("--epochs", exp_opt.epochs, "training epochs per run");
    exp->add_option("--lr", exp_opt.lr, "learning rate");
    exp->add_option("--batch", exp_opt.batch, "mini-batch size");
    exp->add_option("--hidden", exp_opt.hidden,
                    "hidden width (0 = nodes x horizon)");
    exp->add_option("--jobs", exp_opt.jobs, "worker cap (runs stay seed-ordered)");
    exp->add_flag("--no-timestamps", exp_opt.no_timestamps,
                  "omit wall-clock fields for byte-stable outputs");
    exp->callback([&] {
        ConfigMerge merge{exp, exp_opt.config_path.empty()
                                   ? json::object()
                                   : read_json_file(exp_opt.config_path)};
        merge.take("--data", "data", exp_opt.data);
        merge.take("--out", "out", exp_opt.out);
        merge.take("--models", "models", exp_opt.models);
        merge.take("--seed", "seed", exp_opt.seed);
        merge.take("--seeds", "seeds", exp_opt.seeds);
        merge.take("--epochs", "epochs", exp_opt.epochs);
        merge.take("--lr", "lr", exp_opt.lr);
        merge.take("--batch", "batch", exp_opt.batch);
        merge.take("--hidden", "hidden", exp_opt.hidden);
        merge.take("--jobs", "jobs", exp_opt.jobs);
        rc = cmd_experiment(exp_opt);
    });

    MapOpts map_opt;
    CLI::App* cmap = app.add_subcommand(
        "congestion-map", "export predicted flows with coordinates as CSV");
    cmap->add_option("--config", map_opt.config_path, "run config JSON");
    cmap->add_option("--data", map_opt.data, "data directory");
    cmap->add_option("--out", map_opt.out, "output directory");
    cmap->add_option("--model", map_opt.model_path, "model artifact");
    cmap->add_option("--hour", map_opt.hours,
                     "forecast start hour (repeatable)");
    cmap->add_option("--seed", map_opt.seed, "split seed");
    cmap->callback([&] {
        ConfigMerge merge{cmap, map_opt.config_path.empty()
                                    ? json::object()
                                    : read_json_file(map_opt.config_path)};
        merge.take("--data", "data", map_opt.data);
        merge.take("--out", "out", map_opt.out);
        merge.take("--model", "model", map_opt.model_path);
        merge.take("--hour", "hours", map_opt.hours);
        merge.take("--seed", "seed", map_opt.seed);
        rc = cmd_congestion_map(map_opt);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ArtifactError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const EvacflowError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
    return rc;
}

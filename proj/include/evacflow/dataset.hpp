#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "evacflow/common.hpp"
#include "evacflow/data.hpp"
#include "evacflow/features.hpp"
#include "evacflow/graph.hpp"
#include "evacflow/models.hpp"
#include "evacflow/scaling.hpp"
#include "evacflow/synth.hpp"

namespace evacflow {

// ---------------------------------------------------------------------------
// Windowed samples over a feature frame. The dataset stores raw (unscaled)
// values; scalers travel with each model so two models with different
// training histories can read the same data consistently.
// ---------------------------------------------------------------------------

struct SplitRatios {
    double train = 0.9;
    double val = 0.05;
    double test = 0.05;

    void validate() const {
        require<ConfigError>(train > 0.0 && val >= 0.0 && test >= 0.0,
                             "split ratios must be nonnegative with some train");
        require<ConfigError>(std::abs(train + val + test - 1.0) <= 1e-9,
                             "split ratios must sum to 1");
    }
};

inline SplitRatios regular_split_ratios() { return {0.90, 0.05, 0.05}; }
inline SplitRatios evacuation_split_ratios() { return {0.80, 0.10, 0.10}; }

struct SplitIndices {
    std::vector<int> train, val, test;
};

/// Seeded shuffle-then-partition split over window indices.
inline SplitIndices split_windows(int count, const SplitRatios& ratios,
                                  std::uint64_t seed) {
    ratios.validate();
    require<DataError>(count >= 3, "need at least 3 windows to split");
    std::vector<int> order(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) order[i] = i;
    Rng rng(mix_seed(seed, 0x73706c6974ULL));
    rng.shuffle(order);
    const int n_val = static_cast<int>(std::floor(count * ratios.val));
    const int n_test = static_cast<int>(std::floor(count * ratios.test));
    const int n_train = count - n_val - n_test;
    SplitIndices s;
    s.train.assign(order.begin(), order.begin() + n_train);
    s.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    s.test.assign(order.begin() + n_train + n_val, order.end());
    return s;
}

struct EvacDataset {
    int l = 6, p = 6;
    int n = 0;
    int c = 0;    // regular feature width
    int c_d = 0;  // demand feature width, 0 when absent
    int hours = 0;
    int start_hour = 0;
    std::vector<double> features;  // hours*n*c, raw
    std::vector<double> demand;    // hours*n*c_d, raw
    std::vector<double> target;    // hours*n raw flows (vehicles/h)
    std::vector<Tensor> ahat;      // per hour; empty when no graph attached
    std::vector<int> starts;       // window start rows
    SplitIndices split;

    int window_count() const { return static_cast<int>(starts.size()); }

    std::size_t fat(int t, int i, int f) const {
        return (static_cast<std::size_t>(t) * n + i) * c + f;
    }
    std::size_t dat(int t, int i, int f) const {
        return (static_cast<std::size_t>(t) * n + i) * c_d + f;
    }

    /// Inputs for window w, scaled with the caller's scalers (pass nullptr to
    /// read raw values). Adjacency tensors are shared, not copied.
    ModelInput input(int w, const ColumnScaler* feature_scaler,
                     const ColumnScaler* demand_scaler = nullptr) const {
        require<ContractError>(w >= 0 && w < window_count(), "window out of range");
        const int s = starts[w];
        ModelInput in;
        for (int t = s; t < s + l; ++t) {
            std::vector<double> row(features.begin() + fat(t, 0, 0),
                                    features.begin() + fat(t, 0, 0) +
                                        static_cast<std::size_t>(n) * c);
            if (feature_scaler) feature_scaler->transform_rows(row);
            in.x.push_back(Tensor::from_data({n, c}, std::move(row)));
            if (!ahat.empty()) in.ahat.push_back(ahat[t]);
            if (c_d > 0) {
                std::vector<double> drow(demand.begin() + dat(t, 0, 0),
                                         demand.begin() + dat(t, 0, 0) +
                                             static_cast<std::size_t>(n) * c_d);
                if (demand_scaler) demand_scaler->transform_rows(drow);
                in.x_demand.push_back(Tensor::from_data({n, c_d}, std::move(drow)));
            }
        }
        return in;
    }

    /// Raw target flows for window w, p*n row-major.
    std::vector<double> target_raw(int w) const {
        require<ContractError>(w >= 0 && w < window_count(), "window out of range");
        const int s = starts[w];
        return {target.begin() + static_cast<std::size_t>(s + l) * n,
                target.begin() + static_cast<std::size_t>(s + l + p) * n};
    }

    Tensor target_scaled(int w, const MinMaxScaler& scaler) const {
        std::vector<double> raw = target_raw(w);
        for (auto& v : raw) v = scaler.transform(v);
        return Tensor::from_data({1, p * n}, std::move(raw));
    }

    ColumnScaler fit_feature_scaler() const {
        return fit_rows_scaler(features, c);
    }
    ColumnScaler fit_demand_scaler() const {
        require<ContractError>(c_d > 0, "dataset carries no demand features");
        return fit_rows_scaler(demand, c_d);
    }

    MinMaxScaler fit_target_scaler() const {
        std::vector<double> cells;
        for (int w : split.train) {
            const auto t = target_raw(w);
            cells.insert(cells.end(), t.begin(), t.end());
        }
        require<DataError>(!cells.empty(), "no training targets to fit a scaler");
        MinMaxScaler sc = MinMaxScaler::fit(cells);
        require<DataError>(sc.max > sc.min,
                           "degenerate target scaler: all training targets equal " +
                               format_double(sc.min));
        return sc;
    }

    EvacDataset with_split(const SplitRatios& ratios, std::uint64_t seed) const {
        EvacDataset out = *this;
        out.split = split_windows(window_count(), ratios, seed);
        return out;
    }

private:
    /// Min-max per feature column over training-window input rows only.
    ColumnScaler fit_rows_scaler(const std::vector<double>& buf, int width) const {
        std::vector<std::uint8_t> in_train(static_cast<std::size_t>(hours), 0);
        for (int w : split.train) {
            for (int t = starts[w]; t < starts[w] + l; ++t) in_train[t] = 1;
        }
        std::vector<double> rows;
        for (int t = 0; t < hours; ++t) {
            if (!in_train[t]) continue;
            rows.insert(rows.end(),
                        buf.begin() + static_cast<std::size_t>(t) * n * width,
                        buf.begin() + static_cast<std::size_t>(t + 1) * n * width);
        }
        require<DataError>(!rows.empty(), "no training rows to fit a scaler");
        return ColumnScaler::fit(rows, width);
    }
};

/// Stride-strided sliding windows pairing l input rows with the following p
/// target rows.
inline std::vector<int> window_starts(int hours, int l, int p, int stride = 1) {
    require<ConfigError>(l >= 1 && p >= 1 && stride >= 1,
                         "window parameters must be >= 1");
    require<DataError>(hours >= l + p,
                       "series of " + std::to_string(hours) +
                           " hours cannot fit an l=" + std::to_string(l) +
                           " p=" + std::to_string(p) + " window");
    std::vector<int> starts;
    for (int s = 0; s + l + p <= hours; s += stride) starts.push_back(s);
    return starts;
}

/// Pairs a feature frame with per-hour targets and optional adjacency stack.
inline EvacDataset window_samples(const FeatureFrame& features,
                                  const FeatureFrame* demand,
                                  std::vector<double> target_flows,
                                  std::vector<Tensor> ahat, int l, int p,
                                  int stride = 1) {
    require<DataError>(
        target_flows.size() ==
            static_cast<std::size_t>(features.hours) * features.n,
        "targets do not cover every feature hour and node");
    if (demand) {
        require<DataError>(demand->hours == features.hours &&
                               demand->n == features.n &&
                               demand->start_hour == features.start_hour,
                           "demand frame is not aligned with the feature frame");
    }
    if (!ahat.empty())
        require<DataError>(static_cast<int>(ahat.size()) == features.hours,
                           "adjacency stack does not cover every feature hour");
    EvacDataset d;
    d.l = l;
    d.p = p;
    d.n = features.n;
    d.c = features.c;
    d.c_d = demand ? demand->c : 0;
    d.hours = features.hours;
    d.start_hour = features.start_hour;
    d.features = features.x;
    if (demand) d.demand = demand->x;
    d.target = std::move(target_flows);
    d.ahat = std::move(ahat);
    d.starts = window_starts(features.hours, l, p, stride);
    return d;
}

// ---------------------------------------------------------------------------
// End-to-end assembly: cleaned series -> features -> adjacency -> windows.
// ---------------------------------------------------------------------------

struct RegularPipeline {
    DetectorNetwork net;  // cleaned, renumbered
    CleaningReport report;
    DetectorSeries series;  // cleaned, complete
    EvacDataset data;
    double tt_std = 0.0;  // measured kernel spread, frozen for later phases
    GraphConfig graph_cfg;
};

/// Cleans a regular-phase feed and builds the windowed training set with its
/// dynamic adjacency stack. The kernel spread measured here is the one every
/// later phase reuses.
inline RegularPipeline build_regular_pipeline(
    const DetectorNetwork& raw_net, const DetectorSeries& raw_series, int l, int p,
    const SplitRatios& ratios, std::uint64_t split_seed,
    const GraphConfig& graph_cfg = {}, double capacity_per_lane = 2500.0) {
    RegularPipeline out;
    out.graph_cfg = graph_cfg;
    CleanResult cleaned =
        clean_series(raw_net, raw_series, 0.20, capacity_per_lane);
    out.net = std::move(cleaned.net);
    out.report = std::move(cleaned.report);
    out.series = std::move(cleaned.series);

    FeatureFrame feats = extract_regular_features(out.net, out.series);
    const int offset = feats.start_hour - out.series.start_hour;

    std::vector<std::vector<double>> speeds(static_cast<std::size_t>(feats.hours));
    std::vector<double> targets(static_cast<std::size_t>(feats.hours) * feats.n);
    for (int r = 0; r < feats.hours; ++r) {
        speeds[r].resize(static_cast<std::size_t>(feats.n));
        for (int i = 0; i < feats.n; ++i) {
            speeds[r][i] = out.series.speed[out.series.at(offset + r, i)];
            targets[static_cast<std::size_t>(r) * feats.n + i] =
                out.series.flow[out.series.at(offset + r, i)];
        }
    }
    DynamicGraph graph = build_dynamic_graph(out.net, speeds, graph_cfg);
    out.tt_std = graph.tt_std();
    std::vector<Tensor> ahat;
    ahat.reserve(static_cast<std::size_t>(feats.hours));
    for (int r = 0; r < feats.hours; ++r) ahat.push_back(graph.ahat_tensor(r));

    out.data = window_samples(feats, nullptr, std::move(targets), std::move(ahat),
                              l, p);
    out.data.split = split_windows(out.data.window_count(), ratios, split_seed);
    return out;
}

struct EvacPipeline {
    DetectorSeries series;  // cleaned evacuation hours
    EvacDataset data;       // features + demand + adjacency, windowed
};

/// Builds the evacuation-phase set against an already-cleaned network. The
/// last two regular days warm up the history features; the adjacency kernel
/// reuses the regular-phase spread so both models see comparable graphs.
inline EvacPipeline build_evac_pipeline(
    const DetectorNetwork& net, const DetectorSeries& regular_clean,
    const DetectorSeries& evac_feed, const std::vector<EvacZone>& zones,
    int landfall_hour, int l, int p, const SplitRatios& ratios,
    std::uint64_t split_seed, const GraphConfig& graph_cfg, double tt_std,
    double capacity_per_lane = 2500.0) {
    require<ContractError>(tt_std > 0.0,
                           "evacuation pipeline needs the regular-phase kernel "
                           "spread");
    require<DataError>(regular_clean.hours >= kWarmupHours,
                       "regular series is too short to warm up history features");

    CleaningReport report;
    DetectorSeries flagged =
        flag_outliers(net, evac_feed, report, capacity_per_lane);
    DetectorSeries evac_clean = impute_iterative(net, flagged, report, 10, 1e-3, 5,
                                                 capacity_per_lane);

    DetectorSeries warm = regular_clean.slice(regular_clean.hours - kWarmupHours,
                                              kWarmupHours);
    DetectorSeries joined = warm.concat(evac_clean);
    FeatureFrame feats = extract_regular_features(net, joined);
    require<ContractError>(feats.hours == evac_clean.hours &&
                               feats.start_hour == evac_clean.start_hour,
                           "warm-up alignment failed");
    FeatureFrame dem = extract_demand_features(net, zones, landfall_hour,
                                               feats.start_hour, feats.hours);

    std::vector<std::vector<double>> speeds = evac_clean.speed_rows();
    std::vector<double> targets(static_cast<std::size_t>(feats.hours) * feats.n);
    for (int r = 0; r < feats.hours; ++r)
        for (int i = 0; i < feats.n; ++i)
            targets[static_cast<std::size_t>(r) * feats.n + i] =
                evac_clean.flow[evac_clean.at(r, i)];

    DynamicGraph graph = build_dynamic_graph(net, speeds, graph_cfg, tt_std);
    std::vector<Tensor> ahat;
    ahat.reserve(static_cast<std::size_t>(feats.hours));
    for (int r = 0; r < feats.hours; ++r) ahat.push_back(graph.ahat_tensor(r));

    EvacPipeline out;
    out.data = window_samples(feats, &dem, std::move(targets), std::move(ahat), l, p);
    out.data.split = split_windows(out.data.window_count(), ratios, split_seed);
    out.series = std::move(evac_clean);
    return out;
}

}  // namespace evacflow

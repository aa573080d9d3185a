#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "evacflow/adam.hpp"
#include "evacflow/dataset.hpp"
#include "evacflow/models.hpp"

namespace evacflow {

struct TrainConfig {
    double lr = 0.001;
    int epochs = 70;
    int batch_size = 16;
    std::uint64_t seed = 1;
    double clip_norm = 0.0;  // <= 0 disables clipping
    SplitRatios ratios = regular_split_ratios();

    void validate() const {
        require<ConfigError>(epochs >= 1, "epochs must be >= 1, got " +
                                              std::to_string(epochs));
        require<ConfigError>(lr > 0.0, "learning rate must be positive");
        require<ConfigError>(batch_size >= 1, "batch size must be >= 1");
        ratios.validate();
    }
};

inline TrainConfig regular_train_config() { return TrainConfig{}; }

inline TrainConfig transfer_train_config() {
    TrainConfig cfg;
    cfg.epochs = 150;
    cfg.ratios = evacuation_split_ratios();
    return cfg;
}

struct EpochLoss {
    double train = 0.0;
    double val = 0.0;
};

struct FitResult {
    std::vector<EpochLoss> history;
    int best_epoch = 0;  // 0-based index into history
    double best_val = std::numeric_limits<double>::infinity();
};

/// Mean squared error over every cell of a B x (p*N) batch. With uniform
/// shapes the flat mean equals the average over horizon steps of the per-step
/// mean squared error.
inline Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    require<ShapeError>(pred.shape() == target.shape(),
                        "mse_loss: prediction " + shape_string(pred.shape()) +
                            " vs target " + shape_string(target.shape()));
    Tensor d = sub(pred, target);
    return mean(mul(d, d));
}

inline std::uint64_t params_hash(const ParamSet& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : params) {
        h = fnv1a64(p.name.data(), p.name.size(), h);
        h = fnv1a64(p.value.values(), h);
    }
    return h;
}

/// The pretrained block of a transfer model, named for hashing and reports.
inline ParamSet frozen_params(const Model& m) {
    require<ContractError>(m.has_frozen_block(),
                           "model carries no pretrained block");
    ParamSet out;
    out.push_back({"frozen.w_gc", m.dgcn.w_gc});
    detail::collect_lstm("frozen.lstm", m.dgcn.lstm, out);
    out.push_back({"frozen.head.w", m.dgcn.head_w});
    out.push_back({"frozen.head.b", m.dgcn.head_b});
    return out;
}

/// Builds the scaled network input for one window the way the model expects:
/// features through the model's own scaler (the frozen block's scaler for
/// transfer models), demand through the demand scaler, and for the static
/// graph baseline the fitted time-mean adjacency on every step.
inline ModelInput model_input(const Model& m, const EvacDataset& data, int w) {
    const ModelSpec& spec = m.spec;
    const ColumnScaler* fs =
        spec.feature_scaler.fitted() ? &spec.feature_scaler : nullptr;
    const ColumnScaler* ds =
        spec.kind == ModelKind::transfer && spec.demand_scaler.fitted()
            ? &spec.demand_scaler
            : nullptr;
    ModelInput in = data.input(w, fs, ds);
    if (spec.kind == ModelKind::gcnlstm) {
        require<ContractError>(m.static_ahat.defined(),
                               "static graph model has no fitted adjacency");
        in.ahat.assign(static_cast<std::size_t>(spec.l), m.static_ahat);
    }
    return in;
}

namespace detail {

/// Elementwise time-mean of the dynamic adjacency over training-window input
/// hours. Validation and test hours are excluded so the static baseline sees
/// nothing the training split did not.
inline Tensor train_mean_ahat(const EvacDataset& data) {
    require<DataError>(!data.ahat.empty(),
                       "dataset carries no adjacency sequence");
    std::vector<std::uint8_t> in_train(static_cast<std::size_t>(data.hours), 0);
    for (int w : data.split.train)
        for (int t = data.starts[w]; t < data.starts[w] + data.l; ++t)
            in_train[static_cast<std::size_t>(t)] = 1;
    const int n = data.n;
    std::vector<double> acc(static_cast<std::size_t>(n) * n, 0.0);
    long count = 0;
    for (int t = 0; t < data.hours; ++t) {
        if (!in_train[static_cast<std::size_t>(t)]) continue;
        const auto& v = data.ahat[static_cast<std::size_t>(t)].values();
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += v[k];
        ++count;
    }
    require<DataError>(count > 0, "no training hours to average adjacency over");
    for (auto& v : acc) v /= static_cast<double>(count);
    return Tensor::from_data({n, n}, std::move(acc));
}

inline void check_model_matches_data(const ModelSpec& spec,
                                     const EvacDataset& data) {
    require<ContractError>(spec.n == data.n,
                           "model expects " + std::to_string(spec.n) +
                               " nodes, dataset has " + std::to_string(data.n));
    require<ContractError>(spec.l == data.l && spec.p == data.p,
                           "model window (l=" + std::to_string(spec.l) + ",p=" +
                               std::to_string(spec.p) + ") does not match dataset (l=" +
                               std::to_string(data.l) + ",p=" + std::to_string(data.p) +
                               ")");
    require<ContractError>(spec.c == data.c,
                           "model expects " + std::to_string(spec.c) +
                               " features, dataset has " + std::to_string(data.c));
}

/// Scaled-space loss over a window list, forward only.
inline double scaled_loss(const Model& m, const EvacDataset& data,
                          const std::vector<int>& windows, int batch_size) {
    NoRecordScope quiet;
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t b0 = 0; b0 < windows.size();
         b0 += static_cast<std::size_t>(batch_size)) {
        const std::size_t b1 =
            std::min(windows.size(), b0 + static_cast<std::size_t>(batch_size));
        std::vector<ModelInput> ins;
        std::vector<Tensor> targets;
        ins.reserve(b1 - b0);
        targets.reserve(b1 - b0);
        for (std::size_t k = b0; k < b1; ++k) {
            ins.push_back(model_input(m, data, windows[k]));
            targets.push_back(data.target_scaled(windows[k], m.spec.target_scaler));
        }
        std::vector<const ModelInput*> ptrs;
        ptrs.reserve(ins.size());
        for (const auto& in : ins) ptrs.push_back(&in);
        Tensor target =
            targets.size() == 1 ? targets[0] : concat_rows(targets);
        const double loss =
            mse_loss(model_forward_batch(m, ptrs), target).item();
        acc += loss * static_cast<double>(b1 - b0);
        count += b1 - b0;
    }
    return acc / static_cast<double>(count);
}

}  // namespace detail

/// Mini-batch ADAM on the training split with per-epoch validation tracking.
/// Scalers are fitted on the training split and stored in the model's spec, so
/// the trained model carries everything needed to read raw data. Returns the
/// parameters of the epoch with the lowest validation loss.
inline FitResult fit(Model& m, const EvacDataset& data, const TrainConfig& cfg) {
    cfg.validate();
    detail::check_model_matches_data(m.spec, data);
    require<DataError>(!data.split.train.empty(), "training split is empty");
    require<DataError>(!data.split.val.empty(), "validation split is empty");

    m.spec.target_scaler = data.fit_target_scaler();
    if (m.spec.kind == ModelKind::transfer) {
        require<ContractError>(m.frozen_spec.feature_scaler.fitted(),
                               "pretrained block has no fitted feature scaler");
        require<ContractError>(data.c_d == m.spec.c_d,
                               "model expects " + std::to_string(m.spec.c_d) +
                                   " demand features, dataset has " +
                                   std::to_string(data.c_d));
        m.spec.feature_scaler = m.frozen_spec.feature_scaler;
        m.spec.demand_scaler = data.fit_demand_scaler();
    } else {
        m.spec.feature_scaler = data.fit_feature_scaler();
    }
    if (m.spec.kind == ModelKind::gcnlstm)
        m.static_ahat = detail::train_mean_ahat(data);

    ParamSet params = m.trainable();
    AdamState adam = AdamState::init(params, cfg.lr);
    Rng rng(mix_seed(cfg.seed, 0x747261696eULL));
    std::vector<int> order = data.split.train;

    FitResult res;
    std::vector<std::vector<double>> best_snapshot;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double train_acc = 0.0;
        std::size_t train_count = 0;
        for (std::size_t b0 = 0; b0 < order.size();
             b0 += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t b1 = std::min(
                order.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
            std::vector<ModelInput> ins;
            std::vector<Tensor> targets;
            ins.reserve(b1 - b0);
            targets.reserve(b1 - b0);
            for (std::size_t k = b0; k < b1; ++k) {
                ins.push_back(model_input(m, data, order[k]));
                targets.push_back(
                    data.target_scaled(order[k], m.spec.target_scaler));
            }
            std::vector<const ModelInput*> ptrs;
            ptrs.reserve(ins.size());
            for (const auto& in : ins) ptrs.push_back(&in);
            Tensor target =
                targets.size() == 1 ? targets[0] : concat_rows(targets);

            ComputationRecord rec;
            double loss_val = 0.0;
            try {
                RecordingScope scope(rec);
                Tensor loss = mse_loss(model_forward_batch(m, ptrs), target);
                loss_val = loss.item();
                require<NumericError>(std::isfinite(loss_val),
                                      "non-finite training loss");
                rec.backward(loss);
            } catch (const NumericError& err) {
                throw DivergenceError("training diverged at epoch " +
                                      std::to_string(epoch + 1) + ": " +
                                      err.what());
            }
            if (cfg.clip_norm > 0.0) clip_gradients(params, cfg.clip_norm);
            adam_step(adam, params);
            zero_grads(params);
            train_acc += loss_val * static_cast<double>(b1 - b0);
            train_count += b1 - b0;
        }

        double val_loss = 0.0;
        try {
            val_loss = detail::scaled_loss(m, data, data.split.val, cfg.batch_size);
            require<NumericError>(std::isfinite(val_loss),
                                  "non-finite validation loss");
        } catch (const NumericError& err) {
            throw DivergenceError("validation diverged at epoch " +
                                  std::to_string(epoch + 1) + ": " + err.what());
        }

        res.history.push_back(
            {train_acc / static_cast<double>(train_count), val_loss});
        if (val_loss < res.best_val) {
            res.best_val = val_loss;
            res.best_epoch = epoch;
            best_snapshot.clear();
            best_snapshot.reserve(params.size());
            for (const auto& p : params) best_snapshot.push_back(p.value.values());
        }
    }

    for (std::size_t i = 0; i < params.size(); ++i)
        params[i].value.values() = best_snapshot[i];
    return res;
}

/// Transfer training: same loop as fit, but the contract that the pretrained
/// block is present, frozen, and fed demand features is enforced up front.
inline FitResult fit_transfer(Model& m, const EvacDataset& data,
                              const TrainConfig& cfg) {
    require<ContractError>(m.spec.kind == ModelKind::transfer,
                           "fit_transfer expects a transfer model");
    require<ContractError>(m.has_frozen_block(),
                           "transfer model lacks a pretrained block");
    require<ContractError>(data.c_d > 0,
                           "evacuation samples carry no demand features");
    if (!m.unfreeze_pretrained)
        for (const auto& p : frozen_params(m))
            require<ContractError>(!p.value.requires_grad(),
                                   "pretrained parameter '" + p.name +
                                       "' is not frozen");
    return fit(m, data, cfg);
}

struct MetricsReport {
    double rmse = 0.0;
    double mae = 0.0;
    double r2 = 0.0;
    std::vector<double> per_horizon_rmse;  // p entries
    std::vector<double> per_node_rmse;     // n entries
};

/// Metrics over flattened (window, step, node) cells in flow units.
inline MetricsReport compute_metrics(const std::vector<double>& pred,
                                     const std::vector<double>& truth, int p,
                                     int n) {
    require<ContractError>(pred.size() == truth.size() && !pred.empty(),
                           "metric inputs must be equal-sized and non-empty");
    const std::size_t cell = static_cast<std::size_t>(p) * n;
    require<ContractError>(pred.size() % cell == 0,
                           "metric inputs are not whole samples");
    MetricsReport rep;
    double se = 0.0, ae = 0.0;
    std::vector<double> step_se(static_cast<std::size_t>(p), 0.0);
    std::vector<double> node_se(static_cast<std::size_t>(n), 0.0);
    for (std::size_t k = 0; k < pred.size(); ++k) {
        const double d = pred[k] - truth[k];
        se += d * d;
        ae += std::abs(d);
        step_se[(k % cell) / static_cast<std::size_t>(n)] += d * d;
        node_se[k % static_cast<std::size_t>(n)] += d * d;
    }
    const double count = static_cast<double>(pred.size());
    rep.rmse = std::sqrt(se / count);
    rep.mae = ae / count;
    const double samples = count / static_cast<double>(cell);
    for (int s = 0; s < p; ++s)
        rep.per_horizon_rmse.push_back(
            std::sqrt(step_se[static_cast<std::size_t>(s)] / (samples * n)));
    for (int i = 0; i < n; ++i)
        rep.per_node_rmse.push_back(
            std::sqrt(node_se[static_cast<std::size_t>(i)] / (samples * p)));

    double mean_truth = 0.0;
    for (double t : truth) mean_truth += t;
    mean_truth /= count;
    double sst = 0.0;
    for (double t : truth) sst += (t - mean_truth) * (t - mean_truth);
    require<DataError>(sst > 0.0,
                       "test targets are constant; R^2 is undefined");
    rep.r2 = 1.0 - se / sst;
    return rep;
}

/// Evaluates the model on the given windows. Predictions are inverse-scaled
/// through the model's own target scaler, so metrics come out in vehicle-flow
/// units regardless of what scaling the model was trained with.
inline MetricsReport evaluate(const Model& m, const EvacDataset& data,
                              const std::vector<int>& windows) {
    require<DataError>(!windows.empty(), "evaluation split is empty");
    require<ContractError>(m.spec.target_scaler.fitted,
                           "model has no fitted target scaler");
    detail::check_model_matches_data(m.spec, data);
    NoRecordScope quiet;
    const std::size_t cell =
        static_cast<std::size_t>(m.spec.p) * static_cast<std::size_t>(m.spec.n);
    std::vector<double> preds, truths;
    preds.reserve(windows.size() * cell);
    truths.reserve(windows.size() * cell);
    for (int w : windows) {
        ModelInput in = model_input(m, data, w);
        Tensor out = model_forward_batch(m, {&in});
        const auto& ov = out.values();
        const auto tv = data.target_raw(w);
        for (std::size_t k = 0; k < cell; ++k) {
            preds.push_back(m.spec.target_scaler.invert(ov[k]));
            truths.push_back(tv[k]);
        }
    }
    return compute_metrics(preds, truths, m.spec.p, m.spec.n);
}

// ---------------------------------------------------------------------------
// Multi-seed experiment harness. Each seed draws a fresh split (and a fresh
// parameter init derived from it); every model trains on the same split at a
// given seed so rows are comparable. Failed runs are skipped with a warning
// and aggregates cover completed runs only.
// ---------------------------------------------------------------------------

struct ExperimentRun {
    std::string model;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    MetricsReport metrics;
    std::vector<EpochLoss> history;
};

struct MetricSummary {
    int runs = 0;
    double mean = 0.0;
    double stddev = 0.0;
    double min = 0.0;
    double max = 0.0;
};

struct ModelAggregate {
    std::string model;
    MetricSummary rmse, mae, r2;
};

struct ExperimentResult {
    std::vector<ExperimentRun> runs;  // model-major, seed order within model
    std::vector<ModelAggregate> aggregates;
    std::vector<std::string> warnings;
};

namespace detail {

inline MetricSummary summarize(const std::vector<double>& xs) {
    MetricSummary s;
    s.runs = static_cast<int>(xs.size());
    if (xs.empty()) return s;
    s.min = *std::min_element(xs.begin(), xs.end());
    s.max = *std::max_element(xs.begin(), xs.end());
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(var / static_cast<double>(xs.size()));
    return s;
}

inline void aggregate_runs(ExperimentResult& result,
                           const std::vector<std::string>& model_names,
                           int seeds) {
    for (std::size_t mi = 0; mi < model_names.size(); ++mi) {
        std::vector<double> rmse, mae, r2;
        for (int s = 0; s < seeds; ++s) {
            const ExperimentRun& run =
                result.runs[mi * static_cast<std::size_t>(seeds) +
                            static_cast<std::size_t>(s)];
            if (!run.ok) continue;
            rmse.push_back(run.metrics.rmse);
            mae.push_back(run.metrics.mae);
            r2.push_back(run.metrics.r2);
        }
        ModelAggregate agg;
        agg.model = model_names[mi];
        agg.rmse = summarize(rmse);
        agg.mae = summarize(mae);
        agg.r2 = summarize(r2);
        if (rmse.empty())
            result.warnings.push_back("model '" + model_names[mi] +
                                      "': every run failed");
        result.aggregates.push_back(std::move(agg));
    }
}

}  // namespace detail

/// Trains and evaluates each listed model across `seeds` fresh splits.
/// Transfer models need a pretrained block and go through
/// run_transfer_experiment instead.
inline ExperimentResult run_experiment(
    const std::vector<ModelSpec>& specs, const EvacDataset& data,
    const TrainConfig& cfg, int seeds,
    const std::vector<std::vector<int>>& conv_segments = {}) {
    require<ConfigError>(seeds >= 2,
                         "experiments need at least 2 seeds, got " +
                             std::to_string(seeds));
    require<ConfigError>(!specs.empty(), "no models listed");
    for (const auto& spec : specs)
        require<ConfigError>(spec.kind != ModelKind::transfer,
                             "transfer models are trained by "
                             "run_transfer_experiment");

    std::vector<std::string> names;
    names.reserve(specs.size());
    for (const auto& spec : specs) names.push_back(kind_to_string(spec.kind));

    ExperimentResult result;
    result.runs.resize(specs.size() * static_cast<std::size_t>(seeds));
    for (int s = 0; s < seeds; ++s) {
        const std::uint64_t run_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(s));
        EvacDataset data_s = data.with_split(cfg.ratios, run_seed);
        for (std::size_t mi = 0; mi < specs.size(); ++mi) {
            ExperimentRun& run =
                result.runs[mi * static_cast<std::size_t>(seeds) +
                            static_cast<std::size_t>(s)];
            run.model = names[mi];
            run.seed = run_seed;
            ModelSpec spec = specs[mi];
            spec.seed = mix_seed(spec.seed, run_seed);
            TrainConfig run_cfg = cfg;
            run_cfg.seed = run_seed;
            try {
                Model model = init_params(spec.with_defaults(), conv_segments);
                FitResult fitres = fit(model, data_s, run_cfg);
                run.metrics = evaluate(model, data_s, data_s.split.test);
                run.history = std::move(fitres.history);
                run.ok = true;
            } catch (const EvacflowError& err) {
                run.ok = false;
                run.error = err.what();
                result.warnings.push_back("model '" + run.model + "' seed " +
                                          std::to_string(run_seed) +
                                          " failed: " + err.what());
            }
        }
    }
    detail::aggregate_runs(result, names, seeds);
    return result;
}

/// Table-4-shaped harness: per seed, resplit the evacuation data, train a
/// fresh transfer model on it, and score both the transfer model and the
/// regular-trained model applied directly to the same test windows.
inline ExperimentResult run_transfer_experiment(const Model& pretrained,
                                                const ModelSpec& transfer_spec,
                                                const EvacDataset& evac,
                                                const TrainConfig& cfg,
                                                int seeds) {
    require<ConfigError>(seeds >= 2,
                         "experiments need at least 2 seeds, got " +
                             std::to_string(seeds));
    require<ContractError>(transfer_spec.kind == ModelKind::transfer,
                           "run_transfer_experiment expects a transfer spec");

    const std::vector<std::string> names = {"transfer", "direct"};
    ExperimentResult result;
    result.runs.resize(2 * static_cast<std::size_t>(seeds));
    for (int s = 0; s < seeds; ++s) {
        const std::uint64_t run_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(s));
        EvacDataset data_s = evac.with_split(cfg.ratios, run_seed);

        ExperimentRun& trun = result.runs[static_cast<std::size_t>(s)];
        trun.model = names[0];
        trun.seed = run_seed;
        try {
            ModelSpec spec = transfer_spec;
            spec.seed = mix_seed(transfer_spec.seed, run_seed);
            TrainConfig run_cfg = cfg;
            run_cfg.seed = run_seed;
            Model model = init_transfer(spec.with_defaults(), pretrained);
            FitResult fitres = fit_transfer(model, data_s, run_cfg);
            trun.metrics = evaluate(model, data_s, data_s.split.test);
            trun.history = std::move(fitres.history);
            trun.ok = true;
        } catch (const EvacflowError& err) {
            trun.ok = false;
            trun.error = err.what();
            result.warnings.push_back("model 'transfer' seed " +
                                      std::to_string(run_seed) +
                                      " failed: " + err.what());
        }

        ExperimentRun& drun =
            result.runs[static_cast<std::size_t>(seeds) + static_cast<std::size_t>(s)];
        drun.model = names[1];
        drun.seed = run_seed;
        try {
            drun.metrics = evaluate(pretrained, data_s, data_s.split.test);
            drun.ok = true;
        } catch (const EvacflowError& err) {
            drun.ok = false;
            drun.error = err.what();
            result.warnings.push_back("model 'direct' seed " +
                                      std::to_string(run_seed) +
                                      " failed: " + err.what());
        }
    }
    detail::aggregate_runs(result, names, seeds);
    return result;
}

// ---------------------------------------------------------------------------
// Report serialization. All numbers go through format_double so repeated runs
// with the same seeds produce byte-identical files.
// ---------------------------------------------------------------------------

inline std::string experiment_csv(const ExperimentResult& result) {
    std::string out = "model,seed,rmse,mae,r2\n";
    for (const auto& run : result.runs) {
        if (!run.ok) continue;
        out += run.model + "," + std::to_string(run.seed) + "," +
               format_double(run.metrics.rmse) + "," +
               format_double(run.metrics.mae) + "," +
               format_double(run.metrics.r2) + "\n";
    }
    return out;
}

inline nlohmann::json experiment_summary_json(const ExperimentResult& result) {
    nlohmann::json j;
    j["models"] = nlohmann::json::array();
    for (const auto& agg : result.aggregates) {
        auto metric = [](const MetricSummary& s) {
            return nlohmann::json{{"runs", s.runs},
                                  {"mean", s.mean},
                                  {"stddev", s.stddev},
                                  {"min", s.min},
                                  {"max", s.max}};
        };
        j["models"].push_back({{"model", agg.model},
                               {"rmse", metric(agg.rmse)},
                               {"mae", metric(agg.mae)},
                               {"r2", metric(agg.r2)}});
    }
    j["warnings"] = result.warnings;
    return j;
}

inline std::string loss_history_csv(const FitResult& fit) {
    std::string out = "epoch,train_loss,val_loss\n";
    for (std::size_t e = 0; e < fit.history.size(); ++e)
        out += std::to_string(e + 1) + "," +
               format_double(fit.history[e].train) + "," +
               format_double(fit.history[e].val) + "\n";
    return out;
}

}  // namespace evacflow

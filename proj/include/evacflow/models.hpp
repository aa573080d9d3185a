#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "evacflow/adam.hpp"
#include "evacflow/common.hpp"
#include "evacflow/graph.hpp"
#include "evacflow/ops.hpp"
#include "evacflow/scaling.hpp"
#include "evacflow/tensor.hpp"

namespace evacflow {

// ---------------------------------------------------------------------------
// Model zoo: plain stacked LSTM, corridor ConvLSTM, static GCN-LSTM, dynamic
// DGCN-LSTM, and the gated transfer model that reuses a frozen DGCN-LSTM.
// All forwards produce predictions in scaled [-1, 1] target space.
// ---------------------------------------------------------------------------

enum class ModelKind { lstm, convlstm, gcnlstm, dgcnlstm, transfer };

inline const char* kind_to_string(ModelKind k) {
    switch (k) {
        case ModelKind::lstm: return "lstm";
        case ModelKind::convlstm: return "convlstm";
        case ModelKind::gcnlstm: return "gcnlstm";
        case ModelKind::dgcnlstm: return "dgcnlstm";
        case ModelKind::transfer: return "transfer";
    }
    return "?";
}

inline ModelKind kind_from_string(const std::string& s) {
    if (s == "lstm") return ModelKind::lstm;
    if (s == "convlstm") return ModelKind::convlstm;
    if (s == "gcnlstm") return ModelKind::gcnlstm;
    if (s == "dgcnlstm") return ModelKind::dgcnlstm;
    if (s == "transfer") return ModelKind::transfer;
    throw ConfigError("unknown model kind '" + s + "'");
}

struct ModelSpec {
    ModelKind kind = ModelKind::dgcnlstm;
    int n = 0;            // detectors
    int l = 6;            // input sequence length (hours)
    int p = 6;            // prediction horizon (hours)
    int c = 12;           // features per node
    int c_d = 9;          // demand features per node (transfer)
    int hidden_size = 0;  // 0 -> defaults to n*p
    int kernel_size = 3;  // convlstm only, must be odd
    std::uint64_t seed = 1;

    MinMaxScaler target_scaler;  // flow scaler fitted on the training split
    ColumnScaler feature_scaler;
    ColumnScaler demand_scaler;  // transfer only

    // Graph provenance, frozen at training time for comparable adjacencies.
    double tt_std = 0.0;
    double kernel_threshold = 0.1;
    DegreeMode degree_mode = DegreeMode::link_count;

    ModelSpec& with_defaults() {
        if (hidden_size == 0) hidden_size = n * p;
        return *this;
    }

    void validate() const {
        require<ConfigError>(n >= 1, "model needs at least one node");
        require<ConfigError>(l >= 1 && p >= 1, "sequence lengths must be >= 1");
        require<ConfigError>(c >= 1, "feature count must be >= 1");
        require<ConfigError>(hidden_size >= 1, "hidden size must be >= 1");
        require<ConfigError>(kernel_size >= 1 && kernel_size % 2 == 1,
                             "kernel size must be odd, got " +
                                 std::to_string(kernel_size));
        if (kind == ModelKind::transfer)
            require<ConfigError>(c_d >= 1, "transfer model needs demand features");
    }
};

// ---------------------------------------------------------------------------
// Parameter containers.
// ---------------------------------------------------------------------------

/// Fused-gate LSTM weights; gate order along columns is i, f, g, o.
struct LstmParams {
    int input_size = 0;
    int hidden_size = 0;
    Tensor wx;  // input_size x 4H
    Tensor wh;  // H x 4H
    Tensor b;   // 4H, forget slice starts at 1.0
};

struct LstmStackParams {  // plain 2-layer baseline
    LstmParams l1, l2;
    Tensor head_w, head_b;
};

struct ConvLstmParams {
    int c_out = 0;
    Tensor kernel;  // (k*c) x c_out
    Tensor bias;    // c_out
    LstmParams lstm;
    Tensor head_w, head_b;
    std::vector<std::vector<int>> segments;  // node indices per corridor run
};

struct DgcnLstmParams {
    Tensor w_gc;  // N x N learnable filter, multiplied into the adjacency
    LstmParams lstm;
    Tensor head_w, head_b;
};

struct TransferHeadParams {
    LstmParams demand_lstm;
    Tensor head_w, head_b;  // demand hidden -> p*N
    Tensor w_c;             // N*c_d x p*N gate weights
    Tensor b_c;             // p*N gate bias
};

struct Model {
    ModelSpec spec;
    LstmStackParams stack;     // kind == lstm
    ConvLstmParams conv;       // kind == convlstm
    DgcnLstmParams dgcn;       // gcnlstm / dgcnlstm; for transfer: frozen block
    ModelSpec frozen_spec;     // transfer: the pretrained model's spec
    TransferHeadParams transfer;
    Tensor static_ahat;        // gcnlstm: fixed N x N adjacency (train-time mean)
    bool unfreeze_pretrained = false;

    bool has_frozen_block() const { return dgcn.w_gc.defined(); }

    ParamSet trainable() const;
};

namespace detail {

inline void collect_lstm(const std::string& prefix, const LstmParams& p,
                         ParamSet& out) {
    out.push_back({prefix + ".wx", p.wx});
    out.push_back({prefix + ".wh", p.wh});
    out.push_back({prefix + ".b", p.b});
}

}  // namespace detail

inline ParamSet Model::trainable() const {
    ParamSet out;
    switch (spec.kind) {
        case ModelKind::lstm:
            detail::collect_lstm("lstm1", stack.l1, out);
            detail::collect_lstm("lstm2", stack.l2, out);
            out.push_back({"head.w", stack.head_w});
            out.push_back({"head.b", stack.head_b});
            break;
        case ModelKind::convlstm:
            out.push_back({"conv.kernel", conv.kernel});
            out.push_back({"conv.bias", conv.bias});
            detail::collect_lstm("lstm", conv.lstm, out);
            out.push_back({"head.w", conv.head_w});
            out.push_back({"head.b", conv.head_b});
            break;
        case ModelKind::gcnlstm:
        case ModelKind::dgcnlstm:
            out.push_back({"w_gc", dgcn.w_gc});
            detail::collect_lstm("lstm", dgcn.lstm, out);
            out.push_back({"head.w", dgcn.head_w});
            out.push_back({"head.b", dgcn.head_b});
            break;
        case ModelKind::transfer:
            detail::collect_lstm("demand_lstm", transfer.demand_lstm, out);
            out.push_back({"demand_head.w", transfer.head_w});
            out.push_back({"demand_head.b", transfer.head_b});
            out.push_back({"gate.w_c", transfer.w_c});
            out.push_back({"gate.b_c", transfer.b_c});
            if (unfreeze_pretrained) {
                out.push_back({"frozen.w_gc", dgcn.w_gc});
                detail::collect_lstm("frozen.lstm", dgcn.lstm, out);
                out.push_back({"frozen.head.w", dgcn.head_w});
                out.push_back({"frozen.head.b", dgcn.head_b});
            }
            break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Initialization: uniform +-1/sqrt(fan_in), forget-gate bias 1.0, W_gc all
// ones so the first forward mixes with the bare normalized adjacency.
// Draw order is fixed, so a seed fully determines the parameters.
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor uniform_tensor(Rng& rng, int rows, int cols, double bound,
                             bool requires_grad = true) {
    std::vector<double> v(static_cast<std::size_t>(rows) * cols);
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return Tensor::from_data({rows, cols}, std::move(v), requires_grad);
}

inline LstmParams init_lstm(Rng& rng, int input_size, int hidden_size) {
    LstmParams p;
    p.input_size = input_size;
    p.hidden_size = hidden_size;
    p.wx = uniform_tensor(rng, input_size, 4 * hidden_size,
                          1.0 / std::sqrt(static_cast<double>(input_size)));
    p.wh = uniform_tensor(rng, hidden_size, 4 * hidden_size,
                          1.0 / std::sqrt(static_cast<double>(hidden_size)));
    std::vector<double> bias(static_cast<std::size_t>(4) * hidden_size, 0.0);
    for (int j = hidden_size; j < 2 * hidden_size; ++j) bias[j] = 1.0;
    p.b = Tensor::from_data({4 * hidden_size}, std::move(bias), true);
    return p;
}

inline void set_requires_grad(LstmParams& p, bool v) {
    p.wx.set_requires_grad(v);
    p.wh.set_requires_grad(v);
    p.b.set_requires_grad(v);
}

}  // namespace detail

/// Corridor runs as lists of node indices ordered by milepost; the node-axis
/// convolution never crosses a corridor boundary.
inline std::vector<std::vector<int>> corridor_segments(const DetectorNetwork& net) {
    std::vector<int> order(static_cast<std::size_t>(net.size()));
    for (int i = 0; i < net.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&net](int a, int b) {
        const auto& na = net.nodes()[a];
        const auto& nb = net.nodes()[b];
        if (na.corridor != nb.corridor) return na.corridor < nb.corridor;
        if (na.milepost != nb.milepost) return na.milepost < nb.milepost;
        return na.id < nb.id;
    });
    std::vector<std::vector<int>> segments;
    for (int idx : order) {
        if (segments.empty() ||
            net.nodes()[segments.back().back()].corridor != net.nodes()[idx].corridor)
            segments.push_back({});
        segments.back().push_back(idx);
    }
    return segments;
}

inline Model init_params(const ModelSpec& spec_in,
                         const std::vector<std::vector<int>>& segments = {}) {
    ModelSpec spec = spec_in;
    spec.with_defaults();
    spec.validate();
    require<ConfigError>(spec.kind != ModelKind::transfer,
                         "transfer models are initialized from a pretrained "
                         "model via init_transfer");
    Model m;
    m.spec = spec;
    Rng rng(mix_seed(spec.seed, 0x6d6f64656cULL));
    const int n = spec.n, h = spec.hidden_size, pn = spec.p * spec.n;
    const double head_bound = 1.0 / std::sqrt(static_cast<double>(h));
    switch (spec.kind) {
        case ModelKind::lstm: {
            m.stack.l1 = detail::init_lstm(rng, n * spec.c, h);
            m.stack.l2 = detail::init_lstm(rng, h, h);
            m.stack.head_w = detail::uniform_tensor(rng, h, pn, head_bound);
            m.stack.head_b = Tensor::zeros({pn}, true);
            break;
        }
        case ModelKind::convlstm: {
            m.conv.c_out = spec.c;
            const int kc = spec.kernel_size * spec.c;
            m.conv.kernel = detail::uniform_tensor(
                rng, kc, m.conv.c_out, 1.0 / std::sqrt(static_cast<double>(kc)));
            m.conv.bias = Tensor::zeros({m.conv.c_out}, true);
            m.conv.lstm = detail::init_lstm(rng, n * m.conv.c_out, h);
            m.conv.head_w = detail::uniform_tensor(rng, h, pn, head_bound);
            m.conv.head_b = Tensor::zeros({pn}, true);
            if (segments.empty()) {
                m.conv.segments.push_back({});
                for (int i = 0; i < n; ++i) m.conv.segments[0].push_back(i);
            } else {
                m.conv.segments = segments;
            }
            break;
        }
        case ModelKind::gcnlstm:
        case ModelKind::dgcnlstm: {
            // Diagonal-heavy start: the masked filter initially passes each
            // node's own features through and learns how much neighborhood
            // mixing to add, instead of starting from a full smoothing that
            // the optimizer must first undo.
            m.dgcn.w_gc = Tensor::full({n, n}, 0.2, true);
            for (int i = 0; i < n; ++i)
                m.dgcn.w_gc.values()[static_cast<std::size_t>(i) * n + i] = 1.5;
            m.dgcn.lstm = detail::init_lstm(rng, n * spec.c, h);
            m.dgcn.head_w = detail::uniform_tensor(rng, h, pn, head_bound);
            m.dgcn.head_b = Tensor::zeros({pn}, true);
            break;
        }
        case ModelKind::transfer:
            break;  // unreachable
    }
    return m;
}

/// Builds a transfer model around a pretrained graph model. The pretrained
/// parameters are shared (not copied) and marked frozen.
inline Model init_transfer(const ModelSpec& spec_in, const Model& pretrained) {
    ModelSpec spec = spec_in;
    spec.with_defaults();
    spec.validate();
    require<ConfigError>(spec.kind == ModelKind::transfer,
                         "init_transfer needs a transfer spec");
    require<ArtifactError>(pretrained.has_frozen_block() &&
                               (pretrained.spec.kind == ModelKind::dgcnlstm ||
                                pretrained.spec.kind == ModelKind::gcnlstm),
                           "transfer model needs a pretrained graph model");
    require<ConfigError>(pretrained.spec.n == spec.n &&
                             pretrained.spec.l == spec.l &&
                             pretrained.spec.p == spec.p &&
                             pretrained.spec.c == spec.c,
                         "pretrained model dimensions do not match transfer spec");
    Model m;
    m.spec = spec;
    m.dgcn = pretrained.dgcn;
    m.frozen_spec = pretrained.spec;
    detail::set_requires_grad(m.dgcn.lstm, false);
    m.dgcn.w_gc.set_requires_grad(false);
    m.dgcn.head_w.set_requires_grad(false);
    m.dgcn.head_b.set_requires_grad(false);

    Rng rng(mix_seed(spec.seed, 0x7472616e73ULL));
    const int h = spec.hidden_size, pn = spec.p * spec.n;
    const int demand_in = spec.n * spec.c_d;
    m.transfer.demand_lstm = detail::init_lstm(rng, demand_in, h);
    m.transfer.head_w = detail::uniform_tensor(
        rng, h, pn, 1.0 / std::sqrt(static_cast<double>(h)));
    m.transfer.head_b = Tensor::zeros({pn}, true);
    m.transfer.w_c = detail::uniform_tensor(
        rng, demand_in, pn, 1.0 / std::sqrt(static_cast<double>(demand_in)));
    m.transfer.b_c = Tensor::zeros({pn}, true);
    return m;
}

// ---------------------------------------------------------------------------
// Forward passes.
// ---------------------------------------------------------------------------

/// One LSTM cell update over a batch: rows are samples.
inline std::pair<Tensor, Tensor> lstm_step(const LstmParams& p, const Tensor& x,
                                           const Tensor& h_prev,
                                           const Tensor& c_prev) {
    const int hs = p.hidden_size;
    require<ShapeError>(x.cols() == p.input_size,
                        "lstm_step: input width " + shape_string(x.shape()) +
                            " does not match input_size " +
                            std::to_string(p.input_size));
    require<ShapeError>(h_prev.cols() == hs && c_prev.cols() == hs,
                        "lstm_step: state width " + shape_string(h_prev.shape()) +
                            " vs hidden_size " + std::to_string(hs));
    Tensor z = add_bias(add(matmul(x, p.wx), matmul(h_prev, p.wh)), p.b);
    Tensor i = sigmoid(slice_cols(z, 0, hs));
    Tensor f = sigmoid(slice_cols(z, hs, 2 * hs));
    Tensor g = evacflow::tanh(slice_cols(z, 2 * hs, 3 * hs));
    Tensor o = sigmoid(slice_cols(z, 3 * hs, 4 * hs));
    Tensor c_t = add(mul(f, c_prev), mul(i, g));
    Tensor h_t = mul(o, evacflow::tanh(c_t));
    return {h_t, c_t};
}

/// Masked graph convolution: relu((W_gc (*) Ahat) X). Entries of the mixing
/// matrix are zero wherever Ahat is zero, so disconnected nodes never mix.
inline Tensor graph_conv(const Tensor& w_gc, const Tensor& ahat, const Tensor& x) {
    require<ShapeError>(w_gc.rank() == 2 && w_gc.rows() == w_gc.cols(),
                        "graph_conv: W_gc must be square, got " +
                            shape_string(w_gc.shape()));
    require<ShapeError>(ahat.shape() == w_gc.shape(),
                        "graph_conv: adjacency " + shape_string(ahat.shape()) +
                            " vs filter " + shape_string(w_gc.shape()));
    require<ShapeError>(x.rank() == 2 && x.rows() == w_gc.rows(),
                        "graph_conv: features " + shape_string(x.shape()) +
                            " do not cover " + std::to_string(w_gc.rows()) +
                            " nodes");
    return relu(matmul(mul(w_gc, ahat), x));
}

/// Node-axis 1-D convolution in corridor order with zero padding at corridor
/// ends, relu activation. kernel is (k*c) x c_out; row blocks follow window
/// offsets -k/2 .. k/2.
inline Tensor conv1d_node(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                          int k, const std::vector<std::vector<int>>& segments) {
    require<ConfigError>(k >= 1 && k % 2 == 1,
                         "conv1d_node: kernel size must be odd, got " +
                             std::to_string(k));
    const int n = x.rows(), c = x.cols();
    require<ShapeError>(kernel.rows() == k * c,
                        "conv1d_node: kernel " + shape_string(kernel.shape()) +
                            " does not match window of " + std::to_string(k * c));
    Tensor flat = reshape(x, 1, n * c);
    Tensor zero_row = Tensor::zeros({1, c});
    std::vector<Tensor> rows(static_cast<std::size_t>(n));
    int covered = 0;
    for (const auto& seg : segments) {
        const int len = static_cast<int>(seg.size());
        for (int pos = 0; pos < len; ++pos) {
            std::vector<Tensor> window;
            window.reserve(static_cast<std::size_t>(k));
            for (int off = -(k / 2); off <= k / 2; ++off) {
                const int q = pos + off;
                if (q < 0 || q >= len) {
                    window.push_back(zero_row);
                } else {
                    const int idx = seg[q];
                    window.push_back(slice_cols(flat, idx * c, (idx + 1) * c));
                }
            }
            const int node = seg[pos];
            require<ContractError>(node >= 0 && node < n && !rows[node].defined(),
                                   "conv1d_node: segments must cover each node "
                                   "exactly once");
            rows[node] = k == 1 ? window[0] : concat_cols(window);
            ++covered;
        }
    }
    require<ContractError>(covered == n,
                           "conv1d_node: segments cover " + std::to_string(covered) +
                               " of " + std::to_string(n) + " nodes");
    Tensor im2col = concat_rows(rows);
    return relu(add_bias(matmul(im2col, kernel), bias));
}

/// Inputs for one sample. Graph kinds need ahat; transfer also needs demand.
struct ModelInput {
    std::vector<Tensor> x;         // l tensors, N x c, scaled features
    std::vector<Tensor> ahat;      // l tensors, N x N
    std::vector<Tensor> x_demand;  // l tensors, N x c_d
};

namespace detail {

inline Tensor batch_rows(std::vector<Tensor> rows) {
    return rows.size() == 1 ? rows[0] : concat_rows(std::move(rows));
}

/// Shared DGCN/GCN trunk over a batch: graph conv per step, LSTM, tanh head.
inline Tensor dgcn_trunk(const DgcnLstmParams& p, int l, int n, int c,
                         const std::vector<const ModelInput*>& batch) {
    const int b = static_cast<int>(batch.size());
    const int h = p.lstm.hidden_size;
    for (const ModelInput* s : batch) {
        require<ContractError>(static_cast<int>(s->x.size()) == l,
                               "input sequence length " +
                                   std::to_string(s->x.size()) + " vs l=" +
                                   std::to_string(l));
        require<ContractError>(static_cast<int>(s->ahat.size()) == l,
                               "adjacency sequence length " +
                                   std::to_string(s->ahat.size()) + " vs l=" +
                                   std::to_string(l));
    }
    Tensor ht = Tensor::zeros({b, h});
    Tensor ct = Tensor::zeros({b, h});
    for (int t = 0; t < l; ++t) {
        std::vector<Tensor> rows;
        rows.reserve(static_cast<std::size_t>(b));
        for (const ModelInput* s : batch)
            rows.push_back(reshape(graph_conv(p.w_gc, s->ahat[t], s->x[t]), 1, n * c));
        Tensor xt = batch_rows(std::move(rows));
        auto [h2, c2] = lstm_step(p.lstm, xt, ht, ct);
        ht = h2;
        ct = c2;
    }
    return evacflow::tanh(add_bias(matmul(ht, p.head_w), p.head_b));
}

}  // namespace detail

/// DGCN-LSTM forward for one sample: l graph-convolved steps through the
/// LSTM, affine head, tanh; result is p x N in scaled target space.
inline Tensor dgcn_lstm_forward(const DgcnLstmParams& params, int l, int p, int n,
                                int c, const std::vector<Tensor>& x_seq,
                                const std::vector<Tensor>& ahat_seq) {
    ModelInput in;
    in.x = x_seq;
    in.ahat = ahat_seq;
    Tensor flat = detail::dgcn_trunk(params, l, n, c, {&in});
    return reshape(flat, p, n);
}

/// Gated transfer forward over a batch (rows of the result are flattened
/// p x N predictions).
inline Tensor transfer_forward_batch(const Model& m,
                                     const std::vector<const ModelInput*>& batch) {
    require<ArtifactError>(m.has_frozen_block(),
                           "transfer model has no pretrained block loaded");
    const ModelSpec& spec = m.spec;
    const int l = spec.l, n = spec.n, pn = spec.p * spec.n;
    const int b = static_cast<int>(batch.size());
    const int h = m.transfer.demand_lstm.hidden_size;
    for (const ModelInput* s : batch)
        require<ContractError>(static_cast<int>(s->x_demand.size()) == l,
                               "demand sequence length " +
                                   std::to_string(s->x_demand.size()) + " vs l=" +
                                   std::to_string(l));

    Tensor frozen_out = detail::dgcn_trunk(m.dgcn, l, n, spec.c, batch);  // B x pn

    Tensor ht = Tensor::zeros({b, h});
    Tensor ct = Tensor::zeros({b, h});
    Tensor last_xt;
    for (int t = 0; t < l; ++t) {
        std::vector<Tensor> rows;
        rows.reserve(static_cast<std::size_t>(b));
        for (const ModelInput* s : batch)
            rows.push_back(reshape(s->x_demand[t], 1, n * spec.c_d));
        Tensor xt = detail::batch_rows(std::move(rows));
        auto [h2, c2] = lstm_step(m.transfer.demand_lstm, xt, ht, ct);
        ht = h2;
        ct = c2;
        last_xt = xt;
    }
    Tensor h_evc = add_bias(matmul(ht, m.transfer.head_w), m.transfer.head_b);
    Tensor gate =
        sigmoid(add_bias(matmul(last_xt, m.transfer.w_c), m.transfer.b_c));
    return add(mul(gate, frozen_out), evacflow::tanh(h_evc));
}

/// Transfer forward for one sample, p x N.
inline Tensor transfer_forward(const Model& m, const ModelInput& in) {
    Tensor flat = transfer_forward_batch(m, {&in});
    return reshape(flat, m.spec.p, m.spec.n);
}

/// Batch forward for any model kind; returns B x (p*N) scaled predictions.
inline Tensor model_forward_batch(const Model& m,
                                  const std::vector<const ModelInput*>& batch) {
    require<ContractError>(!batch.empty(), "empty batch");
    const ModelSpec& spec = m.spec;
    const int l = spec.l, n = spec.n;
    const int b = static_cast<int>(batch.size());
    if (spec.kind == ModelKind::lstm || spec.kind == ModelKind::convlstm)
        for (const ModelInput* s : batch)
            require<ContractError>(static_cast<int>(s->x.size()) == l,
                                   "input sequence length " +
                                       std::to_string(s->x.size()) + " vs l=" +
                                       std::to_string(l));
    switch (spec.kind) {
        case ModelKind::lstm: {
            const int h = spec.hidden_size;
            Tensor h1 = Tensor::zeros({b, h}), c1 = Tensor::zeros({b, h});
            Tensor h2 = Tensor::zeros({b, h}), c2 = Tensor::zeros({b, h});
            for (int t = 0; t < l; ++t) {
                std::vector<Tensor> rows;
                rows.reserve(static_cast<std::size_t>(b));
                for (const ModelInput* s : batch)
                    rows.push_back(reshape(s->x[t], 1, n * spec.c));
                Tensor xt = detail::batch_rows(std::move(rows));
                auto [nh1, nc1] = lstm_step(m.stack.l1, xt, h1, c1);
                h1 = nh1;
                c1 = nc1;
                auto [nh2, nc2] = lstm_step(m.stack.l2, h1, h2, c2);
                h2 = nh2;
                c2 = nc2;
            }
            return evacflow::tanh(
                add_bias(matmul(h2, m.stack.head_w), m.stack.head_b));
        }
        case ModelKind::convlstm: {
            const int h = spec.hidden_size;
            Tensor ht = Tensor::zeros({b, h}), ct = Tensor::zeros({b, h});
            for (int t = 0; t < l; ++t) {
                std::vector<Tensor> rows;
                rows.reserve(static_cast<std::size_t>(b));
                for (const ModelInput* s : batch) {
                    Tensor conved = conv1d_node(s->x[t], m.conv.kernel, m.conv.bias,
                                                spec.kernel_size, m.conv.segments);
                    rows.push_back(reshape(conved, 1, n * m.conv.c_out));
                }
                Tensor xt = detail::batch_rows(std::move(rows));
                auto [nh, nc] = lstm_step(m.conv.lstm, xt, ht, ct);
                ht = nh;
                ct = nc;
            }
            return evacflow::tanh(
                add_bias(matmul(ht, m.conv.head_w), m.conv.head_b));
        }
        case ModelKind::gcnlstm:
        case ModelKind::dgcnlstm:
            return detail::dgcn_trunk(m.dgcn, l, n, spec.c, batch);
        case ModelKind::transfer:
            return transfer_forward_batch(m, batch);
    }
    throw ContractError("unknown model kind");
}

/// Single-sample forward, p x N in scaled target space.
inline Tensor model_forward(const Model& m, const ModelInput& in) {
    Tensor flat = model_forward_batch(m, {&in});
    return reshape(flat, m.spec.p, m.spec.n);
}

}  // namespace evacflow

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "evacflow/common.hpp"
#include "evacflow/tensor.hpp"

namespace evacflow {

// ---------------------------------------------------------------------------
// Primitive tensor operations. Every public op validates shapes (naming both
// sides on mismatch), rejects non-finite inputs, and appends a node to the
// active ComputationRecord when the result needs gradients.
// ---------------------------------------------------------------------------

namespace detail {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

inline void check_finite(const Tensor& t, const char* op) {
    require<NumericError>(all_finite(t.values()),
                          std::string(op) + ": non-finite value in input tensor " +
                              shape_string(t.shape()));
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require<ShapeError>(a.shape() == b.shape(),
                        std::string(op) + ": shape " + shape_string(a.shape()) +
                            " vs " + shape_string(b.shape()));
}

/// Forward kernel shared by the public ops and record replay. No validation,
/// no taping; both callers must route through here so replay is bit-exact.
inline std::vector<double> forward_eval(Op op, const std::vector<Tensor>& in,
                                        int attr0, int attr1, double scalar,
                                        std::vector<int>* out_shape = nullptr) {
    auto set_shape = [&](std::vector<int> s) {
        if (out_shape) *out_shape = std::move(s);
    };
    switch (op) {
        case Op::matmul: {
            const int m = in[0].rows(), k = in[0].cols(), n = in[1].cols();
            std::vector<double> out(static_cast<std::size_t>(m) * n);
            CMap a(in[0].values().data(), m, k);
            CMap b(in[1].values().data(), k, n);
            MMap c(out.data(), m, n);
            c.noalias() = a * b;
            set_shape({m, n});
            return out;
        }
        case Op::add:
        case Op::sub:
        case Op::mul: {
            const auto& a = in[0].values();
            const auto& b = in[1].values();
            std::vector<double> out(a.size());
            if (op == Op::add)
                for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
            else if (op == Op::sub)
                for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
            else
                for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
            set_shape(in[0].shape());
            return out;
        }
        case Op::scale: {
            const auto& a = in[0].values();
            std::vector<double> out(a.size());
            for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * scalar;
            set_shape(in[0].shape());
            return out;
        }
        case Op::add_bias: {
            const int m = in[0].rows(), n = in[0].cols();
            const auto& a = in[0].values();
            const auto& b = in[1].values();
            std::vector<double> out(a.size());
            for (int r = 0; r < m; ++r)
                for (int c = 0; c < n; ++c)
                    out[static_cast<std::size_t>(r) * n + c] =
                        a[static_cast<std::size_t>(r) * n + c] + b[c];
            set_shape(in[0].shape());
            return out;
        }
        case Op::sigmoid: {
            const auto& a = in[0].values();
            std::vector<double> out(a.size());
            for (std::size_t i = 0; i < a.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a[i]));
            set_shape(in[0].shape());
            return out;
        }
        case Op::tanh: {
            const auto& a = in[0].values();
            std::vector<double> out(a.size());
            for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::tanh(a[i]);
            set_shape(in[0].shape());
            return out;
        }
        case Op::relu: {
            const auto& a = in[0].values();
            std::vector<double> out(a.size());
            for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
            set_shape(in[0].shape());
            return out;
        }
        case Op::concat_rows: {
            const int n = in[0].cols();
            int m = 0;
            for (const auto& t : in) m += t.rows();
            std::vector<double> out;
            out.reserve(static_cast<std::size_t>(m) * n);
            for (const auto& t : in)
                out.insert(out.end(), t.values().begin(), t.values().end());
            set_shape({m, n});
            return out;
        }
        case Op::concat_cols: {
            const int m = in[0].rows();
            int n = 0;
            for (const auto& t : in) n += t.cols();
            std::vector<double> out(static_cast<std::size_t>(m) * n);
            int c0 = 0;
            for (const auto& t : in) {
                const int tc = t.cols();
                for (int r = 0; r < m; ++r)
                    std::memcpy(out.data() + static_cast<std::size_t>(r) * n + c0,
                                t.values().data() + static_cast<std::size_t>(r) * tc,
                                static_cast<std::size_t>(tc) * sizeof(double));
                c0 += tc;
            }
            set_shape({m, n});
            return out;
        }
        case Op::slice_cols: {
            const int m = in[0].rows(), n = in[0].cols();
            const int c0 = attr0, c1 = attr1;
            std::vector<double> out(static_cast<std::size_t>(m) * (c1 - c0));
            for (int r = 0; r < m; ++r)
                std::memcpy(out.data() + static_cast<std::size_t>(r) * (c1 - c0),
                            in[0].values().data() + static_cast<std::size_t>(r) * n + c0,
                            static_cast<std::size_t>(c1 - c0) * sizeof(double));
            set_shape({m, c1 - c0});
            return out;
        }
        case Op::reshape: {
            set_shape({attr0, attr1});
            return in[0].values();
        }
        case Op::sum: {
            double s = 0.0;
            for (double v : in[0].values()) s += v;
            set_shape({1});
            return {s};
        }
        case Op::mean: {
            double s = 0.0;
            for (double v : in[0].values()) s += v;
            set_shape({1});
            return {s / static_cast<double>(in[0].numel())};
        }
    }
    throw ContractError("unknown op tag");
}

inline Tensor emit(Op op, std::vector<Tensor> inputs, int attr0 = 0, int attr1 = 0,
                   double scalar = 0.0) {
    bool needs_grad = false;
    for (const auto& t : inputs) needs_grad = needs_grad || t.requires_grad();
    std::vector<int> shape;
    auto data = forward_eval(op, inputs, attr0, attr1, scalar, &shape);
    require<NumericError>(all_finite(data),
                          std::string(op_name(op)) + ": non-finite value in result");
    Tensor out = Tensor::from_data(std::move(shape), std::move(data), needs_grad);
    if (needs_grad) {
        if (ComputationRecord* rec = active_record()) {
            rec->push(TapeNode{op, std::move(inputs), out, attr0, attr1, scalar});
        }
    }
    return out;
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::check_finite(a, "matmul");
    detail::check_finite(b, "matmul");
    require<ShapeError>(a.rank() <= 2 && b.rank() <= 2,
                        "matmul: rank-2 operands required, got " + shape_string(a.shape()) +
                            " and " + shape_string(b.shape()));
    require<ShapeError>(a.cols() == b.rows(),
                        "matmul: inner dimensions differ, " + shape_string(a.shape()) +
                            " vs " + shape_string(b.shape()));
    return detail::emit(Op::matmul, {a, b});
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_finite(a, "add");
    detail::check_finite(b, "add");
    detail::check_same_shape(a, b, "add");
    return detail::emit(Op::add, {a, b});
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_finite(a, "sub");
    detail::check_finite(b, "sub");
    detail::check_same_shape(a, b, "sub");
    return detail::emit(Op::sub, {a, b});
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_finite(a, "mul");
    detail::check_finite(b, "mul");
    detail::check_same_shape(a, b, "mul");
    return detail::emit(Op::mul, {a, b});
}

inline Tensor scale(const Tensor& a, double s) {
    detail::check_finite(a, "scale");
    require<NumericError>(std::isfinite(s), "scale: non-finite factor");
    return detail::emit(Op::scale, {a}, 0, 0, s);
}

/// Adds a length-n bias row to every row of an m-by-n tensor.
inline Tensor add_bias(const Tensor& a, const Tensor& b) {
    detail::check_finite(a, "add_bias");
    detail::check_finite(b, "add_bias");
    require<ShapeError>(static_cast<std::size_t>(a.cols()) == b.numel(),
                        "add_bias: bias " + shape_string(b.shape()) +
                            " does not span columns of " + shape_string(a.shape()));
    return detail::emit(Op::add_bias, {a, b});
}

inline Tensor sigmoid(const Tensor& a) {
    detail::check_finite(a, "sigmoid");
    return detail::emit(Op::sigmoid, {a});
}

inline Tensor tanh(const Tensor& a) {
    detail::check_finite(a, "tanh");
    return detail::emit(Op::tanh, {a});
}

inline Tensor relu(const Tensor& a) {
    detail::check_finite(a, "relu");
    return detail::emit(Op::relu, {a});
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    require<ContractError>(!parts.empty(), "concat_rows: no inputs");
    for (const auto& t : parts) {
        detail::check_finite(t, "concat_rows");
        require<ShapeError>(t.cols() == parts[0].cols(),
                            "concat_rows: column mismatch, " + shape_string(t.shape()) +
                                " vs " + shape_string(parts[0].shape()));
    }
    return detail::emit(Op::concat_rows, parts);
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    require<ContractError>(!parts.empty(), "concat_cols: no inputs");
    for (const auto& t : parts) {
        detail::check_finite(t, "concat_cols");
        require<ShapeError>(t.rows() == parts[0].rows(),
                            "concat_cols: row mismatch, " + shape_string(t.shape()) +
                                " vs " + shape_string(parts[0].shape()));
    }
    return detail::emit(Op::concat_cols, parts);
}

/// Columns [c0, c1) of a rank-2 tensor.
inline Tensor slice_cols(const Tensor& a, int c0, int c1) {
    detail::check_finite(a, "slice_cols");
    require<ShapeError>(0 <= c0 && c0 < c1 && c1 <= a.cols(),
                        "slice_cols: bounds [" + std::to_string(c0) + "," +
                            std::to_string(c1) + ") outside " + shape_string(a.shape()));
    return detail::emit(Op::slice_cols, {a}, c0, c1);
}

inline Tensor reshape(const Tensor& a, int rows, int cols) {
    detail::check_finite(a, "reshape");
    require<ShapeError>(static_cast<std::size_t>(rows) * cols == a.numel(),
                        "reshape: " + shape_string(a.shape()) + " to [" +
                            std::to_string(rows) + ", " + std::to_string(cols) + "]");
    return detail::emit(Op::reshape, {a}, rows, cols);
}

inline Tensor sum(const Tensor& a) {
    detail::check_finite(a, "sum");
    return detail::emit(Op::sum, {a});
}

inline Tensor mean(const Tensor& a) {
    detail::check_finite(a, "mean");
    return detail::emit(Op::mean, {a});
}

// ---------------------------------------------------------------------------
// Reverse pass. Adjoints are propagated through a private buffer map so that
// repeated backward calls accumulate exactly (grad += pass result), then added
// into the grad of every requires_grad tensor touched by the record.
// ---------------------------------------------------------------------------

inline void ComputationRecord::backward(const Tensor& root) {
    require<ContractError>(root.numel() == 1,
                           "backward: root must be scalar, got " +
                               shape_string(root.shape()));
    require<ContractError>(!nodes_.empty() && produced(root),
                           "backward: root was not produced by this record");

    std::unordered_map<const void*, std::vector<double>> adj;
    adj[root.id()] = {1.0};

    auto buf = [&adj](const Tensor& t) -> std::vector<double>& {
        auto& v = adj[t.id()];
        if (v.empty()) v.assign(t.numel(), 0.0);
        return v;
    };

    using detail::CMap;
    using detail::MMap;

    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        const TapeNode& nd = *it;
        auto found = adj.find(nd.output.id());
        if (found == adj.end() || found->second.empty()) continue;
        const std::vector<double> go = found->second;  // copy: map may rehash below
        const auto& in = nd.inputs;
        switch (nd.op) {
            case Op::matmul: {
                const int m = in[0].rows(), k = in[0].cols(), n = in[1].cols();
                CMap a(in[0].values().data(), m, k);
                CMap b(in[1].values().data(), k, n);
                CMap g(go.data(), m, n);
                MMap da(buf(in[0]).data(), m, k);
                da.noalias() += g * b.transpose();
                MMap db(buf(in[1]).data(), k, n);
                db.noalias() += a.transpose() * g;
                break;
            }
            case Op::add: {
                auto& da = buf(in[0]);
                auto& db = buf(in[1]);
                for (std::size_t i = 0; i < go.size(); ++i) {
                    da[i] += go[i];
                    db[i] += go[i];
                }
                break;
            }
            case Op::sub: {
                auto& da = buf(in[0]);
                auto& db = buf(in[1]);
                for (std::size_t i = 0; i < go.size(); ++i) {
                    da[i] += go[i];
                    db[i] -= go[i];
                }
                break;
            }
            case Op::mul: {
                auto& da = buf(in[0]);
                auto& db = buf(in[1]);
                const auto& av = in[0].values();
                const auto& bv = in[1].values();
                for (std::size_t i = 0; i < go.size(); ++i) {
                    da[i] += go[i] * bv[i];
                    db[i] += go[i] * av[i];
                }
                break;
            }
            case Op::scale: {
                auto& da = buf(in[0]);
                for (std::size_t i = 0; i < go.size(); ++i) da[i] += go[i] * nd.scalar;
                break;
            }
            case Op::add_bias: {
                const int m = in[0].rows(), n = in[0].cols();
                auto& da = buf(in[0]);
                auto& db = buf(in[1]);
                for (std::size_t i = 0; i < go.size(); ++i) da[i] += go[i];
                for (int r = 0; r < m; ++r)
                    for (int c = 0; c < n; ++c)
                        db[c] += go[static_cast<std::size_t>(r) * n + c];
                break;
            }
            case Op::sigmoid: {
                auto& da = buf(in[0]);
                const auto& y = nd.output.values();
                for (std::size_t i = 0; i < go.size(); ++i)
                    da[i] += go[i] * y[i] * (1.0 - y[i]);
                break;
            }
            case Op::tanh: {
                auto& da = buf(in[0]);
                const auto& y = nd.output.values();
                for (std::size_t i = 0; i < go.size(); ++i)
                    da[i] += go[i] * (1.0 - y[i] * y[i]);
                break;
            }
            case Op::relu: {
                auto& da = buf(in[0]);
                const auto& x = in[0].values();
                for (std::size_t i = 0; i < go.size(); ++i)
                    if (x[i] > 0.0) da[i] += go[i];
                break;
            }
            case Op::concat_rows: {
                std::size_t off = 0;
                for (const auto& t : in) {
                    auto& dt = buf(t);
                    for (std::size_t i = 0; i < dt.size(); ++i) dt[i] += go[off + i];
                    off += dt.size();
                }
                break;
            }
            case Op::concat_cols: {
                const int m = in[0].rows();
                const int n = nd.output.cols();
                int c0 = 0;
                for (const auto& t : in) {
                    const int tc = t.cols();
                    auto& dt = buf(t);
                    for (int r = 0; r < m; ++r)
                        for (int c = 0; c < tc; ++c)
                            dt[static_cast<std::size_t>(r) * tc + c] +=
                                go[static_cast<std::size_t>(r) * n + c0 + c];
                    c0 += tc;
                }
                break;
            }
            case Op::slice_cols: {
                const int m = in[0].rows(), n = in[0].cols();
                const int c0 = nd.attr0, w = nd.attr1 - nd.attr0;
                auto& da = buf(in[0]);
                for (int r = 0; r < m; ++r)
                    for (int c = 0; c < w; ++c)
                        da[static_cast<std::size_t>(r) * n + c0 + c] +=
                            go[static_cast<std::size_t>(r) * w + c];
                break;
            }
            case Op::reshape: {
                auto& da = buf(in[0]);
                for (std::size_t i = 0; i < go.size(); ++i) da[i] += go[i];
                break;
            }
            case Op::sum: {
                auto& da = buf(in[0]);
                for (std::size_t i = 0; i < da.size(); ++i) da[i] += go[0];
                break;
            }
            case Op::mean: {
                auto& da = buf(in[0]);
                const double s = go[0] / static_cast<double>(in[0].numel());
                for (std::size_t i = 0; i < da.size(); ++i) da[i] += s;
                break;
            }
        }
    }

    auto deposit = [&adj](Tensor t) {
        if (!t.requires_grad()) return;
        auto found = adj.find(t.id());
        if (found == adj.end() || found->second.empty()) return;
        auto& g = t.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += found->second[i];
        found->second.clear();  // tensors alias; deposit once per storage
    };
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        deposit(it->output);
        for (const auto& t : it->inputs) deposit(t);
    }
}

inline bool ComputationRecord::replay_matches() const {
    for (const auto& nd : nodes_) {
        auto again = detail::forward_eval(nd.op, nd.inputs, nd.attr0, nd.attr1, nd.scalar);
        const auto& want = nd.output.values();
        if (again.size() != want.size()) return false;
        if (std::memcmp(again.data(), want.data(), want.size() * sizeof(double)) != 0)
            return false;
    }
    return true;
}

}  // namespace evacflow

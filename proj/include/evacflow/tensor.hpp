#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <numeric>
#include <utility>
#include <vector>

#include "evacflow/common.hpp"

namespace evacflow {

// ---------------------------------------------------------------------------
// Dense f64 tensor with optional gradient buffer. A Tensor is a cheap handle;
// copies alias the same storage, so the gradient written by a backward pass is
// visible through every handle of the same tensor.
// ---------------------------------------------------------------------------

namespace detail {
struct TensorImpl {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
};
}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                            bool requires_grad = false) {
        auto impl = std::make_shared<detail::TensorImpl>();
        std::size_t n = 1;
        for (int d : shape) {
            require<ShapeError>(d > 0, "tensor extents must be positive, got " +
                                           shape_string(shape));
            n *= static_cast<std::size_t>(d);
        }
        require<ShapeError>(n == data.size(),
                            "shape " + shape_string(shape) + " does not match " +
                                std::to_string(data.size()) + " values");
        impl->shape = std::move(shape);
        impl->data = std::move(data);
        impl->requires_grad = requires_grad;
        Tensor t;
        t.impl_ = std::move(impl);
        return t;
    }

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(std::max(d, 0));
        return from_data(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor full(std::vector<int> shape, double v, bool requires_grad = false) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(std::max(d, 0));
        return from_data(std::move(shape), std::vector<double>(n, v), requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    bool defined() const { return impl_ != nullptr; }

    const std::vector<int>& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    std::size_t numel() const { return impl_->data.size(); }

    /// Rows/cols of a rank-2 tensor (rank-1 is treated as a single row).
    int rows() const { return rank() == 1 ? 1 : impl_->shape[0]; }
    int cols() const { return rank() == 1 ? impl_->shape[0] : impl_->shape[1]; }

    std::vector<double>& values() { return impl_->data; }
    const std::vector<double>& values() const { return impl_->data; }

    double item() const {
        require<ContractError>(numel() == 1, "item() on non-scalar tensor " +
                                                 shape_string(shape()));
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        impl_->requires_grad = v;
        return *this;
    }

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }

    /// Gradient buffer, zero-allocated on first access.
    std::vector<double>& grad() {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
        return impl_->grad;
    }
    const std::vector<double>& grad_view() const { return impl_->grad; }

    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
    }

    /// Identity of the underlying storage; used by the tape.
    const void* id() const { return impl_.get(); }

    /// Deep copy with detached storage (gradient buffer not copied).
    Tensor clone() const {
        return from_data(impl_->shape, impl_->data, impl_->requires_grad);
    }

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

// ---------------------------------------------------------------------------
// Reverse-mode tape. Primitive ops append nodes to the thread-active record;
// backward() walks the nodes in reverse, accumulating dLoss/dTensor into every
// requires_grad tensor reachable from the root.
// ---------------------------------------------------------------------------

enum class Op : std::uint8_t {
    matmul,
    add,
    sub,
    mul,
    scale,
    add_bias,
    sigmoid,
    tanh,
    relu,
    concat_rows,
    concat_cols,
    slice_cols,
    reshape,
    sum,
    mean,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::matmul: return "matmul";
        case Op::add: return "add";
        case Op::sub: return "sub";
        case Op::mul: return "mul";
        case Op::scale: return "scale";
        case Op::add_bias: return "add_bias";
        case Op::sigmoid: return "sigmoid";
        case Op::tanh: return "tanh";
        case Op::relu: return "relu";
        case Op::concat_rows: return "concat_rows";
        case Op::concat_cols: return "concat_cols";
        case Op::slice_cols: return "slice_cols";
        case Op::reshape: return "reshape";
        case Op::sum: return "sum";
        case Op::mean: return "mean";
    }
    return "?";
}

struct TapeNode {
    Op op;
    std::vector<Tensor> inputs;
    Tensor output;
    int attr0 = 0;        // op-specific (slice bounds)
    int attr1 = 0;
    double scalar = 0.0;  // op-specific (scale factor)
};

class ComputationRecord {
public:
    void push(TapeNode node) { nodes_.push_back(std::move(node)); }

    std::size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }
    const std::vector<TapeNode>& nodes() const { return nodes_; }

    bool produced(const Tensor& t) const {
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
            if (it->output.id() == t.id()) return true;
        return false;
    }

    void clear() { nodes_.clear(); }

    // Defined in ops.hpp (needs the forward kernels):
    //   void backward(const Tensor& root);
    //   bool replay_matches() const;
    void backward(const Tensor& root);
    bool replay_matches() const;

private:
    std::vector<TapeNode> nodes_;
};

namespace detail {
inline ComputationRecord*& active_record_slot() {
    thread_local ComputationRecord* rec = nullptr;
    return rec;
}
}  // namespace detail

inline ComputationRecord* active_record() { return detail::active_record_slot(); }

/// Activates a record for the current thread for the scope's lifetime.
class RecordingScope {
public:
    explicit RecordingScope(ComputationRecord& rec) : prev_(detail::active_record_slot()) {
        detail::active_record_slot() = &rec;
    }
    ~RecordingScope() { detail::active_record_slot() = prev_; }
    RecordingScope(const RecordingScope&) = delete;
    RecordingScope& operator=(const RecordingScope&) = delete;

private:
    ComputationRecord* prev_;
};

/// Temporarily disables recording (forward evaluation only).
class NoRecordScope {
public:
    NoRecordScope() : prev_(detail::active_record_slot()) {
        detail::active_record_slot() = nullptr;
    }
    ~NoRecordScope() { detail::active_record_slot() = prev_; }
    NoRecordScope(const NoRecordScope&) = delete;
    NoRecordScope& operator=(const NoRecordScope&) = delete;

private:
    ComputationRecord* prev_;
};

}  // namespace evacflow

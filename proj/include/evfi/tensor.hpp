#pragma once

// Dense row-major float64 tensors with a reverse-mode tape.
//
// Operations record themselves on the thread's active Tape when at least one
// input needs a gradient. Without an active tape nothing is recorded, which
// is how inference and finite-difference probes run.

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "evfi/errors.hpp"

namespace evfi {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
}

class Tape;

namespace detail {

inline std::uint64_t next_tensor_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::uint64_t id = next_tensor_id();
    // Set when produced by an op recorded on `tape`.
    const Tape* tape = nullptr;
    std::size_t tape_index = 0;
};

inline Tape*& active_tape_slot() {
    thread_local Tape* tape = nullptr;
    return tape;
}

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : impl_(std::make_shared<detail::TensorImpl>()) {
        if (shape_numel(shape) != data.size()) {
            throw ShapeError("tensor shape " + shape_str(shape) + " holds " +
                             std::to_string(shape_numel(shape)) + " elements but " +
                             std::to_string(data.size()) + " values were given");
        }
        impl_->shape = std::move(shape);
        impl_->data = std::move(data);
        impl_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }
    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
    }
    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
    static Tensor scalar(double v, bool requires_grad = false) {
        return Tensor({1}, {v}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(impl_); }
    const Shape& shape() const { return impl_->shape; }
    std::size_t dim() const { return impl_->shape.size(); }
    std::size_t size(std::size_t axis) const { return impl_->shape.at(axis); }
    std::size_t numel() const { return impl_->data.size(); }
    std::span<const double> data() const { return impl_->data; }
    const std::vector<double>& vec() const { return impl_->data; }
    double item() const {
        if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        return impl_->data[0];
    }
    double operator[](std::size_t i) const { return impl_->data[i]; }

    // Parameters are the only tensors mutated in place, and only between steps.
    std::span<double> mutable_data() { return impl_->data; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }
    std::uint64_t id() const { return impl_->id; }

    /// Copy with fresh identity and no tape history.
    Tensor detach() const { return Tensor(shape(), vec(), false); }

    const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

struct OpRecord;

/// Backward rule: receives the op record (input/output values), the output
/// gradient and one accumulation buffer per input (nullptr for inputs that do
/// not need a gradient).
using BackwardFn = std::function<void(const OpRecord& rec, std::span<const double> grad_out,
                                      std::span<double* const> grad_in)>;

struct OpRecord {
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn backward;

    const std::vector<double>& in(std::size_t k) const { return inputs[k]->data; }
    const Shape& in_shape(std::size_t k) const { return inputs[k]->shape; }
    const std::vector<double>& out() const { return output->data; }
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    ~Tape() { clear(); }

    std::size_t size() const { return records_.size(); }
    const std::vector<OpRecord>& records() const { return records_; }

    void clear() {
        for (auto& r : records_) {
            if (r.output && r.output->tape == this) r.output->tape = nullptr;
        }
        records_.clear();
    }

    std::size_t push(OpRecord record) {
        record.output->tape = this;
        record.output->tape_index = records_.size();
        records_.push_back(std::move(record));
        return records_.size() - 1;
    }

private:
    std::vector<OpRecord> records_;
};

inline Tape* active_tape() { return detail::active_tape_slot(); }

/// Makes `tape` the active tape for this thread for the scope's lifetime.
class TapeScope {
public:
    explicit TapeScope(Tape& tape) : previous_(detail::active_tape_slot()) {
        detail::active_tape_slot() = &tape;
    }
    ~TapeScope() { detail::active_tape_slot() = previous_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

/// Suspends recording (used by finite-difference probes and inference).
class NoGradScope {
public:
    NoGradScope() : previous_(detail::active_tape_slot()) { detail::active_tape_slot() = nullptr; }
    ~NoGradScope() { detail::active_tape_slot() = previous_; }
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape* previous_;
};

inline bool needs_grad(const Tensor& t) {
    const Tape* tape = active_tape();
    if (tape == nullptr || !t.defined()) return false;
    return t.requires_grad() || t.impl()->tape == tape;
}

/// Builds an op output and records it when any input needs a gradient.
inline Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                          BackwardFn backward) {
    Tensor out(std::move(shape), std::move(data));
#ifndef NDEBUG
    for (double v : out.data()) {
        if (!std::isfinite(v)) throw NumericalError("non-finite value produced by a primitive");
    }
#endif
    Tape* tape = active_tape();
    if (tape == nullptr) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || needs_grad(in);
    if (!any) return out;
    OpRecord rec;
    rec.inputs.reserve(inputs.size());
    for (const auto& in : inputs) rec.inputs.push_back(in.impl());
    rec.output = out.impl();
    rec.backward = std::move(backward);
    tape->push(std::move(rec));
    return out;
}

/// Gradients of leaf tensors, keyed by tensor id.
class Gradients {
public:
    bool contains(const Tensor& t) const { return grads_.count(t.id()) != 0; }
    const Tensor& at(const Tensor& t) const {
        auto it = grads_.find(t.id());
        if (it == grads_.end()) throw std::out_of_range("no gradient recorded for tensor");
        return it->second;
    }
    /// Gradient or zeros when the tensor did not influence the loss.
    Tensor get_or_zeros(const Tensor& t) const {
        auto it = grads_.find(t.id());
        return it == grads_.end() ? Tensor::zeros(t.shape()) : it->second;
    }
    void set(std::uint64_t id, Tensor g) { grads_.insert_or_assign(id, std::move(g)); }
    std::size_t size() const { return grads_.size(); }
    const std::unordered_map<std::uint64_t, Tensor>& map() const { return grads_; }

private:
    std::unordered_map<std::uint64_t, Tensor> grads_;
};

/// Reverse pass from a scalar loss on the active tape. Consumes the tape.
inline Gradients backward(const Tensor& loss) {
    Tape* tape = active_tape();
    if (loss.numel() != 1) {
        throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (tape == nullptr || loss.impl()->tape != tape) {
        throw std::logic_error("backward(): loss is not recorded on the active tape (detached graph)");
    }
    std::unordered_map<const detail::TensorImpl*, std::vector<double>> grads;
    grads[loss.impl().get()] = {1.0};
    std::unordered_map<std::uint64_t, std::shared_ptr<detail::TensorImpl>> leaves;

    const auto& records = tape->records();
    for (std::size_t i = loss.impl()->tape_index + 1; i-- > 0;) {
        const auto& rec = records[i];
        auto it = grads.find(rec.output.get());
        if (it == grads.end()) continue;
        std::vector<double> gout = std::move(it->second);
        grads.erase(it);
        std::vector<double*> gin(rec.inputs.size(), nullptr);
        for (std::size_t k = 0; k < rec.inputs.size(); ++k) {
            const auto& in = rec.inputs[k];
            const bool on_tape = in->tape == tape;
            if (!on_tape && !in->requires_grad) continue;
            auto& buf = grads[in.get()];
            if (buf.empty()) buf.assign(in->data.size(), 0.0);
            gin[k] = buf.data();
            if (!on_tape) leaves.emplace(in->id, in);
        }
        rec.backward(rec, gout, gin);
    }

    Gradients result;
    for (auto& [id, impl] : leaves) {
        auto it = grads.find(impl.get());
        if (it == grads.end()) continue;
        result.set(id, Tensor(impl->shape, std::move(it->second)));
    }
    tape->clear();
    return result;
}


}  // namespace evfi

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "drc/tensor.hpp"

namespace drc::nn {

// A named, trainable (or buffer) tensor. Kernels (conv/FC weight matrices)
// are flagged so the L2 penalty can target them and skip biases and
// normalization parameters.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;            // same shape as value once allocated
    bool trainable = true;
    bool is_kernel = false; // subject to L2 penalty

    void zero_grad() {
        if (!grad.same_shape(value)) grad = Tensor(value.shape());
        else grad.fill(0.0);
    }

    // Allocates (zeroed) storage before the first accumulation; leaves an
    // already-allocated gradient untouched.
    void ensure_grad() {
        if (!grad.same_shape(value)) grad = Tensor(value.shape());
    }
};

struct NamedTensor {
    std::string name;
    Tensor* tensor = nullptr;
    bool trainable = true;
};

class Tape;

// Handle to a tape entry.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Ops append their output value together with a closure
// that routes the output gradient to input gradients and parameter grads.
// With grad disabled the closures are dropped; forward values are still kept
// so downstream ops can read them.
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    Var leaf(Tensor value) { return push(std::move(value), nullptr); }

    Var push(Tensor value, std::function<void(Tape&, const Tensor&)> backward) {
        entries_.push_back(Entry{std::move(value), Tensor(), false,
                                 grad_enabled_ ? std::move(backward) : nullptr});
        return Var{int(entries_.size()) - 1};
    }

    const Tensor& value(Var v) const { return entries_[std::size_t(v.id)].value; }

    // Gradient accumulator for an entry; allocated (zeroed) on first touch.
    Tensor& grad(Var v) {
        Entry& e = entries_[std::size_t(v.id)];
        if (!e.has_grad) {
            e.grad = Tensor(e.value.shape());
            e.has_grad = true;
        }
        return e.grad;
    }

    bool has_grad(Var v) const { return entries_[std::size_t(v.id)].has_grad; }

    // Seeds d root / d root = 1 and sweeps the tape in reverse. root must be
    // a scalar (single-element) entry.
    void backward(Var root) {
        if (!grad_enabled_) throw ConfigError("backward on a no-grad tape");
        if (value(root).size() != 1) throw ShapeError("backward root must be scalar");
        grad(root)[0] = 1.0;
        for (int i = root.id; i >= 0; --i) {
            Entry& e = entries_[std::size_t(i)];
            if (e.has_grad && e.back) e.back(*this, e.grad);
        }
    }

    std::size_t node_count() const { return entries_.size(); }

private:
    struct Entry {
        Tensor value;
        Tensor grad;
        bool has_grad = false;
        std::function<void(Tape&, const Tensor&)> back;
    };
    std::vector<Entry> entries_;
    bool grad_enabled_;
};

} // namespace drc::nn

#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtseg::nn {

/// Activations are (channels, x, y, z) with x fastest in memory; weights
/// use the layouts documented on each op.
using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_string(const Shape& s);

/// Cache-line aligned storage. Vectorized reductions peel a different number
/// of leading elements depending on buffer alignment, which changes float
/// summation order; fixing the alignment keeps results independent of heap
/// layout.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::size_t kAlign = 64;

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kAlign}));
    }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{kAlign}); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Reference-counted dense tensor with an optional gradient buffer. Copies
/// share storage; parameters are held this way so every forward path sees
/// the same values.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        Tensor t;
        t.impl_ = std::make_shared<Impl>();
        t.impl_->value.assign(nn::numel(shape), T(0));
        t.impl_->shape = std::move(shape);
        t.impl_->requires_grad = requires_grad;
        return t;
    }

    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
        if (values.size() != nn::numel(shape)) {
            throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                        " does not match shape " + shape_string(shape));
        }
        Tensor t;
        t.impl_ = std::make_shared<Impl>();
        t.impl_->value.assign(values.begin(), values.end());
        t.impl_->shape = std::move(shape);
        t.impl_->requires_grad = requires_grad;
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t numel() const { return impl_->value.size(); }
    /// Spatial voxel count for (C, x, y, z) tensors.
    std::size_t spatial() const { return numel() / static_cast<std::size_t>(dim(0)); }

    std::span<T> value() { return impl_->value; }
    std::span<const T> value() const { return impl_->value; }
    T item() const {
        if (numel() != 1) throw std::logic_error("item() on a non-scalar tensor");
        return impl_->value[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on) { impl_->requires_grad = on; }

    bool has_grad() const { return !impl_->grad.empty(); }
    /// Gradient buffer, allocated (zeroed) on first use.
    std::span<T> grad() const {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), T(0));
        return impl_->grad;
    }
    /// Empty span when no gradient reached this tensor.
    std::span<const T> grad_if_any() const { return impl_->grad; }
    void clear_grad() { impl_->grad.clear(); }

    std::uint64_t tape_id() const { return impl_->tape_id; }
    void set_tape_id(std::uint64_t id) { impl_->tape_id = id; }

    /// Same underlying storage.
    bool same(const Tensor& other) const { return impl_ == other.impl_; }
    const void* identity() const { return impl_.get(); }

    Tensor clone(bool requires_grad = false) const {
        return from(shape(), std::vector<T>(impl_->value.begin(), impl_->value.end()), requires_grad);
    }

private:
    struct Impl {
        Shape shape;
        AlignedVector<T> value;
        mutable AlignedVector<T> grad;
        bool requires_grad = false;
        std::uint64_t tape_id = 0;
    };
    std::shared_ptr<Impl> impl_;
};

/// Records backward closures of the ops evaluated against it. One tape is
/// used for one forward/backward pass.
template <class T>
class Tape {
public:
    Tape() : id_(next_id()) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::uint64_t id() const { return id_; }
    std::size_t size() const { return ops_.size(); }

    /// Fresh output tensor tagged with this tape.
    Tensor<T> output(Shape shape, bool requires_grad) {
        Tensor<T> t = Tensor<T>::zeros(std::move(shape), requires_grad);
        t.set_tape_id(id_);
        return t;
    }

    void record(std::function<void()> backward) { ops_.push_back(std::move(backward)); }

    /// Seeds d(loss)/d(loss) = 1 and runs recorded closures in reverse.
    void backward(const Tensor<T>& loss) {
        if (ops_.empty()) {
            throw std::logic_error("backward called on a tape with no recorded ops");
        }
        if (!loss.defined() || loss.tape_id() != id_) {
            throw std::logic_error("backward called with a tensor not produced on this tape");
        }
        if (loss.numel() != 1) {
            throw std::logic_error("backward needs a scalar loss");
        }
        if (!loss.requires_grad()) {
            throw std::logic_error("loss does not depend on any parameter");
        }
        loss.grad()[0] += T(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
        ops_.clear();
    }

    /// When set, activation ops append one byte per element (input > 0),
    /// which gradient checks use to detect kink crossings.
    std::vector<std::uint8_t>* activation_signs = nullptr;

private:
    static std::uint64_t next_id() {
        static std::atomic<std::uint64_t> counter{1};
        return counter.fetch_add(1);
    }

    std::uint64_t id_;
    std::vector<std::function<void()>> ops_;
};

}  // namespace mtseg::nn

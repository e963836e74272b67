#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace bsnet {

[[noreturn]] inline void contract_fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

inline void contract(bool ok, const std::string& msg) {
  if (!ok) contract_fail(msg);
}

// 64-byte-aligned buffers keep every tensor in one alignment class, so
// vectorized reductions split identically on every run and results stay
// bit-reproducible regardless of heap layout.
template <typename T>
struct AlignedAlloc {
  using value_type = T;
  AlignedAlloc() = default;
  template <typename U>
  AlignedAlloc(const AlignedAlloc<U>&) {}
  T* allocate(size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{64}));
  }
  void deallocate(T* p, size_t) noexcept { ::operator delete(p, std::align_val_t{64}); }
  template <typename U>
  bool operator==(const AlignedAlloc<U>&) const {
    return true;
  }
  template <typename U>
  bool operator!=(const AlignedAlloc<U>&) const {
    return false;
  }
};

template <typename T>
using AlignedVec = std::vector<T, AlignedAlloc<T>>;

// Dense NCHW-style tensor over float or double. Copies share storage; the
// grad buffer lives next to the values and is allocated on first use.
template <typename T>
class Tensor {
  struct Storage {
    std::vector<int> shape;
    AlignedVec<T> value;
    AlignedVec<T> grad;
    bool requires_grad = false;
  };

 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape) {
    Tensor t;
    t.s_ = std::make_shared<Storage>();
    t.s_->shape = std::move(shape);
    t.s_->value.assign(count(t.s_->shape), T(0));
    return t;
  }

  static Tensor full(std::vector<int> shape, T v) {
    Tensor t = zeros(std::move(shape));
    for (T& x : t.s_->value) x = v;
    return t;
  }

  static Tensor scalar(T v) { return full({1}, v); }

  static Tensor from(std::vector<T> values, std::vector<int> shape) {
    contract(values.size() == count(shape), "Tensor::from: value count does not match shape");
    Tensor t;
    t.s_ = std::make_shared<Storage>();
    t.s_->shape = std::move(shape);
    t.s_->value.assign(values.begin(), values.end());
    return t;
  }

  bool defined() const { return s_ != nullptr; }

  const std::vector<int>& shape() const { return s_->shape; }
  int rank() const { return static_cast<int>(s_->shape.size()); }
  int dim(int i) const { return s_->shape[static_cast<size_t>(i)]; }
  size_t numel() const { return s_->value.size(); }

  AlignedVec<T>& data() { return s_->value; }
  const AlignedVec<T>& data() const { return s_->value; }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool b) { s_->requires_grad = b; }

  bool has_grad() const { return !s_->grad.empty(); }
  AlignedVec<T>& grad() {
    ensure_grad();
    return s_->grad;
  }
  void ensure_grad() {
    if (s_->grad.empty()) s_->grad.assign(s_->value.size(), T(0));
  }
  void zero_grad() {
    if (!s_->grad.empty()) s_->grad.assign(s_->value.size(), T(0));
  }

  T value() const {
    contract(numel() == 1, "Tensor::value: tensor is not scalar");
    return s_->value[0];
  }

  T& at(std::initializer_list<int> idx) { return s_->value[offset(idx)]; }
  const T& at(std::initializer_list<int> idx) const { return s_->value[offset(idx)]; }

  // NaN/Inf anywhere in the values is a contract violation.
  void check_finite(const std::string& what) const {
    for (const T& v : s_->value) {
      if (!std::isfinite(static_cast<double>(v)))
        contract_fail(what + ": tensor contains a non-finite value");
    }
  }

  bool same_storage(const Tensor& o) const { return s_ == o.s_; }

  static size_t count(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
      contract(d > 0, "Tensor: shape dimensions must be positive");
      n *= static_cast<size_t>(d);
    }
    return n;
  }

 private:
  size_t offset(std::initializer_list<int> idx) const {
    contract(idx.size() == s_->shape.size(), "Tensor::at: index rank mismatch");
    size_t off = 0;
    size_t k = 0;
    for (int i : idx) {
      contract(i >= 0 && i < s_->shape[k], "Tensor::at: index out of range");
      off = off * static_cast<size_t>(s_->shape[k]) + static_cast<size_t>(i);
      ++k;
    }
    return off;
  }

  std::shared_ptr<Storage> s_;
};

// Records one closure per differentiable op during the forward pass and
// replays them in reverse. A tape built with grad_enabled=false records
// nothing, which is how inference and frozen submodules stay cheap.
template <typename T>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  template <typename... Ts>
  bool wants_grad(const Ts&... inputs) const {
    return grad_enabled_ && (inputs.requires_grad() || ...);
  }

  void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

  size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and visits every recorded node exactly once,
  // newest first. Gradients accumulate with +=.
  void backward(Tensor<T>& loss) {
    contract(loss.numel() == 1, "Tape::backward: loss must be scalar");
    contract(grad_enabled_, "Tape::backward: tape was built with gradients disabled");
    loss.ensure_grad();
    loss.grad()[0] += T(1);
    for (size_t i = nodes_.size(); i > 0; --i) nodes_[i - 1]();
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool grad_enabled_;
};

}  // namespace bsnet

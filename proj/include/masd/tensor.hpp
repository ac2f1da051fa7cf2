#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "masd/errors.hpp"

namespace masd {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  bool requires_grad = false;
  // True when this tensor participates in a gradient chain (leaf flag or
  // inherited from any producer input).
  bool needs_grad = false;
  std::vector<float> grad;  // empty means "no gradient buffer"

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
  }
};

}  // namespace detail

// Value handle over an n-d row-major f32 buffer. Copies are shallow; the
// buffer is shared. Data is immutable by convention once an op has consumed
// the tensor; gradient buffers are the only state mutated afterwards.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), 0.0f, requires_grad);
  }

  static Tensor full(Shape shape, float value, bool requires_grad = false) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->data.assign(shape_numel(shape), value);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    impl->needs_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor from_data(Shape shape, std::vector<float> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size())
      throw ContractError("tensor: shape " + shape_str(shape) + " expects " +
                          std::to_string(shape_numel(shape)) + " values, got " +
                          std::to_string(values.size()));
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    impl->needs_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor scalar(float value, bool requires_grad = false) {
    return from_data({}, {value}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }
  std::size_t extent(std::size_t axis) const { return impl_->shape.at(axis); }

  std::span<const float> data() const { return impl_->data; }
  std::span<float> mut_data() { return impl_->data; }

  float value() const {
    if (numel() != 1) throw ContractError("tensor: value() needs exactly one element");
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  bool needs_grad() const { return impl_->needs_grad; }
  void set_requires_grad(bool flag) {
    impl_->requires_grad = flag;
    impl_->needs_grad = flag;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const float> grad() const {
    if (!has_grad()) throw ContractError("tensor: gradient not populated");
    return impl_->grad;
  }
  std::span<float> mut_grad() {
    impl_->ensure_grad();
    return impl_->grad;
  }
  void clear_grad() { impl_->grad.clear(); }

  bool all_finite() const {
    for (float v : impl_->data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  // Deep copy of shape/data; gradient buffer is not copied.
  Tensor clone() const {
    Tensor t = from_data(impl_->shape, impl_->data, impl_->requires_grad);
    return t;
  }

  bool same_shape(const Tensor& other) const { return impl_->shape == other.impl_->shape; }

  bool bitwise_equal(const Tensor& other) const {
    if (impl_->shape != other.impl_->shape) return false;
    for (std::size_t i = 0; i < impl_->data.size(); ++i) {
      // bit compare, so that 0.0f != -0.0f and NaNs compare by pattern
      if (std::bit_cast<std::uint32_t>(impl_->data[i]) !=
          std::bit_cast<std::uint32_t>(other.impl_->data[i]))
        return false;
    }
    return true;
  }

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shapes differ, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace masd

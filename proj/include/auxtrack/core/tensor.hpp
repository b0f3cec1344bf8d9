#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace auxtrack {

// Semantic tag carried alongside the raw buffer. Purely informational,
// but shape/range validators key off it in debug paths.
enum class TensorRole : std::uint8_t {
  Generic,
  Image,      // HxWxC, values in [0,1]
  Depth,      // HxW, metric units
  Disparity,  // HxW or HxWx1, sigmoid output in (0,1)
  Mask,       // HxW, values in {0,1}
  Coords,     // HxWx2, pixel coordinates
  Features,
  Params,
};

inline const char* role_name(TensorRole r) {
  switch (r) {
    case TensorRole::Image: return "image";
    case TensorRole::Depth: return "depth";
    case TensorRole::Disparity: return "disparity";
    case TensorRole::Mask: return "mask";
    case TensorRole::Coords: return "coords";
    case TensorRole::Features: return "features";
    case TensorRole::Params: return "params";
    default: return "generic";
  }
}

// Dense row-major tensor. Rank up to 4 in practice; interpretation of axes
// is by convention (images are HxWxC).
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape, TensorRole role = TensorRole::Generic)
      : shape_(std::move(shape)), role_(role) {
    for (int d : shape_)
      if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
    data_.assign(count(), T(0));
  }

  Tensor(std::vector<int> shape, std::vector<T> values,
         TensorRole role = TensorRole::Generic)
      : shape_(std::move(shape)), data_(std::move(values)), role_(role) {
    for (int d : shape_)
      if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
    if (data_.size() != count())
      throw std::invalid_argument("Tensor: data size does not match shape");
  }

  static Tensor full(std::vector<int> shape, T value,
                     TensorRole role = TensorRole::Generic) {
    Tensor t(std::move(shape), role);
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const {
    if (i < 0 || i >= rank()) throw std::out_of_range("Tensor::dim");
    return shape_[static_cast<std::size_t>(i)];
  }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  TensorRole role() const { return role_; }
  void set_role(TensorRole r) { role_ = r; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& raw() { return data_; }
  const std::vector<T>& raw() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Row-major indexing helpers for the common ranks.
  T& at(int i, int j) {
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }
  const T& at(int i, int j) const {
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }
  T& at(int i, int j, int k) {
    return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  const T& at(int i, int j, int k) const {
    return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  T& at(int i, int j, int k, int l) {
    return data_[((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) *
                     shape_[3] + l];
  }
  const T& at(int i, int j, int k, int l) const {
    return data_[((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) *
                     shape_[3] + l];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  Tensor reshaped(std::vector<int> shape) const {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    if (n != data_.size())
      throw std::invalid_argument("Tensor::reshaped: element count mismatch");
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    out.role_ = role_;
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape_ = shape_;
    out.role_ = role_;
    out.data_.resize(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i)
      out.data_[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (int i = 0; i < rank(); ++i) os << (i ? "," : "") << shape_[i];
    os << "]";
    return os.str();
  }

 private:
  template <typename U> friend class Tensor;

  std::size_t count() const {
    std::size_t n = 1;
    for (int d : shape_) n *= static_cast<std::size_t>(d);
    return n;
  }

  std::vector<int> shape_;
  std::vector<T> data_;
  TensorRole role_ = TensorRole::Generic;
};

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
  T m = T(0);
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace auxtrack

#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cstl {

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// Dense row-major tensor of rank 1..5.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    validate(shape_);
    data_.assign(static_cast<std::size_t>(numel_of(shape_)), T(0));
  }

  Tensor(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate(shape_);
    if (numel_of(shape_) != static_cast<std::int64_t>(data_.size())) {
      throw std::invalid_argument("Tensor: data length " +
                                  std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor full(std::vector<int> shape, T value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
  }

  bool empty() const { return shape_.empty(); }
  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }

  int extent(int axis) const {
    if (axis < 0 || axis >= rank()) {
      throw std::invalid_argument("Tensor::extent: axis " +
                                  std::to_string(axis) + " out of range for " +
                                  shape_str(shape_));
    }
    return shape_[static_cast<std::size_t>(axis)];
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  void fill(T v) {
    for (auto& x : data_) x = v;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  // Reinterprets the buffer under a new shape of equal element count.
  Tensor reshaped(std::vector<int> shape) const {
    Tensor t;
    t.shape_ = std::move(shape);
    validate(t.shape_);
    if (numel_of(t.shape_) != numel()) {
      throw std::invalid_argument("Tensor::reshaped: " + shape_str(shape_) +
                                  " -> " + shape_str(t.shape_) +
                                  " changes element count");
    }
    t.data_ = data_;
    return t;
  }

  T& operator()(int i) { return data_[static_cast<std::size_t>(i)]; }
  T operator()(int i) const { return data_[static_cast<std::size_t>(i)]; }

  T& operator()(int i, int j) {
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }
  T operator()(int i, int j) const {
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }

  T& operator()(int i, int j, int k) {
    return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  T operator()(int i, int j, int k) const {
    return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }

  T& operator()(int i, int j, int k, int l) {
    return data_[((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] +
                  k) *
                     shape_[3] +
                 l];
  }
  T operator()(int i, int j, int k, int l) const {
    return data_[((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] +
                  k) *
                     shape_[3] +
                 l];
  }

  T& operator()(int i, int j, int k, int l, int m) {
    return data_[(((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] +
                   k) *
                      shape_[3] +
                  l) *
                     shape_[4] +
                 m];
  }
  T operator()(int i, int j, int k, int l, int m) const {
    return data_[(((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] +
                   k) *
                      shape_[3] +
                  l) *
                     shape_[4] +
                 m];
  }

 private:
  static std::int64_t numel_of(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) n *= e;
    return n;
  }

  static void validate(const std::vector<int>& shape) {
    if (shape.empty() || shape.size() > 5) {
      throw std::invalid_argument("Tensor: rank must be 1..5, got " +
                                  shape_str(shape));
    }
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (shape[i] < 1) {
        throw std::invalid_argument("Tensor: axis " + std::to_string(i) +
                                    " has non-positive extent in " +
                                    shape_str(shape));
      }
    }
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

// y = permute(x, perm): y[idx] = x[idx composed with perm],
// i.e. y.shape[a] == x.shape[perm[a]].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) {
    throw std::invalid_argument("permute: perm rank mismatch");
  }
  std::vector<int> seen(static_cast<std::size_t>(r), 0);
  std::vector<int> out_shape(static_cast<std::size_t>(r));
  for (int a = 0; a < r; ++a) {
    const int p = perm[static_cast<std::size_t>(a)];
    if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)]) {
      throw std::invalid_argument("permute: invalid axis permutation");
    }
    seen[static_cast<std::size_t>(p)] = 1;
    out_shape[static_cast<std::size_t>(a)] = x.extent(p);
  }
  Tensor<T> y(out_shape);

  std::vector<std::int64_t> x_strides(static_cast<std::size_t>(r), 1);
  for (int a = r - 2; a >= 0; --a) {
    x_strides[static_cast<std::size_t>(a)] =
        x_strides[static_cast<std::size_t>(a + 1)] * x.extent(a + 1);
  }
  // Stride of each output axis inside x's buffer.
  std::vector<std::int64_t> step(static_cast<std::size_t>(r));
  for (int a = 0; a < r; ++a) {
    step[static_cast<std::size_t>(a)] =
        x_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(a)])];
  }

  const T* src = x.data();
  T* dst = y.data();
  std::vector<int> idx(static_cast<std::size_t>(r), 0);
  std::int64_t src_off = 0;
  const std::int64_t total = y.numel();
  for (std::int64_t i = 0; i < total; ++i) {
    dst[i] = src[src_off];
    for (int a = r - 1; a >= 0; --a) {
      auto ua = static_cast<std::size_t>(a);
      if (++idx[ua] < out_shape[ua]) {
        src_off += step[ua];
        break;
      }
      src_off -= step[ua] * (out_shape[ua] - 1);
      idx[ua] = 0;
    }
  }
  return y;
}

inline std::vector<int> inverse_perm(const std::vector<int>& perm) {
  std::vector<int> inv(perm.size());
  for (std::size_t a = 0; a < perm.size(); ++a) {
    inv[static_cast<std::size_t>(perm[a])] = static_cast<int>(a);
  }
  return inv;
}

// Concatenation along `axis`; all inputs must agree on the other axes.
template <typename T>
Tensor<T> concat(const std::vector<const Tensor<T>*>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat: no inputs");
  const int r = xs[0]->rank();
  if (axis < 0 || axis >= r) throw std::invalid_argument("concat: bad axis");
  std::vector<int> out_shape = xs[0]->shape();
  out_shape[static_cast<std::size_t>(axis)] = 0;
  for (const Tensor<T>* x : xs) {
    if (x->rank() != r) throw std::invalid_argument("concat: rank mismatch");
    for (int a = 0; a < r; ++a) {
      if (a != axis && x->extent(a) != xs[0]->extent(a)) {
        throw std::invalid_argument("concat: extent mismatch on axis " +
                                    std::to_string(a));
      }
    }
    out_shape[static_cast<std::size_t>(axis)] += x->extent(axis);
  }
  Tensor<T> y(out_shape);

  std::int64_t outer = 1;
  for (int a = 0; a < axis; ++a) outer *= out_shape[static_cast<std::size_t>(a)];
  std::int64_t inner = 1;
  for (int a = axis + 1; a < r; ++a) {
    inner *= out_shape[static_cast<std::size_t>(a)];
  }

  T* dst = y.data();
  const std::int64_t out_row = out_shape[static_cast<std::size_t>(axis)] * inner;
  std::int64_t offset = 0;
  for (const Tensor<T>* x : xs) {
    const std::int64_t block = x->extent(axis) * inner;
    const T* src = x->data();
    for (std::int64_t o = 0; o < outer; ++o) {
      T* d = dst + o * out_row + offset;
      const T* s = src + o * block;
      for (std::int64_t i = 0; i < block; ++i) d[i] = s[i];
    }
    offset += block;
  }
  return y;
}

// Scatters slices of dy back onto the concat inputs (accumulating); the
// exact adjoint of concat above.
template <typename T>
void concat_backward(const Tensor<T>& dy, int axis,
                     const std::vector<Tensor<T>*>& dxs) {
  if (dxs.empty()) throw std::invalid_argument("concat_backward: no outputs");
  const int r = dy.rank();
  std::int64_t outer = 1;
  for (int a = 0; a < axis; ++a) outer *= dy.extent(a);
  std::int64_t inner = 1;
  for (int a = axis + 1; a < r; ++a) inner *= dy.extent(a);

  const T* src = dy.data();
  const std::int64_t dy_row = dy.extent(axis) * inner;
  std::int64_t offset = 0;
  for (Tensor<T>* dx : dxs) {
    if (dx == nullptr) {
      throw std::invalid_argument("concat_backward: null gradient slot");
    }
    const std::int64_t block = dx->extent(axis) * inner;
    T* dst = dx->data();
    for (std::int64_t o = 0; o < outer; ++o) {
      const T* s = src + o * dy_row + offset;
      T* d = dst + o * block;
      for (std::int64_t i = 0; i < block; ++i) d[i] += s[i];
    }
    offset += block;
  }
}

}  // namespace cstl

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "gfrnet/errors.hpp"

namespace gfrnet {

#if defined(GFRNET_REAL64)
using Real = double;
#else
using Real = float;
#endif

// Dimensions of a dense 4-D tensor, (batch, channel, height, width).
struct Shape {
  int64_t n = 0, c = 0, h = 0, w = 0;

  int64_t count() const { return n * c * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Dense 4-D array, row-major in (n, c, h, w) order with w fastest.
// Values are immutable once an operation has produced the tensor; mutation
// through data() is reserved for the operation constructing it.
template <typename T>
class TensorT {
 public:
  TensorT() = default;
  explicit TensorT(Shape s, T fill = T(0));
  TensorT(Shape s, std::vector<T> values);

  const Shape& shape() const { return shape_; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  int64_t index(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& at(int64_t n, int64_t c, int64_t h, int64_t w) { return data_[index(n, c, h, w)]; }
  const T& at(int64_t n, int64_t c, int64_t h, int64_t w) const { return data_[index(n, c, h, w)]; }

  T& operator[](int64_t i) { return data_[i]; }
  const T& operator[](int64_t i) const { return data_[i]; }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  void fill(T v);

  // Reinterprets the flat data under a new shape with the same element count.
  TensorT reshaped(Shape s) const;

  // Throws NumericError naming `what` if any element is NaN or infinite.
  void check_finite(const char* what) const;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<Real>;

// Integer label map (n, h, w); the value carrier for ground truth and
// predicted label images.
struct LabelMap {
  int64_t n = 0, h = 0, w = 0;
  std::vector<int32_t> v;

  LabelMap() = default;
  LabelMap(int64_t n_, int64_t h_, int64_t w_, int32_t fill = 0)
      : n(n_), h(h_), w(w_), v(static_cast<size_t>(n_ * h_ * w_), fill) {}

  int64_t count() const { return n * h * w; }
  int32_t& at(int64_t i, int64_t y, int64_t x) { return v[(i * h + y) * w + x]; }
  int32_t at(int64_t i, int64_t y, int64_t x) const { return v[(i * h + y) * w + x]; }
  bool operator==(const LabelMap&) const = default;
};

// splitmix64 stream. Pinned so that a seed reproduces the same sequence on
// every platform; single-owner, not shareable across threads.
class Prng {
 public:
  explicit Prng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64();

  // Uniform in [0, 1) with 53 random bits.
  double next_double();

  // Uniform in [0, bound); bound must be positive. Uses modulo reduction.
  uint64_t next_below(uint64_t bound);

  // Derived independent stream; does not advance this generator.
  Prng fork(uint64_t stream) const;

 private:
  uint64_t state_;
};

// FNV-1a, for deriving per-name substreams.
uint64_t hash64(std::string_view s);

// Uniform Xavier/Glorot initialization: values in [-a, a] with
// a = sqrt(6 / (fan_in + fan_out)). Consumes exactly shape.count() draws.
template <typename T>
TensorT<T> xavier_init(int64_t fan_in, int64_t fan_out, Shape shape, Prng& rng);

enum class Elementwise { add, mul };

// out[i] = a[i] (+ or *) b[i]; shapes must match.
template <typename T>
TensorT<T> elementwise(const TensorT<T>& a, const TensorT<T>& b, Elementwise kind);

}  // namespace gfrnet

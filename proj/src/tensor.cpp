#include "gfrnet/tensor.hpp"

#include <cmath>
#include <sstream>

namespace gfrnet {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

template <typename T>
TensorT<T>::TensorT(Shape s, T fill) : shape_(s) {
  if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
    throw ShapeError("negative tensor dimension " + s.str());
  }
  data_.assign(static_cast<size_t>(s.count()), fill);
}

template <typename T>
TensorT<T>::TensorT(Shape s, std::vector<T> values) : shape_(s), data_(std::move(values)) {
  if (static_cast<int64_t>(data_.size()) != s.count()) {
    throw ShapeError("data length " + std::to_string(data_.size()) +
                     " does not match shape " + s.str());
  }
}

template <typename T>
void TensorT<T>::fill(T v) {
  for (auto& x : data_) x = v;
}

template <typename T>
TensorT<T> TensorT<T>::reshaped(Shape s) const {
  if (s.count() != shape_.count()) {
    throw ShapeError("cannot reshape " + shape_.str() + " to " + s.str());
  }
  return TensorT(s, data_);
}

template <typename T>
void TensorT<T>::check_finite(const char* what) const {
  for (const T& x : data_) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("non-finite value in ") + what);
    }
  }
}

uint64_t Prng::next_u64() {
  // splitmix64 (Steele, Lea, Flood 2014); fully specified, portable.
  state_ += 0x9E3779B97F4A7C15ull;
  uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double Prng::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

uint64_t Prng::next_below(uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("Prng::next_below: bound must be positive");
  return next_u64() % bound;
}

Prng Prng::fork(uint64_t stream) const {
  Prng mix(state_ ^ (0xA0761D6478BD642Full * (stream + 1)));
  return Prng(mix.next_u64());
}

uint64_t hash64(std::string_view s) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001B3ull;
  }
  return h;
}

template <typename T>
TensorT<T> xavier_init(int64_t fan_in, int64_t fan_out, Shape shape, Prng& rng) {
  if (fan_in < 1 || fan_out < 1) {
    throw ShapeError("xavier_init: fan_in and fan_out must be positive");
  }
  if (shape.count() <= 0) {
    throw ShapeError("xavier_init: empty parameter " + shape.str());
  }
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  TensorT<T> out(shape);
  for (int64_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<T>((2.0 * rng.next_double() - 1.0) * a);
  }
  out.check_finite("xavier_init");
  return out;
}

template <typename T>
TensorT<T> elementwise(const TensorT<T>& a, const TensorT<T>& b, Elementwise kind) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("elementwise: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  TensorT<T> out(a.shape());
  const int64_t m = a.size();
  if (kind == Elementwise::add) {
    for (int64_t i = 0; i < m; ++i) out[i] = a[i] + b[i];
  } else {
    for (int64_t i = 0; i < m; ++i) out[i] = a[i] * b[i];
  }
  out.check_finite("elementwise");
  return out;
}

template class TensorT<float>;
template class TensorT<double>;
template TensorT<float> xavier_init<float>(int64_t, int64_t, Shape, Prng&);
template TensorT<double> xavier_init<double>(int64_t, int64_t, Shape, Prng&);
template TensorT<float> elementwise<float>(const TensorT<float>&, const TensorT<float>&, Elementwise);
template TensorT<double> elementwise<double>(const TensorT<double>&, const TensorT<double>&, Elementwise);

}  // namespace gfrnet

// SPDX-License-Identifier: Apache-2.0
/**
 * @file   tensor.hpp
 * @brief  Dense row-major tensor, trainable parameters and the seeded RNG
 *         shared by every other header.
 */
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace avsel {

/// Raised when tensor shapes do not agree with an op's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised on NaN/Inf reaching a place where finite values are required.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape &shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape &shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <class Real>
class BasicTensor {
 public:
  using value_type = Real;

  /// Rank-0 tensor holding a single zero.
  BasicTensor() : data_(1, Real(0)) {}

  explicit BasicTensor(Shape shape, Real fill = Real(0))
      : shape_(std::move(shape)) {
    check_dims();
    data_.assign(shape_size(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<Real> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (shape_size(shape_) != data_.size())
      throw ShapeError("tensor: shape " + shape_str(shape_) + " needs " +
                       std::to_string(shape_size(shape_)) + " values, got " +
                       std::to_string(data_.size()));
  }

  BasicTensor(Shape shape, std::initializer_list<Real> data)
      : BasicTensor(std::move(shape), std::vector<Real>(data)) {}

  static BasicTensor zeros_like(const BasicTensor &t) {
    return BasicTensor(t.shape_);
  }

  const Shape &shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  Real *ptr() { return data_.data(); }
  const Real *ptr() const { return data_.data(); }
  const std::vector<Real> &vec() const { return data_; }

  Real &operator[](std::size_t i) { return data_[i]; }
  const Real &operator[](std::size_t i) const { return data_[i]; }

  template <class... I>
  Real &at(I... idx) {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <class... I>
  const Real &at(I... idx) const {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  BasicTensor reshaped(Shape shape) const {
    return BasicTensor(std::move(shape), data_);
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (Real v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <class Other>
  BasicTensor<Other> cast() const {
    return BasicTensor<Other>(shape_,
                              std::vector<Other>(data_.begin(), data_.end()));
  }

  friend bool operator==(const BasicTensor &a, const BasicTensor &b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_dims() const {
    for (std::size_t i = 0; i < shape_.size(); ++i)
      if (shape_[i] == 0)
        throw ShapeError("tensor: dimension " + std::to_string(i) +
                         " of shape " + shape_str(shape_) + " is zero");
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    std::size_t off = 0, d = 0;
    for (std::size_t i : idx) off = off * shape_[d++] + i;
    return off;
  }

  Shape shape_;
  std::vector<Real> data_;
};

using Tensor = BasicTensor<double>;

/// Throws ShapeError unless `t` has exactly the given shape.
template <class Real>
void expect_shape(const BasicTensor<Real> &t, const Shape &want,
                  std::string_view what) {
  if (t.shape() != want)
    throw ShapeError(std::string(what) + ": expected shape " +
                     shape_str(want) + ", got " + shape_str(t.shape()));
}

template <class Real>
void expect_rank(const BasicTensor<Real> &t, std::size_t rank,
                 std::string_view what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + ": expected rank " +
                     std::to_string(rank) + ", got shape " +
                     shape_str(t.shape()));
}

template <class Real>
void require_finite(const BasicTensor<Real> &t, std::string_view what) {
  if (!t.all_finite())
    throw NumericalError(std::string(what) + ": non-finite value");
}

/// A named trainable (or frozen) tensor with its gradient accumulator.
template <class Real>
struct BasicParameter {
  std::string name;
  BasicTensor<Real> value;
  BasicTensor<Real> grad;
  bool trainable = true;

  BasicParameter() = default;
  BasicParameter(std::string n, BasicTensor<Real> v, bool train = true)
      : name(std::move(n)),
        value(std::move(v)),
        grad(BasicTensor<Real>::zeros_like(value)),
        trainable(train) {}

  void zero_grad() { grad.fill(Real(0)); }
};

using Parameter = BasicParameter<double>;

// FNV-1a over a byte range.
inline std::uint64_t fnv1a64(const void *bytes, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto *p = static_cast<const unsigned char *>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Sub-seed for a named consumer: splitmix64(seed ^ fnv1a64(purpose)),
/// optionally chained with an index (e.g. a training step).
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) {
  return splitmix64(seed ^ fnv1a64(purpose));
}
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose,
                                 std::uint64_t index) {
  return splitmix64(derive_seed(seed, purpose) ^ splitmix64(index));
}

/// Checksum over the little-endian IEEE bytes of a tensor.
template <class Real>
std::uint64_t checksum(const BasicTensor<Real> &t,
                       std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (Real v : t.data()) {
    auto bits = std::bit_cast<std::conditional_t<sizeof(Real) == 8,
                                                 std::uint64_t, std::uint32_t>>(v);
    unsigned char b[sizeof(Real)];
    for (std::size_t i = 0; i < sizeof(Real); ++i)
      b[i] = static_cast<unsigned char>(bits >> (8 * i));
    h = fnv1a64(b, sizeof(Real), h);
  }
  return h;
}

/**
 * Deterministic random source. The engine is std::mt19937_64, whose output
 * sequence is fixed by the standard; the distributions below are written out
 * here (std:: distributions are implementation-defined):
 *   uniform()  = (u64 >> 11) * 2^-53           in [0, 1)
 *   normal()   = Box-Muller on two uniforms, second value cached
 *   index(n)   = rejection sampling on u64 for an unbiased value in [0, n)
 */
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    constexpr double two_pi = 6.283185307179586476925286766559;
    spare_ = r * std::sin(two_pi * u2);
    has_spare_ = true;
    return r * std::cos(two_pi * u2);
  }

  std::size_t index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("SeededRng::index: n == 0");
    const std::uint64_t limit =
        std::numeric_limits<std::uint64_t>::max() -
        std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
  }

  template <class T>
  void shuffle(std::vector<T> &v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

template <class Real>
BasicTensor<Real> random_uniform(Shape shape, SeededRng &rng, double lo,
                                 double hi) {
  BasicTensor<Real> t(std::move(shape));
  for (auto &v : t.data()) v = static_cast<Real>(rng.uniform(lo, hi));
  return t;
}

template <class Real>
BasicTensor<Real> random_normal(Shape shape, SeededRng &rng,
                                double sigma = 1.0) {
  BasicTensor<Real> t(std::move(shape));
  for (auto &v : t.data()) v = static_cast<Real>(sigma * rng.normal());
  return t;
}

}  // namespace avsel

#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace smallcap {

using cplx = std::complex<double>;
using Vec3 = std::array<double, 3>;
template <std::size_t D> using Vec = std::array<double, D>;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr double kDefaultMemoryCap = 2.0 * 1024 * 1024 * 1024;  // bytes

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidArgument : Error {
  using Error::Error;
};
// raised when a computation would exceed the memory/work budget; message carries sizes
struct CapacityError : Error {
  using Error::Error;
};
struct UnsupportedMode : Error {
  using Error::Error;
};

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw InvalidArgument(msg);
}

// ---- small vector helpers ----
template <std::size_t D> double dot(const Vec<D>& a, const Vec<D>& b) {
  double s = 0;
  for (std::size_t i = 0; i < D; ++i) s += a[i] * b[i];
  return s;
}
template <std::size_t D> double norm(const Vec<D>& a) { return std::sqrt(dot(a, a)); }
template <std::size_t D> Vec<D> operator+(Vec<D> a, const Vec<D>& b) {
  for (std::size_t i = 0; i < D; ++i) a[i] += b[i];
  return a;
}
template <std::size_t D> Vec<D> operator-(Vec<D> a, const Vec<D>& b) {
  for (std::size_t i = 0; i < D; ++i) a[i] -= b[i];
  return a;
}
template <std::size_t D> Vec<D> operator*(double s, Vec<D> a) {
  for (auto& x : a) x *= s;
  return a;
}
template <std::size_t D> Vec<D> normalized(Vec<D> a) {
  double n = norm(a);
  for (auto& x : a) x /= n;
  return a;
}
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

// Neumaier variant of Kahan summation
template <class T> struct CompensatedSum {
  T sum{}, comp{};
  void add(T x) {
    T t = sum + x;
    if constexpr (std::is_same_v<T, double>) {
      if (std::abs(sum) >= std::abs(x))
        comp += (sum - t) + x;
      else
        comp += (x - t) + sum;
    } else {
      comp += (sum - t) + x;  // plain Kahan for non-scalar T
    }
    sum = t;
  }
  T value() const { return sum + comp; }
};

struct ComplexAccumulator {
  CompensatedSum<double> re, im;
  void add(cplx z) {
    re.add(z.real());
    im.add(z.imag());
  }
  cplx value() const { return {re.value(), im.value()}; }
};

// fractional part of x*m computed with an error-free product, result in [-1/2, 1/2)
inline double frac_product(double x, double m) {
  double p = x * m;
  double err = std::fma(x, m, -p);
  double f = p - std::floor(p);
  f += err;
  f -= std::floor(f + 0.5);
  return f;
}

inline double wrap_turns(double t) { return t - std::floor(t + 0.5); }

// e(t) = exp(2 pi i t), t in turns
inline cplx e_turns(double t) {
  double r = kTwoPi * wrap_turns(t);
  return {std::cos(r), std::sin(r)};
}

inline std::size_t next_pow2(std::size_t v) {
  std::size_t p = 1;
  while (p < v) p <<= 1;
  return p;
}

inline bool is_even_integer(double p) {
  return p >= 2 && std::abs(p - std::round(p)) < 1e-12 && (static_cast<long long>(std::llround(p)) % 2 == 0);
}

inline double ipow(double x, int k) {
  double r = 1;
  while (k > 0) {
    if (k & 1) r *= x;
    x *= x;
    k >>= 1;
  }
  return r;
}

inline const char* version_string() { return "0.3.1"; }

}  // namespace smallcap

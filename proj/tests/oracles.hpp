#pragma once

#include <cfenv>
#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <vector>

namespace qtk::test {

// Lp quantization error from first principles; nearbyint under the default
// rounding mode breaks ties to even.
inline double oracle_lp_error(std::span<const double> x, double delta, int bits, bool is_signed, double p) {
  const double lo = is_signed ? -std::ldexp(1.0, bits - 1) : 0.0;
  const double hi = is_signed ? std::ldexp(1.0, bits - 1) : std::ldexp(1.0, bits) - 1.0;
  double acc = 0.0;
  for (double v : x) {
    const double level = std::fmin(std::fmax(std::nearbyint(v / delta), lo), hi);
    acc += std::pow(std::abs(level * delta - v), p);
  }
  return std::pow(acc, 1.0 / p);
}

struct GridMin {
  double delta = 0.0;
  double error = std::numeric_limits<double>::infinity();
};

// Uniform scan of delta over (0, delta_hi] with `points` samples.
inline GridMin oracle_dense_scan(std::span<const double> x, int bits, bool is_signed, double p, std::size_t points) {
  double scale = 0.0;
  for (double v : x) scale = std::fmax(scale, is_signed ? std::abs(v) : v);
  const double top = is_signed ? std::ldexp(1.0, bits - 1) : std::ldexp(1.0, bits) - 1.0;
  const double delta_hi = scale / top;
  GridMin best;
  for (std::size_t k = 1; k <= points; ++k) {
    const double d = delta_hi * static_cast<double>(k) / static_cast<double>(points);
    const double e = oracle_lp_error(x, d, bits, is_signed, p);
    if (e < best.error) best = {d, e};
  }
  return best;
}

// f(x) = (x - m)^T A (x - m) + c with A = Q diag(lambda) Q^T, Q from
// Gram-Schmidt on a Gaussian matrix.
struct Quadratic {
  std::size_t n = 0;
  std::vector<double> a;  // row-major
  std::vector<double> minimizer;
  double offset = 0.0;

  double operator()(std::span<const double> x) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < n; ++j) row += a[i * n + j] * (x[j] - minimizer[j]);
      acc += (x[i] - minimizer[i]) * row;
    }
    return acc + offset;
  }
};

inline Quadratic random_quadratic(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> log_eig(-1.0, 1.0), centre(0.5, 1.5);
  std::vector<std::vector<double>> q(n, std::vector<double>(n));
  for (std::size_t k = 0; k < n; ++k) {
    for (auto& v : q[k]) v = g(rng);
    for (std::size_t j = 0; j < k; ++j) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += q[k][i] * q[j][i];
      for (std::size_t i = 0; i < n; ++i) q[k][i] -= dot * q[j][i];
    }
    double norm = 0.0;
    for (double v : q[k]) norm += v * v;
    norm = std::sqrt(norm);
    for (auto& v : q[k]) v /= norm;
  }
  Quadratic f;
  f.n = n;
  f.a.assign(n * n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double lambda = std::pow(10.0, log_eig(rng));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) f.a[i * n + j] += lambda * q[k][i] * q[k][j];
  }
  for (std::size_t i = 0; i < n; ++i) f.minimizer.push_back(centre(rng));
  f.offset = centre(rng);
  return f;
}

inline double rosenbrock(std::span<const double> x) {
  const double a = 1.0 - x[0], b = x[1] - x[0] * x[0];
  return a * a + 100.0 * b * b;
}

// Plain golden-section search on [a, b].
template <class F>
double oracle_golden(F f, double a, double b, double tol) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace qtk::test

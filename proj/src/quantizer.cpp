#include "qtk/quantizer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace qtk {

namespace {

// Round half to even, independent of the current floating-point environment.
double round_half_even(double v) {
  const double r = std::round(v);  // half away from zero
  if (std::abs(r - v) == 0.5) return 2.0 * std::round(v * 0.5);
  return r;
}

double abs_pow(double v, double p) {
  const double a = std::abs(v);
  if (p == 1.0) return a;
  if (p == 2.0) return a * a;
  if (p == 3.0) return a * a * a;
  if (p == 4.0) {
    const double s = a * a;
    return s * s;
  }
  return std::pow(a, p);
}

}  // namespace

void validate(const QuantParams& q) {
  if (!(q.delta > 0.0) || !std::isfinite(q.delta))
    throw std::invalid_argument("quantization step must be positive and finite, got " + std::to_string(q.delta));
  if (q.bits < kMinBits || q.bits > kMaxBits)
    throw std::invalid_argument("bitwidth must lie in [2, 8], got " + std::to_string(q.bits));
}

double lowest_level(const QuantParams& q) { return q.is_signed ? -std::ldexp(1.0, q.bits - 1) : 0.0; }

double highest_level(const QuantParams& q) {
  return q.is_signed ? std::ldexp(1.0, q.bits - 1) : std::ldexp(1.0, q.bits) - 1.0;
}

double clipping_of(const QuantParams& q) {
  validate(q);
  return highest_level(q) * q.delta;
}

QuantParams params_from_clipping(double clipping, int bits, bool is_signed) {
  if (!(clipping > 0.0) || !std::isfinite(clipping))
    throw std::invalid_argument("clipping value must be positive, got " + std::to_string(clipping));
  QuantParams q{1.0, bits, is_signed};
  validate(q);
  q.delta = clipping / highest_level(q);
  return q;
}

double quantize_value(double x, const QuantParams& q) {
  double level = round_half_even(x / q.delta);
  const double lo = lowest_level(q), hi = highest_level(q);
  if (level < lo) level = lo;
  if (level > hi) level = hi;
  return level * q.delta;
}

void quantize_inplace(std::span<double> values, const QuantParams& q) {
  validate(q);
  const double lo = lowest_level(q), hi = highest_level(q);
  const double step = q.delta;
  for (double& v : values) {
    double level = round_half_even(v / step);
    if (level < lo) level = lo;
    if (level > hi) level = hi;
    v = level * step;
  }
}

Tensor quantize(const Tensor& x, const QuantParams& q) {
  Tensor out = x;
  quantize_inplace(out.data(), q);
  return out;
}

double lp_error_pow(std::span<const double> x, const QuantParams& q, double p) {
  if (!(p > 0.0)) throw std::invalid_argument("norm exponent p must be positive, got " + std::to_string(p));
  validate(q);
  const double lo = lowest_level(q), hi = highest_level(q);
  double acc = 0.0;
  for (double v : x) {
    double level = round_half_even(v / q.delta);
    if (level < lo) level = lo;
    if (level > hi) level = hi;
    acc += abs_pow(level * q.delta - v, p);
  }
  return acc;
}

double lp_error(std::span<const double> x, const QuantParams& q, double p) {
  const double s = lp_error_pow(x, q, p);
  if (p == 1.0) return s;
  if (p == 2.0) return std::sqrt(s);
  return std::pow(s, 1.0 / p);
}

double lp_error(const Tensor& x, const QuantParams& q, double p) { return lp_error(x.data(), q, p); }

}  // namespace qtk

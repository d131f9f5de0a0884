#pragma once

#include <span>

#include "qtk/tensor.hpp"

namespace qtk {

// Per-tensor symmetric uniform quantizer.
//
// Signed grids use the integer levels [-2^(M-1), +2^(M-1)], unsigned grids
// use [0, 2^M - 1]. The clipping value is always derived from delta.
struct QuantParams {
  double delta = 1.0;
  int bits = 8;
  bool is_signed = true;

  bool operator==(const QuantParams&) const = default;
};

inline constexpr int kMinBits = 2;
inline constexpr int kMaxBits = 8;

// Throws std::invalid_argument unless delta > 0 (finite) and bits in [2, 8].
void validate(const QuantParams& q);

double lowest_level(const QuantParams& q);   // -2^(M-1) or 0
double highest_level(const QuantParams& q);  // 2^(M-1) or 2^M - 1

double clipping_of(const QuantParams& q);
QuantParams params_from_clipping(double clipping, int bits, bool is_signed);

double quantize_value(double x, const QuantParams& q);
Tensor quantize(const Tensor& x, const QuantParams& q);
void quantize_inplace(std::span<double> values, const QuantParams& q);

// (sum_i |Q(x_i) - x_i|^p)^(1/p)
double lp_error(std::span<const double> x, const QuantParams& q, double p);
double lp_error(const Tensor& x, const QuantParams& q, double p);

// Same quantity raised to the p-th power; cheaper and monotone in lp_error.
double lp_error_pow(std::span<const double> x, const QuantParams& q, double p);

}  // namespace qtk

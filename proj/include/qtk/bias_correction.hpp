#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "qtk/graph.hpp"
#include "qtk/tensor.hpp"

namespace qtk {

enum class BiasCorrection { none, mean, mean_var };

BiasCorrection bias_correction_from_string(const std::string& s);  // "none", "mean", "mean-var"
std::string to_string(BiasCorrection mode);

// Per-channel shift of quantized weights wq so each channel of the result has
// the mean of the matching channel of w. mean_var additionally rescales the
// channel spread to std(w_i) when the shifted channel is not constant.
// The result is generally off the quantization grid.
Tensor bias_correct(const Tensor& w, const Tensor& wq, BiasCorrection mode = BiasCorrection::mean,
                    std::size_t axis = 0);

// Model with weight quantization applied once (and optionally bias
// corrected), keeping only the activation slots live.
struct BakedModel {
  QuantizedModel model;
  StepVector delta;  // activation steps
};

BakedModel bake_weights(const QuantizedModel& qm, std::span<const double> delta, BiasCorrection mode);

}  // namespace qtk

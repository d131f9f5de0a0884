#include "qtk/bias_correction.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "qtk/errors.hpp"

namespace qtk {

BiasCorrection bias_correction_from_string(const std::string& s) {
  if (s == "none") return BiasCorrection::none;
  if (s == "mean") return BiasCorrection::mean;
  if (s == "mean-var") return BiasCorrection::mean_var;
  throw std::invalid_argument("unknown bias correction mode '" + s + "' (expected none, mean or mean-var)");
}

std::string to_string(BiasCorrection mode) {
  switch (mode) {
    case BiasCorrection::none: return "none";
    case BiasCorrection::mean: return "mean";
    case BiasCorrection::mean_var: return "mean-var";
  }
  return "?";
}

Tensor bias_correct(const Tensor& w, const Tensor& wq, BiasCorrection mode, std::size_t axis) {
  if (w.shape() != wq.shape())
    throw ShapeError("bias_correct: " + shape_string(w.shape()) + " vs " + shape_string(wq.shape()));
  if (axis >= w.rank()) throw std::invalid_argument("bias_correct: axis " + std::to_string(axis) + " out of range");
  if (mode == BiasCorrection::none) return wq;

  const std::size_t channels = w.dim(axis);
  std::size_t inner = 1;
  for (std::size_t k = axis + 1; k < w.rank(); ++k) inner *= w.dim(k);
  const auto channel_of = [&](std::size_t flat) { return (flat / inner) % channels; };
  const auto count = static_cast<double>(w.size() / channels);

  std::vector<double> mean_w(channels, 0.0), mean_q(channels, 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    mean_w[channel_of(i)] += w[i];
    mean_q[channel_of(i)] += wq[i];
  }
  for (std::size_t c = 0; c < channels; ++c) {
    mean_w[c] /= count;
    mean_q[c] /= count;
  }

  Tensor out = wq;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += mean_w[channel_of(i)] - mean_q[channel_of(i)];
  if (mode == BiasCorrection::mean) return out;

  std::vector<double> mean_o(channels, 0.0), var_w(channels, 0.0), var_o(channels, 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) mean_o[channel_of(i)] += out[i];
  for (auto& m : mean_o) m /= count;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t c = channel_of(i);
    var_w[c] += (w[i] - mean_w[c]) * (w[i] - mean_w[c]);
    var_o[c] += (out[i] - mean_o[c]) * (out[i] - mean_o[c]);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t c = channel_of(i);
    if (var_o[c] > 0.0) out[i] = mean_o[c] + (out[i] - mean_o[c]) * std::sqrt(var_w[c] / var_o[c]);
  }
  return out;
}

BakedModel bake_weights(const QuantizedModel& qm, std::span<const double> delta, BiasCorrection mode) {
  qm.check_delta(delta);
  const auto snapped = quantized_weights(qm, delta);
  Model m = qm.model();
  std::vector<QuantSlot> slots;
  StepVector act;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    Layer& l = m.layers[i];
    if (qm.weight_slot(i)) l.weights = bias_correct(*l.weights, *snapped[i], mode, 0);
    l.quantize_weights = false;
  }
  for (std::size_t k = qm.num_weight_params(); k < qm.num_params(); ++k) {
    slots.push_back(qm.slots()[k]);
    act.push_back(delta[k]);
  }
  return {QuantizedModel(std::move(m), std::move(slots)), std::move(act)};
}

}  // namespace qtk

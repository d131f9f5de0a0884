#include "qtk/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "qtk/errors.hpp"
#include "qtk/parallel.hpp"

namespace qtk {

using nlohmann::json;

double top_step(std::span<const double> x, int bits, bool is_signed) {
  const QuantParams probe{1.0, bits, is_signed};
  validate(probe);
  double scale = 0.0;
  for (double v : x) scale = std::max(scale, is_signed ? std::abs(v) : v);
  if (!(scale > 0.0)) throw DegenerateInputError("tensor has no positive range to calibrate against");
  return scale / highest_level(probe);
}

QuantParams calibrate_tensor(std::span<const double> x, int bits, bool is_signed, double p,
                             const TensorSearch& search) {
  if (!(p > 0.0)) throw std::invalid_argument("norm exponent p must be positive");
  if (x.empty()) throw DegenerateInputError("cannot calibrate an empty tensor");
  if (search.scan_points < 3) throw std::invalid_argument("scan needs at least 3 points");
  const double hi = top_step(x, bits, is_signed);

  double best_delta = hi;
  double best_err = std::numeric_limits<double>::infinity();
  auto objective = [&](double delta) {
    const double e = lp_error_pow(x, QuantParams{delta, bits, is_signed}, p);
    if (e < best_err || (e == best_err && delta > best_delta)) {
      best_err = e;
      best_delta = delta;
    }
    return e;
  };

  constexpr double kInvPhi = 0.6180339887498949;
  auto refine = [&](double a, double b) {
    double c = b - kInvPhi * (b - a);
    double d = a + kInvPhi * (b - a);
    double fc = objective(c), fd = objective(d);
    for (int it = 0; it < 200 && (b - a) > search.rel_tol * 0.5 * (a + b); ++it) {
      if (fc <= fd) {
        b = d;
        d = c;
        fd = fc;
        c = b - kInvPhi * (b - a);
        fc = objective(c);
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + kInvPhi * (b - a);
        fd = objective(d);
      }
    }
  };
  const double lo = hi / search.lower_ratio;

  // Small tensors: between consecutive rounding breakpoints |x| / (k + 1/2)
  // every element keeps its level, so for p >= 1 the error is convex on each
  // piece and refining every piece finds the global minimum. The zero-error
  // points |x| / k are cut as well, which makes p = 1 pieces linear.
  const double top = highest_level(QuantParams{1.0, bits, is_signed});
  if (p >= 1.0 && static_cast<double>(x.size()) * static_cast<double>(x.size()) * top <= search.exact_budget) {
    std::vector<double> cuts{lo, hi};
    for (double v : x) {
      const double mag = is_signed ? std::abs(v) : v;
      for (double h = 0.5; h <= top; h += 0.5) {
        const double cut = mag / h;
        if (cut > lo && cut < hi) cuts.push_back(cut);
      }
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    for (double c : cuts) objective(c);
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) refine(cuts[k], cuts[k + 1]);
    return QuantParams{best_delta, bits, is_signed};
  }

  const int n = search.scan_points;
  std::vector<double> grid(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const double frac = static_cast<double>(n - 1 - k) / static_cast<double>(n);
    grid[static_cast<std::size_t>(k)] = hi * std::pow(search.lower_ratio, -frac);
  }
  grid.back() = hi;

  std::size_t arg = 0;
  double arg_err = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double e = objective(grid[k]);
    if (e < arg_err) {
      arg_err = e;
      arg = k;
    }
  }

  // Golden-section refinement between the neighbours of the best candidate.
  refine(arg == 0 ? lo : grid[arg - 1], arg + 1 == grid.size() ? hi : grid[arg + 1]);
  return QuantParams{best_delta, bits, is_signed};
}

QuantParams calibrate_tensor(const Tensor& x, int bits, bool is_signed, double p, const TensorSearch& search) {
  return calibrate_tensor(x.data(), bits, is_signed, p, search);
}

SlotTensors gather_slot_tensors(const QuantizedModel& qm, const CalibSet& calib) {
  validate(calib, qm.model().num_classes);
  SlotTensors out;
  out.values.resize(qm.num_params());
  const auto& layers = qm.model().layers;
  for (std::size_t k = 0; k < qm.num_weight_params(); ++k) {
    const auto& w = layers[qm.slots()[k].layer].weights->values();
    out.values[k] = w;
  }
  if (qm.num_weight_params() == qm.num_params()) return out;
  // Activation tensors are pooled in sample order, batch by batch.
  const std::size_t n = calib.size();
  for (std::size_t begin = 0; begin < n; begin += calib.batch_size) {
    const std::size_t end = std::min(n, begin + calib.batch_size);
    const auto taps = collect_activations(qm, slice_rows(calib.inputs, begin, end));
    for (std::size_t t = 0; t < taps.size(); ++t) {
      auto& dst = out.values[qm.num_weight_params() + t];
      dst.insert(dst.end(), taps[t].data().begin(), taps[t].data().end());
    }
  }
  return out;
}

StepVector calibrate_slots(const QuantizedModel& qm, const SlotTensors& tensors, double p,
                           const TensorSearch& search) {
  if (tensors.values.size() != qm.num_params())
    throw std::invalid_argument("slot tensor count does not match the model");
  StepVector delta(qm.num_params());
  parallel_for(delta.size(), [&](std::size_t k) {
    const QuantSlot& s = qm.slots()[k];
    try {
      delta[k] = calibrate_tensor(tensors.values[k], s.bits, s.is_signed(), p, search).delta;
    } catch (const DegenerateInputError& e) {
      throw DegenerateInputError(to_string(s.kind) + " tensor of layer " + std::to_string(s.layer) + ": " + e.what());
    }
  });
  return delta;
}

StepVector calibrate_model(const QuantizedModel& qm, const CalibSet& calib, double p, const TensorSearch& search) {
  return calibrate_slots(qm, gather_slot_tensors(qm, calib), p, search);
}

json step_vector_to_json(std::span<const QuantSlot> slots, std::span<const double> delta) {
  if (slots.size() != delta.size()) throw std::invalid_argument("slots and steps differ in length");
  json arr = json::array();
  for (std::size_t k = 0; k < slots.size(); ++k)
    arr.push_back({{"layer", slots[k].layer}, {"kind", to_string(slots[k].kind)}, {"delta", delta[k]},
                   {"bits", slots[k].bits}});
  return arr;
}

StoredSteps step_vector_from_json(const json& j) {
  StoredSteps out;
  try {
    if (!j.is_array()) throw ParseError("step vector must be a JSON array");
    for (const auto& e : j) {
      QuantSlot s;
      s.layer = e.at("layer").get<std::size_t>();
      const auto kind = e.at("kind").get<std::string>();
      if (kind == "weight") {
        s.kind = SlotKind::weight;
      } else if (kind == "activation") {
        s.kind = SlotKind::activation;
      } else {
        throw ParseError("unknown step kind '" + kind + "'");
      }
      s.bits = e.at("bits").get<int>();
      const double d = e.at("delta").get<double>();
      if (!(d > 0.0) || !std::isfinite(d)) throw ParseError("step sizes must be positive and finite");
      out.slots.push_back(s);
      out.delta.push_back(d);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed step vector: ") + e.what());
  }
  return out;
}

}  // namespace qtk

#pragma once

#include <span>
#include <vector>

#include <json.hpp>

#include "qtk/graph.hpp"
#include "qtk/quantizer.hpp"
#include "qtk/tensor.hpp"

namespace qtk {

// Search settings for the per-tensor Lp minimisation over
// [hi / lower_ratio, hi]. Small tensors (size^2 * top level <= exact_budget,
// p >= 1) are searched piece by piece between rounding breakpoints; larger
// ones use a log-spaced scan followed by golden-section refinement around
// the best candidate.
struct TensorSearch {
  int scan_points = 128;
  double lower_ratio = 1e3;
  double rel_tol = 1e-5;
  double exact_budget = 1 << 20;
};

// Step size minimising lp_error(x, delta, p) over (0, delta_hi], where
// delta_hi puts max|x| (signed) or max(x) (unsigned) on the top level.
// Throws DegenerateInputError when that scale is zero.
QuantParams calibrate_tensor(std::span<const double> x, int bits, bool is_signed, double p,
                             const TensorSearch& search = {});
QuantParams calibrate_tensor(const Tensor& x, int bits, bool is_signed, double p, const TensorSearch& search = {});

double top_step(std::span<const double> x, int bits, bool is_signed);

// Flattened tensors feeding each slot of a quantized model: the FP weights
// for weight slots, and the FP activations pooled over the whole
// calibration set for activation slots.
struct SlotTensors {
  std::vector<std::vector<double>> values;  // one entry per slot
};

SlotTensors gather_slot_tensors(const QuantizedModel& qm, const CalibSet& calib);

StepVector calibrate_slots(const QuantizedModel& qm, const SlotTensors& tensors, double p,
                           const TensorSearch& search = {});

// Layer-wise Lp-optimal steps for every slot (Δ_p). p = 2 is the MMSE baseline.
StepVector calibrate_model(const QuantizedModel& qm, const CalibSet& calib, double p, const TensorSearch& search = {});

// A point on the Lp trajectory.
struct PNormSample {
  double p = 2.0;
  StepVector delta;
  double loss = 0.0;
};

// [{"layer", "kind": "weight"|"activation", "delta", "bits"}, ...]
nlohmann::json step_vector_to_json(std::span<const QuantSlot> slots, std::span<const double> delta);

struct StoredSteps {
  std::vector<QuantSlot> slots;
  StepVector delta;
};
StoredSteps step_vector_from_json(const nlohmann::json& j);

}  // namespace qtk

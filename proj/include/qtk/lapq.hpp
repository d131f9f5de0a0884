#pragma once

#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "qtk/calibration.hpp"
#include "qtk/graph.hpp"
#include "qtk/optimizer.hpp"

namespace qtk {

struct QuadApprox {
  QuadFit fit;
  double p_star = 0.0;   // p of the returned point
  StepVector delta;      // step vector actually returned
  double loss = 0.0;
  bool from_fit = true;  // false when a sampled point beat Δ_{p*}
};

// Fits loss against p over the samples, calibrates at the fitted p* and
// returns whichever of {Δ_{p*}, samples} has the lowest loss.
QuadApprox quad_approx(std::span<const PNormSample> samples, const std::function<StepVector(double)>& calibrate_at,
                       const std::function<double(std::span<const double>)>& evaluate);

// Calibration loss with non-positive steps mapped to +inf.
Objective step_objective(const QuantizedModel& qm, const CalibSet& calib);

enum class LapqPhase { layerwise, quadratic, full };

struct LapqConfig {
  std::vector<double> p_grid{2.0, 2.4, 2.8, 3.2, 3.6, 4.0};
  LapqPhase phase = LapqPhase::full;
  PowellConfig powell;
  TensorSearch search;
};

struct PhaseTimes {
  double layerwise = 0.0;
  double quadratic = 0.0;
  double joint = 0.0;
};

struct LapqResult {
  std::vector<PNormSample> samples;  // one per p in the grid
  QuadApprox init;                   // starting point of the joint search
  StepVector delta_star;
  double loss_star = 0.0;
  std::vector<double> loss_trace;  // non-increasing
  int powell_iterations = 0;
  int loss_evaluations = 0;
  PhaseTimes seconds;
};

// Layer-wise Lp calibration over the p grid, quadratic approximation over p,
// then Powell's method on the calibration loss starting from Δ_{p*}.
// With phase == layerwise only the first p of the grid is used.
LapqResult lapq(const QuantizedModel& qm, const CalibSet& calib, const LapqConfig& config = {});

// Timings are left out unless requested; everything else is deterministic.
nlohmann::json to_json(const LapqResult& r, std::span<const QuantSlot> slots, bool with_timings = false);

}  // namespace qtk

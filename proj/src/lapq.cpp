#include "qtk/lapq.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace qtk {

using nlohmann::json;

QuadApprox quad_approx(std::span<const PNormSample> samples, const std::function<StepVector(double)>& calibrate_at,
                       const std::function<double(std::span<const double>)>& evaluate) {
  std::vector<double> p, l;
  for (const auto& s : samples) {
    p.push_back(s.p);
    l.push_back(s.loss);
  }
  QuadApprox out;
  out.fit = fit_quadratic(p, l);
  out.p_star = out.fit.p_star;

  const auto same_p = std::find_if(samples.begin(), samples.end(),
                                   [&](const PNormSample& s) { return s.p == out.p_star; });
  if (same_p != samples.end()) {
    out.delta = same_p->delta;
    out.loss = same_p->loss;
  } else {
    out.delta = calibrate_at(out.p_star);
    out.loss = evaluate(out.delta);
  }
  for (const auto& s : samples) {
    if (s.loss < out.loss) {
      out.loss = s.loss;
      out.delta = s.delta;
      out.p_star = s.p;
      out.from_fit = false;
    }
  }
  return out;
}

Objective step_objective(const QuantizedModel& qm, const CalibSet& calib) {
  return [&qm, &calib](std::span<const double> delta) {
    for (double d : delta)
      if (!(d > 0.0) || !std::isfinite(d)) return std::numeric_limits<double>::infinity();
    return loss(qm, calib, delta);
  };
}

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

}  // namespace

LapqResult lapq(const QuantizedModel& qm, const CalibSet& calib, const LapqConfig& config) {
  if (config.p_grid.empty()) throw std::invalid_argument("p grid is empty");
  LapqResult r;
  if (qm.num_params() == 0) {
    r.loss_star = loss(qm, calib, {});
    r.loss_trace = {r.loss_star};
    r.init.loss = r.loss_star;
    r.init.from_fit = false;
    r.loss_evaluations = 1;
    return r;
  }

  int evaluations = 0;
  const Objective base = step_objective(qm, calib);
  const Objective objective = [&](std::span<const double> d) {
    ++evaluations;
    return base(d);
  };

  auto t0 = Clock::now();
  const SlotTensors tensors = gather_slot_tensors(qm, calib);
  const std::vector<double> grid =
      config.phase == LapqPhase::layerwise ? std::vector<double>{config.p_grid.front()} : config.p_grid;
  for (double p : grid) {
    PNormSample s;
    s.p = p;
    s.delta = calibrate_slots(qm, tensors, p, config.search);
    s.loss = objective(s.delta);
    r.samples.push_back(std::move(s));
  }
  r.seconds.layerwise = since(t0);

  t0 = Clock::now();
  if (config.phase == LapqPhase::layerwise) {
    r.init.p_star = r.samples.front().p;
    r.init.delta = r.samples.front().delta;
    r.init.loss = r.samples.front().loss;
    r.init.from_fit = false;
  } else {
    r.init = quad_approx(
        r.samples, [&](double p) { return calibrate_slots(qm, tensors, p, config.search); }, objective);
  }
  r.seconds.quadratic = since(t0);

  t0 = Clock::now();
  r.delta_star = r.init.delta;
  r.loss_star = r.init.loss;
  r.loss_trace = {r.loss_star};
  if (config.phase == LapqPhase::full && config.powell.max_outer > 0) {
    const PowellResult pr = powell(objective, r.init.delta, config.powell);
    if (pr.value < r.loss_star) {
      r.delta_star = pr.x;
      r.loss_star = pr.value;
    }
    r.loss_trace.assign(pr.trace.begin(), pr.trace.end());
    r.powell_iterations = pr.outer_iterations;
  }
  r.seconds.joint = since(t0);
  r.loss_evaluations = evaluations;
  return r;
}

json to_json(const LapqResult& r, std::span<const QuantSlot> slots, bool with_timings) {
  json j;
  j["delta_star"] = step_vector_to_json(slots, r.delta_star);
  j["loss"] = r.loss_star;
  j["p_star"] = r.init.p_star;
  j["init"] = {{"p_star", r.init.p_star},
               {"loss", r.init.loss},
               {"from_fit", r.init.from_fit},
               {"fit", {{"a", r.init.fit.a}, {"b", r.init.fit.b}, {"c", r.init.fit.c}, {"used_vertex", r.init.fit.used_vertex}}},
               {"delta", step_vector_to_json(slots, r.init.delta)}};
  j["p_grid"] = json::array();
  for (const auto& s : r.samples)
    j["p_grid"].push_back({{"p", s.p}, {"loss", s.loss}, {"delta", step_vector_to_json(slots, s.delta)}});
  j["loss_trace"] = r.loss_trace;
  j["powell_iterations"] = r.powell_iterations;
  j["loss_evaluations"] = r.loss_evaluations;
  if (with_timings)
    j["seconds"] = {{"layerwise", r.seconds.layerwise}, {"quadratic", r.seconds.quadratic}, {"joint", r.seconds.joint}};
  return j;
}

}  // namespace qtk

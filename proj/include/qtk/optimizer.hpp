#pragma once

#include <functional>
#include <span>
#include <vector>

namespace qtk {

using Objective = std::function<double(std::span<const double>)>;

// Bracketing line search along a direction, then golden-section refinement.
//
// The bracket grows geometrically from lambda = 0 and never leaves
// |lambda| <= bound_fraction * max(|t|, |d|) / |d|. The returned step is the
// best probe seen, so f(t + lambda * d) <= f(t) always holds.
struct LineSearchConfig {
  double rel_tol = 1e-4;
  double growth = 2.0;
  double bound_fraction = 0.5;
  int max_iter = 200;
  bool parabolic_polish = true;  // one interpolation step after golden section
};

struct LineSearchResult {
  double lambda = 0.0;
  double value = 0.0;
  double lo = 0.0;  // bracket that was searched
  double hi = 0.0;
  int evaluations = 0;
};

LineSearchResult line_search(const Objective& f, std::span<const double> t, std::span<const double> d, double f_t,
                             const LineSearchConfig& config = {});

struct PowellConfig {
  int max_outer = 20;
  double ftol = 1e-4;  // stop when one outer iteration improves by less than ftol * |f|
  LineSearchConfig line_search;
};

struct PowellResult {
  std::vector<double> x;
  double value = 0.0;
  double start_value = 0.0;
  std::vector<double> trace;  // best value after start and after each line search
  int outer_iterations = 0;
  int evaluations = 0;
  int direction_resets = 0;
  bool converged = false;
};

// Direction-set minimisation: N line searches along D, drop d_1, append
// d_N = t_N - t_0, one more line search along d_N, repeat. Initial
// directions are coordinate vectors scaled by 0.1 * |start_i|. Returns the
// best point evaluated. Throws NonFiniteError if f(start) is not finite.
PowellResult powell(const Objective& f, std::span<const double> start, const PowellConfig& config = {});

// Least-squares parabola through (p, loss) samples.
struct QuadFit {
  double a = 0.0;  // f(p) = a p^2 + b p + c
  double b = 0.0;
  double c = 0.0;
  double p_star = 0.0;
  bool used_vertex = false;  // false: a <= 0 and p_star is the best sample
  std::vector<double> p;
  std::vector<double> loss;

  double operator()(double x) const { return (a * x + b) * x + c; }
};

// Requires at least 3 distinct p values. For a > 0 the vertex is clamped to
// [min p, max p]; otherwise the sampled p with the least loss is chosen.
QuadFit fit_quadratic(std::span<const double> p, std::span<const double> loss);

}  // namespace qtk

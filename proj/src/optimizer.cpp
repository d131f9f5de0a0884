#include "qtk/optimizer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>

#include "qtk/errors.hpp"

namespace qtk {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kInvPhi = 0.6180339887498949;

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double finite_or_inf(double v) { return std::isnan(v) ? kInf : v; }

struct Probe {
  double lambda;
  double value;
};

}  // namespace

LineSearchResult line_search(const Objective& f, std::span<const double> t, std::span<const double> d, double f_t,
                             const LineSearchConfig& config) {
  if (t.size() != d.size()) throw std::invalid_argument("line search: point and direction differ in size");
  LineSearchResult res;
  res.value = f_t;
  const double dn = norm2(d);
  if (!(dn > 0.0)) return res;

  const double bound = config.bound_fraction * std::max(norm2(t), dn) / dn;
  std::vector<double> x(t.size());
  std::vector<Probe> probes{{0.0, f_t}};
  auto phi = [&](double lambda, bool wins_ties = false) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = t[i] + lambda * d[i];
    const double v = finite_or_inf(f(x));
    ++res.evaluations;
    probes.push_back({lambda, v});
    if (v < res.value || (wins_ties && v == res.value && lambda != 0.0)) {
      res.value = v;
      res.lambda = lambda;
    }
    return v;
  };

  // Bracket.
  const double step = std::min(1.0, bound);
  double lo = -step, hi = step;
  const double f_plus = phi(step);
  double dir = 0.0;
  double f_first = f_plus;
  if (f_plus < f_t) {
    dir = 1.0;
  } else if ((f_first = phi(-step)) < f_t) {
    dir = -1.0;
  }
  if (dir != 0.0) {
    double a = 0.0;
    double b = step;
    double fb = f_first;
    bool closed = false;
    while (b < bound) {
      const double c = std::min(config.growth * b, bound);
      const double fc = phi(dir * c);
      if (fc >= fb) {
        lo = a;
        hi = c;
        closed = true;
        break;
      }
      a = b;
      b = c;
      fb = fc;
    }
    if (!closed) {
      lo = a;
      hi = b;
    }
    if (dir < 0) {
      const double tmp = lo;
      lo = -hi;
      hi = -tmp;
    }
  }
  res.lo = lo;
  res.hi = hi;

  // Golden section on [lo, hi].
  double a = lo, b = hi;
  double c = b - kInvPhi * (b - a);
  double e = a + kInvPhi * (b - a);
  double fc = phi(c), fe = phi(e);
  for (int it = 0; it < config.max_iter; ++it) {
    if (b - a <= config.rel_tol * (std::abs(0.5 * (a + b)) + step)) break;
    if (fc <= fe) {
      b = e;
      e = c;
      fe = fc;
      c = b - kInvPhi * (b - a);
      fc = phi(c);
    } else {
      a = c;
      c = e;
      fc = fe;
      e = a + kInvPhi * (b - a);
      fe = phi(e);
    }
  }

  if (config.parabolic_polish && std::isfinite(res.value)) {
    std::sort(probes.begin(), probes.end(), [](const Probe& l, const Probe& r) { return l.lambda < r.lambda; });
    probes.erase(std::unique(probes.begin(), probes.end(),
                             [](const Probe& l, const Probe& r) { return l.lambda == r.lambda; }),
                 probes.end());
    const auto best = std::find_if(probes.begin(), probes.end(),
                                   [&](const Probe& p) { return p.lambda == res.lambda; });
    auto polish = [&](const Probe& p0, const Probe& p1, const Probe& p2) {
      const double d10 = p1.lambda - p0.lambda, d12 = p1.lambda - p2.lambda;
      const double num = d10 * d10 * (p1.value - p2.value) - d12 * d12 * (p1.value - p0.value);
      const double den = d10 * (p1.value - p2.value) - d12 * (p1.value - p0.value);
      if (den == 0.0 || !std::isfinite(num / den)) return;
      const double vertex = p1.lambda - 0.5 * num / den;
      // An interpolated vertex is the better estimate when values tie.
      if (vertex > p0.lambda && vertex < p2.lambda && vertex != p1.lambda) phi(vertex, true);
    };
    if (best != probes.end() && best != probes.begin() && best + 1 != probes.end()) {
      // Neighbours first, then the outermost finite probes: the wide triple
      // is far less sensitive to cancellation once the bracket has shrunk.
      const Probe p0 = *(best - 1), p1 = *best, p2 = *(best + 1);
      const auto left = std::find_if(probes.begin(), best, [](const Probe& p) { return std::isfinite(p.value); });
      auto right = probes.end() - 1;
      while (right > best && !std::isfinite(right->value)) --right;
      const Probe w0 = *left, w2 = *right;
      polish(p0, p1, p2);
      if (w0.lambda < p0.lambda || w2.lambda > p2.lambda) polish(w0, p1, w2);
    }
  }
  return res;
}

PowellResult powell(const Objective& f, std::span<const double> start, const PowellConfig& config) {
  const std::size_t n = start.size();
  if (n == 0) throw std::invalid_argument("powell: empty start point");
  PowellResult out;
  out.x.assign(start.begin(), start.end());
  out.value = finite_or_inf(f(out.x));
  out.evaluations = 1;
  if (!std::isfinite(out.value)) throw NonFiniteError("powell: objective is not finite at the start point");
  out.start_value = out.value;
  out.trace.push_back(out.value);

  std::vector<std::vector<double>> initial(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) initial[i][i] = start[i] != 0.0 ? 0.1 * std::abs(start[i]) : 0.1;
  auto dirs = initial;

  std::vector<double> x = out.x;
  double fx = out.value;
  auto search = [&](const std::vector<double>& d) {
    const auto ls = line_search(f, x, d, fx, config.line_search);
    out.evaluations += ls.evaluations;
    if (ls.value < fx) {
      for (std::size_t i = 0; i < n; ++i) x[i] += ls.lambda * d[i];
      fx = ls.value;
    }
    if (fx < out.value) {
      out.value = fx;
      out.x = x;
    }
    out.trace.push_back(out.value);
  };

  for (int outer = 0; outer < config.max_outer; ++outer) {
    const std::vector<double> t0 = x;
    const double f0 = fx;
    for (std::size_t k = 0; k < n; ++k) search(dirs[k]);

    std::vector<double> dn(n);
    for (std::size_t i = 0; i < n; ++i) dn[i] = x[i] - t0[i];
    dirs.erase(dirs.begin());
    if (norm2(dn) <= 1e-12 * norm2(x)) {
      dirs = initial;
      ++out.direction_resets;
    } else {
      dirs.push_back(dn);
      search(dirs.back());
    }
    ++out.outer_iterations;
    if (f0 - fx < config.ftol * std::abs(f0)) {
      out.converged = true;
      break;
    }
  }
  return out;
}

QuadFit fit_quadratic(std::span<const double> p, std::span<const double> loss) {
  if (p.size() != loss.size()) throw std::invalid_argument("quadratic fit: p and loss differ in length");
  if (std::set<double>(p.begin(), p.end()).size() < 3)
    throw std::invalid_argument("quadratic fit needs at least 3 distinct p values");
  QuadFit fit;
  fit.p.assign(p.begin(), p.end());
  fit.loss.assign(loss.begin(), loss.end());

  // Fit in centred, scaled coordinates u = (p - mean) / scale.
  const double m = static_cast<double>(p.size());
  double centre = 0.0;
  for (double v : p) centre += v;
  centre /= m;
  double scale = 0.0;
  for (double v : p) scale = std::max(scale, std::abs(v - centre));

  std::array<double, 5> su{};  // sum u^k
  std::array<double, 3> sy{};  // sum u^k y
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double u = (p[i] - centre) / scale;
    double pw = 1.0;
    for (int k = 0; k < 5; ++k) {
      su[static_cast<std::size_t>(k)] += pw;
      if (k < 3) sy[static_cast<std::size_t>(k)] += pw * loss[i];
      pw *= u;
    }
  }
  // Unknowns (A, B, C) of A u^2 + B u + C.
  double mat[3][4] = {{su[4], su[3], su[2], sy[2]}, {su[3], su[2], su[1], sy[1]}, {su[2], su[1], su[0], sy[0]}};
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r)
      if (std::abs(mat[r][col]) > std::abs(mat[piv][col])) piv = r;
    for (int k = 0; k < 4; ++k) std::swap(mat[col][k], mat[piv][k]);
    for (int r = 0; r < 3; ++r) {
      if (r == col || mat[r][col] == 0.0) continue;
      const double factor = mat[r][col] / mat[col][col];
      for (int k = col; k < 4; ++k) mat[r][k] -= factor * mat[col][k];
    }
  }
  const double A = mat[0][3] / mat[0][0];
  const double B = mat[1][3] / mat[1][1];
  const double C = mat[2][3] / mat[2][2];

  fit.a = A / (scale * scale);
  fit.b = B / scale - 2.0 * A * centre / (scale * scale);
  fit.c = C - B * centre / scale + A * centre * centre / (scale * scale);

  const double p_lo = *std::min_element(p.begin(), p.end());
  const double p_hi = *std::max_element(p.begin(), p.end());
  if (A > 0.0) {
    fit.used_vertex = true;
    fit.p_star = std::clamp(centre + scale * (-B / (2.0 * A)), p_lo, p_hi);
  } else {
    const auto best = std::min_element(loss.begin(), loss.end()) - loss.begin();
    fit.p_star = p[static_cast<std::size_t>(best)];
  }
  return fit;
}

}  // namespace qtk

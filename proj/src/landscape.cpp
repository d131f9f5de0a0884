#include "qtk/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "qtk/errors.hpp"
#include "qtk/lapq.hpp"

namespace qtk {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double checked(const Objective& f, std::span<const double> x) {
  const double v = f(x);
  if (!std::isfinite(v)) throw NonFiniteError("loss probe is not finite");
  return v;
}

void check_probe_setup(std::span<const double> delta, std::span<const std::size_t> params, double h_rel) {
  if (!(h_rel > 0.0 && h_rel < 0.5)) throw std::invalid_argument("h_rel must lie in (0, 0.5)");
  for (double d : delta)
    if (!(d > 0.0)) throw std::invalid_argument("finite differences need strictly positive steps");
  for (auto p : params)
    if (p >= delta.size()) throw std::out_of_range("parameter index " + std::to_string(p) + " out of range");
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t k = 0; k < n; ++k)
    v[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1);
  return v;
}

}  // namespace

double GridScan::range() const {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : loss) {
    if (!std::isfinite(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return hi - lo;
}

GridScan grid_scan(const Objective& f, std::span<const double> baseline, std::size_t param_i, std::size_t param_j,
                   FactorRange range_i, FactorRange range_j, std::size_t resolution) {
  if (param_i >= baseline.size() || param_j >= baseline.size())
    throw std::out_of_range("grid scan parameter index out of range");
  if (param_i == param_j) throw std::invalid_argument("grid scan needs two distinct parameters");
  if (resolution < 2) throw std::invalid_argument("grid scan resolution must be >= 2");
  GridScan scan;
  scan.param_i = param_i;
  scan.param_j = param_j;
  for (double fct : linspace(range_i.lo, range_i.hi, resolution)) scan.values_i.push_back(baseline[param_i] * fct);
  for (double fct : linspace(range_j.lo, range_j.hi, resolution)) scan.values_j.push_back(baseline[param_j] * fct);
  std::vector<double> x(baseline.begin(), baseline.end());
  scan.loss.reserve(resolution * resolution);
  for (double vi : scan.values_i) {
    for (double vj : scan.values_j) {
      x[param_i] = vi;
      x[param_j] = vj;
      scan.loss.push_back(f(x));
    }
  }
  return scan;
}

GridScan grid_scan(const QuantizedModel& qm, const CalibSet& calib, std::span<const double> baseline,
                   std::size_t param_i, std::size_t param_j, FactorRange range_i, FactorRange range_j,
                   std::size_t resolution) {
  qm.check_delta(baseline);
  return grid_scan(step_objective(qm, calib), baseline, param_i, param_j, range_i, range_j, resolution);
}

std::string to_csv(const GridScan& scan) {
  std::ostringstream os;
  os << "delta_i\\delta_j";
  for (double v : scan.values_j) os << ',' << fmt(v);
  os << '\n';
  for (std::size_t r = 0; r < scan.values_i.size(); ++r) {
    os << fmt(scan.values_i[r]);
    for (std::size_t c = 0; c < scan.values_j.size(); ++c) os << ',' << fmt(scan.at(r, c));
    os << '\n';
  }
  return os.str();
}

HessianMatrix hessian(const Objective& f, std::span<const double> delta, std::span<const std::size_t> params,
                      double h_rel) {
  check_probe_setup(delta, params, h_rel);
  HessianMatrix H;
  H.n = params.size();
  H.h.assign(H.n * H.n, 0.0);
  H.base.assign(delta.begin(), delta.end());
  H.params.assign(params.begin(), params.end());
  for (auto p : params) H.steps.push_back(h_rel * delta[p]);

  std::vector<double> x = H.base;
  const double f0 = checked(f, x);
  for (std::size_t a = 0; a < H.n; ++a) {
    const std::size_t i = params[a];
    const double hi = H.steps[a];
    x[i] = delta[i] + hi;
    const double fp = checked(f, x);
    x[i] = delta[i] - hi;
    const double fm = checked(f, x);
    x[i] = delta[i];
    H.h[a * H.n + a] = (fp - 2.0 * f0 + fm) / (hi * hi);
  }
  for (std::size_t a = 0; a < H.n; ++a) {
    for (std::size_t b = a + 1; b < H.n; ++b) {
      const std::size_t i = params[a], j = params[b];
      const double hi = H.steps[a], hj = H.steps[b];
      auto probe = [&](double si, double sj) {
        x[i] = delta[i] + si * hi;
        x[j] = delta[j] + sj * hj;
        const double v = checked(f, x);
        x[i] = delta[i];
        x[j] = delta[j];
        return v;
      };
      const double fpp = probe(1, 1), fpm = probe(1, -1), fmp = probe(-1, 1), fmm = probe(-1, -1);
      const double v = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
      H.h[a * H.n + b] = v;
      H.h[b * H.n + a] = v;
    }
  }
  return H;
}

std::vector<double> gradient(const Objective& f, std::span<const double> delta, std::span<const std::size_t> params,
                             double h_rel) {
  check_probe_setup(delta, params, h_rel);
  std::vector<double> x(delta.begin(), delta.end());
  std::vector<double> g(params.size());
  for (std::size_t a = 0; a < params.size(); ++a) {
    const std::size_t i = params[a];
    const double h = h_rel * delta[i];
    x[i] = delta[i] + h;
    const double fp = checked(f, x);
    x[i] = delta[i] - h;
    const double fm = checked(f, x);
    x[i] = delta[i];
    g[a] = (fp - fm) / (2.0 * h);
  }
  return g;
}

Determinant determinant(std::span<const double> matrix, std::size_t n) {
  if (matrix.size() != n * n) throw std::invalid_argument("determinant: matrix is not n x n");
  std::vector<double> lu(matrix.begin(), matrix.end());
  Determinant d;
  d.sign = 1;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(lu[r * n + col]) > std::abs(lu[piv * n + col])) piv = r;
    if (lu[piv * n + col] == 0.0) {
      d.sign = 0;
      d.value = 0.0;
      d.log_abs = -std::numeric_limits<double>::infinity();
      return d;
    }
    if (piv != col) {
      for (std::size_t k = 0; k < n; ++k) std::swap(lu[col * n + k], lu[piv * n + k]);
      d.sign = -d.sign;
    }
    const double pv = lu[col * n + col];
    for (std::size_t r = col + 1; r < n; ++r) {
      const double factor = lu[r * n + col] / pv;
      for (std::size_t k = col; k < n; ++k) lu[r * n + k] -= factor * lu[col * n + k];
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    const double v = lu[k * n + k];
    if (v < 0) d.sign = -d.sign;
    d.log_abs += std::log(std::abs(v));
  }
  d.value = d.sign * std::exp(d.log_abs);
  return d;
}

double gaussian_curvature(std::span<const double> matrix, std::size_t n, std::span<const double> grad) {
  if (grad.size() != n) throw std::invalid_argument("gradient and Hessian dimensions differ");
  double g2 = 0.0;
  for (double g : grad) g2 += g * g;
  const double denom = (g2 + 1.0) * (g2 + 1.0);
  return determinant(matrix, n).value / denom;
}

double gaussian_curvature(const HessianMatrix& H, std::span<const double> grad) {
  return gaussian_curvature(H.h, H.n, grad);
}

double qit(const HessianMatrix& H, std::span<const double> eps) {
  if (eps.size() != H.n) throw std::invalid_argument("error vector and Hessian dimensions differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < H.n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < H.n; ++j) row += H(i, j) * eps[j];
    acc += eps[i] * row;
  }
  return acc;
}

QitSplit qit_split(const HessianMatrix& H, std::span<const double> eps) {
  if (eps.size() != H.n) throw std::invalid_argument("error vector and Hessian dimensions differ");
  QitSplit s;
  for (std::size_t i = 0; i < H.n; ++i) {
    s.diagonal += H(i, i) * eps[i] * eps[i];
    for (std::size_t j = 0; j < H.n; ++j)
      if (j != i) s.cross += H(i, j) * eps[i] * eps[j];
  }
  return s;
}

double off_diagonal_ratio(const HessianMatrix& H) {
  double diag = 0.0, off = 0.0;
  for (std::size_t i = 0; i < H.n; ++i)
    for (std::size_t j = 0; j < H.n; ++j) (i == j ? diag : off) += std::abs(H(i, j));
  return diag > 0.0 ? off / diag : std::numeric_limits<double>::infinity();
}

std::string to_csv(const HessianMatrix& H) {
  std::ostringstream os;
  os << "param";
  for (auto p : H.params) os << ",p" << p;
  os << '\n';
  for (std::size_t i = 0; i < H.n; ++i) {
    os << 'p' << H.params[i];
    for (std::size_t j = 0; j < H.n; ++j) os << ',' << fmt(H(i, j));
    os << '\n';
  }
  return os.str();
}

std::string gradient_csv(std::span<const std::size_t> params, std::span<const double> grad) {
  std::ostringstream os;
  os << "param,gradient\n";
  for (std::size_t a = 0; a < params.size(); ++a) os << 'p' << params[a] << ',' << fmt(grad[a]) << '\n';
  return os.str();
}

}  // namespace qtk

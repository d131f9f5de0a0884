#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "qtk/graph.hpp"
#include "qtk/optimizer.hpp"

namespace qtk {

// Loss over a 2-D grid of step sizes for parameters i and j, all other
// parameters held at the baseline. Grid values are baseline * factor with
// factors evenly spaced over [lo, hi] (inclusive).
struct FactorRange {
  double lo = 0.5;
  double hi = 1.5;
};

struct GridScan {
  std::size_t param_i = 0;
  std::size_t param_j = 0;
  std::vector<double> values_i;  // rows
  std::vector<double> values_j;  // columns
  std::vector<double> loss;      // row-major, values_i.size() x values_j.size()

  double at(std::size_t r, std::size_t c) const { return loss[r * values_j.size() + c]; }
  double range() const;  // max - min over finite cells
};

GridScan grid_scan(const Objective& f, std::span<const double> baseline, std::size_t param_i, std::size_t param_j,
                   FactorRange range_i, FactorRange range_j, std::size_t resolution);
GridScan grid_scan(const QuantizedModel& qm, const CalibSet& calib, std::span<const double> baseline,
                   std::size_t param_i, std::size_t param_j, FactorRange range_i, FactorRange range_j,
                   std::size_t resolution);

// First row: "delta_i\delta_j" followed by the column step sizes; each
// following row starts with its row step size.
std::string to_csv(const GridScan& scan);

// Square symmetric matrix of second derivatives over a parameter subset.
struct HessianMatrix {
  std::size_t n = 0;
  std::vector<double> h;         // row-major n x n
  std::vector<double> base;      // full step vector at which H was taken
  std::vector<std::size_t> params;  // indices of base covered by H
  std::vector<double> steps;     // finite-difference step per covered parameter

  double operator()(std::size_t i, std::size_t j) const { return h[i * n + j]; }
};

// Central-difference Hessian with steps h_i = h_rel * delta_i. The diagonal
// uses the three-point stencil, off-diagonal entries the four-point cross
// stencil; each off-diagonal pair is computed once and mirrored.
HessianMatrix hessian(const Objective& f, std::span<const double> delta, std::span<const std::size_t> params,
                      double h_rel = 0.01);

// Central-difference gradient over the same parameter subset.
std::vector<double> gradient(const Objective& f, std::span<const double> delta, std::span<const std::size_t> params,
                             double h_rel = 0.01);

struct Determinant {
  double value = 0.0;
  double log_abs = 0.0;  // -inf for a singular matrix
  int sign = 0;
};

// LU with partial pivoting.
Determinant determinant(std::span<const double> matrix, std::size_t n);

// det(H) / (|grad|^2 + 1)^2
double gaussian_curvature(const HessianMatrix& H, std::span<const double> grad);
double gaussian_curvature(std::span<const double> matrix, std::size_t n, std::span<const double> grad);

struct QitSplit {
  double diagonal = 0.0;  // sum_i H_ii e_i^2
  double cross = 0.0;     // sum_{i != j} H_ij e_i e_j
};

double qit(const HessianMatrix& H, std::span<const double> eps);
QitSplit qit_split(const HessianMatrix& H, std::span<const double> eps);

// sum_{i != j} |H_ij| / sum_i |H_ii|
double off_diagonal_ratio(const HessianMatrix& H);

std::string to_csv(const HessianMatrix& H);
std::string gradient_csv(std::span<const std::size_t> params, std::span<const double> grad);

}  // namespace qtk

#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "qtk/graph.hpp"
#include "qtk/tensor.hpp"

namespace qtk::test {

inline std::filesystem::path fixture(const std::string& rel) { return std::filesystem::path(QTK_FIXTURES_DIR) / rel; }

inline Model fixture_model(const std::string& name) { return load_model(fixture(name + "/" + name + ".json")); }

inline CalibSet fixture_calib(const std::string& name, std::size_t batch = 128) {
  return load_calib_set(fixture(name + "/calib_x.qtn"), fixture(name + "/calib_y.qtn"), batch);
}

inline CalibSet fixture_test_set(const std::string& name, std::size_t batch = 128) {
  return load_calib_set(fixture(name + "/test_x.qtn"), fixture(name + "/test_y.qtn"), batch);
}

inline CalibSet head(const CalibSet& c, std::size_t n) {
  std::vector<std::size_t> idx(std::min(n, c.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return subset(c, idx);
}

inline std::vector<double> gaussian(std::mt19937_64& rng, std::size_t n, double sigma = 1.0) {
  std::normal_distribution<double> dist(0.0, sigma);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, double sigma = 1.0) {
  const auto n = shape_size(shape);
  return Tensor(std::move(shape), gaussian(rng, n, sigma));
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// Small dense model: in -> hidden -> relu -> out, every layer quantizable.
inline Model tiny_mlp(std::mt19937_64& rng, std::size_t in, std::size_t hidden, std::size_t out) {
  Model m;
  m.name = "tiny";
  m.num_classes = out;
  Layer d1;
  d1.kind = LayerKind::dense;
  d1.weights = random_tensor(rng, {hidden, in}, 1.0 / std::sqrt(double(in)));
  d1.bias = random_tensor(rng, {hidden}, 0.1);
  d1.quantize_weights = true;
  Layer r;
  r.kind = LayerKind::relu;
  r.quantize_activations = true;
  Layer d2;
  d2.kind = LayerKind::dense;
  d2.weights = random_tensor(rng, {out, hidden}, 1.0 / std::sqrt(double(hidden)));
  d2.bias = random_tensor(rng, {out}, 0.1);
  d2.quantize_weights = true;
  m.layers = {d1, r, d2};
  return m;
}

inline CalibSet random_calib(std::mt19937_64& rng, std::size_t n, std::size_t in, std::size_t classes,
                             std::size_t batch = 16) {
  CalibSet c;
  c.inputs = random_tensor(rng, {n, in});
  std::uniform_int_distribution<int> lab(0, static_cast<int>(classes) - 1);
  for (std::size_t i = 0; i < n; ++i) c.labels.push_back(lab(rng));
  c.batch_size = batch;
  return c;
}

}  // namespace qtk::test

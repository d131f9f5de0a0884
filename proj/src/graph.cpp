#include "qtk/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "qtk/errors.hpp"
#include "qtk/ops.hpp"
#include "qtk/parallel.hpp"

namespace qtk {

using nlohmann::json;

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::residual_add: return "residual-add";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (auto k : {LayerKind::dense, LayerKind::conv2d, LayerKind::relu, LayerKind::avgpool, LayerKind::flatten,
                 LayerKind::residual_add})
    if (to_string(k) == name) return k;
  throw ParseError("unknown layer kind '" + name + "'");
}

std::string to_string(SlotKind kind) { return kind == SlotKind::weight ? "weight" : "activation"; }

bool bits_enabled(int bits) {
  if (bits > kMaxBits) return false;
  if (bits < kMinBits) throw std::invalid_argument("bitwidth must be in [2, 8] or above 8 to disable");
  return true;
}

void validate(const Model& model) {
  if (model.layers.empty()) throw std::invalid_argument("model '" + model.name + "' has no layers");
  if (model.num_classes < 1) throw std::invalid_argument("model '" + model.name + "' has no classes");
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& l = model.layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
    if (l.has_weights()) {
      if (!l.weights) throw std::invalid_argument(where + " is missing weights");
      const std::size_t want = l.kind == LayerKind::dense ? 2 : 4;
      if (l.weights->rank() != want) throw ShapeError(where + " weight rank " + shape_string(l.weights->shape()));
      if (l.bias && (l.bias->rank() != 1 || l.bias->dim(0) != l.weights->dim(0)))
        throw ShapeError(where + " bias shape " + shape_string(l.bias->shape()));
    } else {
      if (l.weights || l.bias) throw std::invalid_argument(where + " must not carry weights");
      if (l.quantize_weights) throw std::invalid_argument(where + " has no weights to quantize");
    }
    if (l.quantize_activations && l.kind != LayerKind::relu)
      throw std::invalid_argument(where + ": activation quantization is only supported after relu");
    if (l.kind == LayerKind::residual_add) {
      if (!l.residual_from || *l.residual_from >= i)
        throw std::invalid_argument(where + " must reference an earlier layer");
    }
    if (l.kind == LayerKind::conv2d && l.stride == 0) throw std::invalid_argument(where + " stride must be >= 1");
  }
}

namespace {

Tensor load_tensor_rel(const std::filesystem::path& base, const json& name) {
  return read_qtn(base / name.get<std::string>());
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  return j.at(key).get<T>();
}

}  // namespace

Model load_model(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw ParseError("cannot open model manifest " + manifest.string());
  Model model;
  try {
    const json doc = json::parse(in);
    const auto base = manifest.parent_path();
    model.name = get_or<std::string>(doc, "name", manifest.stem().string());
    model.num_classes = doc.at("num_classes").get<std::size_t>();
    for (const auto& jl : doc.at("layers")) {
      Layer l;
      l.kind = layer_kind_from_string(jl.at("kind").get<std::string>());
      if (jl.contains("weight_file") && !jl["weight_file"].is_null()) l.weights = load_tensor_rel(base, jl["weight_file"]);
      if (jl.contains("bias_file") && !jl["bias_file"].is_null()) l.bias = load_tensor_rel(base, jl["bias_file"]);
      l.stride = get_or<std::size_t>(jl, "stride", 1);
      l.pad = get_or<std::size_t>(jl, "pad", 0);
      l.pool = get_or<std::size_t>(jl, "pool", 0);
      l.quantize_weights = get_or<bool>(jl, "quantize_weights", false);
      l.quantize_activations = get_or<bool>(jl, "quantize_activations", false);
      if (jl.contains("residual_from") && !jl["residual_from"].is_null())
        l.residual_from = jl["residual_from"].get<std::size_t>();
      model.layers.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    throw ParseError(manifest.string() + ": " + e.what());
  }
  try {
    validate(model);
  } catch (const std::invalid_argument& e) {
    throw ParseError(manifest.string() + ": " + e.what());
  }
  return model;
}

std::filesystem::path save_model(const Model& model, const std::filesystem::path& dir, const std::string& stem) {
  std::filesystem::create_directories(dir);
  json doc;
  doc["name"] = model.name;
  doc["num_classes"] = model.num_classes;
  doc["layers"] = json::array();
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& l = model.layers[i];
    json jl;
    jl["kind"] = to_string(l.kind);
    jl["weight_file"] = nullptr;
    jl["bias_file"] = nullptr;
    if (l.weights) {
      const std::string f = stem + "_l" + std::to_string(i) + "_w.qtn";
      write_qtn(dir / f, *l.weights);
      jl["weight_file"] = f;
    }
    if (l.bias) {
      const std::string f = stem + "_l" + std::to_string(i) + "_b.qtn";
      write_qtn(dir / f, *l.bias);
      jl["bias_file"] = f;
    }
    jl["stride"] = l.stride;
    jl["pad"] = l.pad;
    if (l.kind == LayerKind::avgpool) jl["pool"] = l.pool;
    jl["quantize_weights"] = l.quantize_weights;
    jl["quantize_activations"] = l.quantize_activations;
    jl["residual_from"] = l.residual_from ? json(*l.residual_from) : json(nullptr);
    doc["layers"].push_back(jl);
  }
  const auto path = dir / (stem + ".json");
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write manifest " + path.string());
  out << doc.dump(2) << '\n';
  return path;
}

QuantizedModel::QuantizedModel(Model model, const QuantConfig& config) : model_(std::move(model)) {
  validate(model_);
  if (config.skip_first_last) {
    std::vector<std::size_t> weight_layers;
    for (std::size_t i = 0; i < model_.layers.size(); ++i)
      if (model_.layers[i].has_weights()) weight_layers.push_back(i);
    if (!weight_layers.empty()) {
      model_.layers[weight_layers.front()].quantize_weights = false;
      model_.layers[weight_layers.back()].quantize_weights = false;
    }
  }
  const bool wq = bits_enabled(config.weight_bits);
  const bool aq = bits_enabled(config.activation_bits);
  for (std::size_t i = 0; i < model_.layers.size(); ++i)
    if (wq && model_.layers[i].quantize_weights) slots_.push_back({i, SlotKind::weight, config.weight_bits});
  for (std::size_t i = 0; i < model_.layers.size(); ++i)
    if (aq && model_.layers[i].quantize_activations) slots_.push_back({i, SlotKind::activation, config.activation_bits});
  index_slots();
}

QuantizedModel::QuantizedModel(Model model, std::vector<QuantSlot> slots)
    : model_(std::move(model)), slots_(std::move(slots)) {
  validate(model_);
  bool seen_activation = false;
  for (const auto& s : slots_) {
    if (s.layer >= model_.layers.size())
      throw std::invalid_argument("slot references layer " + std::to_string(s.layer) + " beyond the model");
    if (!bits_enabled(s.bits)) throw std::invalid_argument("slot bitwidth must be in [2, 8]");
    const Layer& l = model_.layers[s.layer];
    if (s.kind == SlotKind::weight) {
      if (seen_activation) throw std::invalid_argument("weight slots must precede activation slots");
      if (!l.has_weights()) throw std::invalid_argument("weight slot on weightless layer " + std::to_string(s.layer));
    } else {
      seen_activation = true;
      if (l.kind != LayerKind::relu)
        throw std::invalid_argument("activation slot on non-relu layer " + std::to_string(s.layer));
    }
  }
  index_slots();
}

void QuantizedModel::index_slots() {
  weight_slot_.assign(model_.layers.size(), std::nullopt);
  activation_slot_.assign(model_.layers.size(), std::nullopt);
  num_weight_slots_ = 0;
  for (std::size_t k = 0; k < slots_.size(); ++k) {
    auto& table = slots_[k].kind == SlotKind::weight ? weight_slot_ : activation_slot_;
    if (table[slots_[k].layer]) throw std::invalid_argument("duplicate slot for layer " + std::to_string(slots_[k].layer));
    table[slots_[k].layer] = k;
    if (slots_[k].kind == SlotKind::weight) ++num_weight_slots_;
  }
}

std::vector<std::size_t> QuantizedModel::weight_param_indices() const {
  std::vector<std::size_t> idx(num_weight_slots_);
  for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
  return idx;
}

QuantParams QuantizedModel::params(std::size_t slot, double delta) const {
  const QuantSlot& s = slots_.at(slot);
  return QuantParams{delta, s.bits, s.is_signed()};
}

std::optional<std::size_t> QuantizedModel::weight_slot(std::size_t layer) const { return weight_slot_.at(layer); }

std::optional<std::size_t> QuantizedModel::activation_slot(std::size_t layer) const {
  return activation_slot_.at(layer);
}

void QuantizedModel::check_delta(std::span<const double> delta) const {
  if (delta.size() != slots_.size())
    throw std::invalid_argument("step vector has " + std::to_string(delta.size()) + " entries, model expects " +
                                std::to_string(slots_.size()));
}

std::vector<std::optional<Tensor>> quantized_weights(const QuantizedModel& qm, std::span<const double> delta) {
  qm.check_delta(delta);
  const auto& layers = qm.model().layers;
  std::vector<std::optional<Tensor>> out(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].weights) continue;
    out[i] = *layers[i].weights;
    if (auto slot = qm.weight_slot(i)) quantize_inplace(out[i]->data(), qm.params(*slot, delta[*slot]));
  }
  return out;
}

namespace {

using Tap = std::vector<Tensor>*;

Tensor run_impl(const QuantizedModel& qm, std::span<const std::optional<Tensor>> weights,
                std::span<const double> delta, const Tensor& x, bool quantize_acts, Tap taps) {
  const auto& layers = qm.model().layers;
  std::vector<Tensor> outputs(layers.size());
  // Only keep intermediate outputs that a residual-add will read back.
  std::vector<bool> keep(layers.size(), false);
  for (const auto& l : layers)
    if (l.residual_from) keep[*l.residual_from] = true;

  Tensor cur = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    const Tensor* bias = l.bias ? &*l.bias : nullptr;
    switch (l.kind) {
      case LayerKind::dense: cur = linear(cur, *weights[i], bias); break;
      case LayerKind::conv2d: cur = conv2d(cur, *weights[i], l.stride, l.pad, bias); break;
      case LayerKind::relu: {
        cur = relu(cur);
        if (auto slot = qm.activation_slot(i)) {
          if (taps) taps->push_back(cur);
          if (quantize_acts) quantize_inplace(cur.data(), qm.params(*slot, delta[*slot]));
        }
        break;
      }
      case LayerKind::avgpool: {
        if (cur.rank() != 4) throw ShapeError("avgpool expects rank 4, got " + shape_string(cur.shape()));
        std::size_t k = l.pool;
        if (k == 0) {
          if (cur.dim(2) != cur.dim(3)) throw ShapeError("global avgpool needs square input");
          k = cur.dim(2);
        }
        cur = avgpool2d(cur, k);
        break;
      }
      case LayerKind::flatten: cur = flatten(cur); break;
      case LayerKind::residual_add: cur = add(cur, outputs[*l.residual_from]); break;
    }
    if (keep[i]) outputs[i] = cur;
  }
  if (cur.rank() != 2 || cur.dim(1) != qm.model().num_classes)
    throw ShapeError("model output " + shape_string(cur.shape()) + " is not [N, " +
                     std::to_string(qm.model().num_classes) + "]");
  return cur;
}

}  // namespace

Tensor run_layers(const QuantizedModel& qm, std::span<const std::optional<Tensor>> weights,
                  std::span<const double> delta, const Tensor& x) {
  qm.check_delta(delta);
  return run_impl(qm, weights, delta, x, true, nullptr);
}

Tensor forward(const QuantizedModel& qm, const Tensor& x, std::span<const double> delta) {
  const auto w = quantized_weights(qm, delta);
  return run_impl(qm, w, delta, x, true, nullptr);
}

std::vector<Tensor> collect_activations(const QuantizedModel& qm, const Tensor& x) {
  const auto& layers = qm.model().layers;
  std::vector<std::optional<Tensor>> w(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) w[i] = layers[i].weights;
  std::vector<Tensor> taps;
  run_impl(qm, w, {}, x, false, &taps);
  return taps;
}

void validate(const CalibSet& calib, std::size_t num_classes) {
  if (calib.labels.empty()) throw DegenerateInputError("calibration/evaluation set is empty");
  if (calib.inputs.rank() < 1 || calib.inputs.dim(0) != calib.labels.size())
    throw ShapeError("inputs " + shape_string(calib.inputs.shape()) + " do not match " +
                     std::to_string(calib.labels.size()) + " labels");
  for (int y : calib.labels)
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw std::invalid_argument("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
  if (calib.batch_size == 0) throw std::invalid_argument("batch size must be positive");
}

CalibSet load_calib_set(const std::filesystem::path& inputs, const std::filesystem::path& labels,
                        std::size_t batch_size) {
  CalibSet set;
  set.inputs = read_qtn(inputs);
  const Tensor y = read_qtn(labels);
  if (y.rank() != 1) throw ParseError(labels.string() + ": labels must be a rank-1 tensor");
  set.labels.reserve(y.size());
  for (double v : y.data()) {
    if (v != std::floor(v) || v < 0 || v > std::numeric_limits<int>::max())
      throw ParseError(labels.string() + ": label " + std::to_string(v) + " is not a class index");
    set.labels.push_back(static_cast<int>(v));
  }
  if (set.inputs.dim(0) != set.labels.size())
    throw ParseError(inputs.string() + " holds " + std::to_string(set.inputs.dim(0)) + " samples but " +
                     labels.string() + " holds " + std::to_string(set.labels.size()) + " labels");
  set.batch_size = batch_size;
  return set;
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  if (begin >= end || end > t.dim(0)) throw ShapeError("bad row slice");
  Shape shape = t.shape();
  const std::size_t row = t.size() / shape[0];
  shape[0] = end - begin;
  auto src = t.data();
  return Tensor(std::move(shape),
                std::vector<double>(src.begin() + static_cast<std::ptrdiff_t>(begin * row),
                                    src.begin() + static_cast<std::ptrdiff_t>(end * row)));
}

CalibSet subset(const CalibSet& calib, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DegenerateInputError("empty calibration subset");
  Shape shape = calib.inputs.shape();
  const std::size_t row = calib.inputs.size() / shape[0];
  shape[0] = indices.size();
  std::vector<double> data;
  data.reserve(indices.size() * row);
  CalibSet out;
  auto src = calib.inputs.data();
  for (auto i : indices) {
    if (i >= calib.size()) throw std::out_of_range("subset index out of range");
    data.insert(data.end(), src.begin() + static_cast<std::ptrdiff_t>(i * row),
                src.begin() + static_cast<std::ptrdiff_t>((i + 1) * row));
    out.labels.push_back(calib.labels[i]);
  }
  out.inputs = Tensor(std::move(shape), std::move(data));
  out.batch_size = calib.batch_size;
  return out;
}

double cross_entropy(std::span<const double> logits, int label) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double z : logits) s += std::exp(z - m);
  return m + std::log(s) - logits[static_cast<std::size_t>(label)];
}

namespace {

struct SampleResult {
  double loss;
  bool correct;
};

std::vector<SampleResult> run_samples(const QuantizedModel& qm, const CalibSet& data, std::span<const double> delta) {
  validate(data, qm.model().num_classes);
  const auto weights = quantized_weights(qm, delta);
  const std::size_t n = data.size();
  const std::size_t bs = data.batch_size;
  const std::size_t batches = (n + bs - 1) / bs;
  const std::size_t k = qm.model().num_classes;
  std::vector<SampleResult> results(n);
  parallel_for(batches, [&](std::size_t b) {
    const std::size_t begin = b * bs, end = std::min(n, begin + bs);
    const Tensor logits = run_impl(qm, weights, delta, slice_rows(data.inputs, begin, end), true, nullptr);
    auto z = logits.data();
    for (std::size_t i = begin; i < end; ++i) {
      auto row = z.subspan((i - begin) * k, k);
      const int y = data.labels[i];
      const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      results[i] = {cross_entropy(row, y), best == y};
    }
  });
  return results;
}

double ordered_mean(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double acc = 0.0;
  for (double v : values) acc += v;
  return acc / static_cast<double>(values.size());
}

}  // namespace

std::vector<double> per_sample_losses(const QuantizedModel& qm, const CalibSet& calib, std::span<const double> delta) {
  const auto r = run_samples(qm, calib, delta);
  std::vector<double> out(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) out[i] = r[i].loss;
  return out;
}

double loss(const QuantizedModel& qm, const CalibSet& calib, std::span<const double> delta) {
  return ordered_mean(per_sample_losses(qm, calib, delta));
}

Evaluation evaluate(const QuantizedModel& qm, const CalibSet& data, std::span<const double> delta) {
  const auto r = run_samples(qm, data, delta);
  std::vector<double> losses(r.size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    losses[i] = r[i].loss;
    correct += r[i].correct ? 1 : 0;
  }
  return {ordered_mean(std::move(losses)), static_cast<double>(correct) / static_cast<double>(r.size())};
}

double accuracy(const QuantizedModel& qm, const CalibSet& data, std::span<const double> delta) {
  return evaluate(qm, data, delta).accuracy;
}

}  // namespace qtk

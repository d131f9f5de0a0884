#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qtk/quantizer.hpp"
#include "qtk/tensor.hpp"

namespace qtk {

enum class LayerKind { dense, conv2d, relu, avgpool, flatten, residual_add };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

struct Layer {
  LayerKind kind = LayerKind::relu;
  std::optional<Tensor> weights;  // dense: [out,in]; conv2d: [F,C,kh,kw]
  std::optional<Tensor> bias;     // [out] / [F], never quantized
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t pool = 0;  // avgpool window; 0 pools the whole spatial extent
  bool quantize_weights = false;
  bool quantize_activations = false;  // relu only: quantize the output
  std::optional<std::size_t> residual_from;

  bool has_weights() const noexcept { return kind == LayerKind::dense || kind == LayerKind::conv2d; }
};

struct Model {
  std::string name;
  std::vector<Layer> layers;
  std::size_t num_classes = 0;
};

// Structural checks: weights present exactly on dense/conv layers, residual
// sources point backwards, activation quantization only on relu.
void validate(const Model& model);

// Manifest JSON with .qtn weight files resolved relative to the manifest.
Model load_model(const std::filesystem::path& manifest);
// Writes <dir>/<stem>.json plus one .qtn per weight/bias tensor.
std::filesystem::path save_model(const Model& model, const std::filesystem::path& dir, const std::string& stem);

enum class SlotKind { weight, activation };

std::string to_string(SlotKind kind);

// One scalar step size in the optimization vector.
struct QuantSlot {
  std::size_t layer = 0;
  SlotKind kind = SlotKind::weight;
  int bits = 8;

  bool is_signed() const noexcept { return kind == SlotKind::weight; }
  bool operator==(const QuantSlot&) const = default;
};

// Step sizes, weight slots first (layer order) then activation slots.
using StepVector = std::vector<double>;

struct QuantConfig {
  int weight_bits = 32;  // > 8 disables weight quantization
  int activation_bits = 32;
  bool skip_first_last = true;
};

bool bits_enabled(int bits);

class QuantizedModel {
 public:
  QuantizedModel(Model model, const QuantConfig& config);
  // Explicit slot layout, e.g. reconstructed from a stored step vector.
  QuantizedModel(Model model, std::vector<QuantSlot> slots);

  const Model& model() const noexcept { return model_; }
  std::span<const QuantSlot> slots() const noexcept { return slots_; }
  std::size_t num_params() const noexcept { return slots_.size(); }
  std::size_t num_weight_params() const noexcept { return num_weight_slots_; }
  std::vector<std::size_t> weight_param_indices() const;

  QuantParams params(std::size_t slot, double delta) const;

  // Slot index for a layer's weights / activations, if quantized.
  std::optional<std::size_t> weight_slot(std::size_t layer) const;
  std::optional<std::size_t> activation_slot(std::size_t layer) const;

  void check_delta(std::span<const double> delta) const;

 private:
  void index_slots();

  Model model_;
  std::vector<QuantSlot> slots_;
  std::size_t num_weight_slots_ = 0;
  std::vector<std::optional<std::size_t>> weight_slot_;
  std::vector<std::optional<std::size_t>> activation_slot_;
};

// Weights of every layer after snapping to the grid of its step size;
// unquantized layers keep their FP weights. Entry i is empty for
// weightless layers.
std::vector<std::optional<Tensor>> quantized_weights(const QuantizedModel& qm, std::span<const double> delta);

// Forward pass with explicit per-layer weights (as produced by
// quantized_weights). Activation slots are quantized with their delta.
Tensor run_layers(const QuantizedModel& qm, std::span<const std::optional<Tensor>> weights,
                  std::span<const double> delta, const Tensor& x);

Tensor forward(const QuantizedModel& qm, const Tensor& x, std::span<const double> delta);

// FP activations at every activation slot (relu outputs), in slot order.
std::vector<Tensor> collect_activations(const QuantizedModel& qm, const Tensor& x);

struct CalibSet {
  Tensor inputs;               // [N, ...]
  std::vector<int> labels;     // N entries
  std::size_t batch_size = 128;

  std::size_t size() const noexcept { return labels.size(); }
};

void validate(const CalibSet& calib, std::size_t num_classes);
CalibSet load_calib_set(const std::filesystem::path& inputs, const std::filesystem::path& labels,
                        std::size_t batch_size = 128);
CalibSet subset(const CalibSet& calib, std::span<const std::size_t> indices);
Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end);

// Natural-log cross entropy of one logit row.
double cross_entropy(std::span<const double> logits, int label);

std::vector<double> per_sample_losses(const QuantizedModel& qm, const CalibSet& calib, std::span<const double> delta);

// Mean cross entropy over the set. Per-sample losses are summed in ascending
// order of value so the result is independent of sample order, batch size
// and worker count.
double loss(const QuantizedModel& qm, const CalibSet& calib, std::span<const double> delta);

// Top-1 accuracy, argmax ties resolved toward the lower class index.
double accuracy(const QuantizedModel& qm, const CalibSet& data, std::span<const double> delta);

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};
Evaluation evaluate(const QuantizedModel& qm, const CalibSet& data, std::span<const double> delta);

}  // namespace qtk

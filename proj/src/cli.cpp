#include "qtk/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "qtk/bias_correction.hpp"
#include "qtk/calibration.hpp"
#include "qtk/errors.hpp"
#include "qtk/graph.hpp"
#include "qtk/landscape.hpp"
#include "qtk/lapq.hpp"
#include "qtk/parallel.hpp"

namespace qtk {

using nlohmann::json;

std::vector<std::size_t> choose_subset(std::size_t n, std::size_t size, unsigned long long seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (size >= n) return idx;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < size; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(size);
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace {

// Flat JSON object -> CLI11 config items; keys are long option names of the
// selected subcommand.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App* root) : root_(root) {}

  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json doc;
    try {
      doc = json::parse(input);
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    const auto selected = root_->get_subcommands();
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : doc.items()) {
      CLI::ConfigItem item;
      if (!selected.empty()) item.parents = {selected.front()->get_name()};
      item.name = key;
      auto scalar = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      items.push_back(std::move(item));
    }
    return items;
  }

 private:
  const CLI::App* root_;
};

struct Options {
  std::string model;
  std::string calib;
  std::string labels;
  std::string data;
  std::string data_labels;
  std::string delta;
  std::string out;
  std::string out_model;
  int wbits = 4;
  int abits = 4;
  bool quantize_first_last = false;
  std::size_t calib_size = 512;
  std::size_t batch_size = 128;
  unsigned long long seed = 0;
  std::size_t threads = 0;
  std::vector<double> p_grid{2.0, 2.4, 2.8, 3.2, 3.6, 4.0};
  std::string phase = "full";
  double p = 2.0;
  int max_outer = 20;
  double ftol = 1e-4;
  std::string bias_correct = "none";
  bool with_timings = false;
  // landscape / hessian
  std::size_t param_i = 0;
  std::size_t param_j = 1;
  std::vector<double> range_i{0.5, 1.5};
  std::vector<double> range_j{0.5, 1.5};
  std::size_t resolution = 21;
  std::vector<std::size_t> params;
  double h_rel = 0.01;
  std::string out_hessian;
  std::string out_gradient;
  std::vector<std::size_t> sizes;
};

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

json effective_config(const std::string& command, const Options& o) {
  json j{{"command", command},       {"model", o.model},          {"wbits", o.wbits},
         {"abits", o.abits},         {"skip_first_last", !o.quantize_first_last},
         {"calib_size", o.calib_size}, {"batch_size", o.batch_size}, {"seed", o.seed}};
  if (!o.calib.empty()) j["calib"] = o.calib;
  if (!o.labels.empty()) j["labels"] = o.labels;
  if (!o.data.empty()) j["data"] = o.data;
  if (!o.delta.empty()) j["delta"] = o.delta;
  if (command == "calibrate" || command == "sweep-calib-size") {
    j["phase"] = o.phase;
    j["p_grid"] = o.p_grid;
    if (o.phase == "lw") j["p"] = o.p;
    j["max_outer"] = o.max_outer;
    j["ftol"] = o.ftol;
  }
  if (command != "hessian" && command != "landscape") j["bias_correct"] = o.bias_correct;
  if (command == "landscape") {
    j["param_i"] = o.param_i;
    j["param_j"] = o.param_j;
    j["range_i"] = o.range_i;
    j["range_j"] = o.range_j;
    j["resolution"] = o.resolution;
  }
  if (command == "hessian") {
    j["params"] = o.params;
    j["h_rel"] = o.h_rel;
  }
  if (command == "sweep-calib-size") j["sizes"] = o.sizes;
  return j;
}

void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream f(path);
  if (!f) throw ParseError("cannot write " + path);
  f << text;
}

QuantConfig quant_config(const Options& o) { return {o.wbits, o.abits, !o.quantize_first_last}; }

CalibSet load_calibration(const Options& o) {
  if (o.calib.empty() || o.labels.empty()) throw UsageError("--calib and --labels are required");
  CalibSet full = load_calib_set(o.calib, o.labels, o.batch_size);
  if (full.size() <= o.calib_size) return full;
  const auto idx = choose_subset(full.size(), o.calib_size, o.seed);
  return subset(full, idx);
}

std::optional<CalibSet> load_heldout(const Options& o) {
  if (o.data.empty() && o.data_labels.empty()) return std::nullopt;
  if (o.data.empty() || o.data_labels.empty()) throw UsageError("--data and --data-labels go together");
  return load_calib_set(o.data, o.data_labels, o.batch_size);
}

LapqConfig lapq_config(const Options& o) {
  LapqConfig c;
  if (o.phase == "lw") {
    c.phase = LapqPhase::layerwise;
    c.p_grid = {o.p};
  } else if (o.phase == "qa") {
    c.phase = LapqPhase::quadratic;
    c.p_grid = o.p_grid;
  } else if (o.phase == "full") {
    c.phase = LapqPhase::full;
    c.p_grid = o.p_grid;
  } else {
    throw UsageError("--phase must be lw, qa or full");
  }
  c.powell.max_outer = o.max_outer;
  c.powell.ftol = o.ftol;
  return c;
}

json eval_json(const Evaluation& e, std::size_t n) { return {{"loss", e.loss}, {"accuracy", e.accuracy}, {"samples", n}}; }

// Step vector from either a bare step array or a document holding one.
StoredSteps load_steps(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open step file " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (doc.is_object() && doc.contains("result")) doc = doc["result"];
  if (doc.is_object() && doc.contains("delta_star")) doc = doc["delta_star"];
  if (doc.is_object() && doc.contains("steps")) doc = doc["steps"];
  try {
    return step_vector_from_json(doc);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

QuantizedModel model_for_steps(const Model& model, const StoredSteps& steps, const std::string& path) {
  try {
    return QuantizedModel(model, steps.slots);
  } catch (const std::invalid_argument& e) {
    throw ParseError(path + " does not match the model: " + e.what());
  }
}

// Baseline step vector: from --delta when given, else layer-wise p = 2.
StepVector baseline_steps(const QuantizedModel& qm, const CalibSet& calib, const Options& o) {
  if (o.delta.empty()) return calibrate_model(qm, calib, 2.0);
  const StoredSteps s = load_steps(o.delta);
  if (s.slots.size() != qm.num_params() || !std::equal(s.slots.begin(), s.slots.end(), qm.slots().begin()))
    throw ParseError(o.delta + " does not match the quantization layout of the model");
  return s.delta;
}

void write_baked(const QuantizedModel& qm, const StepVector& delta, BiasCorrection mode, const std::string& dir) {
  const BakedModel baked = bake_weights(qm, delta, mode);
  Model m = baked.model.model();
  const auto manifest = save_model(m, dir, m.name.empty() ? "model" : m.name);
  json steps{{"manifest", manifest.filename().string()},
             {"bias_correct", to_string(mode)},
             {"steps", step_vector_to_json(baked.model.slots(), baked.delta)}};
  std::ofstream f(std::filesystem::path(dir) / "steps.json");
  if (!f) throw ParseError("cannot write steps.json in " + dir);
  f << steps.dump(2) << '\n';
}

int cmd_calibrate(const Options& o, std::ostream& out) {
  const Model model = load_model(o.model);
  const CalibSet calib = load_calibration(o);
  const auto heldout = load_heldout(o);
  const QuantizedModel qm(model, quant_config(o));
  const BiasCorrection mode = bias_correction_from_string(o.bias_correct);
  const LapqResult r = lapq(qm, calib, lapq_config(o));

  json doc;
  doc["config"] = effective_config("calibrate", o);
  doc["model"] = model.name;
  doc["result"] = to_json(r, qm.slots(), o.with_timings);
  const QuantizedModel fp(model, QuantConfig{32, 32, false});
  doc["fp"]["calib"] = eval_json(evaluate(fp, calib, {}), calib.size());
  doc["calib"] = eval_json(evaluate(qm, calib, r.delta_star), calib.size());
  if (heldout) {
    doc["fp"]["test"] = eval_json(evaluate(fp, *heldout, {}), heldout->size());
    doc["test"] = eval_json(evaluate(qm, *heldout, r.delta_star), heldout->size());
  }
  if (mode != BiasCorrection::none) {
    const BakedModel baked = bake_weights(qm, r.delta_star, mode);
    json bc{{"mode", to_string(mode)}, {"calib", eval_json(evaluate(baked.model, calib, baked.delta), calib.size())}};
    if (heldout) bc["test"] = eval_json(evaluate(baked.model, *heldout, baked.delta), heldout->size());
    doc["bias_corrected"] = bc;
  }
  if (!o.out_model.empty()) write_baked(qm, r.delta_star, mode, o.out_model);
  emit(o.out, doc.dump(2) + "\n", out);
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  if (o.delta.empty()) throw UsageError("--delta is required");
  if (o.data.empty() || o.data_labels.empty()) throw UsageError("--data and --data-labels are required");
  const Model model = load_model(o.model);
  const StoredSteps steps = load_steps(o.delta);
  const QuantizedModel qm = model_for_steps(model, steps, o.delta);
  const CalibSet data = load_calib_set(o.data, o.data_labels, o.batch_size);
  const BiasCorrection mode = bias_correction_from_string(o.bias_correct);
  json line;
  if (mode == BiasCorrection::none) {
    line = eval_json(evaluate(qm, data, steps.delta), data.size());
  } else {
    const BakedModel baked = bake_weights(qm, steps.delta, mode);
    line = eval_json(evaluate(baked.model, data, baked.delta), data.size());
  }
  line["bias_correct"] = to_string(mode);
  out << line.dump() << '\n';
  return kExitOk;
}

int cmd_landscape(const Options& o, std::ostream& out) {
  if (o.range_i.size() != 2 || o.range_j.size() != 2) throw UsageError("ranges take two factors: lo,hi");
  const Model model = load_model(o.model);
  const CalibSet calib = load_calibration(o);
  const QuantizedModel qm(model, quant_config(o));
  const StepVector base = baseline_steps(qm, calib, o);
  const GridScan scan = grid_scan(qm, calib, base, o.param_i, o.param_j, {o.range_i[0], o.range_i[1]},
                                  {o.range_j[0], o.range_j[1]}, o.resolution);
  emit(o.out, to_csv(scan), out);
  return kExitOk;
}

int cmd_hessian(const Options& o, std::ostream& out) {
  const Model model = load_model(o.model);
  const CalibSet calib = load_calibration(o);
  const QuantizedModel qm(model, quant_config(o));
  if (qm.num_params() == 0) throw UsageError("nothing is quantized; no step sizes to differentiate");
  const StepVector base = baseline_steps(qm, calib, o);
  std::vector<std::size_t> params = o.params;
  if (params.empty()) params = qm.weight_param_indices();
  if (params.empty()) {
    params.resize(qm.num_params());
    std::iota(params.begin(), params.end(), std::size_t{0});
  }
  const Objective f = step_objective(qm, calib);
  const HessianMatrix H = hessian(f, base, params, o.h_rel);
  const std::vector<double> g = gradient(f, base, params, o.h_rel);
  const Determinant det = determinant(H.h, H.n);
  std::vector<double> eps;
  for (auto p : params) eps.push_back(0.5 * base[p]);
  const QitSplit split = qit_split(H, eps);
  double gn = 0.0;
  for (double v : g) gn += v * v;

  if (!o.out_hessian.empty()) emit(o.out_hessian, to_csv(H), out);
  if (!o.out_gradient.empty()) emit(o.out_gradient, gradient_csv(params, g), out);
  json summary{{"config", effective_config("hessian", o)},
               {"params", params},
               {"loss", f(base)},
               {"det", det.value},
               {"log_abs_det", det.log_abs},
               {"det_sign", det.sign},
               {"gaussian_curvature", gaussian_curvature(H, g)},
               {"gradient_norm", std::sqrt(gn)},
               {"off_diagonal_ratio", off_diagonal_ratio(H)},
               {"qit", {{"total", qit(H, eps)}, {"diagonal", split.diagonal}, {"cross", split.cross}}}};
  if (std::isinf(det.log_abs)) summary["log_abs_det"] = nullptr;
  emit(o.out, summary.dump(2) + "\n", out);
  return kExitOk;
}

int cmd_sweep(Options o, std::ostream& out) {
  const Model model = load_model(o.model);
  if (o.calib.empty() || o.labels.empty()) throw UsageError("--calib and --labels are required");
  const CalibSet full = load_calib_set(o.calib, o.labels, o.batch_size);
  const auto heldout = load_heldout(o);
  if (!heldout) throw UsageError("--data and --data-labels are required for the sweep");
  std::vector<std::size_t> sizes = o.sizes;
  if (sizes.empty()) {
    for (std::size_t s = 32; s < full.size(); s *= 2) sizes.push_back(s);
    sizes.push_back(full.size());
  }
  std::sort(sizes.begin(), sizes.end());
  for (auto s : sizes)
    if (s == 0 || s > full.size())
      throw UsageError("sweep size " + std::to_string(s) + " must lie in [1, " + std::to_string(full.size()) + "]");
  o.sizes = sizes;

  const QuantizedModel qm(model, quant_config(o));
  const BiasCorrection mode = bias_correction_from_string(o.bias_correct);
  const LapqConfig cfg = lapq_config(o);
  std::ostringstream csv;
  csv << "size,calib_loss,test_loss,test_accuracy\n";
  csv.precision(17);
  for (auto s : sizes) {
    const CalibSet calib = subset(full, choose_subset(full.size(), s, o.seed));
    const LapqResult r = lapq(qm, calib, cfg);
    Evaluation e;
    if (mode == BiasCorrection::none) {
      e = evaluate(qm, *heldout, r.delta_star);
    } else {
      const BakedModel baked = bake_weights(qm, r.delta_star, mode);
      e = evaluate(baked.model, *heldout, baked.delta);
    }
    csv << s << ',' << r.loss_star << ',' << e.loss << ',' << e.accuracy << '\n';
  }
  emit(o.out, csv.str(), out);
  return kExitOk;
}

int cmd_quantize(const Options& o, std::ostream& out) {
  if (o.delta.empty()) throw UsageError("--delta is required");
  if (o.out_model.empty()) throw UsageError("--out-dir is required");
  const Model model = load_model(o.model);
  const StoredSteps steps = load_steps(o.delta);
  const QuantizedModel qm = model_for_steps(model, steps, o.delta);
  write_baked(qm, steps.delta, bias_correction_from_string(o.bias_correct), o.out_model);
  out << json{{"written", o.out_model}}.dump() << '\n';
  return kExitOk;
}

void add_model_options(CLI::App* cmd, Options& o) {
  cmd->add_option("--model", o.model, "Model manifest (JSON)")->required();
  cmd->add_option("--batch-size", o.batch_size, "Samples per forward batch")->check(CLI::PositiveNumber);
  cmd->add_option("--threads", o.threads, "Worker cap (default: QTK_THREADS or 1)");
}

void add_quant_options(CLI::App* cmd, Options& o) {
  cmd->add_option("--calib", o.calib, "Calibration inputs (.qtn)");
  cmd->add_option("--labels", o.labels, "Calibration labels (.qtn)");
  cmd->add_option("--wbits", o.wbits, "Weight bitwidth (2-8; above 8 disables)");
  cmd->add_option("--abits", o.abits, "Activation bitwidth (2-8; above 8 disables)");
  cmd->add_flag("--quantize-first-last", o.quantize_first_last, "Also quantize the first and last weight layers");
  cmd->add_option("--calib-size", o.calib_size, "Calibration subset size")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", o.seed, "Seed for calibration subset sampling");
}

void add_lapq_options(CLI::App* cmd, Options& o) {
  cmd->add_option("--p-grid", o.p_grid, "Norm exponents for the layer-wise phase")->delimiter(',');
  cmd->add_option("--phase", o.phase, "lw (layer-wise at --p), qa (+quadratic approximation) or full");
  cmd->add_option("--p", o.p, "Norm exponent for --phase lw");
  cmd->add_option("--max-outer", o.max_outer, "Powell outer iterations");
  cmd->add_option("--ftol", o.ftol, "Relative loss improvement that ends the joint search");
}

void add_bias_option(CLI::App* cmd, Options& o) {
  cmd->add_option("--bias-correct", o.bias_correct, "Weight bias correction: none, mean or mean-var")
      ->expected(0, 1)
      ->default_str("none");
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"qtk: loss-aware post-training quantization toolkit"};
  app.require_subcommand(1);
  Options o;
  // The config file is read by the root app; subcommands pass --config up.
  app.set_config("--config", "", "JSON file with option defaults");
  app.config_formatter(std::make_shared<JsonConfig>(&app));
  app.allow_config_extras(CLI::config_extras_mode::error);

  auto* calibrate = app.add_subcommand("calibrate", "Optimize step sizes and write the result JSON");
  auto* eval = app.add_subcommand("eval", "Evaluate a stored step vector on a dataset");
  auto* landscape = app.add_subcommand("landscape", "Loss over a grid of two step sizes (CSV)");
  auto* hess = app.add_subcommand("hessian", "Finite-difference Hessian, gradient and curvature");
  auto* sweep = app.add_subcommand("sweep-calib-size", "Accuracy as a function of calibration set size");
  auto* quant = app.add_subcommand("quantize", "Apply a step vector and write the quantized model");

  for (auto* cmd : {calibrate, eval, landscape, hess, sweep, quant}) {
    add_model_options(cmd, o);
    cmd->fallthrough();
  }
  for (auto* cmd : {calibrate, landscape, hess, sweep}) add_quant_options(cmd, o);
  for (auto* cmd : {calibrate, sweep}) add_lapq_options(cmd, o);
  for (auto* cmd : {calibrate, eval, sweep, quant}) add_bias_option(cmd, o);
  for (auto* cmd : {calibrate, sweep}) {
    cmd->add_option("--data", o.data, "Held-out inputs (.qtn)");
    cmd->add_option("--data-labels", o.data_labels, "Held-out labels (.qtn)");
  }
  eval->add_option("--data", o.data, "Inputs (.qtn)");
  eval->add_option("--data-labels,--labels", o.data_labels, "Labels (.qtn)");
  for (auto* cmd : {eval, landscape, hess, quant}) cmd->add_option("--delta", o.delta, "Step vector or result JSON");
  for (auto* cmd : {calibrate, landscape, hess, sweep})
    cmd->add_option("--out", o.out, "Output file (default: stdout)");
  calibrate->add_option("--out-model", o.out_model, "Directory for the quantized model");
  calibrate->add_flag("--with-timings", o.with_timings, "Include wall-clock seconds per phase");
  quant->add_option("--out-dir", o.out_model, "Directory for the quantized model");
  landscape->add_option("--i", o.param_i, "Row parameter index");
  landscape->add_option("--j", o.param_j, "Column parameter index");
  landscape->add_option("--range-i", o.range_i, "Row factors lo,hi relative to the baseline")->delimiter(',');
  landscape->add_option("--range-j", o.range_j, "Column factors lo,hi relative to the baseline")->delimiter(',');
  landscape->add_option("--resolution", o.resolution, "Grid points per axis");
  hess->add_option("--params", o.params, "Parameter indices (default: weight steps)")->delimiter(',');
  hess->add_option("--h-rel", o.h_rel, "Relative finite-difference step");
  hess->add_option("--out-hessian", o.out_hessian, "Hessian CSV");
  hess->add_option("--out-gradient", o.out_gradient, "Gradient CSV");
  sweep->add_option("--sizes", o.sizes, "Calibration subset sizes")->delimiter(',');

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitParse;
  }
  if (o.bias_correct.empty()) o.bias_correct = "mean";
  if (o.threads > 0) set_num_threads(o.threads);

  if (calibrate->parsed()) return cmd_calibrate(o, out);
  if (eval->parsed()) return cmd_eval(o, out);
  if (landscape->parsed()) return cmd_landscape(o, out);
  if (hess->parsed()) return cmd_hessian(o, out);
  if (sweep->parsed()) return cmd_sweep(o, out);
  return cmd_quantize(o, out);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(args, out, err);
  } catch (const DegenerateInputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitDegenerate;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitParse;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitParse;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace qtk

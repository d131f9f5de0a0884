#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "qtk/cli.hpp"
#include "qtk/parallel.hpp"
#include "qtk/tensor.hpp"
#include "support.hpp"

using namespace qtk;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string mlp(const std::string& file) { return test::fixture("mlp/" + file).string(); }

std::vector<std::string> mlp_calibrate(std::vector<std::string> extra = {}) {
  std::vector<std::string> a{"calibrate",    "--model",      mlp("mlp.json"), "--calib", mlp("calib_x.qtn"),
                             "--labels",     mlp("calib_y.qtn"), "--calib-size", "96", "--max-outer", "2"};
  a.insert(a.end(), extra.begin(), extra.end());
  return a;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("qtk_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("choose_subset") {
  CHECK(choose_subset(5, 10, 0) == std::vector<std::size_t>{0, 1, 2, 3, 4});
  CHECK(choose_subset(5, 5, 0).size() == 5);
  for (unsigned long long seed : {0ull, 1ull, 99ull}) {
    const auto s = choose_subset(1000, 100, seed);
    CHECK(s.size() == 100);
    CHECK(std::is_sorted(s.begin(), s.end()));
    CHECK(std::set<std::size_t>(s.begin(), s.end()).size() == 100);
    CHECK(s.back() < 1000);
    CHECK(s == choose_subset(1000, 100, seed));
  }
  CHECK(choose_subset(1000, 100, 0) != choose_subset(1000, 100, 1));
}

TEST_CASE("calibrate emits a result with a monotone trace") {
  const Run r = run(mlp_calibrate());
  REQUIRE(r.code == kExitOk);
  const json doc = json::parse(r.out);
  CHECK(doc["config"]["calib_size"] == 96);
  CHECK(doc["config"]["wbits"] == 4);
  CHECK_FALSE(doc["config"].contains("threads"));
  const auto trace = doc["result"]["loss_trace"].get<std::vector<double>>();
  REQUIRE_FALSE(trace.empty());
  for (std::size_t k = 1; k < trace.size(); ++k) CHECK(trace[k] <= trace[k - 1]);
  CHECK(doc["result"]["loss"].get<double>() == trace.back());
  CHECK(doc["calib"]["loss"].get<double>() == trace.back());
  CHECK_FALSE(doc["result"].contains("seconds"));
  CHECK(json::parse(doc.dump()) == doc);
}

TEST_CASE("32/32 is the identity configuration") {
  const Run r = run({"calibrate", "--model", mlp("mlp.json"), "--calib", mlp("calib_x.qtn"), "--labels",
                     mlp("calib_y.qtn"), "--wbits", "32", "--abits", "32", "--data", mlp("test_x.qtn"),
                     "--data-labels", mlp("test_y.qtn")});
  REQUIRE(r.code == kExitOk);
  const json doc = json::parse(r.out);
  CHECK(doc["result"]["delta_star"].empty());
  CHECK(doc["test"]["accuracy"] == doc["fp"]["test"]["accuracy"]);
  CHECK(doc["calib"]["loss"] == doc["fp"]["calib"]["loss"]);
}

TEST_CASE("result JSON is identical for any worker count") {
  const std::size_t saved = num_threads();
  const Run one = run(mlp_calibrate({"--threads", "1"}));
  const Run three = run(mlp_calibrate({"--threads", "3"}));
  set_num_threads(saved);
  REQUIRE(one.code == kExitOk);
  CHECK(one.out == three.out);
}

TEST_CASE("eval reproduces the calibration loss bit-exactly") {
  TempDir dir;
  const Run cal = run({"calibrate", "--model", mlp("mlp.json"), "--calib", mlp("calib_x.qtn"), "--labels",
                       mlp("calib_y.qtn"), "--calib-size", "1024", "--max-outer", "1", "--out", dir / "r.json"});
  REQUIRE(cal.code == kExitOk);
  const json doc = json::parse(slurp(dir / "r.json"));
  const Run ev = run({"eval", "--model", mlp("mlp.json"), "--delta", dir / "r.json", "--data", mlp("calib_x.qtn"),
                      "--labels", mlp("calib_y.qtn")});
  REQUIRE(ev.code == kExitOk);
  const json line = json::parse(ev.out);
  CHECK(line["loss"].get<double>() == doc["result"]["loss"].get<double>());
  CHECK(line["samples"] == 1024);
  CHECK(std::count(ev.out.begin(), ev.out.end(), '\n') == 1);

  // A bare step array works as well.
  std::ofstream(dir / "steps.json") << doc["result"]["delta_star"].dump();
  const Run bare = run({"eval", "--model", mlp("mlp.json"), "--delta", dir / "steps.json", "--data",
                        mlp("calib_x.qtn"), "--labels", mlp("calib_y.qtn")});
  CHECK(bare.out == ev.out);
}

TEST_CASE("layer-wise MMSE baseline loses to the joint search") {
  const Run mmse = run(mlp_calibrate({"--phase", "lw", "--p", "2"}));
  const Run full = run(mlp_calibrate());
  REQUIRE(mmse.code == kExitOk);
  REQUIRE(full.code == kExitOk);
  CHECK(json::parse(full.out)["result"]["loss"].get<double>() <=
        json::parse(mmse.out)["result"]["loss"].get<double>());
}

TEST_CASE("config file sits between defaults and flags") {
  TempDir dir;
  std::ofstream(dir / "cfg.json") << R"({"wbits": 3, "abits": 3, "calib-size": 64, "max-outer": 1})";
  const Run from_file = run(mlp_calibrate({"--config", dir / "cfg.json"}));
  REQUIRE(from_file.code == kExitOk);
  // mlp_calibrate passes --calib-size 96 and --max-outer 2 on the command line.
  const json c = json::parse(from_file.out)["config"];
  CHECK(c["wbits"] == 3);
  CHECK(c["abits"] == 3);
  CHECK(c["calib_size"] == 96);
  CHECK(c["max_outer"] == 2);

  std::ofstream(dir / "bad.json") << "[1, 2]";
  CHECK(run(mlp_calibrate({"--config", dir / "bad.json"})).code == kExitParse);
  std::ofstream(dir / "typo.json") << R"({"wbitz": 3})";
  CHECK(run(mlp_calibrate({"--config", dir / "typo.json"})).code == kExitParse);
}

TEST_CASE("exit codes") {
  CHECK(run({}).code == kExitParse);
  CHECK(run({"frobnicate"}).code == kExitParse);
  CHECK(run({"calibrate", "--model", mlp("mlp.json"), "--no-such-flag"}).code == kExitParse);
  CHECK(run(mlp_calibrate({"--phase", "sideways"})).code == kExitParse);
  CHECK(run(mlp_calibrate({"--wbits", "1"})).code == kExitParse);

  const Run missing = run({"calibrate", "--model", "/nonexistent/m.json", "--calib", mlp("calib_x.qtn"), "--labels",
                           mlp("calib_y.qtn")});
  CHECK(missing.code == kExitParse);
  CHECK(missing.err.find("/nonexistent/m.json") != std::string::npos);

  TempDir dir;
  REQUIRE(run(mlp_calibrate({"--phase", "lw", "--out", dir / "r.json"})).code == kExitOk);
  // A dataset with zero samples: rank 2, dims [0, 16].
  std::ofstream(dir / "empty.qtn", std::ios::binary)
      << std::string("QTNS\x01\x02\x00\x00\x00\x00\x10\x00\x00\x00", 14);
  const Run empty = run({"eval", "--model", mlp("mlp.json"), "--delta", dir / "r.json", "--data",
                         dir / "empty.qtn", "--labels", mlp("calib_y.qtn")});
  CHECK(empty.code == kExitDegenerate);
  CHECK(run({"eval", "--model", mlp("mlp.json"), "--data", mlp("calib_x.qtn"), "--labels", mlp("calib_y.qtn")})
            .code == kExitParse);
}

TEST_CASE("landscape CSV has the requested resolution") {
  const Run r = run({"landscape", "--model", mlp("mlp.json"), "--calib", mlp("calib_x.qtn"), "--labels",
                     mlp("calib_y.qtn"), "--calib-size", "64", "--resolution", "4", "--i", "0", "--j", "2",
                     "--range-i", "0.8,1.2", "--range-j", "0.5,1.5"});
  REQUIRE(r.code == kExitOk);
  std::istringstream in(r.out);
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) {
    CHECK(std::count(line.begin(), line.end(), ',') == 4);
    ++rows;
  }
  CHECK(rows == 5);
  CHECK(r.out.rfind("delta_i\\delta_j,", 0) == 0);
  CHECK(run({"landscape", "--model", mlp("mlp.json"), "--calib", mlp("calib_x.qtn"), "--labels", mlp("calib_y.qtn"),
             "--i", "0", "--j", "99"})
            .code != kExitOk);
}

TEST_CASE("hessian summary and CSV files") {
  TempDir dir;
  const Run r = run({"hessian", "--model", mlp("mlp.json"), "--calib", mlp("calib_x.qtn"), "--labels",
                     mlp("calib_y.qtn"), "--calib-size", "64", "--params", "0,1,2", "--out-hessian",
                     dir / "h.csv", "--out-gradient", dir / "g.csv"});
  REQUIRE(r.code == kExitOk);
  const json s = json::parse(r.out);
  CHECK(s["params"] == json::array({0, 1, 2}));
  for (const char* key : {"det", "log_abs_det", "det_sign", "gaussian_curvature", "gradient_norm",
                          "off_diagonal_ratio", "qit"})
    CHECK(s.contains(key));
  CHECK(s["qit"]["diagonal"].get<double>() + s["qit"]["cross"].get<double>() ==
        doctest::Approx(s["qit"]["total"].get<double>()).epsilon(1e-12));
  const std::string h = slurp(dir / "h.csv");
  CHECK(h.rfind("param,p0,p1,p2\n", 0) == 0);
  CHECK(std::count(h.begin(), h.end(), '\n') == 4);
  CHECK(slurp(dir / "g.csv").rfind("param,gradient\n", 0) == 0);
}

TEST_CASE("sweep-calib-size") {
  const std::vector<std::string> base{"sweep-calib-size", "--model", mlp("mlp.json"), "--calib", mlp("calib_x.qtn"),
                                      "--labels", mlp("calib_y.qtn"), "--data", mlp("test_x.qtn"),
                                      "--data-labels", mlp("test_y.qtn"), "--max-outer", "1"};
  auto with = [&](std::vector<std::string> extra) {
    auto a = base;
    a.insert(a.end(), extra.begin(), extra.end());
    return run(a);
  };
  const Run r = with({"--sizes", "64,32"});
  REQUIRE(r.code == kExitOk);
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  CHECK(line == "size,calib_loss,test_loss,test_accuracy");
  std::getline(in, line);
  CHECK(line.rfind("32,", 0) == 0);
  std::getline(in, line);
  CHECK(line.rfind("64,", 0) == 0);
  CHECK_FALSE(std::getline(in, line));
  CHECK(with({"--sizes", "32,4096"}).code == kExitParse);
}

TEST_CASE("quantize writes a loadable model with grid-snapped weights") {
  TempDir dir;
  const Run cal = run(mlp_calibrate({"--out", dir / "r.json"}));
  REQUIRE(cal.code == kExitOk);
  const Run q = run({"quantize", "--model", mlp("mlp.json"), "--delta", dir / "r.json", "--out-dir", dir / "q"});
  REQUIRE(q.code == kExitOk);
  const json steps = json::parse(slurp(dir / "q/steps.json"));
  CHECK(steps["bias_correct"] == "none");
  const Model baked = load_model(fs::path(dir / "q") / steps["manifest"].get<std::string>());
  const json result = json::parse(slurp(dir / "r.json"))["result"]["delta_star"];
  for (const auto& e : result) {
    if (e["kind"] != "weight") continue;
    const double delta = e["delta"].get<double>();
    const auto& w = *baked.layers[e["layer"].get<std::size_t>()].weights;
    // Stored as f32, so compare in single precision.
    for (double v : w.data()) {
      const double k = v / delta;
      CHECK(std::abs(k - std::nearbyint(k)) <= 1e-5 * std::max(1.0, std::abs(k)));
    }
  }
  CHECK(run({"quantize", "--model", mlp("mlp.json"), "--delta", dir / "r.json"}).code == kExitParse);
}

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ssf/data.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string cli() {
  const char* p = std::getenv("SSF_CLI");
  REQUIRE_MESSAGE(p != nullptr, "SSF_CLI must point at the ssformer binary");
  return p;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("ssf_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static inline int counter = 0;
};

int run(const std::string& args, std::string* out = nullptr) {
  static int n = 0;
  const fs::path cap = fs::temp_directory_path() / ("ssf_cli_cap_" + std::to_string(::getpid()) +
                                                    "_" + std::to_string(n++) + ".txt");
  const int rc = std::system((cli() + " " + args + " > " + cap.string() + " 2>&1").c_str());
  if (out != nullptr) {
    std::ifstream f(cap);
    std::stringstream ss;
    ss << f.rdbuf();
    *out = ss.str();
  }
  fs::remove(cap);
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

const char* kTinyConfig = R"({
  "train": {"profile": "toy", "lr": 1e-3, "batch_size": 2, "max_iters": 20,
            "eval_interval": 10, "seed": 3},
  "encoder": {"embed_dim": 8, "window_size": 2, "num_heads": [1, 2, 2, 4]},
  "decoder": {"embed_dim": 8},
  "input_h": 32, "input_w": 32,
  "synth_train_samples": 8, "synth_eval_samples": 4
})";

}  // namespace

TEST_CASE("analyze prints totals and writes a JSON report") {
  TempDir tmp;
  const fs::path jout = tmp.path / "report.json";
  std::string out;
  CHECK(run("analyze --profile toy --json " + jout.string(), &out) == 0);
  CHECK(out.find("params_total") != std::string::npos);
  std::ifstream f(jout);
  REQUIRE(f.good());
  json j;
  f >> j;
  CHECK(j["profile"] == "toy");
  CHECK(j["params_total"].get<std::int64_t>() > 0);
  CHECK(j["per_layer"].is_array());
}

TEST_CASE("train, eval and predict round through the filesystem") {
  TempDir tmp;
  const fs::path cfg = tmp.path / "cfg.json";
  std::ofstream(cfg) << kTinyConfig;
  const fs::path ckpt = tmp.path / "model.ssfm";
  const fs::path metrics = tmp.path / "metrics.jsonl";

  std::string out;
  CHECK(run("train --config " + cfg.string() + " --data synth --out " + ckpt.string() +
                " --metrics " + metrics.string(),
            &out) == 0);
  REQUIRE(fs::exists(ckpt));

  // one JSON object per line, loss always present, miou on eval iterations
  std::ifstream mf(metrics);
  std::string line;
  int lines = 0, with_miou = 0;
  while (std::getline(mf, line)) {
    const json j = json::parse(line);
    CHECK(j.contains("iter"));
    CHECK(j.contains("loss"));
    with_miou += j.contains("miou") ? 1 : 0;
    ++lines;
  }
  CHECK(lines == 20);
  CHECK(with_miou == 2);

  // eval against a dataset directory written through the loaders
  const auto samples = ssf::synth_dataset(77, 3, 32, 32, 3);
  const fs::path data_dir = tmp.path / "data";
  ssf::write_dataset_dir(data_dir.string(), samples);
  const fs::path eval_out = tmp.path / "metrics.json";
  CHECK(run("eval --ckpt " + ckpt.string() + " --data " + data_dir.string() + " --out " +
                eval_out.string() + " --config " + cfg.string(),
            &out) == 0);
  std::ifstream ef(eval_out);
  json ej;
  ef >> ej;
  CHECK(ej.contains("miou"));
  CHECK(ej.contains("pixel_acc"));
  CHECK(ej["per_class"].size() == 3);

  // predict a mask for one image
  const fs::path img = data_dir / "images" / "000000.ppm";
  const fs::path mask = tmp.path / "mask.pgm";
  CHECK(run("predict --ckpt " + ckpt.string() + " --image " + img.string() + " --out " +
                mask.string() + " --config " + cfg.string(),
            &out) == 0);
  int h = 0, w = 0;
  const std::vector<int> labels = ssf::load_label_pgm(mask.string(), h, w);
  CHECK(h == 32);
  CHECK(w == 32);
  for (int l : labels) {
    CHECK(l >= 0);
    CHECK(l < 3);
  }
}

TEST_CASE("exit code 2 for config problems") {
  TempDir tmp;
  const fs::path bad = tmp.path / "bad.json";
  std::ofstream(bad) << R"({"train": {"learning_rate": 0.1}})";
  CHECK(run("train --config " + bad.string() + " --data synth --out " +
            (tmp.path / "x.ssfm").string()) == 2);

  // digest mismatch: checkpoint trained tiny, evaluated as default toy profile
  const fs::path cfg = tmp.path / "cfg.json";
  std::ofstream(cfg) << kTinyConfig;
  const fs::path ckpt = tmp.path / "model.ssfm";
  REQUIRE(run("train --config " + cfg.string() + " --data synth --out " + ckpt.string() +
              " --metrics " + (tmp.path / "m.jsonl").string()) == 0);
  const auto samples = ssf::synth_dataset(5, 2, 32, 32, 3);
  const fs::path data_dir = tmp.path / "data";
  ssf::write_dataset_dir(data_dir.string(), samples);
  CHECK(run("eval --ckpt " + ckpt.string() + " --data " + data_dir.string() + " --out " +
            (tmp.path / "e.json").string() + " --profile toy") == 2);
}

TEST_CASE("exit code 3 for data problems") {
  TempDir tmp;
  const fs::path cfg = tmp.path / "cfg.json";
  std::ofstream(cfg) << kTinyConfig;
  CHECK(run("train --config " + cfg.string() + " --data " + (tmp.path / "nowhere").string() +
            " --out " + (tmp.path / "x.ssfm").string()) == 3);
}

TEST_CASE("exit code 4 when training diverges") {
  TempDir tmp;
  const fs::path cfg = tmp.path / "cfg.json";
  std::ofstream(cfg) << R"({
    "train": {"profile": "toy", "lr": 1e12, "batch_size": 1, "max_iters": 20,
              "eval_interval": 100, "seed": 1},
    "encoder": {"embed_dim": 8, "window_size": 2, "num_heads": [1, 2, 2, 4]},
    "decoder": {"embed_dim": 8},
    "input_h": 32, "input_w": 32,
    "synth_train_samples": 4, "synth_eval_samples": 2
  })";
  CHECK(run("train --config " + cfg.string() + " --data synth --out " +
            (tmp.path / "x.ssfm").string() + " --metrics " + (tmp.path / "m.jsonl").string()) ==
        4);
}

TEST_CASE("selftest passes") {
  std::string out;
  CHECK(run("selftest", &out) == 0);
  CHECK(out.find("FAIL") == std::string::npos);
}

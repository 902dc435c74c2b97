#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "ssf/checkpoint.hpp"
#include "ssf/train.hpp"

using namespace ssf;

namespace {

namespace fs = std::filesystem;

EncoderConfig tiny_enc(int embed = 8) {
  EncoderConfig cfg;
  cfg.patch_size = 4;
  cfg.window_size = 2;
  cfg.embed_dim = embed;
  cfg.depths = {1, 1, 1, 1};
  cfg.num_heads = {1, 2, 2, 4};
  return cfg;
}

DecoderConfig tiny_dec(int ncls = 3) {
  DecoderConfig cfg;
  cfg.embed_dim = 8;
  cfg.num_classes = ncls;
  return cfg;
}

Parameter make_param(const std::string& name, Shape shape, std::vector<float> data) {
  Tensor t(std::move(shape), std::move(data));
  t.set_requires_grad(true);
  return {name, t};
}

void set_grad(Parameter& p, const std::vector<float>& g) {
  p.tensor.zero_grad();
  Tape tape;
  Tensor r(p.tensor.shape(), g);
  // route the wanted gradient through a real backward pass
  Tensor loss = scale(mean(mul(p.tensor, r)), static_cast<float>(p.tensor.numel()));
  tape.backward(loss);
}

std::vector<unsigned char> file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("ssf_train_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static inline int counter = 0;
};

}  // namespace

TEST_CASE("adamw: zero gradient and zero decay leave parameters unchanged") {
  Parameter p = make_param("w", {4}, {1.0f, -2.0f, 3.0f, 0.5f});
  AdamWConfig cfg;
  cfg.lr = 0.1f;
  cfg.weight_decay = 0.0f;
  AdamW opt({p}, cfg);
  const std::vector<float> before(p.tensor.data().begin(), p.tensor.data().end());
  opt.step();  // no grad buffer at all
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(p.tensor.data()[i] == before[i]);
}

TEST_CASE("adamw: pure decay scales parameters by (1 - lr*wd)") {
  Parameter p = make_param("w", {3}, {2.0f, -4.0f, 0.25f});
  AdamWConfig cfg;
  cfg.lr = 0.01f;
  cfg.weight_decay = 0.5f;
  AdamW opt({p}, cfg);
  const std::vector<float> before(p.tensor.data().begin(), p.tensor.data().end());
  opt.step();
  for (std::size_t i = 0; i < before.size(); ++i) {
    // same float expression order as the update rule
    CHECK(p.tensor.data()[i] == before[i] - cfg.lr * (cfg.weight_decay * before[i]));
  }
}

TEST_CASE("adamw: first step moves by about -lr * sign(g)") {
  Parameter p = make_param("w", {1}, {1.0f});
  AdamWConfig cfg;
  cfg.lr = 0.05f;
  cfg.weight_decay = 0.0f;
  AdamW opt({p}, cfg);
  set_grad(p, {0.7f});
  opt.step();
  // m_hat = g, v_hat = g^2: update = -lr * g / (|g| + eps)
  CHECK(p.tensor.data()[0] == doctest::Approx(1.0f - 0.05f * (0.7f / (0.7f + 1e-8f))).epsilon(1e-6));
}

TEST_CASE("adamw: lr 0 is the null optimizer") {
  Parameter p = make_param("w", {2}, {1.5f, -0.5f});
  AdamWConfig cfg;
  cfg.lr = 0.0f;
  cfg.weight_decay = 0.0f;
  AdamW opt({p}, cfg);
  for (int it = 0; it < 5; ++it) {
    set_grad(p, {0.3f, -0.9f});
    opt.step();
  }
  CHECK(p.tensor.data()[0] == 1.5f);
  CHECK(p.tensor.data()[1] == -0.5f);
}

TEST_CASE("adamw: NaN gradient aborts with the parameter name") {
  Parameter p = make_param("encoder.broken.weight", {1}, {1.0f});
  AdamW opt({p}, AdamWConfig{});
  p.tensor.zero_grad();
  {
    Tape tape;
    Tensor loss = mean(p.tensor);
    tape.backward(loss);
  }
  p.tensor.grad()[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("encoder.broken.weight"), NumericError);
}

TEST_CASE("adamw matches a 64-bit reference over many steps") {
  Rng rng(31);
  const int n = 24;
  std::vector<float> init((std::size_t)n);
  for (float& v : init) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  Parameter p = make_param("w", {n}, init);
  AdamWConfig cfg;
  cfg.lr = 3e-3f;
  cfg.weight_decay = 0.0f;
  AdamW opt({p}, cfg);

  // ten steps: enough to exercise bias correction over time while staying
  // below the inherent f32 storage drift (~1 ulp of p per step)
  std::vector<double> ref(init.begin(), init.end());
  std::vector<double> m((std::size_t)n, 0.0), v((std::size_t)n, 0.0);
  for (int t = 1; t <= 10; ++t) {
    std::vector<float> g((std::size_t)n);
    for (float& x : g) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    set_grad(p, g);
    opt.step();
    const double bc1 = 1.0 - std::pow(0.9, t), bc2 = 1.0 - std::pow(0.999, t);
    for (int i = 0; i < n; ++i) {
      m[(std::size_t)i] = 0.9 * m[(std::size_t)i] + 0.1 * g[(std::size_t)i];
      v[(std::size_t)i] = 0.999 * v[(std::size_t)i] + 0.001 * g[(std::size_t)i] * g[(std::size_t)i];
      ref[(std::size_t)i] -= cfg.lr * (m[(std::size_t)i] / bc1) /
                            (std::sqrt(v[(std::size_t)i] / bc2) + 1e-8);
    }
  }
  for (int i = 0; i < n; ++i) {
    const double rel = std::abs(p.tensor.data()[(std::size_t)i] - ref[(std::size_t)i]) /
                       std::max(1e-12, std::abs(ref[(std::size_t)i]));
    CHECK(rel < 1e-6);
  }
}

TEST_CASE("checkpoint roundtrip is bit-exact for 20 random models") {
  TempDir tmp;
  Rng rng(32);
  for (int trial = 0; trial < 20; ++trial) {
    EncoderConfig enc = tiny_enc(4 * (int)rng.uniform_int(1, 3));
    enc.depths = {1, (int)rng.uniform_int(1, 2), 1, 1};
    DecoderConfig dec = tiny_dec(2 + (int)rng.uniform_int(0, 5));
    SSformer model(enc, dec, (std::uint64_t)trial * 17 + 5);
    const fs::path p = tmp.path / ("m" + std::to_string(trial) + ".ssfm");
    save_checkpoint(p.string(), model);

    SSformer other(enc, dec, 9999);  // different init, same architecture
    load_checkpoint(p.string(), other);
    REQUIRE(other.parameters().size() == model.parameters().size());
    for (std::size_t i = 0; i < model.parameters().size(); ++i) {
      const auto& a = model.parameters()[i].tensor;
      const auto& b = other.parameters()[i].tensor;
      CHECK(std::memcmp(a.data().data(), b.data().data(),
                        (std::size_t)a.numel() * sizeof(float)) == 0);
    }
  }
}

TEST_CASE("checkpoint digest guards against config mismatch") {
  TempDir tmp;
  SSformer model(tiny_enc(), tiny_dec(), 1);
  const fs::path p = tmp.path / "m.ssfm";
  save_checkpoint(p.string(), model);

  DecoderConfig other_dec = tiny_dec(5);
  SSformer other(tiny_enc(), other_dec, 1);
  CHECK_THROWS_AS(load_checkpoint(p.string(), other), ConfigError);

  CHECK(config_digest(tiny_enc(), tiny_dec()) != config_digest(tiny_enc(), other_dec));
  CHECK(config_digest(tiny_enc(), tiny_dec()) == config_digest(tiny_enc(), tiny_dec()));
}

TEST_CASE("optimizer moments ride along in the checkpoint") {
  TempDir tmp;
  SSformer model(tiny_enc(), tiny_dec(), 2);
  AdamWConfig ocfg;
  ocfg.lr = 1e-3f;
  AdamW opt(model.parameters(), ocfg);
  const auto data = synth_dataset(3, 2, 16, 16, 3);
  TrainConfig tcfg;
  tcfg.lr = 1e-3;
  tcfg.batch_size = 1;
  tcfg.max_iters = 3;
  tcfg.eval_interval = 100;
  train(model, opt, data, {}, tcfg);

  const fs::path p = tmp.path / "m.ssfm";
  save_checkpoint(p.string(), model, &opt);

  SSformer other(tiny_enc(), tiny_dec(), 77);
  AdamW opt2(other.parameters(), ocfg);
  load_checkpoint(p.string(), other, &opt2);
  CHECK(opt2.step_count() == opt.step_count());
  for (std::size_t i = 0; i < opt.moments_m().size(); ++i) {
    CHECK(opt.moments_m()[i] == opt2.moments_m()[i]);
    CHECK(opt.moments_v()[i] == opt2.moments_v()[i]);
  }
}

TEST_CASE("fixed-seed training is bit-identical, including the loss trace") {
  TempDir tmp;
  const auto data = synth_dataset(5, 4, 16, 16, 3);
  auto run = [&](const fs::path& out) {
    SSformer model(tiny_enc(), tiny_dec(), 11);
    AdamWConfig ocfg;
    ocfg.lr = 1e-3f;
    AdamW opt(model.parameters(), ocfg);
    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.batch_size = 2;
    cfg.max_iters = 5;
    cfg.seed = 11;
    cfg.eval_interval = 100;
    std::vector<double> losses;
    train(model, opt, data, {}, cfg,
          [&](const TrainLogEntry& e) { losses.push_back(e.loss); });
    save_checkpoint(out.string(), model, &opt);
    return losses;
  };
  const auto l1 = run(tmp.path / "a.ssfm");
  const auto l2 = run(tmp.path / "b.ssfm");
  CHECK(l1 == l2);
  CHECK(file_bytes(tmp.path / "a.ssfm") == file_bytes(tmp.path / "b.ssfm"));
}

TEST_CASE("every parameter moves and has gradient after one step") {
  SSformer model(tiny_enc(), tiny_dec(), 21);
  AdamWConfig ocfg;
  ocfg.lr = 1e-3f;
  AdamW opt(model.parameters(), ocfg);
  const auto data = synth_dataset(6, 2, 64, 64, 3);
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.batch_size = 1;
  cfg.max_iters = 1;
  cfg.eval_interval = 100;
  train(model, opt, data, {}, cfg);
  for (const Parameter& p : model.parameters()) {
    INFO("parameter " << p.name);
    REQUIRE(p.tensor.has_grad());
    double norm = 0.0;
    for (float g : p.tensor.grad()) norm += static_cast<double>(g) * g;
    CHECK(norm > 0.0);
  }
}

TEST_CASE("loss falls over 200 iterations (median of 5 seeds)") {
  std::vector<double> first, last;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto data = synth_dataset(seed, 8, 32, 32, 3);
    SSformer model(tiny_enc(16), tiny_dec(), seed);
    AdamWConfig ocfg;
    ocfg.lr = 1e-3f;
    AdamW opt(model.parameters(), ocfg);
    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.batch_size = 2;
    cfg.max_iters = 200;
    cfg.seed = seed;
    cfg.eval_interval = 1000;
    std::vector<double> losses;
    train(model, opt, data, {}, cfg,
          [&](const TrainLogEntry& e) { losses.push_back(e.loss); });
    first.push_back(losses.front());
    last.push_back(losses.back());
  }
  std::sort(first.begin(), first.end());
  std::sort(last.begin(), last.end());
  CHECK(last[2] < first[2]);  // medians
}

TEST_CASE("evaluate with ground truth as the predictor is exactly 1.0") {
  const auto data = synth_dataset(7, 4, 32, 32, 3);
  const EvalResult r =
      evaluate_with([](const Sample& s) { return s.label; }, data, 3, 255);
  CHECK(r.miou == 1.0);
  CHECK(r.pixel_accuracy == 1.0);
}

TEST_CASE("zeroed classifier predicts one class; accuracy equals its frequency") {
  SSformer model(tiny_enc(), tiny_dec(), 3);
  for (Parameter& p : model.parameters()) {
    if (p.name == "decoder.classifier.weight" || p.name == "decoder.classifier.bias") {
      for (float& v : p.tensor.data()) v = 0.0f;
    }
  }
  const auto data = synth_dataset(8, 4, 32, 32, 3);
  std::uint64_t zeros = 0, total = 0;
  for (const Sample& s : data) {
    for (int l : s.label) {
      zeros += l == 0 ? 1 : 0;
      ++total;
    }
  }
  const EvalResult r = evaluate(model, data);
  CHECK(r.pixel_accuracy == doctest::Approx((double)zeros / (double)total).epsilon(1e-12));
  CHECK(r.miou < 1.0);
}

TEST_CASE("metrics agree whether samples are evaluated together or apart") {
  const auto data = synth_dataset(9, 6, 16, 16, 3);
  SSformer model(tiny_enc(), tiny_dec(), 5);
  const EvalResult whole = evaluate(model, data);

  ConfusionMatrix merged(3);
  for (const Sample& s : data) {
    ConfusionMatrix cm(3);
    cm.update(predict_labels(model, s.image), s.label, 255);
    merged += cm;
  }
  const IouResult r = miou(merged);
  CHECK(whole.miou == doctest::Approx(r.miou).epsilon(1e-12));
  CHECK(whole.pixel_accuracy == doctest::Approx(r.pixel_accuracy).epsilon(1e-12));
}

TEST_CASE("training aborts with the iteration number when the loss blows up") {
  SSformer model(tiny_enc(), tiny_dec(), 4);
  // poison a weight so the forward pass goes non-finite
  for (Parameter& p : model.parameters()) {
    if (p.name == "decoder.classifier.weight") {
      for (float& v : p.tensor.data()) v = 1e30f;
    }
    if (p.name == "decoder.fuse.weight") {
      for (float& v : p.tensor.data()) v = 1e30f;
    }
  }
  AdamWConfig ocfg;
  AdamW opt(model.parameters(), ocfg);
  const auto data = synth_dataset(10, 2, 16, 16, 3);
  TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.max_iters = 2;
  cfg.eval_interval = 100;
  CHECK_THROWS_AS(train(model, opt, data, {}, cfg), NumericError);
}

TEST_CASE("profiles resolve and config JSON rejects unknown keys") {
  const Profile toy = make_profile("toy");
  CHECK(toy.encoder.embed_dim == 32);
  CHECK(toy.decoder.num_classes == 3);
  const Profile ade = make_profile("ade20k");
  CHECK(ade.encoder.embed_dim == 128);
  CHECK(ade.decoder.num_classes == 150);
  const Profile city = make_profile("cityscapes");
  CHECK(city.decoder.num_classes == 19);
  CHECK_THROWS_AS(make_profile("imagenet"), ConfigError);

  const Profile p = parse_run_config(R"({
    "train": {"profile": "toy", "lr": 2e-3, "betas": [0.8, 0.99], "batch_size": 2},
    "encoder": {"embed_dim": 16},
    "decoder": {"num_classes": 4}
  })");
  CHECK(p.encoder.embed_dim == 16);
  CHECK(p.decoder.num_classes == 4);
  CHECK(p.train.lr == 2e-3);
  CHECK(p.train.beta1 == 0.8);
  CHECK(p.train.batch_size == 2);

  CHECK_THROWS_AS(parse_run_config(R"({"train": {"learning_rate": 1e-3}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"encoder": {"window": 7}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"optimizer": {}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("not json"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"betas": [0.9]}})"), ConfigError);
}

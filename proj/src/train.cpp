#include "ssf/train.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace ssf {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("train: betas must lie in [0,1)");
  }
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (max_iters < 1) throw ConfigError("train: max_iters must be >= 1");
  if (eval_interval < 1) throw ConfigError("train: eval_interval must be >= 1");
}

Profile make_profile(const std::string& name) {
  Profile p;
  p.name = name;
  if (name == "ade20k") {
    p.decoder.num_classes = 150;
    p.train.batch_size = 8;
    p.train.max_iters = 160000;
    p.input_h = p.input_w = 512;
  } else if (name == "cityscapes") {
    p.decoder.num_classes = 19;
    p.train.batch_size = 2;
    p.train.max_iters = 80000;
    p.input_h = p.input_w = 1024;
  } else if (name == "toy") {
    p.encoder.patch_size = 4;
    p.encoder.window_size = 4;
    p.encoder.embed_dim = 32;
    p.encoder.depths = {1, 1, 1, 1};
    p.encoder.num_heads = {2, 4, 8, 16};
    p.decoder.embed_dim = 32;
    p.decoder.num_classes = 3;
    p.train.lr = 1e-3;
    p.train.batch_size = 4;
    p.train.max_iters = 2000;
    p.train.eval_interval = 200;
    p.train.seed = 42;
    p.input_h = p.input_w = 64;
    p.synth_train_samples = 64;
    p.synth_eval_samples = 16;
  } else {
    throw ConfigError("unknown profile \"" + name + "\" (ade20k | cityscapes | toy)");
  }
  p.train.profile = name;
  return p;
}

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, std::initializer_list<const char*> known,
                    const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("config: unknown key \"" + it.key() + "\" in " + where);
  }
}

template <typename T>
void take(const json& obj, const char* key, T& into) {
  if (obj.contains(key)) into = obj.at(key).get<T>();
}

}  // namespace

Profile parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config: top level must be an object");
  reject_unknown(root, {"train", "encoder", "decoder", "input_h", "input_w",
                        "synth_train_samples", "synth_eval_samples"},
                 "top level");

  std::string profile_name = "toy";
  if (root.contains("train") && root["train"].contains("profile")) {
    profile_name = root["train"]["profile"].get<std::string>();
  }
  Profile p = make_profile(profile_name);

  try {
    if (root.contains("encoder")) {
      const json& e = root["encoder"];
      reject_unknown(e, {"patch_size", "window_size", "embed_dim", "depths", "num_heads",
                         "mlp_ratio", "in_channels"},
                     "encoder");
      take(e, "patch_size", p.encoder.patch_size);
      take(e, "window_size", p.encoder.window_size);
      take(e, "embed_dim", p.encoder.embed_dim);
      take(e, "depths", p.encoder.depths);
      take(e, "num_heads", p.encoder.num_heads);
      take(e, "mlp_ratio", p.encoder.mlp_ratio);
      take(e, "in_channels", p.encoder.in_channels);
    }
    if (root.contains("decoder")) {
      const json& d = root["decoder"];
      reject_unknown(d, {"embed_dim", "num_classes", "ignore_index"}, "decoder");
      take(d, "embed_dim", p.decoder.embed_dim);
      take(d, "num_classes", p.decoder.num_classes);
      take(d, "ignore_index", p.decoder.ignore_index);
    }
    if (root.contains("train")) {
      const json& t = root["train"];
      reject_unknown(t, {"lr", "betas", "weight_decay", "batch_size", "max_iters", "seed",
                         "eval_interval", "profile"},
                     "train");
      take(t, "lr", p.train.lr);
      if (t.contains("betas")) {
        const auto betas = t.at("betas").get<std::vector<double>>();
        if (betas.size() != 2) throw ConfigError("config: train.betas must be [beta1, beta2]");
        p.train.beta1 = betas[0];
        p.train.beta2 = betas[1];
      }
      take(t, "weight_decay", p.train.weight_decay);
      take(t, "batch_size", p.train.batch_size);
      take(t, "max_iters", p.train.max_iters);
      take(t, "seed", p.train.seed);
      take(t, "eval_interval", p.train.eval_interval);
    }
    take(root, "input_h", p.input_h);
    take(root, "input_w", p.input_w);
    take(root, "synth_train_samples", p.synth_train_samples);
    take(root, "synth_eval_samples", p.synth_eval_samples);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  p.encoder.validate();
  p.decoder.validate();
  p.train.validate();
  return p;
}

std::vector<int> predict_labels(const SSformer& model, const Tensor& image) {
  return argmax_last(model.forward(image));
}

void train(SSformer& model, AdamW& opt, const std::vector<Sample>& train_data,
           const std::vector<Sample>& eval_data, const TrainConfig& cfg, const LogFn& log) {
  cfg.validate();
  if (train_data.empty()) throw DataError("train: dataset is empty");
  const int ignore = model.decoder().config().ignore_index;
  Rng batch_rng(cfg.seed * 0x9e3779b97f4a7c15ull + 1);

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    model.zero_grads();
    Tensor loss;
    {
      Tape tape;
      for (int b = 0; b < cfg.batch_size; ++b) {
        const Sample& s =
            train_data[static_cast<std::size_t>(batch_rng.uniform_int(0, static_cast<std::int64_t>(train_data.size()) - 1))];
        Tensor logits = model.forward(s.image);
        Tensor flat = reshape(logits, {logits.dim(0) * logits.dim(1), logits.dim(2)});
        Tensor l = cross_entropy(flat, s.label, ignore);
        loss = loss.defined() ? add(loss, l) : l;
      }
      if (cfg.batch_size > 1) loss = scale(loss, 1.0f / static_cast<float>(cfg.batch_size));
      if (!std::isfinite(loss.item())) {
        throw NumericError("train: loss diverged at iteration " + std::to_string(iter));
      }
      tape.backward(loss);
    }
    opt.step();

    TrainLogEntry entry;
    entry.iter = iter;
    entry.loss = static_cast<double>(loss.item());
    const bool eval_now = !eval_data.empty() &&
                          ((iter + 1) % cfg.eval_interval == 0 || iter + 1 == cfg.max_iters);
    if (eval_now) entry.miou = evaluate(model, eval_data).miou;
    if (log) log(entry);
  }
}

EvalResult evaluate(const SSformer& model, const std::vector<Sample>& data) {
  return evaluate_with([&](const Sample& s) { return predict_labels(model, s.image); }, data,
                       model.decoder().config().num_classes,
                       model.decoder().config().ignore_index);
}

EvalResult evaluate_with(const PredictFn& predict, const std::vector<Sample>& data,
                         int num_classes, int ignore_index) {
  if (data.empty()) throw DataError("evaluate: dataset is empty");
  ConfusionMatrix cm(num_classes);
  for (const Sample& s : data) {
    const std::vector<int> pred = predict(s);
    cm.update(pred, s.label, ignore_index);
  }
  const IouResult r = miou(cm);
  EvalResult out;
  out.miou = r.miou;
  out.pixel_accuracy = r.pixel_accuracy;
  out.per_class = r.per_class;
  out.present = r.present;
  return out;
}

}  // namespace ssf

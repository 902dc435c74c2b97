#pragma once

#include <functional>
#include <optional>

#include "ssf/data.hpp"
#include "ssf/metrics.hpp"
#include "ssf/model.hpp"
#include "ssf/optim.hpp"

namespace ssf {

struct TrainConfig {
  double lr = 6e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  int batch_size = 8;
  int max_iters = 2000;
  std::uint64_t seed = 0;
  int eval_interval = 200;
  std::string profile = "toy";
  void validate() const;
};

// Named presets for the three operating points. ade20k and cityscapes carry
// the full-size architecture; toy is the small configuration that trains on
// synthetic data in minutes on a CPU.
struct Profile {
  std::string name;
  EncoderConfig encoder;
  DecoderConfig decoder;
  TrainConfig train;
  int input_h = 512, input_w = 512;
  int synth_train_samples = 64;
  int synth_eval_samples = 16;
};

Profile make_profile(const std::string& name);

// Full run configuration: profile defaults overridden by an optional JSON
// config file whose sections mirror the three config structs field by
// field. Unknown keys are rejected.
Profile parse_run_config(const std::string& json_text);

struct TrainLogEntry {
  int iter = 0;
  double loss = 0.0;
  std::optional<double> miou;
};

using LogFn = std::function<void(const TrainLogEntry&)>;

// Deterministic given cfg.seed: batch sampling, loss trajectory and final
// weights are reproducible bit for bit on one platform. Aborts with
// NumericError when the loss goes non-finite.
void train(SSformer& model, AdamW& opt, const std::vector<Sample>& train_data,
           const std::vector<Sample>& eval_data, const TrainConfig& cfg, const LogFn& log = {});

struct EvalResult {
  double miou = 0.0;
  double pixel_accuracy = 0.0;
  std::vector<double> per_class;
  std::vector<bool> present;
};

EvalResult evaluate(const SSformer& model, const std::vector<Sample>& data);

// Metric path with the predictor factored out so it can be driven with
// ground truth or canned outputs.
using PredictFn = std::function<std::vector<int>(const Sample&)>;
EvalResult evaluate_with(const PredictFn& predict, const std::vector<Sample>& data,
                         int num_classes, int ignore_index);

std::vector<int> predict_labels(const SSformer& model, const Tensor& image);

}  // namespace ssf

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "ssf/checkpoint.hpp"
#include "ssf/complexity.hpp"
#include "ssf/data.hpp"
#include "ssf/selfcheck.hpp"
#include "ssf/train.hpp"

namespace {

using nlohmann::json;

std::string read_text(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ssf::DataError("cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

ssf::Profile resolve_profile(const std::string& config_path, const std::string& profile_name) {
  if (!config_path.empty()) return ssf::parse_run_config(read_text(config_path));
  return ssf::make_profile(profile_name);
}

std::uint64_t synth_eval_seed(std::uint64_t seed) { return seed ^ 0x5eedf00dcafe1234ull; }

int cmd_analyze(const std::string& profile_name, int height, int width,
                const std::string& json_path) {
  ssf::Profile prof = ssf::make_profile(profile_name);
  const int h = height > 0 ? height : prof.input_h;
  const int w = width > 0 ? width : prof.input_w;
  const ssf::ComplexityReport rep = ssf::analyze(prof.name, prof.encoder, prof.decoder, h, w);
  std::cout << "profile:        " << rep.profile << "\n"
            << "input:          " << rep.input_h << "x" << rep.input_w << "\n"
            << "params_total:   " << rep.params_total << " (" << rep.params_total / 1e6 << "M)\n"
            << "omega_eq1:      " << rep.omega_eq1 << " (" << rep.omega_eq1 / 1e9 << "G MACs)\n"
            << "flops_detailed: " << rep.flops_detailed << " (" << rep.flops_detailed / 1e9
            << "G MACs)\n";
  if (!json_path.empty()) {
    std::ofstream out(json_path);
    if (!out) throw ssf::DataError("cannot write " + json_path);
    out << ssf::report_to_json(rep) << "\n";
  }
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data, const std::string& out,
              const std::string& metrics_path) {
  ssf::Profile prof =
      config_path.empty() ? ssf::make_profile("toy") : ssf::parse_run_config(read_text(config_path));
  std::vector<ssf::Sample> train_data, eval_data;
  if (data == "synth") {
    train_data = ssf::synth_dataset(prof.train.seed, prof.synth_train_samples, prof.input_h,
                                    prof.input_w, prof.decoder.num_classes);
    eval_data = ssf::synth_dataset(synth_eval_seed(prof.train.seed), prof.synth_eval_samples,
                                   prof.input_h, prof.input_w, prof.decoder.num_classes);
  } else {
    train_data = ssf::load_dataset_dir(data);
  }

  ssf::SSformer model(prof.encoder, prof.decoder, prof.train.seed);
  ssf::AdamWConfig ocfg;
  ocfg.lr = static_cast<float>(prof.train.lr);
  ocfg.beta1 = static_cast<float>(prof.train.beta1);
  ocfg.beta2 = static_cast<float>(prof.train.beta2);
  ocfg.weight_decay = static_cast<float>(prof.train.weight_decay);
  ssf::AdamW opt(model.parameters(), ocfg);

  std::ofstream metrics(metrics_path);
  if (!metrics) throw ssf::DataError("cannot write " + metrics_path);
  ssf::train(model, opt, train_data, eval_data, prof.train, [&](const ssf::TrainLogEntry& e) {
    json j{{"iter", e.iter}, {"loss", e.loss}};
    if (e.miou) j["miou"] = *e.miou;
    metrics << j.dump() << "\n";
    if (e.miou) {
      std::cout << "iter " << e.iter << "  loss " << e.loss << "  miou " << *e.miou << std::endl;
    }
  });
  ssf::save_checkpoint(out, model, &opt);
  std::cout << "saved " << out << " (" << model.parameter_count() << " parameters)\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& out,
             const std::string& config_path, const std::string& profile_name) {
  ssf::Profile prof = resolve_profile(config_path, profile_name);
  ssf::SSformer model(prof.encoder, prof.decoder, prof.train.seed);
  ssf::load_checkpoint(ckpt, model);
  const std::vector<ssf::Sample> samples = ssf::load_dataset_dir(data);
  const ssf::EvalResult res = ssf::evaluate(model, samples);
  json j{{"miou", res.miou}, {"pixel_acc", res.pixel_accuracy}};
  json per = json::array();
  for (std::size_t c = 0; c < res.per_class.size(); ++c) {
    per.push_back({{"class", c},
                   {"iou", res.present[c] ? json(res.per_class[c]) : json(nullptr)}});
  }
  j["per_class"] = std::move(per);
  std::ofstream f(out);
  if (!f) throw ssf::DataError("cannot write " + out);
  f << j.dump(2) << "\n";
  std::cout << "miou " << res.miou << "  pixel_acc " << res.pixel_accuracy << "\n";
  return 0;
}

int cmd_predict(const std::string& ckpt, const std::string& image_path, const std::string& out,
                const std::string& config_path, const std::string& profile_name) {
  ssf::Profile prof = resolve_profile(config_path, profile_name);
  ssf::SSformer model(prof.encoder, prof.decoder, prof.train.seed);
  ssf::load_checkpoint(ckpt, model);
  ssf::Tensor image = ssf::load_image_pgm_ppm(image_path);
  if (image.dim(2) == 1) image = ssf::concat({image, image, image}, 2);
  const std::vector<int> labels = ssf::predict_labels(model, image);
  ssf::write_pgm(out, labels, image.dim(0), image.dim(1));
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_selftest() {
  bool all = true;
  for (const ssf::CheckResult& r : ssf::run_selftest()) {
    std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name;
    if (!r.detail.empty()) std::cout << "  (" << r.detail << ")";
    std::cout << "\n";
    all = all && r.pass;
  }
  return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SSformer semantic segmentation toolkit"};
  app.require_subcommand(1);

  auto* analyze = app.add_subcommand("analyze", "parameter and FLOP accounting");
  std::string a_profile = "ade20k";
  int a_height = 0, a_width = 0;
  std::string a_json;
  analyze->add_option("--profile", a_profile, "ade20k | cityscapes | toy");
  analyze->add_option("--height", a_height, "input height (default per profile)");
  analyze->add_option("--width", a_width, "input width (default per profile)");
  analyze->add_option("--json", a_json, "write the full report to this file");

  auto* train = app.add_subcommand("train", "optimize on a dataset directory or synth data");
  std::string t_config, t_data = "synth", t_out = "ckpt.ssfm", t_metrics = "metrics.jsonl";
  train->add_option("--config", t_config, "JSON config file");
  train->add_option("--data", t_data, "dataset directory or 'synth'");
  train->add_option("--out", t_out, "checkpoint output path");
  train->add_option("--metrics", t_metrics, "JSONL training log path");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset directory");
  std::string e_ckpt, e_data, e_out = "metrics.json", e_config, e_profile = "toy";
  eval->add_option("--ckpt", e_ckpt)->required();
  eval->add_option("--data", e_data)->required();
  eval->add_option("--out", e_out);
  eval->add_option("--config", e_config, "JSON config file describing the model");
  eval->add_option("--profile", e_profile, "profile preset when no config is given");

  auto* predict = app.add_subcommand("predict", "segment one image into a PGM class mask");
  std::string p_ckpt, p_image, p_out = "mask.pgm", p_config, p_profile = "toy";
  predict->add_option("--ckpt", p_ckpt)->required();
  predict->add_option("--image", p_image)->required();
  predict->add_option("--out", p_out);
  predict->add_option("--config", p_config, "JSON config file describing the model");
  predict->add_option("--profile", p_profile, "profile preset when no config is given");

  auto* selftest = app.add_subcommand("selftest", "run the mechanism invariant checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (analyze->parsed()) return cmd_analyze(a_profile, a_height, a_width, a_json);
    if (train->parsed()) return cmd_train(t_config, t_data, t_out, t_metrics);
    if (eval->parsed()) return cmd_eval(e_ckpt, e_data, e_out, e_config, e_profile);
    if (predict->parsed()) return cmd_predict(p_ckpt, p_image, p_out, p_config, p_profile);
    if (selftest->parsed()) return cmd_selftest();
  } catch (const ssf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ssf::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ssf::ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ssf::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

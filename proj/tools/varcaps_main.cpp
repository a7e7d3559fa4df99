#include "CLI11.hpp"

#include "varcaps/checkpoint.hpp"
#include "varcaps/config.hpp"
#include "varcaps/dataset.hpp"
#include "varcaps/decoder.hpp"
#include "varcaps/grad_suite.hpp"
#include "varcaps/trainer.hpp"

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>

namespace {

using namespace varcaps;

void print_losses(const std::vector<double>& losses) {
  char buf[40];
  for (std::size_t e = 0; e < losses.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%.12g", losses[e]);
    std::cout << "epoch=" << e + 1 << " loss=" << buf << "\n";
  }
}

int run_synth(const std::string& out_dir, std::uint64_t seed, int domains,
              int types, int per_type, int size) {
  SynthSpec spec;
  spec.domains = domains;
  spec.types_per_domain = types;
  spec.images_per_type = per_type;
  spec.image_size = size;
  SynthResult r = synthesize_dataset(seed, spec, out_dir);
  std::cout << "manifest=" << r.manifest_path << "\n"
            << "train=" << r.train_path << "\n"
            << "test=" << r.test_path << "\n"
            << "samples=" << r.manifest.samples.size() << "\n";
  return 0;
}

RunConfig load_config_with_seed(const std::string& config_path,
                                const CLI::Option* seed_opt,
                                std::uint64_t seed_flag) {
  RunConfig cfg = load_run_config(config_path, std::cerr);
  if (seed_opt->count() > 0) {
    cfg.seed = seed_flag;
    cfg.has_seed = true;
  }
  return cfg;
}

int run_train_capsules(const RunConfig& cfg, const std::string& data_dir,
                       const std::string& out, bool end_to_end) {
  LoadedDataset data = load_dataset(data_dir, cfg.model);
  TrainResult result =
      end_to_end ? train_end_to_end(cfg, data) : train_capsule_stage(cfg, data);
  print_losses(result.epoch_losses);
  const double acc =
      classification_accuracy(result.checkpoint, data, data.train_indices);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", acc);
  std::cout << "train_classification_accuracy=" << buf << "\n";
  checkpoint_save(result.checkpoint, out);
  std::cout << "checkpoint=" << out << "\n";
  return 0;
}

int run_train_decoder(const RunConfig& cfg, const std::string& data_dir,
                      const std::string& ckpt_path, const std::string& out) {
  Checkpoint from = checkpoint_load(ckpt_path);
  LoadedDataset data = load_dataset(data_dir, from.model);
  TrainResult result = train_decoder_stage(from, cfg, data);
  print_losses(result.epoch_losses);
  checkpoint_save(result.checkpoint, out);
  save_vocabulary(result.checkpoint.vocab, out + ".vocab.txt");
  std::cout << "checkpoint=" << out << "\n"
            << "vocabulary=" << out << ".vocab.txt\n";
  return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& data_dir,
             const CLI::Option* tau_opt, double tau_flag) {
  Checkpoint ckpt = checkpoint_load(ckpt_path);
  double tau = 0.5;
  {
    std::ostringstream sink;
    RunConfig saved = parse_run_config(ckpt.config_text, sink);
    tau = saved.tau;
  }
  if (tau_opt->count() > 0) tau = tau_flag;
  LoadedDataset data = load_dataset(data_dir, ckpt.model);
  Metrics m = evaluate(ckpt, data, tau);
  std::cout << metrics_table(m) << "\n" << metrics_kv(m);
  return 0;
}

int run_report(const std::string& ckpt_path, const std::string& image,
               const std::string& out) {
  Checkpoint ckpt = checkpoint_load(ckpt_path);
  emit_report(ckpt, image, out);
  std::cout << "report=" << out << "\n";
  return 0;
}

int run_grad_check(unsigned seed, int instances) {
  const auto reports = run_gradient_suite(instances, seed);
  char buf[40];
  for (const OpGradReport& r : reports) {
    std::snprintf(buf, sizeof buf, "%.3e", r.max_rel_error);
    std::cout << "op=" << r.op << " max_rel_err=" << buf
              << " instances=" << r.instances << " skipped=" << r.skipped
              << "\n";
  }
  const bool ok = gradient_suite_passed(reports);
  std::cout << (ok ? "grad-check: PASS (all <= 1e-4)"
                   : "grad-check: FAIL (tolerance 1e-4)")
            << "\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational capsule network with hierarchical characteristic "
               "decoding"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth-data",
                                   "Generate the procedural multi-domain "
                                   "characteristic dataset");
  std::string synth_out;
  std::uint64_t synth_seed = 7;
  int synth_domains = 2, synth_types = 2, synth_per_type = 32, synth_size = 32;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--domains", synth_domains, "Number of domains");
  synth->add_option("--types", synth_types, "Types per domain");
  synth->add_option("--per-type", synth_per_type, "Images per type");
  synth->add_option("--size", synth_size, "Image side length in pixels");

  std::string config_path, data_dir, ckpt_path, out_path, image_path;
  std::uint64_t seed_flag = 0;
  double tau_flag = 0.5;
  bool end_to_end = false;

  auto* train_caps = app.add_subcommand(
      "train-capsules", "Stage 1: train the variational capsule classifier");
  train_caps->add_option("--config", config_path, "Config file")->required();
  train_caps->add_option("--data-dir", data_dir, "Dataset directory")->required();
  train_caps->add_option("--out", out_path, "Checkpoint output path")->required();
  auto* tc_seed = train_caps->add_option("--seed", seed_flag, "Seed override");
  train_caps->add_flag("--end-to-end", end_to_end,
                       "Joint single-stage baseline (known to perform poorly)");

  auto* train_dec = app.add_subcommand(
      "train-decoder", "Stage 2: freeze capsules, train the information decoder");
  train_dec->add_option("--config", config_path, "Config file")->required();
  train_dec->add_option("--data-dir", data_dir, "Dataset directory")->required();
  train_dec->add_option("--checkpoint", ckpt_path, "Stage-1 checkpoint")->required();
  train_dec->add_option("--out", out_path, "Checkpoint output path")->required();
  auto* td_seed = train_dec->add_option("--seed", seed_flag, "Seed override");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate recall/precision on the "
                                              "test split");
  eval_cmd->add_option("--checkpoint", ckpt_path, "Complete checkpoint")->required();
  eval_cmd->add_option("--data-dir", data_dir, "Dataset directory")->required();
  auto* tau_opt = eval_cmd->add_option("--tau", tau_flag,
                                       "Multi-hot threshold override");

  auto* report_cmd = app.add_subcommand(
      "report", "Per-characteristic probability report for one image");
  report_cmd->add_option("--checkpoint", ckpt_path, "Complete checkpoint")->required();
  report_cmd->add_option("--out", out_path, "Report CSV path")->required();
  report_cmd->add_option("image", image_path, "Image file")->required();

  auto* grad_cmd = app.add_subcommand(
      "grad-check", "Finite-difference verification of every operation");
  unsigned gc_seed = 0;
  int gc_instances = 20;
  grad_cmd->add_option("--seed", gc_seed, "Suite seed");
  grad_cmd->add_option("--instances", gc_instances, "Random instances per op");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (synth->parsed())
      return run_synth(synth_out, synth_seed, synth_domains, synth_types,
                       synth_per_type, synth_size);
    if (train_caps->parsed()) {
      RunConfig cfg = load_config_with_seed(config_path, tc_seed, seed_flag);
      return run_train_capsules(cfg, data_dir, out_path, end_to_end);
    }
    if (train_dec->parsed()) {
      RunConfig cfg = load_config_with_seed(config_path, td_seed, seed_flag);
      return run_train_decoder(cfg, data_dir, ckpt_path, out_path);
    }
    if (eval_cmd->parsed()) return run_eval(ckpt_path, data_dir, tau_opt, tau_flag);
    if (report_cmd->parsed()) return run_report(ckpt_path, image_path, out_path);
    if (grad_cmd->parsed()) return run_grad_check(gc_seed, gc_instances);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 2;
}

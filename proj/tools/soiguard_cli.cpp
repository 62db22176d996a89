#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "soiguard/soiguard.h"

namespace {

struct CommonOptions {
  std::string config;
  std::string out;
  uint64_t seed = 0;
  bool seed_given = false;
};

void print_log(const char* stage, const char* message, void*) {
  std::fprintf(stderr, "[%s] %s\n", stage, message);
}

int report_failure(const std::string& command) {
  std::string msg = sg_last_error();
  const std::string stage = sg_last_error_stage();
  if (stage.empty()) msg = "stage " + command + ": " + msg;
  std::fprintf(stderr, "soiguard %s: error: %s\n", command.c_str(), msg.c_str());
  return 1;
}

void print_file(const std::string& path) {
  std::ifstream in(path);
  if (in) std::cout << in.rdbuf();
}

sg_experiment* open_experiment(const std::string& command, const CommonOptions& o) {
  sg_experiment* exp = nullptr;
  if (sg_experiment_open(o.config.c_str(), &exp) != SG_OK) {
    report_failure(command);
    return nullptr;
  }
  if (o.seed_given) sg_experiment_set_seed(exp, o.seed);
  if (!o.out.empty()) sg_experiment_set_output(exp, o.out.c_str());
  return exp;
}

std::string output_dir(const sg_experiment* exp) {
  char buf[4096];
  return sg_experiment_output_dir(exp, buf, sizeof buf) == SG_OK ? buf : "";
}

int run_stage(const std::string& command, const CommonOptions& o) {
  sg_experiment* exp = open_experiment(command, o);
  if (!exp) return 1;
  const auto status = sg_experiment_run(exp, command.c_str());
  const auto dir = output_dir(exp);
  sg_experiment_close(exp);
  if (status != SG_OK) return report_failure(command);
  if (command == "evaluate" || command == "pipeline") print_file(dir + "/metrics.csv");
  if (command == "attack") print_file(dir + "/attacks.csv");
  std::fprintf(stderr, "soiguard %s: done, outputs in %s\n", command.c_str(), dir.c_str());
  return 0;
}

int run_energy_standalone(const std::string& out_hw, long n_x) {
  size_t h = 0, w = 0;
  if (std::sscanf(out_hw.c_str(), "%zux%zu", &h, &w) != 2) {
    std::fprintf(stderr, "soiguard energy: error: --out-hw expects HxW, got '%s'\n", out_hw.c_str());
    return 2;
  }
  sg_energy_counts counts;
  if (sg_energy_counts_for(128, 8, h, w, &counts) != SG_OK) return report_failure("energy");
  double e_static = 0.0, e_lut = 0.0, e_soi = 0.0;
  if (sg_energy_static(&counts, nullptr, &e_static) != SG_OK) return report_failure("energy");
  if (sg_energy_soi(&counts, nullptr, static_cast<size_t>(n_x), &e_lut, &e_soi) != SG_OK) {
    return report_failure("energy");
  }
  std::printf("N_L1=%zu N_L2=%zu N_R=%zu N_C=%zu N_X=%ld\n", counts.n_l1, counts.n_l2, counts.n_r,
              counts.n_c, n_x);
  std::printf("E_STATIC=%.1f pJ E_LUT=%.1f pJ E_SoI=%.1f pJ\n", e_static * 1e12, e_lut * 1e12, e_soi * 1e12);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hardware-signature adversarial input detection toolkit"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress messages");

  CommonOptions opts;
  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* c = sub->add_option("--config", opts.config, "Experiment config (JSON)");
    if (config_required) c->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", opts.seed, "Run a single seed instead of the config's list");
    sub->add_option("--out", opts.out, "Output directory (overrides output_dir)");
  };

  const std::pair<const char*, const char*> stages[] = {
      {"pretrain", "Standard cross-entropy training"},
      {"phase1", "SoI-separation training (runs pretrain if needed)"},
      {"phase2", "Adversarial training with layer 0 frozen"},
      {"build-lut", "Build the SoI probability table"},
      {"attack", "Generate the configured attacks and summarise them"},
      {"evaluate", "Detection metrics for every configured attack"},
      {"simulate-xbar", "Crossbar simulation of layer 0 and hardware SoI"},
      {"pipeline", "Run every stage end to end"},
  };
  for (const auto& [name, help] : stages) add_common(app.add_subcommand(name, help), true);

  auto* energy = app.add_subcommand("energy", "Detector energy model");
  add_common(energy, false);
  std::string out_hw = "32x32";
  long n_x = 9;
  energy->add_option("--out-hw", out_hw, "Output feature map HxW when no config is given")
      ->capture_default_str();
  energy->add_option("--nx", n_x, "LUT accesses when no config is given")->capture_default_str();

  auto* sweep = app.add_subcommand("sweep", "Repeat evaluation along one axis");
  add_common(sweep, true);
  std::string axis, values;
  sweep->add_option("--axis", axis,
                    "train_strength | detector_strength | on_off_ratio | xbar_size | device_preset | frac_volume");
  sweep->add_option("--values", values, "JSON array of axis values");

  CLI11_PARSE(app, argc, argv);
  opts.seed_given = app.get_subcommands().front()->count("--seed") > 0;
  if (!quiet) sg_set_log_callback(print_log, nullptr);

  const std::string command = app.get_subcommands().front()->get_name();
  if (command == "energy" && opts.config.empty()) return run_energy_standalone(out_hw, n_x);
  if (command == "energy") return run_stage("energy", opts);
  if (command == "sweep") {
    sg_experiment* exp = open_experiment(command, opts);
    if (!exp) return 1;
    const auto status = sg_experiment_sweep(exp, axis.empty() ? nullptr : axis.c_str(),
                                            values.empty() ? nullptr : values.c_str());
    const auto dir = output_dir(exp);
    sg_experiment_close(exp);
    if (status != SG_OK) return report_failure(command);
    std::fprintf(stderr, "soiguard sweep: done, outputs in %s\n", dir.c_str());
    return 0;
  }
  return run_stage(command, opts);
}

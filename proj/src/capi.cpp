#include "soiguard/soiguard.h"

#include <cstring>
#include <mutex>
#include <string>

#include "config.hpp"
#include "errors.hpp"
#include "io.hpp"
#include "pipeline.hpp"

struct sg_experiment {
  soiguard::ExperimentConfig cfg;
};

struct sg_model {
  soiguard::ModelGraph graph;
};

struct sg_lut {
  soiguard::SoIProbabilityLUT lut;
};

namespace {

thread_local std::string g_error;
thread_local std::string g_error_stage;

std::mutex g_log_mutex;
sg_log_fn g_log_fn = nullptr;
void* g_log_user = nullptr;

void log_message(const std::string& stage, const std::string& msg) {
  std::lock_guard lock(g_log_mutex);
  if (g_log_fn) g_log_fn(stage.c_str(), msg.c_str(), g_log_user);
}

sg_status fail(sg_status code, const std::string& msg, const std::string& stage = {}) {
  g_error = msg;
  g_error_stage = stage;
  return code;
}

template <class Fn>
sg_status guarded(Fn&& fn) {
  g_error.clear();
  g_error_stage.clear();
  try {
    fn();
    return SG_OK;
  } catch (const soiguard::StageError& e) {
    return fail(SG_ERR_STAGE, e.what(), e.stage());
  } catch (const soiguard::ConfigError& e) {
    return fail(SG_ERR_CONFIG, e.what());
  } catch (const soiguard::IoError& e) {
    return fail(SG_ERR_IO, e.what());
  } catch (const soiguard::FormatError& e) {
    return fail(SG_ERR_FORMAT, e.what());
  } catch (const soiguard::NumericError& e) {
    return fail(SG_ERR_NUMERIC, e.what());
  } catch (const std::exception& e) {
    return fail(SG_ERR_INTERNAL, e.what());
  }
}

sg_status copy_out(const std::string& s, char* buf, std::size_t len) {
  if (!buf || len <= s.size()) return fail(SG_ERR_ARGUMENT, "output buffer too small");
  std::memcpy(buf, s.c_str(), s.size() + 1);
  return SG_OK;
}

soiguard::ComponentEnergies to_energies(const sg_component_energies* e) {
  soiguard::ComponentEnergies ce;
  if (e) ce = {e->adder, e->reg, e->rng, e->lut_access};
  soiguard::validate_energies(ce);
  return ce;
}

soiguard::EnergyCounts to_counts(const sg_energy_counts* c) {
  return {c->n_l1, c->n_l2, c->n_r, c->n_c};
}

#define SG_REQUIRE(cond, what) \
  if (!(cond)) return fail(SG_ERR_ARGUMENT, what)

}  // namespace

extern "C" {

const char* sg_last_error(void) { return g_error.c_str(); }
const char* sg_last_error_stage(void) { return g_error_stage.c_str(); }
const char* sg_version(void) { return "0.1.0"; }

void sg_set_log_callback(sg_log_fn fn, void* user) {
  std::lock_guard lock(g_log_mutex);
  g_log_fn = fn;
  g_log_user = user;
}

sg_status sg_experiment_open(const char* config_path, sg_experiment** out) {
  SG_REQUIRE(config_path && out, "null argument");
  *out = nullptr;
  return guarded([&] { *out = new sg_experiment{soiguard::load_config(config_path)}; });
}

sg_status sg_experiment_open_json(const char* json_text, const char* base_dir, sg_experiment** out) {
  SG_REQUIRE(json_text && out, "null argument");
  *out = nullptr;
  return guarded([&] {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
      throw soiguard::ConfigError(e.what());
    }
    *out = new sg_experiment{soiguard::config_from_json(j, base_dir ? base_dir : "")};
  });
}

void sg_experiment_close(sg_experiment* exp) { delete exp; }

sg_status sg_experiment_set_seed(sg_experiment* exp, uint64_t seed) {
  SG_REQUIRE(exp, "null experiment");
  exp->cfg.seeds = {seed};
  exp->cfg.source = soiguard::config_to_json(exp->cfg);
  return SG_OK;
}

sg_status sg_experiment_set_output(sg_experiment* exp, const char* dir) {
  SG_REQUIRE(exp && dir && *dir, "null or empty argument");
  exp->cfg.output_dir = dir;
  exp->cfg.source = soiguard::config_to_json(exp->cfg);
  return SG_OK;
}

sg_status sg_experiment_config_hash(const sg_experiment* exp, char* buf, size_t len) {
  SG_REQUIRE(exp, "null experiment");
  return copy_out(soiguard::config_hash(exp->cfg), buf, len);
}

sg_status sg_experiment_output_dir(const sg_experiment* exp, char* buf, size_t len) {
  SG_REQUIRE(exp, "null experiment");
  return copy_out(exp->cfg.output_dir.string(), buf, len);
}

sg_status sg_experiment_run(sg_experiment* exp, const char* stage) {
  SG_REQUIRE(exp && stage, "null argument");
  const std::string s = stage;
  return guarded([&] {
    for (auto seed : exp->cfg.seeds) {
      soiguard::RunContext ctx(exp->cfg, seed, soiguard::seed_dir(exp->cfg, seed), log_message);
      if (s == "pretrain") {
        ctx.model(soiguard::Stage::pretrain);
      } else if (s == "phase1") {
        ctx.model(soiguard::Stage::phase1);
      } else if (s == "phase2") {
        ctx.model(soiguard::Stage::phase2);
      } else if (s == "build-lut") {
        ctx.lut();
      } else if (s == "attack") {
        ctx.attack_summary(true);
      } else if (s == "evaluate") {
        ctx.evaluate();
      } else if (s == "simulate-xbar") {
        ctx.simulate_xbar();
      } else if (s == "energy") {
        ctx.energy(true);
      } else if (s == "pipeline") {
        ctx.run_pipeline();
      } else {
        throw soiguard::ConfigError("unknown stage '" + s + "'");
      }
    }
  });
}

sg_status sg_experiment_sweep(sg_experiment* exp, const char* axis, const char* values_json) {
  SG_REQUIRE(exp, "null experiment");
  return guarded([&] {
    std::string a = axis ? axis : "";
    std::vector<nlohmann::json> values;
    if (values_json) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(values_json);
      } catch (const nlohmann::json::parse_error& e) {
        throw soiguard::ConfigError(std::string("sweep values: ") + e.what());
      }
      if (!j.is_array()) throw soiguard::ConfigError("sweep values must be a JSON array");
      for (const auto& v : j) values.push_back(v);
    }
    if (a.empty() || values.empty()) {
      if (!exp->cfg.sweep) throw soiguard::ConfigError("no sweep axis/values given and config has no sweep section");
      if (a.empty()) a = exp->cfg.sweep->axis;
      if (values.empty()) values = exp->cfg.sweep->values;
    }
    soiguard::run_sweep(exp->cfg, a, values, log_message);
  });
}

sg_status sg_model_load(const char* manifest_path, sg_model** out) {
  SG_REQUIRE(manifest_path && out, "null argument");
  *out = nullptr;
  return guarded([&] { *out = new sg_model{soiguard::load_checkpoint(manifest_path)}; });
}

void sg_model_free(sg_model* model) { delete model; }

sg_status sg_model_input_size(const sg_model* model, size_t* out) {
  SG_REQUIRE(model && out, "null argument");
  *out = soiguard::shape_numel(model->graph.input_shape);
  return SG_OK;
}

sg_status sg_model_num_classes(const sg_model* model, size_t* out) {
  SG_REQUIRE(model && out, "null argument");
  return guarded([&] { *out = soiguard::num_classes(model->graph); });
}

namespace {

soiguard::Tensor batch_tensor(const sg_model* model, const double* x, size_t batch) {
  soiguard::Shape shape{batch};
  shape.insert(shape.end(), model->graph.input_shape.begin(), model->graph.input_shape.end());
  const auto n = soiguard::shape_numel(shape);
  return soiguard::Tensor(shape, std::vector<double>(x, x + n));
}

}  // namespace

sg_status sg_model_predict(const sg_model* model, const double* x, size_t batch, int* labels_out) {
  SG_REQUIRE(model && x && labels_out && batch > 0, "null argument or empty batch");
  return guarded([&] {
    const auto pred = soiguard::predict(model->graph, batch_tensor(model, x, batch));
    std::copy(pred.begin(), pred.end(), labels_out);
  });
}

sg_status sg_model_soi(const sg_model* model, const double* x, size_t batch, double* soi_out) {
  SG_REQUIRE(model && x && soi_out && batch > 0, "null argument or empty batch");
  return guarded([&] {
    const auto soi = soiguard::compute_soi(model->graph, batch_tensor(model, x, batch));
    std::copy(soi.begin(), soi.end(), soi_out);
  });
}

sg_status sg_lut_build(const double* clean, size_t n_clean, const double* adv, size_t n_adv, size_t bins,
                       sg_lut** out) {
  SG_REQUIRE(clean && adv && out, "null argument");
  *out = nullptr;
  return guarded([&] {
    *out = new sg_lut{soiguard::build_lut({clean, n_clean}, {adv, n_adv}, bins)};
  });
}

sg_status sg_lut_load(const char* path, sg_lut** out) {
  SG_REQUIRE(path && out, "null argument");
  *out = nullptr;
  return guarded([&] {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(soiguard::read_file_text(path));
    } catch (const nlohmann::json::parse_error& e) {
      throw soiguard::FormatError(std::string(path) + ": " + e.what());
    }
    *out = new sg_lut{soiguard::lut_from_json(j)};
  });
}

sg_status sg_lut_save(const sg_lut* lut, const char* path) {
  SG_REQUIRE(lut && path, "null argument");
  return guarded([&] { soiguard::write_file_atomic(path, soiguard::lut_to_json(lut->lut).dump(2) + "\n"); });
}

void sg_lut_free(sg_lut* lut) { delete lut; }

sg_status sg_lut_size(const sg_lut* lut, size_t* out) {
  SG_REQUIRE(lut && out, "null argument");
  *out = lut->lut.samples.size();
  return SG_OK;
}

sg_status sg_lut_lookup(const sg_lut* lut, double soi, double* prob_out, size_t* probes_out) {
  SG_REQUIRE(lut && prob_out, "null argument");
  const auto r = soiguard::lookup(lut->lut, soi);
  *prob_out = r.prob;
  if (probes_out) *probes_out = r.probes;
  return SG_OK;
}

sg_status sg_roc_auc(const double* clean_scores, size_t n_clean, const double* adv_scores, size_t n_adv,
                     double* out) {
  SG_REQUIRE(clean_scores && adv_scores && out, "null argument");
  return guarded([&] { *out = soiguard::roc_auc({clean_scores, n_clean}, {adv_scores, n_adv}); });
}

void sg_default_energies(sg_component_energies* out) {
  if (!out) return;
  const soiguard::ComponentEnergies ce;
  *out = {ce.adder, ce.reg, ce.rng, ce.lut_access};
}

sg_status sg_energy_counts_for(size_t cols, size_t mux_ratio, size_t out_h, size_t out_w,
                               sg_energy_counts* out) {
  SG_REQUIRE(out, "null argument");
  return guarded([&] {
    soiguard::CrossbarConfig cfg;
    cfg.cols = cols;
    cfg.mux_ratio = mux_ratio;
    const auto c = soiguard::derive_counts(cfg, out_h, out_w);
    *out = {c.n_l1, c.n_l2, c.n_r, c.n_c};
  });
}

sg_status sg_energy_static(const sg_energy_counts* counts, const sg_component_energies* energies,
                           double* joules_out) {
  SG_REQUIRE(counts && joules_out, "null argument");
  return guarded([&] { *joules_out = soiguard::static_energy(to_counts(counts), to_energies(energies)); });
}

sg_status sg_energy_soi(const sg_energy_counts* counts, const sg_component_energies* energies, size_t n_x,
                        double* e_lut_out, double* e_soi_out) {
  SG_REQUIRE(counts && e_soi_out, "null argument");
  return guarded([&] {
    const auto e = soiguard::soi_energy(to_counts(counts), to_energies(energies), n_x);
    if (e_lut_out) *e_lut_out = e.e_lut;
    *e_soi_out = e.e_soi;
  });
}

}  // extern "C"

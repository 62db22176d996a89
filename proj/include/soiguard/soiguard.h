#ifndef SOIGUARD_SOIGUARD_H
#define SOIGUARD_SOIGUARD_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SG_API __declspec(dllexport)
#else
#define SG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sg_status {
  SG_OK = 0,
  SG_ERR_ARGUMENT = 1,
  SG_ERR_CONFIG = 2,
  SG_ERR_IO = 3,
  SG_ERR_FORMAT = 4,
  SG_ERR_NUMERIC = 5,
  SG_ERR_STAGE = 6,
  SG_ERR_INTERNAL = 7
} sg_status;

typedef struct sg_experiment sg_experiment;
typedef struct sg_model sg_model;
typedef struct sg_lut sg_lut;

/* Message of the last failed call on this thread ("" if none). */
SG_API const char* sg_last_error(void);
/* Pipeline stage of the last failed call on this thread ("" if not stage-related). */
SG_API const char* sg_last_error_stage(void);
SG_API const char* sg_version(void);

typedef void (*sg_log_fn)(const char* stage, const char* message, void* user);
/* Progress messages from every experiment; NULL disables logging. */
SG_API void sg_set_log_callback(sg_log_fn fn, void* user);

/* ---- experiments ---- */

SG_API sg_status sg_experiment_open(const char* config_path, sg_experiment** out);
/* Relative paths inside the JSON resolve against base_dir (may be NULL). */
SG_API sg_status sg_experiment_open_json(const char* json_text, const char* base_dir, sg_experiment** out);
SG_API void sg_experiment_close(sg_experiment* exp);

/* Replaces the seed list with one seed. */
SG_API sg_status sg_experiment_set_seed(sg_experiment* exp, uint64_t seed);
SG_API sg_status sg_experiment_set_output(sg_experiment* exp, const char* dir);

/* Copies a NUL-terminated string; fails with SG_ERR_ARGUMENT if it does not fit. */
SG_API sg_status sg_experiment_config_hash(const sg_experiment* exp, char* buf, size_t len);
SG_API sg_status sg_experiment_output_dir(const sg_experiment* exp, char* buf, size_t len);

/* stage: pretrain, phase1, phase2, build-lut, attack, evaluate, simulate-xbar,
   energy, pipeline. Runs for every configured seed. */
SG_API sg_status sg_experiment_run(sg_experiment* exp, const char* stage);

/* axis NULL uses the config's sweep section; values_json NULL uses its values. */
SG_API sg_status sg_experiment_sweep(sg_experiment* exp, const char* axis, const char* values_json);

/* ---- models ---- */

SG_API sg_status sg_model_load(const char* manifest_path, sg_model** out);
SG_API void sg_model_free(sg_model* model);
/* Number of values per input sample. */
SG_API sg_status sg_model_input_size(const sg_model* model, size_t* out);
SG_API sg_status sg_model_num_classes(const sg_model* model, size_t* out);
/* x holds batch * input_size values in [0,1]. */
SG_API sg_status sg_model_predict(const sg_model* model, const double* x, size_t batch, int* labels_out);
SG_API sg_status sg_model_soi(const sg_model* model, const double* x, size_t batch, double* soi_out);

/* ---- detector ---- */

SG_API sg_status sg_lut_build(const double* clean, size_t n_clean, const double* adv, size_t n_adv,
                              size_t bins, sg_lut** out);
SG_API sg_status sg_lut_load(const char* path, sg_lut** out);
SG_API sg_status sg_lut_save(const sg_lut* lut, const char* path);
SG_API void sg_lut_free(sg_lut* lut);
SG_API sg_status sg_lut_size(const sg_lut* lut, size_t* out);
SG_API sg_status sg_lut_lookup(const sg_lut* lut, double soi, double* prob_out, size_t* probes_out);
SG_API sg_status sg_roc_auc(const double* clean_scores, size_t n_clean, const double* adv_scores,
                            size_t n_adv, double* out);

/* ---- energy ---- */

typedef struct sg_energy_counts {
  size_t n_l1;
  size_t n_l2;
  size_t n_r;
  size_t n_c;
} sg_energy_counts;

/* Joules per operation. */
typedef struct sg_component_energies {
  double adder;
  double reg;
  double rng;
  double lut_access;
} sg_component_energies;

SG_API void sg_default_energies(sg_component_energies* out);
SG_API sg_status sg_energy_counts_for(size_t cols, size_t mux_ratio, size_t out_h, size_t out_w,
                                      sg_energy_counts* out);
/* energies NULL selects the defaults. */
SG_API sg_status sg_energy_static(const sg_energy_counts* counts, const sg_component_energies* energies,
                                  double* joules_out);
SG_API sg_status sg_energy_soi(const sg_energy_counts* counts, const sg_component_energies* energies,
                               size_t n_x, double* e_lut_out, double* e_soi_out);

#ifdef __cplusplus
}
#endif

#endif

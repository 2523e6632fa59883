#ifndef GENSEMCOM_H
#define GENSEMCOM_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Status code returned by every exported function.
typedef enum GscStatus {
  GSC_STATUS_OK = 0,
  GSC_STATUS_NULL_POINTER = 1,
  GSC_STATUS_INVALID_PARAMETER = 2,
  GSC_STATUS_DEGENERATE = 3,
  GSC_STATUS_CONFIG = 4,
  GSC_STATUS_CHECKPOINT = 5,
  GSC_STATUS_IO = 6,
  GSC_STATUS_DIVERGENCE = 7,
  GSC_STATUS_CONSISTENCY = 8,
  GSC_STATUS_UTF8 = 9,
  GSC_STATUS_PANIC = 10,
} GscStatus;

// Schedule family accepted by [`gsc_schedule_new`].
typedef enum GscScheduleKind {
  GSC_SCHEDULE_KIND_LINEAR = 0,
  GSC_SCHEDULE_KIND_SCALED_LINEAR = 1,
} GscScheduleKind;

// Parsed experiment configuration.
typedef struct GscConfig GscConfig;

// Noise schedule together with its K-step stride plan.
typedef struct GscSchedule GscSchedule;

// Configuration with its source, denoiser and schedule built once.
typedef struct GscSimulator GscSimulator;

// Received-latent noise budget for one split.
typedef struct GscNoiseBudget {
  double sigma_eps2;
  double sigma_n2;
  double sigma_tot2;
  double mean_coeff;
} GscNoiseBudget;

// Aggregate outcome of one trial.
typedef struct GscTrialResult {
  double mse;
  double nmse;
  double sw2;
  double mmd2;
  double sigma_tot2;
  double gamma_mean;
  size_t t_b;
  bool saturated;
} GscTrialResult;

// Summary of a Monte-Carlo check of the noise budget.
typedef struct GscProp1Report {
  double predicted_var;
  double empirical_var;
  double var_rel_err;
  double mean_coverage;
  bool passed;
} GscProp1Report;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` (NUL-terminated,
// truncated to `len - 1` bytes) and returns the full message length in bytes.
// Pass a null `buf` to query the length.
//
// # Safety
// `buf` must be null or point to at least `len` writable bytes.
size_t gsc_last_error_message(char *buf, size_t len);

// Creates a noise schedule over `t_train` training steps with a `steps`-entry
// stride plan.
//
// # Safety
// `out` must be a valid pointer to writable storage for a handle.
enum GscStatus gsc_schedule_new(enum GscScheduleKind kind,
                                size_t t_train,
                                double beta_start,
                                double beta_end,
                                size_t steps,
                                struct GscSchedule **out);

// Releases a schedule handle. Null is ignored.
//
// # Safety
// `handle` must be null or a handle from [`gsc_schedule_new`] not yet freed.
void gsc_schedule_free(struct GscSchedule *handle);

// Writes the cumulative signal coefficient ᾱ_t for training step `t`.
//
// # Safety
// `handle` must be a live schedule handle and `out` a writable pointer.
enum GscStatus gsc_schedule_alpha_bar(const struct GscSchedule *handle, size_t t, double *out);

// Writes the training step reached after `s` plan steps (0 for `s = 0`).
//
// # Safety
// `handle` must be a live schedule handle and `out` a writable pointer.
enum GscStatus gsc_schedule_training_step(const struct GscSchedule *handle, size_t s, size_t *out);

// Computes the noise budget of a received latent for split (`t_f1`, `t_f2`),
// power scaling `gamma` and per-component channel noise `sigma_eff2`.
//
// # Safety
// `handle` must be a live schedule handle and `out` a writable pointer.
enum GscStatus gsc_noise_budget(const struct GscSchedule *handle,
                                size_t t_f1,
                                size_t t_f2,
                                double gamma,
                                double sigma_eff2,
                                struct GscNoiseBudget *out);

// Selects the smallest number of decoder steps whose noise level covers
// `sigma_tot2`; `saturated` is set when even the last plan step falls short.
//
// # Safety
// `handle` must be a live schedule handle; `steps` and `saturated` writable.
enum GscStatus gsc_select_steps(const struct GscSchedule *handle,
                                double sigma_tot2,
                                size_t *steps,
                                bool *saturated);

// Creates a configuration holding the built-in defaults.
//
// # Safety
// `out` must be a valid pointer to writable storage for a handle.
enum GscStatus gsc_config_default(struct GscConfig **out);

// Parses a TOML configuration from a NUL-terminated UTF-8 string. Unknown
// keys and invalid values are reported as [`GscStatus::Config`].
//
// # Safety
// `toml` must be a valid NUL-terminated string; `out` a writable pointer.
enum GscStatus gsc_config_from_toml(const char *toml, struct GscConfig **out);

// Releases a configuration handle. Null is ignored.
//
// # Safety
// `handle` must be null or a config handle not yet freed.
void gsc_config_free(struct GscConfig *handle);

// Builds a simulator from a configuration; the configuration handle stays
// owned by the caller.
//
// # Safety
// `config` must be a live config handle; `out` a writable pointer.
enum GscStatus gsc_simulator_new(const struct GscConfig *config, struct GscSimulator **out);

// Releases a simulator handle. Null is ignored.
//
// # Safety
// `handle` must be null or a simulator handle not yet freed.
void gsc_simulator_free(struct GscSimulator *handle);

// Transmits `n` source samples at `snr_db` with the configured pipeline
// (or the random-noise baseline when `baseline` is true) and writes the
// aggregate metrics. Results depend only on the arguments and configuration.
//
// # Safety
// `sim` must be a live simulator handle; `out` a writable pointer.
enum GscStatus gsc_simulator_run_trial(const struct GscSimulator *sim,
                                       double snr_db,
                                       bool baseline,
                                       size_t n,
                                       uint64_t seed,
                                       struct GscTrialResult *out);

// Runs the configured Monte-Carlo check of the received-latent noise budget.
//
// # Safety
// `sim` must be a live simulator handle; `out` a writable pointer.
enum GscStatus gsc_simulator_verify_prop1(const struct GscSimulator *sim,
                                          struct GscProp1Report *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GENSEMCOM_H */

#ifndef EBM_H
#define EBM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EbmStatus {
  EBM_STATUS_OK = 0,
  EBM_STATUS_NULL_POINTER = 1,
  EBM_STATUS_CONFIG = 2,
  EBM_STATUS_NUMERICAL = 3,
  EBM_STATUS_IO = 4,
  EBM_STATUS_INVALID_ARGUMENT = 5,
  EBM_STATUS_PANIC = 6,
} EbmStatus;

// Trained energy model.
typedef struct EbmModel EbmModel;

// Mirror-Langevin stepper with its own random stream.
typedef struct EbmSampler EbmSampler;

// Discrete samples from [`ebm_generate`].
typedef struct EbmSamples EbmSamples;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. Valid until
// the next call into the library from the same thread.
const char *ebm_last_error(void);

// Library version as a static NUL-terminated string.
const char *ebm_version(void);

// Load a checkpoint. `use_ema` selects the averaged parameters.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum EbmStatus ebm_model_load(const char *path, bool use_ema, struct EbmModel **out);

// Freshly initialized model from the `[model]` section of a run config.
// A NULL `config_toml` uses the defaults.
//
// # Safety
// `config_toml` is NULL or NUL-terminated; `out` must be valid.
enum EbmStatus ebm_model_new(const char *config_toml, struct EbmModel **out);

// # Safety
// `model` must come from this library and not be used afterwards.
void ebm_model_free(struct EbmModel *model);

// Number of atom types K, or 0 for NULL.
//
// # Safety
// `model` is NULL or a live handle.
uintptr_t ebm_model_n_types(const struct EbmModel *model);

// Total energy and, when the output arrays are non-NULL, its gradients.
//
// # Safety
// Array lengths must match `n_atoms` and the model's K.
enum EbmStatus ebm_energy(const struct EbmModel *model,
                          uintptr_t n_atoms,
                          const double *coords,
                          const double *types,
                          double *energy,
                          double *grad_coords,
                          double *grad_types);

// Sampler from the `[sampler]` section of a run config (NULL: defaults).
//
// # Safety
// `config_toml` is NULL or NUL-terminated; `out` must be valid.
enum EbmStatus ebm_sampler_new(const char *config_toml, uint64_t seed, struct EbmSampler **out);

// # Safety
// `sampler` must come from this library and not be used afterwards.
void ebm_sampler_free(struct EbmSampler *sampler);

// One mirror-Langevin step in place. A diverged step leaves the arrays
// untouched and sets `*diverged`.
//
// # Safety
// Array lengths must match `n_atoms` and the model's K.
enum EbmStatus ebm_sampler_step(struct EbmSampler *sampler,
                                const struct EbmModel *model,
                                uintptr_t n_atoms,
                                double *coords,
                                double *types,
                                bool *diverged);

// Parallel-tempering generation of `count` samples, with the prior and
// size distribution taken from the config's dataset section.
//
// # Safety
// `config_toml` is NULL or NUL-terminated; `out` must be valid.
enum EbmStatus ebm_generate(const struct EbmModel *model,
                            const char *config_toml,
                            uintptr_t count,
                            struct EbmSamples **out);

// # Safety
// `samples` is NULL or a live handle.
uintptr_t ebm_samples_len(const struct EbmSamples *samples);

// Atom count of sample `index`, or 0 when out of range.
//
// # Safety
// `samples` is NULL or a live handle.
uintptr_t ebm_samples_n_atoms(const struct EbmSamples *samples, uintptr_t index);

// Copy sample `index` out: `coords` holds `3 * n_atoms` doubles and
// `labels` `n_atoms` integers. `energy` may be NULL.
//
// # Safety
// Buffers must be sized from [`ebm_samples_n_atoms`].
enum EbmStatus ebm_samples_get(const struct EbmSamples *samples,
                               uintptr_t index,
                               double *coords,
                               uint32_t *labels,
                               double *energy);

// # Safety
// `samples` must come from this library and not be used afterwards.
void ebm_samples_free(struct EbmSamples *samples);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EBM_H */

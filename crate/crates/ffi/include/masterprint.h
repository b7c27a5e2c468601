#ifndef MASTERPRINT_H
#define MASTERPRINT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MpStatus {
  MP_STATUS_OK = 0,
  MP_STATUS_NULL_POINTER = 1,
  MP_STATUS_INVALID_ARGUMENT = 2,
  MP_STATUS_NUMERICAL = 3,
  MP_STATUS_POOL_EXHAUSTED = 4,
  MP_STATUS_IO = 5,
  MP_STATUS_PANIC = 6,
} MpStatus;

typedef struct MpCmaes MpCmaes;

typedef struct MpGallery MpGallery;

typedef struct MpGenerator MpGenerator;

/**
 * Threshold of a calibrated matcher, passed by value.
 */
typedef struct MpCalibration {
  double target_fmr;
  double threshold;
  uint64_t impostor_pair_count;
  double achieved_fmr;
} MpCalibration;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL after a
 * successful one. Valid until the next call on the same thread.
 */
const char *mp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mp_version(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library and not yet freed.
 */
void mp_string_free(char *s);

/**
 * Generates disjoint train and test galleries. `config_json` is a gallery
 * configuration object; missing fields take their defaults.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `train` and `test` must be
 * writable.
 */
enum MpStatus mp_gallery_split(const char *config_json,
                               uint64_t seed,
                               struct MpGallery **train,
                               struct MpGallery **test);

/**
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum MpStatus mp_gallery_from_json(const char *json, struct MpGallery **out);

/**
 * # Safety
 * `gallery` must be a live handle; `out` must be writable.
 */
enum MpStatus mp_gallery_to_json(const struct MpGallery *gallery, char **out);

/**
 * Number of users, or 0 for a NULL handle.
 *
 * # Safety
 * `gallery` must be NULL or a live handle.
 */
uintptr_t mp_gallery_user_count(const struct MpGallery *gallery);

/**
 * Feature dimension, or 0 for a NULL handle.
 *
 * # Safety
 * `gallery` must be NULL or a live handle.
 */
uintptr_t mp_gallery_feature_dim(const struct MpGallery *gallery);

/**
 * # Safety
 * `gallery` must be NULL or a handle not yet freed.
 */
void mp_gallery_free(struct MpGallery *gallery);

/**
 * Builds a generator from latent dimension `latent_dim` into the gallery's
 * feature space, seeded with the gallery's cluster centers.
 *
 * # Safety
 * `gallery` must be a live handle; `out` must be writable.
 */
enum MpStatus mp_generator_build(const struct MpGallery *gallery,
                                 uintptr_t latent_dim,
                                 uint64_t seed,
                                 struct MpGenerator **out);

/**
 * # Safety
 * `generator` must be NULL or a live handle.
 */
uintptr_t mp_generator_latent_dim(const struct MpGenerator *generator);

/**
 * Maps a genome of `latent_len` values to a unit template of `out_len`
 * values.
 *
 * # Safety
 * `genome` must hold `latent_len` doubles and `out` room for `out_len`.
 */
enum MpStatus mp_generator_generate(const struct MpGenerator *generator,
                                    const double *genome,
                                    uintptr_t latent_len,
                                    double *out,
                                    uintptr_t out_len);

/**
 * # Safety
 * `generator` must be NULL or a handle not yet freed.
 */
void mp_generator_free(struct MpGenerator *generator);

/**
 * Calibrates the threshold realizing `target_fmr` on the gallery's impostor
 * pairs.
 *
 * # Safety
 * `gallery` must be a live handle; `out` must be writable.
 */
enum MpStatus mp_calibrate(const struct MpGallery *gallery,
                           double target_fmr,
                           uint64_t seed,
                           struct MpCalibration *out);

/**
 * Writes one byte per user: 1 when the template matches that user.
 *
 * # Safety
 * `template` must hold `dim` doubles and `out` room for `users` bytes.
 */
enum MpStatus mp_match_vector(const double *template_,
                              uintptr_t dim,
                              const struct MpGallery *gallery,
                              const struct MpCalibration *calibration,
                              uint8_t *out,
                              uintptr_t users);

/**
 * Novelty of `x` against `entries` stored match vectors laid out row-major in
 * `dictionary` (`entries * users` bytes, nonzero meaning matched).
 *
 * # Safety
 * `x` must hold `users` bytes and `dictionary` `entries * users` bytes.
 */
enum MpStatus mp_novelty_score(const uint8_t *x,
                               uintptr_t users,
                               const uint8_t *dictionary,
                               uintptr_t entries,
                               double *out);

/**
 * Fraction of the unseen users that `x` matches. Returns
 * `MP_STATUS_POOL_EXHAUSTED` when no user is unseen.
 *
 * # Safety
 * `x` and `unseen` must each hold `users` bytes.
 */
enum MpStatus mp_diversity_fitness(const uint8_t *x,
                                   const uint8_t *unseen,
                                   uintptr_t users,
                                   double *out);

/**
 * Creates an optimizer at `mean0` (`dim` values). `lambda = 0` selects the
 * default population size.
 *
 * # Safety
 * `mean0` must hold `dim` doubles; `out` must be writable.
 */
enum MpStatus mp_cmaes_new(const double *mean0,
                           uintptr_t dim,
                           double sigma0,
                           uintptr_t lambda,
                           uint64_t seed,
                           struct MpCmaes **out);

/**
 * # Safety
 * `es` must be NULL or a live handle.
 */
uintptr_t mp_cmaes_lambda(const struct MpCmaes *es);

/**
 * # Safety
 * `es` must be NULL or a live handle.
 */
uintptr_t mp_cmaes_dim(const struct MpCmaes *es);

/**
 * Current step size, or NaN for a NULL handle.
 *
 * # Safety
 * `es` must be NULL or a live handle.
 */
double mp_cmaes_sigma(const struct MpCmaes *es);

/**
 * Copies the current mean into `out` (`len` must equal the dimension).
 *
 * # Safety
 * `out` must have room for `len` doubles.
 */
enum MpStatus mp_cmaes_mean(const struct MpCmaes *es, double *out, uintptr_t len);

/**
 * Samples a generation into `out`, row-major `lambda * dim`.
 *
 * # Safety
 * `out` must have room for `len` doubles.
 */
enum MpStatus mp_cmaes_ask(struct MpCmaes *es, double *out, uintptr_t len);

/**
 * Updates the optimizer with `lambda` candidates (row-major, as written by
 * [`mp_cmaes_ask`]) and their fitnesses; larger is better.
 *
 * # Safety
 * `candidates` must hold `lambda * dim` doubles and `fitness` `lambda`.
 */
enum MpStatus mp_cmaes_tell(struct MpCmaes *es,
                            const double *candidates,
                            const double *fitness,
                            uintptr_t lambda);

/**
 * # Safety
 * `es` must be NULL or a handle not yet freed.
 */
void mp_cmaes_free(struct MpCmaes *es);

/**
 * Runs the experiment described by `config_json` (missing fields take their
 * defaults) and returns the coverage report CSV through `out_csv`.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out_csv` must be writable.
 */
enum MpStatus mp_run_experiment(const char *config_json, char **out_csv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MASTERPRINT_H */

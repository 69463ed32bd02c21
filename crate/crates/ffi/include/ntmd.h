#ifndef NTMD_H
#define NTMD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NtmdArch {
  NTMD_ARCH_SEQ2SEQ = 0,
  NTMD_ARCH_D_NTMS = 1,
  NTMD_ARCH_LM = 2,
  NTMD_ARCH_NTM_LM = 3,
} NtmdArch;

typedef enum NtmdPreset {
  NTMD_PRESET_STANDARD = 0,
  NTMD_PRESET_DESK = 1,
} NtmdPreset;

typedef enum NtmdStatus {
  NTMD_STATUS_OK = 0,
  NTMD_STATUS_NULL_ARGUMENT = 1,
  NTMD_STATUS_INVALID_UTF8 = 2,
  NTMD_STATUS_DIMENSION = 3,
  NTMD_STATUS_INDEX = 4,
  NTMD_STATUS_CONTRACT = 5,
  NTMD_STATUS_CONFIG = 6,
  NTMD_STATUS_UNSUPPORTED_VERSION = 7,
  NTMD_STATUS_CORRUPT = 8,
  NTMD_STATUS_PARSE = 9,
  NTMD_STATUS_IO = 10,
  NTMD_STATUS_JSON = 11,
  // The output buffer was too small; the required size was reported.
  NTMD_STATUS_BUFFER_TOO_SMALL = 12,
  NTMD_STATUS_PANIC = 13,
} NtmdStatus;

// A trained network with its vocabulary, loaded from a checkpoint.
typedef struct NtmdModel NtmdModel;

// A training session over one corpus.
typedef struct NtmdTrainer NtmdTrainer;

// Training options. Obtain defaults from [`ntmd_train_options_default`].
typedef struct NtmdTrainOptions {
  enum NtmdArch arch;
  enum NtmdPreset preset;
  size_t vocab_size;
  double lr;
  size_t batch;
  size_t epochs;
  uint64_t seed;
  // Global gradient-norm limit; zero or negative disables clipping.
  double clip;
} NtmdTrainOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent failure on this thread, or null. The pointer
// stays valid until the next failing call on this thread.
const char *ntmd_last_error(void);

// Library version as a static string.
const char *ntmd_version(void);

// Writes the default training options into `out`.
//
// # Safety
// `out` must be null or point to writable memory for one options struct.
enum NtmdStatus ntmd_train_options_default(enum NtmdArch arch, struct NtmdTrainOptions *out);

// Runs the finite-difference gradient check of `arch`'s tiny preset and
// stores the largest relative error in `max_rel_err`.
//
// # Safety
// `max_rel_err` must be null or point to a writable double.
enum NtmdStatus ntmd_gradcheck(enum NtmdArch arch, uint64_t seed, double *max_rel_err);

// Loads a checkpoint of either precision.
//
// # Safety
// `path` must be a valid C string and `out` a writable handle slot.
enum NtmdStatus ntmd_model_load(const char *path, struct NtmdModel **out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must be null or a handle from [`ntmd_model_load`] not yet freed.
void ntmd_model_free(struct NtmdModel *model);

// # Safety
// `model` must be a live handle and `arch` a writable slot.
enum NtmdStatus ntmd_model_arch(const struct NtmdModel *model, enum NtmdArch *arch);

// # Safety
// `model` must be a live handle and `size` a writable slot.
enum NtmdStatus ntmd_model_vocab_size(const struct NtmdModel *model, size_t *size);

// Per-word perplexity of the model over every conversation of a corpus file.
//
// # Safety
// `model` must be a live handle, `corpus_path` a valid C string, and
// `perplexity` a writable slot.
enum NtmdStatus ntmd_model_perplexity(const struct NtmdModel *model,
                                      const char *corpus_path,
                                      double *perplexity);

// Samples a response to `prompt`, whose turns are separated by tabs, and
// writes it space-separated into `buf`. `needed` (if not null) receives
// the required buffer size including the terminating NUL.
//
// # Safety
// `model` must be a live handle, `prompt` a valid C string, `buf` null or
// writable for `len` bytes, and `needed` null or writable.
enum NtmdStatus ntmd_model_generate(const struct NtmdModel *model,
                                    const char *prompt,
                                    size_t max_len,
                                    uint64_t seed,
                                    char *buf,
                                    size_t len,
                                    size_t *needed);

// Starts a training session on a corpus file, building the vocabulary from
// it.
//
// # Safety
// `options` must point to a valid options struct, `corpus_path` must be a
// valid C string, and `out` a writable handle slot.
enum NtmdStatus ntmd_trainer_new(const struct NtmdTrainOptions *options,
                                 const char *corpus_path,
                                 struct NtmdTrainer **out);

// Releases a trainer. Null is ignored.
//
// # Safety
// `trainer` must be null or a handle from [`ntmd_trainer_new`] not yet freed.
void ntmd_trainer_free(struct NtmdTrainer *trainer);

// Runs up to `steps` more optimizer steps (fewer if the schedule ends).
// `steps_done` receives the total step count so far and `last_loss` the
// most recent training loss (NaN before the first step); either may be
// null.
//
// # Safety
// `trainer` must be a live handle; the outputs must be null or writable.
enum NtmdStatus ntmd_trainer_run(struct NtmdTrainer *trainer,
                                 uint64_t steps,
                                 uint64_t *steps_done,
                                 double *last_loss);

// Writes a checkpoint of the current training state.
//
// # Safety
// `trainer` must be a live handle and `path` a valid C string.
enum NtmdStatus ntmd_trainer_save(const struct NtmdTrainer *trainer, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NTMD_H */

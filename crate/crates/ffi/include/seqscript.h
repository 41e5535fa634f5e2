#ifndef SEQSCRIPT_H
#define SEQSCRIPT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call. Values 2 to 6 match the CLI exit codes.
typedef enum SsStatus {
  SS_STATUS_OK = 0,
  // A required pointer argument was null.
  SS_STATUS_NULL_ARGUMENT = 1,
  SS_STATUS_USAGE = 2,
  SS_STATUS_IO = 3,
  SS_STATUS_FORMAT = 4,
  SS_STATUS_CONFIG = 5,
  SS_STATUS_NUMERIC = 6,
  // An output buffer was too small; the needed size was reported.
  SS_STATUS_BUFFER_TOO_SMALL = 7,
  // A Rust panic was caught at the boundary.
  SS_STATUS_INTERNAL = 8,
} SsStatus;

// Opaque model handle.
typedef struct SsModel SsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after success.
// The pointer stays valid until the next call on this thread.
const char *ss_last_error(void);

// Loads a checkpoint file. On success `*out` owns a new handle.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum SsStatus ss_model_load(const char *path, struct SsModel **out);

// Loads a checkpoint from memory.
//
// # Safety
// `bytes` must point to `len` readable bytes; `out` must be writable.
enum SsStatus ss_model_load_bytes(const uint8_t *bytes, size_t len, struct SsModel **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must come from a load call and not have been freed.
void ss_model_free(struct SsModel *model);

// Learnable parameter count, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t ss_model_param_count(const struct SsModel *model);

// Number of scripts the model distinguishes, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t ss_model_num_scripts(const struct SsModel *model);

// Copies script `index`'s name, NUL-terminated, into `buf`. `*needed`
// receives the size including the terminator even when `cap` is too small.
//
// # Safety
// `buf` must have `cap` writable bytes (or be null with `cap` 0); `needed`
// may be null.
enum SsStatus ss_model_script_name(const struct SsModel *model,
                                   size_t index,
                                   char *buf,
                                   size_t cap,
                                   size_t *needed);

// Classifies a grayscale crop given as `height * width` row-major values
// in [0, 1]. `*script` receives the zero-based script index, or -1 when
// every frame is blank. If `counts` is non-null it receives the per-script
// frame votes and must hold at least `ss_model_num_scripts` entries.
//
// # Safety
// `pixels` must hold `height * width` doubles; `script` must be writable;
// `counts` must be null or hold `counts_len` writable slots.
enum SsStatus ss_model_infer(const struct SsModel *model,
                             const double *pixels,
                             size_t height,
                             size_t width,
                             int32_t *script,
                             size_t *counts,
                             size_t counts_len);

// Like [`ss_model_infer`], for an in-memory binary PGM file.
//
// # Safety
// `bytes` must hold `len` readable bytes; see [`ss_model_infer`] for the
// outputs.
enum SsStatus ss_model_infer_pgm(const struct SsModel *model,
                                 const uint8_t *bytes,
                                 size_t len,
                                 int32_t *script,
                                 size_t *counts,
                                 size_t counts_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEQSCRIPT_H */

#ifndef ENF_CASCADE_H
#define ENF_CASCADE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Signal type selector for [`enf_extract`].
typedef enum EnfSignalType {
  ENF_SIGNAL_TYPE_AUDIO = 0,
  ENF_SIGNAL_TYPE_POWER = 1,
} EnfSignalType;

// Status codes returned by every fallible function.
typedef enum EnfStatus {
  ENF_STATUS_OK = 0,
  ENF_STATUS_NULL_POINTER = 1,
  ENF_STATUS_INVALID_ARGUMENT = 2,
  ENF_STATUS_IO = 3,
  ENF_STATUS_CORRUPT = 4,
  ENF_STATUS_UNSUPPORTED_VERSION = 5,
  // The recording could not be analysed (too short, silent, no hum...).
  ENF_STATUS_SIGNAL = 6,
  // The model cannot classify this recording (missing kind or grid).
  ENF_STATUS_CLASSIFICATION = 7,
  ENF_STATUS_PANIC = 8,
} EnfStatus;

// Opaque trained model.
typedef struct EnfModel EnfModel;

// Opaque recording.
typedef struct EnfRecording EnfRecording;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *enf_last_error(void);

// Library version as a static NUL-terminated string.
const char *enf_version(void);

// Loads a model archive.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum EnfStatus enf_model_load(const char *path, struct EnfModel **out);

// # Safety
// `model` must come from [`enf_model_load`] and not be used afterwards.
void enf_model_free(struct EnfModel *model);

// Loads a WAV or text recording. `declared_type` is -1 for unknown, otherwise
// an [`EnfSignalType`] value.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum EnfStatus enf_recording_load(const char *path,
                                  int32_t declared_type,
                                  struct EnfRecording **out);

// Wraps `len` samples at `sample_rate_hz`; the samples are copied.
//
// # Safety
// `samples` must point to `len` readable doubles and `out` be a valid pointer.
enum EnfStatus enf_recording_from_samples(const double *samples,
                                          size_t len,
                                          double sample_rate_hz,
                                          struct EnfRecording **out);

// # Safety
// `rec` must come from this library and not be used afterwards.
void enf_recording_free(struct EnfRecording *rec);

// Runs the full cascade and returns the report as JSON through `out_json`.
//
// # Safety
// All pointers must be valid; release the string with [`enf_string_free`].
enum EnfStatus enf_classify_json(const struct EnfModel *model,
                                 const struct EnfRecording *rec,
                                 char **out_json);

// Runs the full cascade and writes the decided grid letter (`'A'`..`'L'`).
//
// # Safety
// All pointers must be valid.
enum EnfStatus enf_classify_label(const struct EnfModel *model,
                                  const struct EnfRecording *rec,
                                  char *out_label);

// Extracts the ENF trace with default settings. `nominal_hz` is 50 or 60.
// The buffer is returned through `out_values`/`out_len` and must be released
// with [`enf_values_free`].
//
// # Safety
// All pointers must be valid.
enum EnfStatus enf_extract(const struct EnfRecording *rec,
                           int32_t nominal_hz,
                           enum EnfSignalType signal_type,
                           double **out_values,
                           size_t *out_len);

// # Safety
// `values`/`len` must come from [`enf_extract`].
void enf_values_free(double *values, size_t len);

// # Safety
// `s` must come from this library.
void enf_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENF_CASCADE_H */

#ifndef ICTUS_H
#define ICTUS_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum IctusStatus {
  ICTUS_STATUS_OK = 0,
  ICTUS_STATUS_NULL_POINTER = 1,
  ICTUS_STATUS_INVALID_ARGUMENT = 2,
  ICTUS_STATUS_IO = 3,
  /*
   Malformed input data (EDF header, CSV row, annotations).
   */
  ICTUS_STATUS_DATA = 4,
  /*
   Shapes or parameters do not fit the model.
   */
  ICTUS_STATUS_MODEL = 5,
  /*
   Output buffer too small; the required length was still written.
   */
  ICTUS_STATUS_BUFFER_TOO_SMALL = 6,
  ICTUS_STATUS_PANIC = 7,
} IctusStatus;

/*
 A trained generator/discriminator pair.
 */
typedef struct IctusModel IctusModel;

/*
 A multichannel recording with its seizure annotations.
 */
typedef struct IctusRecording IctusRecording;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Static, NUL-terminated version string.
 */
const char *ictus_version(void);

/*
 Message of the last failed call on this thread; empty after a success.
 Valid until the next call on the same thread.
 */
const char *ictus_last_error(void);

/*
 Loads a checkpoint written by `ictus train` (the `.json` architecture
 file must sit next to it).

 # Safety
 `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum IctusStatus ictus_model_load(const char *path, struct IctusModel **out);

/*
 # Safety
 `model` must come from [`ictus_model_load`] and not be used afterwards.
 */
void ictus_model_free(struct IctusModel *model);

/*
 Window shape the model expects: channels and samples per window.

 # Safety
 `model` must be a live handle; the outputs must be writable.
 */
enum IctusStatus ictus_model_shape(const struct IctusModel *model,
                                   size_t *channels,
                                   size_t *samples);

/*
 Anomaly score of one window given channel-major (`channels × samples`)
 data. Scores near 0 indicate the preictal state.

 # Safety
 `data` must hold `channels * samples` values; `score` must be writable.
 */
enum IctusStatus ictus_model_score(const struct IctusModel *model,
                                   const double *data,
                                   size_t channels,
                                   size_t samples,
                                   double *score);

/*
 Reads an EDF file (`csv_rate <= 0`) or a CSV file sampled at `csv_rate`
 Hz. Annotations are taken from `<path>.annotations` when present.

 # Safety
 `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum IctusStatus ictus_recording_read(const char *path,
                                      double csv_rate,
                                      struct IctusRecording **out);

/*
 Generates a synthetic recording from a JSON synthesis config; missing
 fields take their defaults, so `"{}"` is valid.

 # Safety
 `config_json` must be a NUL-terminated string and `out` writable.
 */
enum IctusStatus ictus_recording_generate(const char *config_json, struct IctusRecording **out);

/*
 # Safety
 `rec` must come from this library and not be used afterwards.
 */
void ictus_recording_free(struct IctusRecording *rec);

/*
 Channel count, samples per channel, rate in Hz and seizure count.

 # Safety
 `rec` must be a live handle; every output must be writable.
 */
enum IctusStatus ictus_recording_info(const struct IctusRecording *rec,
                                      size_t *channels,
                                      size_t *samples,
                                      double *sample_rate,
                                      size_t *seizures);

/*
 Copies one channel into `buf`, which must hold at least the channel's
 sample count.

 # Safety
 `buf` must be writable for `len` values.
 */
enum IctusStatus ictus_recording_channel(const struct IctusRecording *rec,
                                         size_t channel,
                                         double *buf,
                                         size_t len);

/*
 Onset and offset in seconds of seizure `index`.

 # Safety
 `rec` must be a live handle; the outputs must be writable.
 */
enum IctusStatus ictus_recording_seizure(const struct IctusRecording *rec,
                                         size_t index,
                                         double *onset_s,
                                         double *offset_s);

/*
 Trailing moving average over `horizon_s` seconds of an evenly spaced
 score stream; writes `len` values to `out`.

 # Safety
 `times` and `scores` must hold `len` values; `out` must be writable for `len`.
 */
enum IctusStatus ictus_moving_average(const double *times,
                                      const double *scores,
                                      size_t len,
                                      double horizon_s,
                                      double *out);

/*
 Alarm times where the stream drops below `tau`, with crossings inside
 `refractory_s` of the last alarm suppressed. `count` receives the number
 of alarms even when `capacity` is too small.

 # Safety
 `times` and `scores` must hold `len` values; `alarms` must be writable
 for `capacity` values; `count` must be writable.
 */
enum IctusStatus ictus_detect_alarms(const double *times,
                                     const double *scores,
                                     size_t len,
                                     double tau,
                                     double refractory_s,
                                     double *alarms,
                                     size_t capacity,
                                     size_t *count);

/*
 Runs the command-line tool in-process and returns its exit code.
 `argv[0]` is the program name, as for `main`.

 # Safety
 `argv` must point to `argc` NUL-terminated strings.
 */
int ictus_run(int argc, const char *const *argv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ICTUS_H */

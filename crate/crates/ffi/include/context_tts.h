#ifndef CONTEXT_TTS_H
#define CONTEXT_TTS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every call.
 */
typedef enum CttsStatus {
  CTTS_STATUS_OK = 0,
  CTTS_STATUS_NULL_ARGUMENT = 1,
  CTTS_STATUS_INVALID_UTF8 = 2,
  CTTS_STATUS_IO = 3,
  CTTS_STATUS_CONFIG = 4,
  CTTS_STATUS_DATA = 5,
  CTTS_STATUS_VALIDATION = 6,
  CTTS_STATUS_NUMERIC = 7,
  CTTS_STATUS_PANIC = 8,
} CttsStatus;

/*
 Mono waveform samples.
 */
typedef struct CttsAudio CttsAudio;

/*
 Row-major `frames × 80` log-mel matrix.
 */
typedef struct CttsMel CttsMel;

/*
 A loaded TTS checkpoint together with its corpus.
 */
typedef struct CttsModel CttsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. Valid until the next failing call.
 */
const char *ctts_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *ctts_version(void);

/*
 Opens the newest TTS checkpoint of a run directory, or `checkpoint` when it is non-NULL.

 # Safety
 `run_dir` and `checkpoint` (when non-NULL) must be NUL-terminated strings; `out` must be writable.
 */
enum CttsStatus ctts_model_open(const char *run_dir,
                                const char *checkpoint,
                                struct CttsModel **out);

/*
 # Safety
 `model` must be NULL or a handle from [`ctts_model_open`] that has not been freed.
 */
void ctts_model_free(struct CttsModel *model);

/*
 Synthesizes the mel spectrogram of one corpus turn with a turn window of `turn_window`.

 # Safety
 `model` must be a live handle, `conversation_id` a NUL-terminated string and `out` writable.
 */
enum CttsStatus ctts_synthesize_mel(const struct CttsModel *model,
                                    const char *conversation_id,
                                    uint32_t turn_index,
                                    uint32_t turn_window,
                                    struct CttsMel **out);

/*
 Log-mel spectrogram of mono samples at 22050 or 44100 Hz (the latter is resampled first).

 # Safety
 `samples` must point to `len` readable floats; `out` must be writable.
 */
enum CttsStatus ctts_wav_to_mel(const float *samples,
                                size_t len,
                                uint32_t sample_rate,
                                struct CttsMel **out);

/*
 Number of frames of a mel handle (0 for NULL).

 # Safety
 `mel` must be NULL or a live mel handle.
 */
size_t ctts_mel_frames(const struct CttsMel *mel);

/*
 Channels per frame, always 80.
 */
size_t ctts_mel_channels(void);

/*
 Pointer to `frames × 80` floats owned by the handle (NULL for NULL).

 # Safety
 `mel` must be NULL or a live mel handle; the pointer dies with the handle.
 */
const float *ctts_mel_data(const struct CttsMel *mel);

/*
 # Safety
 `mel` must be NULL or a live mel handle.
 */
void ctts_mel_free(struct CttsMel *mel);

/*
 Griffin-Lim reconstruction at 22050 Hz, peak-normalised.

 # Safety
 `mel` must be a live mel handle and `out` writable.
 */
enum CttsStatus ctts_griffin_lim(const struct CttsMel *mel,
                                 uint32_t iterations,
                                 uint64_t seed,
                                 struct CttsAudio **out);

/*
 # Safety
 `audio` must be NULL or a live audio handle.
 */
size_t ctts_audio_len(const struct CttsAudio *audio);

/*
 # Safety
 `audio` must be NULL or a live audio handle.
 */
uint32_t ctts_audio_sample_rate(const struct CttsAudio *audio);

/*
 # Safety
 `audio` must be NULL or a live audio handle; the pointer dies with the handle.
 */
const float *ctts_audio_samples(const struct CttsAudio *audio);

/*
 Writes the audio as 16-bit mono PCM.

 # Safety
 `audio` must be a live audio handle and `path` a NUL-terminated string.
 */
enum CttsStatus ctts_audio_write_wav(const struct CttsAudio *audio, const char *path);

/*
 # Safety
 `audio` must be NULL or a live audio handle.
 */
void ctts_audio_free(struct CttsAudio *audio);

/*
 Runs the built-in property checks; `CTTS_STATUS_VALIDATION` when any fails.

 # Safety
 `passed` and `total` must be writable.
 */
enum CttsStatus ctts_run_checks(uint32_t *passed, uint32_t *total);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONTEXT_TTS_H */

#ifndef PROMPTFX_H
#define PROMPTFX_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum PfxStatus {
  PFX_STATUS_OK = 0,
  PFX_STATUS_NULL_POINTER = 1,
  PFX_STATUS_INVALID_UTF8 = 2,
  PFX_STATUS_INVALID_ARGUMENT = 3,
  PFX_STATUS_IO = 4,
  PFX_STATUS_DECODE = 5,
  PFX_STATUS_EMPTY_PROMPT = 6,
  PFX_STATUS_UNKNOWN_CHAIN = 7,
  PFX_STATUS_DEGENERATE_PROMPT_PAIR = 8,
  PFX_STATUS_SCHEMA = 9,
  PFX_STATUS_BACKEND = 10,
  PFX_STATUS_PANIC = 11,
} PfxStatus;

/*
 Mono audio buffer.
 */
typedef struct PfxAudio PfxAudio;

/*
 Embedding backend plus effect renderer.
 */
typedef struct PfxEngine PfxEngine;

/*
 Outcome of one optimization.
 */
typedef struct PfxResult PfxResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version, static storage.
 */
const char *pfx_version(void);

/*
 Copy of the calling thread's last error message, or NULL if none.
 */
char *pfx_last_error_message(void);

/*
 # Safety
 `s` must be NULL or a string returned by this library, freed once.
 */
void pfx_string_free(char *s);

/*
 Parameter schema of every chain as JSON.
 */
char *pfx_chains_json(void);

/*
 `backend` is "surrogate" or "pretrained"; NULL means surrogate.

 # Safety
 `backend` must be NULL or a valid C string; `out` must be writable.
 */
enum PfxStatus pfx_engine_new(const char *backend, uint64_t noise_seed, struct PfxEngine **out);

/*
 # Safety
 `engine` must be NULL or a handle from `pfx_engine_new`, freed once.
 */
void pfx_engine_free(struct PfxEngine *engine);

/*
 Sample rate the engine optimizes and renders at.

 # Safety
 `engine` must be a live handle.
 */
uint32_t pfx_engine_sample_rate(const struct PfxEngine *engine);

/*
 # Safety
 `path` must be a valid C string; `out` must be writable.
 */
enum PfxStatus pfx_audio_load(const char *path, struct PfxAudio **out);

/*
 Copies `len` samples into a new buffer.

 # Safety
 `samples` must point to `len` readable doubles; `out` must be writable.
 */
enum PfxStatus pfx_audio_from_samples(const double *samples,
                                      size_t len,
                                      uint32_t sample_rate,
                                      struct PfxAudio **out);

/*
 # Safety
 `audio` must be a live handle.
 */
size_t pfx_audio_len(const struct PfxAudio *audio);

/*
 # Safety
 `audio` must be a live handle.
 */
uint32_t pfx_audio_sample_rate(const struct PfxAudio *audio);

/*
 Copies up to `capacity` samples into `dst` and returns the count copied.

 # Safety
 `audio` must be a live handle; `dst` must hold `capacity` doubles.
 */
size_t pfx_audio_copy_samples(const struct PfxAudio *audio, double *dst, size_t capacity);

/*
 Writes a mono WAV; `float32` nonzero selects 32-bit float, else PCM16.

 # Safety
 `audio` must be a live handle; `path` a valid C string.
 */
enum PfxStatus pfx_audio_save(const struct PfxAudio *audio, const char *path, int32_t float32);

/*
 # Safety
 `audio` must be NULL or a handle from this library, freed once.
 */
void pfx_audio_free(struct PfxAudio *audio);

/*
 Searches effect parameters for `prompt`.

 `contrast` may be NULL (defaults to "NOT <prompt>"). `chain` is "eq",
 "reverb" or "eq-reverb". `config_json` may be NULL for the defaults, or a
 JSON object overriding any of variant, learning_rate, iterations, runs,
 max_shift_ms, seed. The input is resampled to the engine rate.

 # Safety
 Handles must be live; strings valid or NULL where allowed; `out` writable.
 */
enum PfxStatus pfx_optimize(const struct PfxEngine *engine,
                            const struct PfxAudio *audio,
                            const char *prompt,
                            const char *contrast,
                            const char *chain,
                            const char *config_json,
                            struct PfxResult **out);

/*
 # Safety
 `result` must be a live handle.
 */
size_t pfx_result_chosen_run(const struct PfxResult *result);

/*
 Shift-free final loss of the chosen run (NaN for a NULL handle).

 # Safety
 `result` must be a live handle.
 */
double pfx_result_final_loss(const struct PfxResult *result);

/*
 Mapped parameters in the params.json schema; NULL on failure.

 # Safety
 `result` must be a live handle.
 */
char *pfx_result_params_json(const struct PfxResult *result);

/*
 Run metadata (settings, seeds, per-run losses) as JSON.

 # Safety
 `result` must be a live handle.
 */
char *pfx_result_meta_json(const struct PfxResult *result);

/*
 New audio handle holding the effected input.

 # Safety
 `result` must be a live handle; `out` writable.
 */
enum PfxStatus pfx_result_effected_audio(const struct PfxResult *result, struct PfxAudio **out);

/*
 # Safety
 `result` must be NULL or a handle from `pfx_optimize`, freed once.
 */
void pfx_result_free(struct PfxResult *result);

/*
 Renders `audio` (resampled to the engine rate) through a params.json
 document.

 # Safety
 Handles must be live; `params_json` a valid C string; `out` writable.
 */
enum PfxStatus pfx_render(const struct PfxEngine *engine,
                          const struct PfxAudio *audio,
                          const char *params_json,
                          struct PfxAudio **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROMPTFX_H */

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef VIDPANEL_H
#define VIDPANEL_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum VpGammaKind {
  /*
   Threshold is `value * fps` frames.
   */
  VP_GAMMA_KIND_FPS_MULTIPLE = 0,
  /*
   Threshold is `value` frames.
   */
  VP_GAMMA_KIND_ABSOLUTE_FRAMES = 1,
} VpGammaKind;

typedef enum VpPlanMode {
  VP_PLAN_MODE_PANELS = 0,
  VP_PLAN_MODE_BASELINE = 1,
  VP_PLAN_MODE_LOWRES_INPUT = 2,
} VpPlanMode;

/*
 Status codes. Values are stable.
 */
typedef enum VpStatus {
  VP_STATUS_OK = 0,
  VP_STATUS_NULL_POINTER = 1,
  VP_STATUS_INVALID_ARGUMENT = 2,
  VP_STATUS_BUFFER_TOO_SMALL = 3,
  VP_STATUS_INVALID_POLICY = 10,
  VP_STATUS_INVALID_META = 11,
  VP_STATUS_EMPTY_VIDEO = 12,
  VP_STATUS_INSUFFICIENT_FRAMES = 13,
  VP_STATUS_INVALID_GEOMETRY = 14,
  VP_STATUS_TEMPLATE_ERROR = 15,
  VP_STATUS_INTERNAL = 99,
} VpStatus;

/*
 Opaque sampling plan.
 */
typedef struct VpPlan VpPlan;

/*
 Opaque sampling policy.
 */
typedef struct VpPolicy VpPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or NULL.
 The pointer stays valid until the next vidpanel call on this thread.
 */
const char *vp_last_error(void);

/*
 Library version as a static string.
 */
const char *vp_version(void);

/*
 Releases a string returned by this library. NULL is ignored.

 # Safety
 `s` must come from this library and not be freed twice.
 */
void vp_string_free(char *s);

/*
 Creates a policy: `context_window` images per query, `alpha` columns by
 `beta` rows per panel, and a threshold `gamma_value` of kind `gamma_kind`.

 # Safety
 `out` must be a valid pointer.
 */
enum VpStatus vp_policy_new(uint32_t context_window,
                            uint32_t alpha,
                            uint32_t beta,
                            enum VpGammaKind gamma_kind,
                            double gamma_value,
                            struct VpPolicy **out);

/*
 # Safety
 `policy` must come from `vp_policy_new` (or be NULL).
 */
void vp_policy_free(struct VpPolicy *policy);

/*
 Plans sampling for a video with the given metadata.

 # Safety
 `policy` must be a live handle and `out` a valid pointer.
 */
enum VpStatus vp_plan_sampling(const struct VpPolicy *policy,
                               uint64_t frame_count,
                               double fps,
                               uint32_t width,
                               uint32_t height,
                               enum VpPlanMode mode,
                               struct VpPlan **out);

/*
 # Safety
 `plan` must come from `vp_plan_sampling` (or be NULL).
 */
void vp_plan_free(struct VpPlan *plan);

/*
 # Safety
 `plan` must be a live handle.
 */
bool vp_plan_panel_active(const struct VpPlan *plan);

/*
 Number of frames the plan samples, 0 for NULL.

 # Safety
 `plan` must be a live handle.
 */
uint64_t vp_plan_frames_to_sample(const struct VpPlan *plan);

/*
 Number of images sent to the model, 0 for NULL.

 # Safety
 `plan` must be a live handle.
 */
uint64_t vp_plan_panel_count(const struct VpPlan *plan);

/*
 Grid and tile geometry. Any output pointer may be NULL.

 # Safety
 `plan` must be a live handle; non-NULL outputs must be writable.
 */
enum VpStatus vp_plan_geometry(const struct VpPlan *plan,
                               uint32_t *grid_rows,
                               uint32_t *grid_cols,
                               uint32_t *tile_width,
                               uint32_t *tile_height);

/*
 Copies the sampled frame indices into `out`. `*len` always receives the
 required count, so callers can size the buffer with a first call.

 # Safety
 `out` must have room for `capacity` values.
 */
enum VpStatus vp_plan_indices(const struct VpPlan *plan,
                              uint64_t *out,
                              uintptr_t capacity,
                              uintptr_t *len);

/*
 The plan serialized as JSON; free with `vp_string_free`.

 # Safety
 `plan` must be a live handle.
 */
char *vp_plan_to_json(const struct VpPlan *plan);

/*
 `n` center-of-bin indices over `frame_count` frames.

 # Safety
 `out` must have room for `capacity` values.
 */
enum VpStatus vp_uniform_indices(uint64_t frame_count,
                                 uint64_t n,
                                 uint64_t *out,
                                 uintptr_t capacity,
                                 uintptr_t *len);

/*
 Bilinear resize of an RGB24 image into `dst` (`dst_width * dst_height * 3` bytes).

 # Safety
 `src` must hold `src_width * src_height * 3` bytes and `dst` the destination size.
 */
enum VpStatus vp_downsample(const uint8_t *src,
                            uint32_t src_width,
                            uint32_t src_height,
                            uint8_t *dst,
                            uint32_t dst_width,
                            uint32_t dst_height);

/*
 Lays `rows * cols` equally sized RGB24 tiles out row-major into `dst`,
 which must hold `cols * tile_width * rows * tile_height * 3` bytes.

 # Safety
 `tiles` must point to `rows * cols` buffers of `tile_width * tile_height * 3` bytes.
 */
enum VpStatus vp_compose_panel(const uint8_t *const *tiles,
                               uint32_t tile_width,
                               uint32_t tile_height,
                               uint32_t rows,
                               uint32_t cols,
                               uint8_t *dst);

/*
 Extracts the chosen letter from a model response. `option_texts[i]` is
 the text of option `'A' + i`. `*letter` receives the letter, or 0 when
 nothing could be parsed (still `VP_STATUS_OK`).

 # Safety
 `response` and each of the `option_count` texts must be NUL-terminated.
 */
enum VpStatus vp_parse_choice(const char *response,
                              const char *const *option_texts,
                              uintptr_t option_count,
                              char *letter);

/*
 Renders the prompt for one question. `template` is `default`, `p1`,
 `p2` or `p3`; `grid_rows`/`grid_cols` of 0 mean "no panels". The result
 is written to `*out` and must be freed with `vp_string_free`.

 # Safety
 Strings must be NUL-terminated and `out` writable.
 */
enum VpStatus vp_render_prompt(const char *question,
                               const char *const *option_texts,
                               uintptr_t option_count,
                               const char *template_,
                               uint32_t grid_rows,
                               uint32_t grid_cols,
                               char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VIDPANEL_H */

#ifndef GROUNDKIT_H
#define GROUNDKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum GkStatus {
  GK_STATUS_OK = 0,
  GK_STATUS_NULL_POINTER = 1,
  GK_STATUS_INVALID_ARGUMENT = 2,
  GK_STATUS_IO = 3,
  GK_STATUS_FORMAT = 4,
  GK_STATUS_PARSE = 5,
  GK_STATUS_BUFFER_TOO_SMALL = 6,
  GK_STATUS_INTERNAL = 7,
} GkStatus;

/**
 * Opaque attention dump.
 */
typedef struct GkAttentionDump GkAttentionDump;

/**
 * Opaque RGB8 image.
 */
typedef struct GkImage GkImage;

/**
 * Axis-aligned box in pixels; membership tests include the edges.
 */
typedef struct GkBox {
  double left;
  double top;
  double right;
  double bottom;
} GkBox;

/**
 * Maps crop pixels back to the source image: `p / scale + offset`.
 */
typedef struct GkTransform {
  double offset_x;
  double offset_y;
  double scale;
} GkTransform;

typedef struct GkPoint {
  double x;
  double y;
} GkPoint;

/**
 * Four extremity cell IDs, 1-based row-major.
 */
typedef struct GkExtremities {
  uint32_t leftmost;
  uint32_t topmost;
  uint32_t rightmost;
  uint32_t bottommost;
} GkExtremities;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *gk_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call into the library on this thread.
 */
const char *gk_last_error_message(void);

void gk_string_free(char *s);

/**
 * Decodes an image file (PNG, JPEG, ...) into a new handle.
 */
enum GkStatus gk_image_load(const char *path, struct GkImage **out_image);

/**
 * Copies `len` bytes of tightly packed RGB8 pixels into a new handle.
 */
enum GkStatus gk_image_from_rgb(uint32_t width,
                                uint32_t height,
                                const uint8_t *pixels,
                                size_t len,
                                struct GkImage **out_image);

void gk_image_free(struct GkImage *image);

/**
 * Width in pixels, 0 for NULL.
 */
uint32_t gk_image_width(const struct GkImage *image);

/**
 * Height in pixels, 0 for NULL.
 */
uint32_t gk_image_height(const struct GkImage *image);

/**
 * Borrowed RGB8 pixel data, valid while the handle lives.
 */
const uint8_t *gk_image_pixels(const struct GkImage *image, size_t *out_len);

enum GkStatus gk_image_save_png(const struct GkImage *image, const char *path);

/**
 * Renders the first overlay of `method` (e.g. `"mark-grid:rows=6,cols=6"`).
 * `out_plan_json` may be NULL; otherwise it receives the render plan, to be
 * freed with [`gk_string_free`].
 */
enum GkStatus gk_render_overlay(const struct GkImage *image,
                                const char *method,
                                struct GkImage **out_image,
                                char **out_plan_json);

/**
 * Outlines `bbox` on a copy of `image`.
 */
enum GkStatus gk_annotate_box(const struct GkImage *image,
                              struct GkBox bbox,
                              struct GkImage **out_image);

/**
 * Crops to `bbox` and scales so the shorter side is `short_side` pixels.
 */
enum GkStatus gk_crop_and_resize(const struct GkImage *image,
                                 struct GkBox bbox,
                                 uint32_t short_side,
                                 struct GkImage **out_image,
                                 struct GkTransform *out_transform);

/**
 * Pixel bounds of cell `id` in a `rows x cols` grid over `width x height`.
 */
enum GkStatus gk_cell_bounds(uint32_t rows,
                             uint32_t cols,
                             uint32_t width,
                             uint32_t height,
                             uint32_t id,
                             struct GkBox *out_box);

enum GkStatus gk_cell_center(uint32_t rows,
                             uint32_t cols,
                             uint32_t width,
                             uint32_t height,
                             uint32_t id,
                             struct GkPoint *out_point);

/**
 * Box spanned by four extremity cells.
 */
enum GkStatus gk_extremity_box(uint32_t rows,
                               uint32_t cols,
                               uint32_t width,
                               uint32_t height,
                               struct GkExtremities ids,
                               struct GkBox *out_box);

/**
 * Extremity cells that cover `target`.
 */
enum GkStatus gk_covering_extremities(uint32_t rows,
                                      uint32_t cols,
                                      uint32_t width,
                                      uint32_t height,
                                      struct GkBox target,
                                      struct GkExtremities *out_ids);

/**
 * Maps a crop-space point to the source image.
 */
struct GkPoint gk_transform_to_original(struct GkTransform t, struct GkPoint p);

/**
 * Reads a click point from a model answer for a `width x height` image.
 */
enum GkStatus gk_parse_point(const char *raw,
                             uint32_t width,
                             uint32_t height,
                             struct GkPoint *out_point);

/**
 * Reads four extremity cell IDs (each in `1..=max_id`) from a model answer.
 */
enum GkStatus gk_parse_grid_ids(const char *raw, uint32_t max_id, struct GkExtremities *out_ids);

/**
 * Loads and validates an attention dump directory.
 */
enum GkStatus gk_dump_load(const char *dir, struct GkAttentionDump **out_dump);

void gk_dump_free(struct GkAttentionDump *dump);

/**
 * Number of layers, 0 for NULL.
 */
size_t gk_dump_layer_count(const struct GkAttentionDump *dump);

/**
 * Scores a dump against `gt`. `interp` is 0 for nearest, 1 for bilinear.
 * `layer_hits` may be NULL; otherwise it must hold `layer_hits_len` bytes and
 * receives 1 per hitting layer, 0 otherwise.
 */
enum GkStatus gk_pointing_game(const struct GkAttentionDump *dump,
                               struct GkBox gt,
                               uint32_t interp,
                               bool *out_hit,
                               uint8_t *layer_hits,
                               size_t layer_hits_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GROUNDKIT_H */

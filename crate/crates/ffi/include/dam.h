#ifndef DAM_H
#define DAM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define DAM_REASON_ABSENT 1

#define DAM_REASON_INTERVAL (1 << 1)

#define DAM_REASON_ANCHOR (1 << 2)

#define DAM_REASON_UNSTABLE_IOU (1 << 3)

#define DAM_REASON_UNSTABLE_AREA (1 << 4)

typedef enum DamStatus {
  DAM_STATUS_OK = 0,
  DAM_STATUS_NULL_POINTER = 1,
  DAM_STATUS_INVALID_ARGUMENT = 2,
  DAM_STATUS_DATA_ERROR = 3,
  DAM_STATUS_BUFFER_TOO_SMALL = 4,
  DAM_STATUS_INTERNAL_ERROR = 5,
  DAM_STATUS_PANIC = 6,
} DamStatus;

typedef enum DamEntryKind {
  DAM_ENTRY_KIND_INIT = 0,
  DAM_ENTRY_KIND_RAM = 1,
  DAM_ENTRY_KIND_RAM_LATEST = 2,
  DAM_ENTRY_KIND_DRM = 3,
} DamEntryKind;

/**
 * Opaque binary mask.
 */
typedef struct DamMask DamMask;

/**
 * Opaque tracking session.
 */
typedef struct DamSession DamSession;

/**
 * Policy and bank parameters. Fill with [`dam_config_default`] first.
 */
typedef struct DamConfig {
  /**
   * One of the `DamVariant` values.
   */
  uint32_t variant;
  uint64_t delta;
  double theta_anc;
  double theta_iou;
  double theta_area;
  size_t theta_m;
  size_t n_dam;
  bool temporal_encoding_on_drm;
  bool include_latest_in_ram;
} DamConfig;

/**
 * Inclusive pixel bounds.
 */
typedef struct DamBBox {
  size_t x_min;
  size_t y_min;
  size_t x_max;
  size_t y_max;
} DamBBox;

/**
 * Outcome of one tracking step.
 */
typedef struct DamDecision {
  /**
   * Index of the selected candidate.
   */
  uint32_t chosen;
  double score;
  bool update_ram;
  bool update_drm;
  bool set_latest;
  bool has_anchor_ratio;
  double anchor_ratio;
  /**
   * Bitwise OR of `DAM_REASON_*`.
   */
  uint32_t reasons;
} DamDecision;

typedef struct DamViewSlot {
  uint64_t frame_index;
  enum DamEntryKind kind;
  /**
   * -1 when the entry carries no temporal rank.
   */
  int64_t temporal_rank;
} DamViewSlot;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dam_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated and
 * NUL-terminated) and returns its full length in bytes, or 0 when the last
 * call succeeded.
 */
size_t dam_last_error_message(char *buf, size_t cap);

enum DamStatus dam_config_default(struct DamConfig *out);

/**
 * Creates an all-zero mask.
 */
enum DamStatus dam_mask_new(size_t width, size_t height, struct DamMask **out);

/**
 * Decodes row-major run lengths, starting with a run of zeros.
 */
enum DamStatus dam_mask_from_rle(size_t width,
                                 size_t height,
                                 const uint64_t *runs,
                                 size_t n_runs,
                                 struct DamMask **out);

void dam_mask_free(struct DamMask *mask);

enum DamStatus dam_mask_set(struct DamMask *mask, size_t x, size_t y, bool value);

enum DamStatus dam_mask_get(const struct DamMask *mask, size_t x, size_t y, bool *out);

enum DamStatus dam_mask_area(const struct DamMask *mask, size_t *out);

/**
 * Intersection over union; two empty masks give 1.
 */
enum DamStatus dam_mask_iou(const struct DamMask *a, const struct DamMask *b, double *out);

/**
 * Tight bounding box; `*present` is false for an empty mask.
 */
enum DamStatus dam_mask_bbox(const struct DamMask *mask, struct DamBBox *out, bool *present);

/**
 * Number of 8-connected components.
 */
enum DamStatus dam_mask_component_count(const struct DamMask *mask, size_t *out);

/**
 * Canonical run lengths of the mask.
 */
enum DamStatus dam_mask_to_rle(const struct DamMask *mask, uint64_t *buf, size_t cap, size_t *len);

/**
 * Starts a session from a non-empty initialization mask.
 */
enum DamStatus dam_session_new(const struct DamConfig *config,
                               uint64_t init_frame,
                               const struct DamMask *init_mask,
                               struct DamSession **out);

void dam_session_free(struct DamSession *session);

/**
 * Feeds the three candidate masks and their predicted IoUs for
 * `frame_index`; selects the output and updates memory.
 */
enum DamStatus dam_session_step(struct DamSession *session,
                                uint64_t frame_index,
                                const struct DamMask *const *masks,
                                const double *scores,
                                struct DamDecision *out);

/**
 * Memory entries the next prediction should condition on, in order.
 */
enum DamStatus dam_session_view(const struct DamSession *session,
                                struct DamViewSlot *buf,
                                size_t cap,
                                size_t *len);

/**
 * Copy of the most recent output mask; free with [`dam_mask_free`].
 */
enum DamStatus dam_session_last_output(const struct DamSession *session, struct DamMask **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DAM_H */

#ifndef NETDET_H
#define NETDET_H

/* Generated by cbindgen from the netdet-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code shared by all fallible entry points.
 */
typedef enum NetdetStatus {
  /**
   * Success.
   */
  NETDET_STATUS_OK = 0,
  /**
   * A pointer argument was null.
   */
  NETDET_STATUS_NULL_ARGUMENT = 1,
  /**
   * An argument failed validation (bad variant name, bad buffer size...).
   */
  NETDET_STATUS_INVALID_ARGUMENT = 2,
  /**
   * File read/write failed.
   */
  NETDET_STATUS_IO = 3,
  /**
   * Numerical failure (divergence, non-finite values).
   */
  NETDET_STATUS_NUMERIC = 4,
  /**
   * Any other internal failure; see `netdet_last_error`.
   */
  NETDET_STATUS_INTERNAL = 5,
} NetdetStatus;

/**
 * Opaque detector handle: model architecture plus its parameters.
 */
typedef struct NetdetModel NetdetModel;

/**
 * One decoded detection in normalized image coordinates.
 */
typedef struct NetdetDetection {
  double xmin;
  double ymin;
  double xmax;
  double ymax;
  /**
   * Softmax confidence in (0, 1).
   */
  double score;
  /**
   * Object class, 1-based (0 is background and never emitted).
   */
  uint32_t class_id;
} NetdetDetection;

/**
 * One ground-truth box of a generated scene.
 */
typedef struct NetdetGroundTruth {
  double xmin;
  double ymin;
  double xmax;
  double ymax;
  uint32_t class_id;
  /**
   * 0 = small, 1 = medium, 2 = large.
   */
  uint32_t scale_class;
} NetdetGroundTruth;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread, empty if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *netdet_last_error(void);

/**
 * Library version as a static string, e.g. "0.1.0".
 */
const char *netdet_version(void);

/**
 * Create a freshly initialized detector.
 *
 * `variant` selects the pyramid reconfiguration: "baseline", "nem", "ntm",
 * "netm", "netm+tdp", "netnet", or "nnem". `seed` drives weight init.
 *
 * # Safety
 * `variant` must be a valid C string and `out` a valid pointer.
 */
enum NetdetStatus netdet_model_new(const char *variant, uint64_t seed, struct NetdetModel **out);

/**
 * Destroy a model handle. Passing null is a no-op.
 *
 * # Safety
 * `model` must be a pointer previously returned by a constructor, not yet
 * freed.
 */
void netdet_model_free(struct NetdetModel *model);

/**
 * Side length of the square input image the model expects.
 *
 * # Safety
 * `model` must be a live handle.
 */
uintptr_t netdet_model_input_size(const struct NetdetModel *model);

/**
 * Total number of scalar parameters in the model.
 *
 * # Safety
 * `model` must be a live handle.
 */
uintptr_t netdet_model_num_params(const struct NetdetModel *model);

/**
 * Write the model parameters to a checkpoint file.
 *
 * # Safety
 * `model` must be a live handle and `path` a valid C string.
 */
enum NetdetStatus netdet_model_save(const struct NetdetModel *model, const char *path);

/**
 * Create a model of the given variant and restore its parameters from a
 * checkpoint written by [`netdet_model_save`] (or the CLI trainer). The
 * variant must match the one the checkpoint was produced with.
 *
 * # Safety
 * `variant` and `path` must be valid C strings, `out` a valid pointer.
 */
enum NetdetStatus netdet_model_load(const char *variant,
                                    const char *path,
                                    struct NetdetModel **out);

/**
 * Train the model in place on procedurally generated scenes.
 *
 * `scene_seed` fixes the dataset, `num_scenes` its size; training runs for
 * `epochs` epochs with the stock schedule (warmup + milestone decay) and
 * `train_seed` driving the shuffle. On success `*final_loss_out` (if
 * non-null) receives the last epoch's mean loss.
 *
 * # Safety
 * `model` must be a live handle; `final_loss_out` may be null.
 */
enum NetdetStatus netdet_model_train_synthetic(struct NetdetModel *model,
                                               uint64_t scene_seed,
                                               uintptr_t num_scenes,
                                               uintptr_t epochs,
                                               uint64_t train_seed,
                                               double *final_loss_out);

/**
 * Run detection on one grayscale image.
 *
 * `pixels` must hold `size * size` values where `size` is
 * [`netdet_model_input_size`]. Up to `capacity` detections are written to
 * `detections` in descending score order; `*count_out` receives how many.
 * If more than `capacity` detections survive thresholding, the lowest
 * scoring ones are dropped (that is not an error).
 *
 * # Safety
 * `pixels` must point to `pixel_count` readable doubles, `detections` to
 * `capacity` writable slots, and `count_out` must be valid.
 */
enum NetdetStatus netdet_model_detect(const struct NetdetModel *model,
                                      const double *pixels,
                                      uintptr_t pixel_count,
                                      double score_threshold,
                                      struct NetdetDetection *detections,
                                      uintptr_t capacity,
                                      uintptr_t *count_out);

/**
 * Generate a deterministic synthetic scene.
 *
 * The image (`image_size * image_size` pixels) is written to `pixels` if
 * `pixel_capacity` is large enough, and up to `gt_capacity` ground-truth
 * boxes to `gts`; `*gt_count_out` receives the true box count (which may
 * exceed `gt_capacity`, in which case the extras are dropped).
 *
 * # Safety
 * Buffers must match their stated capacities; `gt_count_out` must be valid.
 */
enum NetdetStatus netdet_scene_generate(uint64_t base_seed,
                                        uint64_t index,
                                        uintptr_t image_size,
                                        double *pixels,
                                        uintptr_t pixel_capacity,
                                        struct NetdetGroundTruth *gts,
                                        uintptr_t gt_capacity,
                                        uintptr_t *gt_count_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NETDET_H */

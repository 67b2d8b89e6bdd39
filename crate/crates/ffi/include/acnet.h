#ifndef ACNET_H
#define ACNET_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every entry point.
 */
typedef enum AcnetStatus {
  ACNET_STATUS_OK = 0,
  ACNET_STATUS_NULL_ARGUMENT = 1,
  ACNET_STATUS_INVALID_UTF8 = 2,
  ACNET_STATUS_DIMENSION = 3,
  ACNET_STATUS_CONFIG = 4,
  ACNET_STATUS_DATA = 5,
  ACNET_STATUS_PARSE = 6,
  ACNET_STATUS_INTEGRITY = 7,
  ACNET_STATUS_INCOMPATIBLE = 8,
  ACNET_STATUS_NUMERIC = 9,
  ACNET_STATUS_DOMAIN = 10,
  ACNET_STATUS_IO = 11,
  ACNET_STATUS_PANIC = 12,
  ACNET_STATUS_OTHER = 13,
} AcnetStatus;

/**
 * Opaque model handle.
 */
typedef struct AcnetGraph AcnetGraph;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *acnet_version(void);

/**
 * Message for the most recent failure on this thread, or null.
 *
 * The pointer stays valid until the next acnet call on the same thread.
 */
const char *acnet_last_error(void);

/**
 * Builds a graph from its JSON description.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string; `out` must be writable.
 */
enum AcnetStatus acnet_graph_from_json(const char *json, uint64_t seed, struct AcnetGraph **out);

/**
 * Builds the default prototype for `height`×`width` single-channel images.
 *
 * # Safety
 * `out` must be writable.
 */
enum AcnetStatus acnet_graph_seed_prototype(size_t height,
                                            size_t width,
                                            uint64_t seed,
                                            struct AcnetGraph **out);

/**
 * Releases a graph. Null is a no-op.
 *
 * # Safety
 * `graph` must come from this library and not be used afterwards.
 */
void acnet_graph_free(struct AcnetGraph *graph);

/**
 * Serialized graph description; free with `acnet_string_free`.
 *
 * # Safety
 * `graph` must be a live handle; `out` must be writable.
 */
enum AcnetStatus acnet_graph_to_json(const struct AcnetGraph *graph, char **out);

/**
 * Releases a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void acnet_string_free(char *s);

/**
 * Loads weights; on failure the graph keeps its previous weights.
 *
 * # Safety
 * `graph` must be a live handle; `path` a valid NUL-terminated string.
 */
enum AcnetStatus acnet_graph_load_weights(struct AcnetGraph *graph, const char *path);

/**
 * # Safety
 * `graph` must be a live handle; `path` a valid NUL-terminated string.
 */
enum AcnetStatus acnet_graph_save_weights(const struct AcnetGraph *graph, const char *path);

/**
 * Writes the bound input shape (N, C, H, W) into `out[0..4]`.
 *
 * # Safety
 * `graph` must be a live handle; `out` must point to 4 writable values.
 */
enum AcnetStatus acnet_graph_input_shape(const struct AcnetGraph *graph, size_t *out);

/**
 * # Safety
 * `graph` must be a live handle; `out` must be writable.
 */
enum AcnetStatus acnet_graph_param_count(const struct AcnetGraph *graph, uint64_t *out);

/**
 * FLOPs and MACs of one `channels`×`height`×`width` image.
 *
 * # Safety
 * `graph` must be a live handle; `flops` and `macs` must be writable.
 */
enum AcnetStatus acnet_graph_cost(const struct AcnetGraph *graph,
                                  size_t channels,
                                  size_t height,
                                  size_t width,
                                  uint64_t *flops,
                                  uint64_t *macs);

/**
 * Positive-class probabilities for `n` images laid out NCHW.
 *
 * `images` holds `n * C * H * W` values matching the graph's input shape;
 * `scores` receives `n` values.
 *
 * # Safety
 * `graph` must be a live handle; the buffers must have the stated lengths.
 */
enum AcnetStatus acnet_graph_predict(const struct AcnetGraph *graph,
                                     const double *images,
                                     size_t n,
                                     double *scores);

/**
 * ROC AUC of `n` scores against 0/1 labels.
 *
 * # Safety
 * `scores` and `labels` must hold `n` values; `out` must be writable.
 */
enum AcnetStatus acnet_roc_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * NetScore of a model with the given accuracy, parameter and MAC counts.
 *
 * # Safety
 * `out` must be writable.
 */
enum AcnetStatus acnet_netscore(double auc, uint64_t params, uint64_t macs, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ACNET_H */

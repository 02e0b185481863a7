#ifndef RP_TESTBED_H
#define RP_TESTBED_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * HTTP behavior attached to a resource.
 */
typedef enum RptbBehavior {
  /**
   * Plain 200 response.
   */
  RPTB_BEHAVIOR_NORMAL = 0,
  /**
   * 404; the path does not exist for this instance.
   */
  RPTB_BEHAVIOR_NOT_FOUND = 1,
  /**
   * 429; `behavior_value` is the Retry-After seconds.
   */
  RPTB_BEHAVIOR_RATE_LIMIT = 2,
  /**
   * 302; `behavior_value` is the next hop index.
   */
  RPTB_BEHAVIOR_REDIRECT = 3,
  /**
   * Body is a gzip stream served with Content-Encoding: gzip;
   * `behavior_value` is the decompressed length.
   */
  RPTB_BEHAVIOR_GZIP_BOMB = 4,
  /**
   * Body is served at `behavior_value` bytes per second.
   */
  RPTB_BEHAVIOR_TRICKLE = 5,
  /**
   * Body is a pseudorandom stream of `total_len` bytes; only a prefix
   * is materialized in the buffer.
   */
  RPTB_BEHAVIOR_HUGE = 6,
} RptbBehavior;

/**
 * Result of an FFI call.
 */
typedef enum RptbStatus {
  /**
   * Success.
   */
  RPTB_OK = 0,
  /**
   * A required pointer argument was null.
   */
  RPTB_ERR_NULL_ARG = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  RPTB_ERR_BAD_UTF8 = 2,
  /**
   * The test letter is not one of A through O.
   */
  RPTB_ERR_UNKNOWN_TEST = 3,
  /**
   * A `key=value` parameter override was malformed or unknown.
   */
  RPTB_ERR_BAD_PARAM = 4,
  /**
   * The hostname does not belong to a registered instance.
   */
  RPTB_ERR_UNKNOWN_INSTANCE = 5,
} RptbStatus;

/**
 * Scenario engine handle.
 */
typedef struct RptbEngine RptbEngine;

/**
 * One minted test instance. Owns the C strings handed out for it.
 */
typedef struct RptbInstance RptbInstance;

/**
 * One resolved resource: body bytes plus the HTTP behavior the attack
 * server would apply when serving it.
 */
typedef struct RptbResource RptbResource;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates an engine minting hostnames under `base_domain`.
 *
 * # Safety
 * `base_domain` must be a valid NUL-terminated string; `out` must be a
 * valid pointer.
 */
enum RptbStatus rptb_engine_new(const char *base_domain, struct RptbEngine **out);

/**
 * Frees an engine. Instances and resources minted from it stay valid.
 *
 * # Safety
 * `engine` must come from `rptb_engine_new` and not be freed twice.
 */
void rptb_engine_free(struct RptbEngine *engine);

/**
 * Mints a fresh instance of the test named by `letter` (A through O,
 * case-insensitive). `params` is an optional array of `n_params`
 * NUL-terminated `key=value` overrides.
 *
 * # Safety
 * `engine` and `out` must be valid; `params` must point to `n_params`
 * valid C strings when `n_params` is nonzero.
 */
enum RptbStatus rptb_instance_new(struct RptbEngine *engine,
                                  char letter,
                                  const char *const *params,
                                  uintptr_t n_params,
                                  struct RptbInstance **out);

/**
 * The instance hostname, valid until the instance is freed.
 *
 * # Safety
 * `instance` must be a live handle.
 */
const char *rptb_instance_hostname(const struct RptbInstance *instance);

/**
 * The instance UUID, valid until the instance is freed.
 *
 * # Safety
 * `instance` must be a live handle.
 */
const char *rptb_instance_uuid(const struct RptbInstance *instance);

/**
 * The trust anchor locator for the instance. Writes the buffer pointer
 * and length; the buffer is owned by the instance.
 *
 * # Safety
 * All pointers must be valid.
 */
enum RptbStatus rptb_instance_tal(const struct RptbInstance *instance,
                                  const uint8_t **data_out,
                                  uintptr_t *len_out);

/**
 * Frees an instance handle and every buffer handed out for it.
 *
 * # Safety
 * `instance` must come from `rptb_instance_new` and not be freed twice.
 */
void rptb_instance_free(struct RptbInstance *instance);

/**
 * Resolves `path` (e.g. "/ta.cer", "/notification.xml") for an instance.
 * Streamed bodies are materialized up to `max_stream_bytes`; `total_len`
 * on the resource reports the full logical size.
 *
 * # Safety
 * `engine`, `path`, and `out` must be valid; the instance must have been
 * minted from the same engine.
 */
enum RptbStatus rptb_resolve(struct RptbEngine *engine,
                             const struct RptbInstance *instance,
                             const char *path,
                             uintptr_t max_stream_bytes,
                             struct RptbResource **out);

/**
 * The resource body. The buffer is owned by the resource.
 *
 * # Safety
 * All pointers must be valid.
 */
enum RptbStatus rptb_resource_body(const struct RptbResource *resource,
                                   const uint8_t **data_out,
                                   uintptr_t *len_out);

/**
 * The HTTP behavior attached to the resource.
 *
 * # Safety
 * `resource` must be a live handle.
 */
enum RptbBehavior rptb_resource_behavior(const struct RptbResource *resource);

/**
 * The behavior parameter (Retry-After seconds, serving rate, and so on);
 * zero when the behavior carries none.
 *
 * # Safety
 * `resource` must be a live handle.
 */
uint64_t rptb_resource_behavior_value(const struct RptbResource *resource);

/**
 * The full logical body length, which exceeds the buffer length for
 * streamed bodies.
 *
 * # Safety
 * `resource` must be a live handle.
 */
uint64_t rptb_resource_total_len(const struct RptbResource *resource);

/**
 * Frees a resource handle.
 *
 * # Safety
 * `resource` must come from `rptb_resolve` and not be freed twice.
 */
void rptb_resource_free(struct RptbResource *resource);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RP_TESTBED_H */

#ifndef SPECFORGE_H
#define SPECFORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SfStatus {
  SF_STATUS_OK = 0,
  SF_STATUS_NULL_ARGUMENT = 1,
  SF_STATUS_INVALID_UTF8 = 2,
  SF_STATUS_PARSE_FAILED = 3,
  SF_STATUS_INVALID_TREE = 4,
  SF_STATUS_IO = 5,
  SF_STATUS_PANIC = 6,
} SfStatus;

/**
 * Parsed file tree (relative path to contents).
 */
typedef struct SfFileTree SfFileTree;

/**
 * Parsed OpenAPI document.
 */
typedef struct SfSpec SfSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Repair malformed model JSON. `*out` receives the repaired text, which is
 * strict JSON when the repair succeeded; callers should still parse it.
 *
 * # Safety
 * `input` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SfStatus sf_repair_json(const char *input, char **out);

/**
 * Parse an OpenAPI YAML or JSON document.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SfStatus sf_spec_parse(const char *text, struct SfSpec **out);

/**
 * Structural validation. `*findings_out` receives a JSON array of
 * `{severity, location, message}`; `*error_count` the number of errors.
 *
 * # Safety
 * `spec` must come from [`sf_spec_parse`]; out-pointers must be valid.
 */
enum SfStatus sf_spec_validate(const struct SfSpec *spec, char **findings_out, size_t *error_count);

/**
 * JSON array of `{method, path}` in CRUD order.
 *
 * # Safety
 * `spec` must come from [`sf_spec_parse`]; `out` must be valid.
 */
enum SfStatus sf_spec_operations(const struct SfSpec *spec, char **out);

/**
 * # Safety
 * `spec` must come from [`sf_spec_parse`] and not be used afterwards.
 */
void sf_spec_free(struct SfSpec *spec);

/**
 * Parse strict file-tree JSON, enforcing the path rules.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SfStatus sf_filetree_parse(const char *json, struct SfFileTree **out);

/**
 * Number of files; 0 for a null handle.
 *
 * # Safety
 * `tree` must be null or come from [`sf_filetree_parse`].
 */
size_t sf_filetree_len(const struct SfFileTree *tree);

/**
 * Write the tree under the existing directory `root`. `*bytes_written`
 * receives the bytes written; identical files are skipped.
 *
 * # Safety
 * `tree` must come from [`sf_filetree_parse`]; `root` must be a
 * NUL-terminated string; `bytes_written` may be null.
 */
enum SfStatus sf_filetree_materialize(const struct SfFileTree *tree,
                                      const char *root,
                                      uint64_t *bytes_written);

/**
 * # Safety
 * `tree` must come from [`sf_filetree_parse`] and not be used afterwards.
 */
void sf_filetree_free(struct SfFileTree *tree);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void sf_string_free(char *s);

/**
 * Message of the last failure on this thread, or null. Valid until the
 * next call into the library on the same thread.
 */
const char *sf_last_error(void);

/**
 * Library version, static.
 */
const char *sf_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPECFORGE_H */

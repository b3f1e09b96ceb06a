#ifndef NCKIT_H
#define NCKIT_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. `Ok` is zero; every other value is an error.
 */
typedef enum NckitStatus {
  NCKIT_STATUS_OK = 0,
  NCKIT_STATUS_NULL_POINTER = 1,
  NCKIT_STATUS_INVALID_UTF8 = 2,
  NCKIT_STATUS_DIMENSION_MISMATCH = 3,
  NCKIT_STATUS_ARITY_MISMATCH = 4,
  NCKIT_STATUS_LEVEL_NOT_MULTIPLE = 5,
  NCKIT_STATUS_BUDGET_EXCEEDED = 6,
  NCKIT_STATUS_INVALID_ARGUMENT = 7,
  NCKIT_STATUS_INCONSISTENT_DATA = 8,
  NCKIT_STATUS_NOT_FREE_RANK = 9,
  NCKIT_STATUS_FLANDERS_EXHAUSTED = 10,
  NCKIT_STATUS_NON_VANISHING = 11,
  NCKIT_STATUS_UNSUPPORTED = 12,
  NCKIT_STATUS_JSON = 13,
  NCKIT_STATUS_BUFFER_TOO_SMALL = 14,
  NCKIT_STATUS_PANIC = 15,
} NckitStatus;

/**
 * Opaque free nc polynomial.
 */
typedef struct NckitPoly NckitPoly;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a success.
 *
 * The pointer stays valid until the next nckit call on the same thread.
 */
const char *nckit_last_error(void);

/**
 * Parses a polynomial fixture `{"d", "r", "terms": [{"word", "coef"}]}` into a new handle.
 *
 * # Safety
 * `json` must be a nul-terminated string and `out` a writable pointer.
 */
enum NckitStatus nckit_poly_from_json(const char *json, struct NckitPoly **out);

/**
 * Releases a handle from [`nckit_poly_from_json`]. Null is ignored.
 *
 * # Safety
 * `poly` must come from this library and not be used afterwards.
 */
void nckit_poly_free(struct NckitPoly *poly);

/**
 * Number of noncommuting variables, or 0 for a null handle.
 *
 * # Safety
 * `poly` must be null or a live handle.
 */
uintptr_t nckit_poly_arity(const struct NckitPoly *poly);

/**
 * Number of output components, or 0 for a null handle.
 *
 * # Safety
 * `poly` must be null or a live handle.
 */
uintptr_t nckit_poly_components(const struct NckitPoly *poly);

/**
 * Longest stored word, or 0 for a null handle.
 *
 * # Safety
 * `poly` must be null or a live handle.
 */
uintptr_t nckit_poly_degree(const struct NckitPoly *poly);

/**
 * Evaluates at a tuple of `n × n` matrices.
 *
 * `x` holds `d·n·n` complex entries as interleaved `(re, im)` doubles,
 * matrix after matrix, each row-major; `x_len` counts doubles. `out`
 * receives `r·n·n` entries in the same layout and must hold `out_len`
 * doubles; a short buffer gives `BufferTooSmall`.
 *
 * # Safety
 * `x` must be readable for `x_len` doubles and `out` writable for `out_len`.
 */
enum NckitStatus nckit_poly_eval(const struct NckitPoly *poly,
                                 uintptr_t n,
                                 const double *x,
                                 uintptr_t x_len,
                                 double *out,
                                 uintptr_t out_len);

/**
 * Serializes the polynomial back to its JSON fixture form.
 *
 * # Safety
 * `poly` must be a live handle and `out` writable; free the string with
 * [`nckit_string_free`].
 */
enum NckitStatus nckit_poly_to_json(const struct NckitPoly *poly, char **out);

/**
 * Runs a verification suite with its default parameters and writes the JSON report.
 *
 * `suite` is one of `ncpoly`, `ncdiff`, `ncrkhs`, `cdclass`, `solver`,
 * `gleason`, `all`. `pass` receives 1 when every check passed, else 0.
 *
 * # Safety
 * `suite` must be a nul-terminated string; `report_json` and `pass` must be
 * writable. Free the report with [`nckit_string_free`].
 */
enum NckitStatus nckit_verify(const char *suite, uint64_t seed, char **report_json, int32_t *pass);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void nckit_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NCKIT_H */

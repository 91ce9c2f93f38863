#ifndef CLH_H
#define CLH_H

/* Generated by build.rs with cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. `Rejected` is a normal answer (invalid instance, unsat
 * threshold, witness that fails to check), not an error.
 */
typedef enum ClhStatus {
  CLH_STATUS_OK = 0,
  CLH_STATUS_REJECTED = 1,
  CLH_STATUS_NULL_POINTER = 2,
  CLH_STATUS_INVALID_UTF8 = 3,
  CLH_STATUS_PARSE_ERROR = 4,
  CLH_STATUS_COMPUTE_ERROR = 5,
  CLH_STATUS_PANIC = 6,
} ClhStatus;

/**
 * A parsed, structurally valid instance.
 */
typedef struct ClhInstance ClhInstance;

/**
 * A certificate for an energy bound.
 */
typedef struct ClhWitness ClhWitness;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string. Do not free it.
 */
const char *clh_version(void);

/**
 * Message for the last failed call on this thread, or NULL if the last
 * call succeeded. The caller owns the returned string.
 */
char *clh_last_error(void);

/**
 * Release a string returned by this library.
 *
 * # Safety
 * `s` must be NULL or a pointer obtained from [`clh_last_error`],
 * [`clh_witness_to_json`], [`clh_instance_to_json`] or [`clh_verify`], and
 * must not be used after this call.
 */
void clh_string_free(char *s);

/**
 * Parse an instance from JSON text and run the structural checks (lattice,
 * dimensions, supports, Hermiticity). Commutation is checked separately
 * by [`clh_instance_check_commuting`].
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer to
 * writable storage for one handle. On success `*out` owns a new instance
 * that must be released with [`clh_instance_free`]; otherwise `*out` is
 * set to NULL.
 */
enum ClhStatus clh_instance_parse(const char *json, struct ClhInstance **out);

/**
 * Release an instance.
 *
 * # Safety
 * `inst` must be NULL or a handle from [`clh_instance_parse`] that has not
 * been freed yet.
 */
void clh_instance_free(struct ClhInstance *inst);

/**
 * Number of lattice sites, or 0 for NULL.
 *
 * # Safety
 * `inst` must be NULL or a live instance handle.
 */
size_t clh_instance_site_count(const struct ClhInstance *inst);

/**
 * Number of terms, or 0 for NULL.
 *
 * # Safety
 * `inst` must be NULL or a live instance handle.
 */
size_t clh_instance_term_count(const struct ClhInstance *inst);

/**
 * Serialize an instance back to JSON. Returns NULL for a NULL handle.
 *
 * # Safety
 * `inst` must be NULL or a live instance handle. Free the result with
 * [`clh_string_free`].
 */
char *clh_instance_to_json(const struct ClhInstance *inst);

/**
 * Pairwise commutation check. `Ok` when every pair commutes, `Rejected`
 * otherwise (the offending pair is in [`clh_last_error`]).
 *
 * # Safety
 * `inst` must be a live instance handle.
 */
enum ClhStatus clh_instance_check_commuting(const struct ClhInstance *inst);

/**
 * Lowest eigenvalue of the full Hamiltonian by dense diagonalization.
 *
 * # Safety
 * `inst` must be a live instance handle and `out` a valid pointer to a
 * double.
 */
enum ClhStatus clh_oracle_ground_energy(const struct ClhInstance *inst, double *out);

/**
 * Search for a witness that the ground energy is at most `threshold`.
 * `budget` caps the search (0 selects the default). Returns `Ok` with a
 * witness in `*out`, or `Rejected` with `*out` NULL when no witness
 * exists.
 *
 * # Safety
 * `inst` must be a live instance handle and `out` a valid pointer to
 * writable storage for one handle. A returned witness must be released
 * with [`clh_witness_free`].
 */
enum ClhStatus clh_prove(const struct ClhInstance *inst,
                         double threshold,
                         bool factorized,
                         uint64_t budget,
                         struct ClhWitness **out);

/**
 * Parse a witness from JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer to
 * writable storage for one handle. Release the result with
 * [`clh_witness_free`].
 */
enum ClhStatus clh_witness_parse(const char *json, struct ClhWitness **out);

/**
 * Serialize a witness. Returns NULL for a NULL handle.
 *
 * # Safety
 * `w` must be NULL or a live witness handle. Free the result with
 * [`clh_string_free`].
 */
char *clh_witness_to_json(const struct ClhWitness *w);

/**
 * The threshold a witness claims, or NaN for NULL.
 *
 * # Safety
 * `w` must be NULL or a live witness handle.
 */
double clh_witness_threshold(const struct ClhWitness *w);

/**
 * Release a witness.
 *
 * # Safety
 * `w` must be NULL or a handle from [`clh_prove`] or [`clh_witness_parse`]
 * that has not been freed yet.
 */
void clh_witness_free(struct ClhWitness *w);

/**
 * Check a witness against an instance. Returns `Ok` when it is accepted
 * and `Rejected` otherwise. If `report` is not NULL, `*report` receives
 * the JSON verification report, which the caller frees with
 * [`clh_string_free`].
 *
 * # Safety
 * `inst` and `w` must be live handles; `report` must be NULL or a valid
 * pointer to writable storage for one string pointer.
 */
enum ClhStatus clh_verify(const struct ClhInstance *inst,
                          const struct ClhWitness *w,
                          char **report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLH_H */

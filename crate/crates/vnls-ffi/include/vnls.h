#ifndef VNLS_H
#define VNLS_H

/* Generated by cbindgen from crates/vnls-ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum VnlsStatus {
  VNLS_STATUS_OK = 0,
  VNLS_STATUS_NULL_POINTER = 1,
  VNLS_STATUS_INVALID_ARGUMENT = 2,
  VNLS_STATUS_SINGULAR = 3,
  VNLS_STATUS_NON_FINITE = 4,
  VNLS_STATUS_BUFFER_TOO_SMALL = 5,
  VNLS_STATUS_FAILED = 6,
  VNLS_STATUS_PANIC = 7,
} VnlsStatus;

/**
 * A lattice state with an optional point defect.
 */
typedef struct VnlsLattice VnlsLattice;

/**
 * A Darboux-dressed soliton (any number of rank-one poles on the zero seed).
 */
typedef struct VnlsSoliton VnlsSoliton;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static, NUL-terminated description of a status code; unknown codes get a generic message.
 */
const char *vnls_status_message(int32_t status);

/**
 * Builds a soliton from `npoles` rank-one poles.
 *
 * `n` is the Lax matrix size (field components + 1), `kappa` is +1 or -1. Pole k has spectral
 * parameter `mu_re[k] + i mu_im[k]` and polarization `c_re[k*n + j] + i c_im[k*n + j]`.
 *
 * # Safety
 * `mu_re`, `mu_im` must point to `npoles` doubles, `c_re`, `c_im` to `npoles * n` doubles, and
 * `out` to writable storage for one handle. The handle must be released with `vnls_soliton_free`.
 */
enum VnlsStatus vnls_soliton_new(uintptr_t n,
                                 int32_t kappa,
                                 uintptr_t npoles,
                                 const double *mu_re,
                                 const double *mu_im,
                                 const double *c_re,
                                 const double *c_im,
                                 struct VnlsSoliton **out);

/**
 * Releases a soliton handle. Null is ignored.
 *
 * # Safety
 * `h` must be null or a handle from `vnls_soliton_new` that has not been freed.
 */
void vnls_soliton_free(struct VnlsSoliton *h);

/**
 * Number of field components, or 0 for a null handle.
 *
 * # Safety
 * `h` must be null or a live soliton handle.
 */
uintptr_t vnls_soliton_ncomp(const struct VnlsSoliton *h);

/**
 * Evaluates u(x, t) into `re[0..len]`, `im[0..len]`; `len` must be at least the component count.
 *
 * # Safety
 * `h` must be a live soliton handle; `re` and `im` must point to `len` writable doubles.
 */
enum VnlsStatus vnls_soliton_eval(const struct VnlsSoliton *h,
                                  double x,
                                  double t,
                                  double *re,
                                  double *im,
                                  uintptr_t len);

/**
 * Random lattice state with entries of modulus at most `amplitude`, seeded deterministically.
 * `defect_site` is a 0-based site index, or negative for no defect.
 *
 * # Safety
 * `out` must point to writable storage for one handle, released with `vnls_lattice_free`.
 */
enum VnlsStatus vnls_lattice_new_random(uintptr_t nsites,
                                        uintptr_t ncomp,
                                        double amplitude,
                                        int64_t defect_site,
                                        uint64_t seed,
                                        struct VnlsLattice **out);

/**
 * Releases a lattice handle. Null is ignored.
 *
 * # Safety
 * `h` must be null or a handle from `vnls_lattice_new_random` that has not been freed.
 */
void vnls_lattice_free(struct VnlsLattice *h);

/**
 * Advances the state by `steps` RK4 steps of size `dt`. `printed_form` nonzero selects the
 * equations of motion exactly as printed instead of the corrected ones. On error the state is
 * left at the last good step.
 *
 * # Safety
 * `h` must be a live lattice handle.
 */
enum VnlsStatus vnls_lattice_step(struct VnlsLattice *h,
                                  double dt,
                                  uintptr_t steps,
                                  int32_t printed_form);

/**
 * Writes the three conserved charges I1, I2, I3 into `re[0..3]`, `im[0..3]`.
 *
 * # Safety
 * `h` must be a live lattice handle; `re` and `im` must point to 3 writable doubles each.
 */
enum VnlsStatus vnls_lattice_charges(const struct VnlsLattice *h, double *re, double *im);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VNLS_H */

#ifndef OFO_RECSYS_H
#define OFO_RECSYS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum OfoStatus {
  OFO_STATUS_OK = 0,
  OFO_STATUS_NULL_POINTER = 1,
  OFO_STATUS_INVALID_ARGUMENT = 2,
  OFO_STATUS_DIMENSION_MISMATCH = 3,
  OFO_STATUS_NUMERICAL = 4,
  OFO_STATUS_CONFIG = 5,
  OFO_STATUS_IO = 6,
  OFO_STATUS_PANIC = 7,
} OfoStatus;

// Clicking behaviour of a single user.
typedef enum OfoClickBehaviour {
  // Engaged by extreme content aligned with the opinion.
  OFO_CLICK_BEHAVIOUR_EXTREMITY = 0,
  // Engaged by content close to the opinion.
  OFO_CLICK_BEHAVIOUR_PROXIMITY = 1,
} OfoClickBehaviour;

// Kalman filter over the entries of the steady-state sensitivity.
typedef struct OfoFilter OfoFilter;

// Opinion dynamics with their clicking behaviours and current opinions.
typedef struct OfoPlatform OfoPlatform;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` as a
// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
// message length in bytes (excluding the terminator); 0 when no error has
// been recorded.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t ofo_last_error_message(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *ofo_version(void);

// Click probability of one user shown position `p` while holding opinion `x`.
//
// # Safety
// `out` must be null or point to a writable `double`.
enum OfoStatus ofo_click_probability(enum OfoClickBehaviour behaviour,
                                     double p,
                                     double x,
                                     double *out);

// Builds a platform of `n` users. `adjacency` is `n * n` row-major; the
// other arrays have length `n`. The parameters are validated (row sums at
// most one, susceptibilities in range, stable dynamics).
//
// # Safety
// Array pointers must reference the stated number of `double`s (or
// `behaviours` entries); `out` must point to writable storage for a handle.
enum OfoStatus ofo_platform_new(size_t n,
                                const double *adjacency,
                                const double *gamma_p,
                                const double *gamma_d,
                                const double *influence,
                                const enum OfoClickBehaviour *behaviours,
                                const double *x0,
                                struct OfoPlatform **out);

// Releases a platform handle. Null is ignored.
//
// # Safety
// `handle` must be null or a pointer returned by `ofo_platform_new` that
// has not been freed.
void ofo_platform_free(struct OfoPlatform *handle);

// Number of users, or 0 for a null handle.
//
// # Safety
// `handle` must be null or a live platform handle.
size_t ofo_platform_users(const struct OfoPlatform *handle);

// Advances the opinions one step under positions `p` (length `n`).
//
// # Safety
// `handle` must be a live platform handle and `p` must reference `len`
// `double`s.
enum OfoStatus ofo_platform_step(struct OfoPlatform *handle, const double *p, size_t len);

// Copies the current opinions into `out` (length `n`).
//
// # Safety
// `handle` must be a live platform handle and `out` must reference `len`
// writable `double`s.
enum OfoStatus ofo_platform_opinions(const struct OfoPlatform *handle, double *out, size_t len);

// Steady-state opinions reached under constant positions `p`.
//
// # Safety
// `p` and `out` must each reference `len` `double`s.
enum OfoStatus ofo_platform_steady_state(const struct OfoPlatform *handle,
                                         const double *p,
                                         double *out,
                                         size_t len);

// Sensitivity of the steady state to the positions, `n * n` row-major.
//
// # Safety
// `out` must reference `len` writable `double`s.
enum OfoStatus ofo_platform_sensitivity(const struct OfoPlatform *handle, double *out, size_t len);

// Creates a sensitivity filter for `n` users with the given process-noise
// divisor (10 is the usual choice).
//
// # Safety
// `out` must point to writable storage for a handle.
enum OfoStatus ofo_filter_new(size_t n, double tuning_divisor, struct OfoFilter **out);

// Releases a filter handle. Null is ignored.
//
// # Safety
// `handle` must be null or a pointer returned by `ofo_filter_new` that has
// not been freed.
void ofo_filter_free(struct OfoFilter *handle);

// Feeds one pair of increments: opinion change `delta_x` and position
// change `delta_p`, both of length `n`. Retunes the noise levels and runs a
// measurement update.
//
// # Safety
// `handle` must be a live filter handle; both arrays must reference `len`
// `double`s.
enum OfoStatus ofo_filter_observe(struct OfoFilter *handle,
                                  const double *delta_x,
                                  const double *delta_p,
                                  size_t len);

// Current sensitivity estimate, `n * n` row-major.
//
// # Safety
// `out` must reference `len` writable `double`s.
enum OfoStatus ofo_filter_sensitivity(const struct OfoFilter *handle, double *out, size_t len);

// Current process and measurement noise levels.
//
// # Safety
// `sigma_q` and `sigma_r` must point to writable `double`s.
enum OfoStatus ofo_filter_noise(const struct OfoFilter *handle, double *sigma_q, double *sigma_r);

// Runs the configured method comparison from a TOML configuration string
// (empty for defaults) and writes the result CSVs into `out_dir`.
//
// # Safety
// Both arguments must be valid NUL-terminated strings.
enum OfoStatus ofo_run_compare(const char *config_toml, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OFO_RECSYS_H */

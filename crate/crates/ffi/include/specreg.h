#ifndef SPECREG_H
#define SPECREG_H

#include <stddef.h>
#include <stdint.h>

typedef enum SpecregStatus {
  SPECREG_STATUS_OK = 0,
  SPECREG_STATUS_NULL_POINTER = 1,
  SPECREG_STATUS_INVALID_UTF8 = 2,
  SPECREG_STATUS_INVALID_INPUT = 3,
  SPECREG_STATUS_DOMAIN = 4,
  SPECREG_STATUS_BASIS_MISMATCH = 5,
  SPECREG_STATUS_STRUCTURE = 6,
  SPECREG_STATUS_NO_CONVERGENCE = 7,
  SPECREG_STATUS_FIT_REFUSED = 8,
  SPECREG_STATUS_IO = 9,
  SPECREG_STATUS_PANIC = 10,
} SpecregStatus;

// Filter method bound to an operator norm.
typedef struct SpecregFilter SpecregFilter;

// Index function κ.
typedef struct SpecregIndexFn SpecregIndexFn;

// Diagonal operator T*T.
typedef struct SpecregOperator SpecregOperator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length without the NUL.
//
// # Safety
// `buf` must be valid for `len` bytes or null.
size_t specreg_last_error(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *specreg_version(void);

// Parses an index function from JSON, e.g. `{"kind":"power","nu":0.5}`.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum SpecregStatus specreg_index_fn_from_json(const char *json, struct SpecregIndexFn **out);

// # Safety
// `h` must come from `specreg_index_fn_from_json` or be null.
void specreg_index_fn_free(struct SpecregIndexFn *h);

// κ(t)
//
// # Safety
// `h` must be a live handle; `out` must be writable.
enum SpecregStatus specreg_index_fn_eval(const struct SpecregIndexFn *h, double t, double *out);

// Θ_κ⁻¹(y)
//
// # Safety
// `h` must be a live handle; `out` must be writable.
enum SpecregStatus specreg_index_fn_theta_inverse(const struct SpecregIndexFn *h,
                                                  double y,
                                                  double *out);

// ψ_κ(t)
//
// # Safety
// `h` must be a live handle; `out` must be writable.
enum SpecregStatus specreg_index_fn_psi(const struct SpecregIndexFn *h, double t, double *out);

// Parses a filter descriptor, e.g. `{"method":"landweber","mu_step":0.9}`, for ‖T*T‖ = `norm_tt`.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum SpecregStatus specreg_filter_from_json(const char *json,
                                            double norm_tt,
                                            struct SpecregFilter **out);

// # Safety
// `h` must come from `specreg_filter_from_json` or be null.
void specreg_filter_free(struct SpecregFilter *h);

// r_α(λ)
//
// # Safety
// `h` must be a live handle; `out` must be writable.
enum SpecregStatus specreg_filter_r(const struct SpecregFilter *h,
                                    double alpha,
                                    double lambda,
                                    double *out);

// q_α(λ)
//
// # Safety
// `h` must be a live handle; `out` must be writable.
enum SpecregStatus specreg_filter_q(const struct SpecregFilter *h,
                                    double alpha,
                                    double lambda,
                                    double *out);

// Builds an operator from `n` nonincreasing eigenvalues and their multiplicities.
//
// # Safety
// `eigenvalues` and `multiplicities` must be valid for `n` elements; `out` must be writable.
enum SpecregStatus specreg_operator_new(const double *eigenvalues,
                                        const size_t *multiplicities,
                                        size_t n,
                                        struct SpecregOperator **out);

// # Safety
// `h` must come from `specreg_operator_new` or be null.
void specreg_operator_free(struct SpecregOperator *h);

// Number of coefficient slots (sum of multiplicities).
//
// # Safety
// `h` must be a live handle; `out` must be writable.
enum SpecregStatus specreg_operator_dim(const struct SpecregOperator *h, size_t *out);

// ‖r_α(T*T)x‖
//
// # Safety
// Handles must be live; `x` valid for `n` elements; `out` writable.
enum SpecregStatus specreg_bias(const struct SpecregFilter *filter,
                                double alpha,
                                const struct SpecregOperator *op,
                                const double *x,
                                size_t n,
                                double *out);

// trace(R_α* R_α) = Σ mult · q_α(λ)² λ
//
// # Safety
// Handles must be live; `out` writable.
enum SpecregStatus specreg_variance_trace(const struct SpecregFilter *filter,
                                          double alpha,
                                          const struct SpecregOperator *op,
                                          double *out);

// sup over ‖ξ‖ ≤ δ of ‖R_α(Tx + ξ) − x‖. When `witness` is nonnull it receives
// the maximizing ξ (`n` entries).
//
// # Safety
// Handles must be live; `x` valid for `n` elements; `value` writable;
// `witness` null or writable for `n` elements.
enum SpecregStatus specreg_worst_case(const struct SpecregFilter *filter,
                                      double alpha,
                                      const struct SpecregOperator *op,
                                      const double *x,
                                      size_t n,
                                      double delta,
                                      double *value,
                                      double *witness);

// sup_λ ‖E_λ x‖ / κ(λ); +∞ when κ vanishes where x has mass.
//
// # Safety
// Handles must be live; `x` valid for `n` elements; `out` writable.
enum SpecregStatus specreg_xtk_norm(const struct SpecregOperator *op,
                                    const struct SpecregIndexFn *kappa,
                                    const double *x,
                                    size_t n,
                                    double *out);

// Runs an experiment config (JSON text) and returns the report as JSON in
// `report_out`, to be released with `specreg_string_free`. `passed` receives
// 1 when every verdict passed, 0 otherwise. Nothing is written to disk.
//
// # Safety
// `config` must be a NUL-terminated string; `report_out` and `passed` writable.
enum SpecregStatus specreg_run_experiment_json(const char *config,
                                               char **report_out,
                                               int32_t *passed);

// Releases a string returned by this library.
//
// # Safety
// `s` must come from this library or be null.
void specreg_string_free(char *s);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SPECREG_H */

#ifndef GRAVDEC_H
#define GRAVDEC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GravdecStatus {
  GRAVDEC_STATUS_OK = 0,
  GRAVDEC_STATUS_NULL_POINTER = 1,
  GRAVDEC_STATUS_INVALID_ARGUMENT = 2,
  GRAVDEC_STATUS_NUMERICAL = 3,
  GRAVDEC_STATUS_PANIC = 4,
} GravdecStatus;

typedef enum GravdecKernel {
  GRAVDEC_KERNEL_NORMALIZED = 0,
  GRAVDEC_KERNEL_RAW = 1,
} GravdecKernel;

typedef enum GravdecMethod {
  // Closed form when available, quadrature otherwise.
  GRAVDEC_METHOD_AUTO = 0,
  GRAVDEC_METHOD_CLOSED_FORM = 1,
  GRAVDEC_METHOD_QUADRATURE = 2,
} GravdecMethod;

typedef enum GravdecRegime {
  GRAVDEC_REGIME_FULLY_COHERENT = 0,
  GRAVDEC_REGIME_WEAK_DECOHERENCE = 1,
  GRAVDEC_REGIME_TRANSITION_REGIME = 2,
  GRAVDEC_REGIME_RAPID_DECOHERENCE = 3,
  GRAVDEC_REGIME_CLASSICAL_LIMIT = 4,
} GravdecRegime;

// CSL collapse parameters.
typedef struct GravdecCsl GravdecCsl;

// Rate model handle.
typedef struct GravdecModel GravdecModel;

// Result of a rate evaluation.
typedef struct GravdecRate {
  double gamma_hz;
  double abs_error_hz;
  // 1 when the rate came out negative.
  int32_t negative_rate_warning;
  // 1 for the closed form, 0 for quadrature.
  int32_t closed_form;
} GravdecRate;

// Summary of a stochastic ensemble run on the two-site lattice.
typedef struct GravdecEnsembleSummary {
  double gamma_csl_hz;
  double final_coherence_abs;
  double lindblad_coherence_abs;
  double max_trace_distance;
  double trace_distance_bound;
} GravdecEnsembleSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty when none. The
// pointer stays valid until the next failing call on the same thread.
const char *gravdec_last_error_message(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from a gravdec function and not be freed twice.
void gravdec_string_free(char *s);

// Library version as a static NUL-terminated string.
const char *gravdec_version(void);

// Model from a named preset; "paper-electron" is the calibrated electron
// at 1e-2 Hz.
//
// # Safety
// `name` must be a NUL-terminated string and `out_model` a valid pointer.
enum GravdecStatus gravdec_model_new_preset(const char *name, struct GravdecModel **out_model);

// Model with an exponential spectrum I0 exp(-p/p_c). SI inputs except
// `i0` (m^-5) and `p_c` (m^-1).
//
// # Safety
// `out_model` must be a valid pointer.
enum GravdecStatus gravdec_model_new_exponential(double m_f,
                                                 double sigma0,
                                                 double dx,
                                                 double volume,
                                                 double i0,
                                                 double p_c,
                                                 enum GravdecKernel kernel,
                                                 struct GravdecModel **out_model);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from a `gravdec_model_new*` call and not be reused.
void gravdec_model_free(struct GravdecModel *model);

// Changes the branch separation (m).
//
// # Safety
// `model` must be a live handle.
enum GravdecStatus gravdec_model_set_dx(struct GravdecModel *model, double dx);

// Changes the constituent mass (kg).
//
// # Safety
// `model` must be a live handle.
enum GravdecStatus gravdec_model_set_mass(struct GravdecModel *model, double m_f);

// Sets the quadrature relative tolerance.
//
// # Safety
// `model` must be a live handle.
enum GravdecStatus gravdec_model_set_rel_tol(struct GravdecModel *model, double rel_tol);

// Single-constituent decoherence rate.
//
// # Safety
// `model` must be a live handle and `out_rate` a valid pointer.
enum GravdecStatus gravdec_model_rate(const struct GravdecModel *model,
                                      enum GravdecMethod method,
                                      struct GravdecRate *out_rate);

// Sweep over log grids of total mass (kg) and constituent number; writes
// the CSV table (`M_kg,N,gamma_hz,tau_s,regime,on_physical_line`) to
// `out_csv`, to be released with [`gravdec_string_free`].
//
// # Safety
// `model` must be a live handle and `out_csv` a valid pointer.
enum GravdecStatus gravdec_sweep_csv(const struct GravdecModel *model,
                                     double m_min,
                                     double m_max,
                                     size_t m_points,
                                     double n_min,
                                     double n_max,
                                     size_t n_points,
                                     double horizon_s,
                                     char **out_csv);

// rho12(t) = rho12(0) exp(-gamma t).
//
// # Safety
// Output pointers must be valid.
enum GravdecStatus gravdec_evolve_coherence(double re0,
                                            double im0,
                                            double gamma_hz,
                                            double t_s,
                                            double *out_re,
                                            double *out_im);

// Qubit state (rho11, rho22, rho12) after time `t_s` under rate `gamma_hz`.
//
// # Safety
// `state` must point to four doubles {rho11, rho22, re rho12, im rho12};
// it is overwritten with the evolved state.
enum GravdecStatus gravdec_evolve_populations(double *state, double gamma_hz, double t_s);

// N^2 gamma1.
double gravdec_amplified_rate(double n_constituents, double gamma1_hz);

// Regime label for an amplified rate against a horizon in seconds.
//
// # Safety
// `out_regime` must be a valid pointer.
enum GravdecStatus gravdec_classify_regime(double gamma_n_hz,
                                           double horizon_s,
                                           enum GravdecRegime *out_regime);

// Static human-readable label, e.g. "Transition regime".
const char *gravdec_regime_label(enum GravdecRegime regime);

// Decoherence time of an N-constituent composite of total mass `m_kg`,
// using the per-constituent rate of `model`.
//
// # Safety
// `model` must be a live handle and `out_tau_s` a valid pointer.
enum GravdecStatus gravdec_composite_tau(const struct GravdecModel *model,
                                         double m_kg,
                                         double n_constituents,
                                         double *out_tau_s);

// Angular-identity report as a JSON array, released with
// [`gravdec_string_free`].
//
// # Safety
// `out_json` must be a valid pointer.
enum GravdecStatus gravdec_verify_json(size_t n_theta,
                                       size_t n_phi,
                                       size_t n_directions,
                                       uint64_t seed,
                                       char **out_json);

// CSL parameters by preset name ("grw", "adler_a", "adler_b").
//
// # Safety
// `name` must be a NUL-terminated string and `out_csl` a valid pointer.
enum GravdecStatus gravdec_csl_new_preset(const char *name, struct GravdecCsl **out_csl);

// CSL parameters from lambda (1/s), r_c (m) and m0 (kg).
//
// # Safety
// `out_csl` must be a valid pointer.
enum GravdecStatus gravdec_csl_new(double lambda,
                                   double r_c,
                                   double m0,
                                   struct GravdecCsl **out_csl);

// Releases CSL parameters. Null is ignored.
//
// # Safety
// `csl` must come from a `gravdec_csl_new*` call and not be reused.
void gravdec_csl_free(struct GravdecCsl *csl);

// Reads back (lambda, r_c, m0).
//
// # Safety
// `csl` must be a live handle; output pointers must be valid.
enum GravdecStatus gravdec_csl_params(const struct GravdecCsl *csl,
                                      double *out_lambda,
                                      double *out_r_c,
                                      double *out_m0);

// Two-branch coherence decay rate for a particle of `mass` (kg) at
// separation `d` (m).
//
// # Safety
// `csl` must be a live handle and `out_rate` a valid pointer.
enum GravdecStatus gravdec_csl_two_site_rate(const struct GravdecCsl *csl,
                                             double mass,
                                             double d,
                                             double *out_rate);

// Stochastic ensemble on the two-site lattice compared with the Lindblad
// solution, starting from the equal superposition.
//
// # Safety
// `csl` must be a live handle and `out_summary` a valid pointer.
enum GravdecStatus gravdec_csl_ensemble(const struct GravdecCsl *csl,
                                        double mass,
                                        double d,
                                        size_t n_traj,
                                        double t_end_s,
                                        double dt_s,
                                        uint64_t seed,
                                        struct GravdecEnsembleSummary *out_summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRAVDEC_H */

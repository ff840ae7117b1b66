#ifndef CMOE_H
#define CMOE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Expert mean function selector for identifiability checks.
 */
typedef enum CmoeExpert {
  CMOE_EXPERT_TANH = 0,
  CMOE_EXPERT_SIGMOID = 1,
  CMOE_EXPERT_GELU = 2,
  CMOE_EXPERT_RELU = 3,
  /*
   `tanh(eta'x + b)`.
   */
  CMOE_EXPERT_AFFINE_TANH = 4,
} CmoeExpert;

/*
 Benchmark scenario selector.
 */
typedef enum CmoeScenario {
  /*
   Laplace pre-trained expert.
   */
  CMOE_SCENARIO_DISTINGUISHABLE = 1,
  /*
   Gaussian experts, prompt mean parameter drifting towards the pre-trained one.
   */
  CMOE_SCENARIO_ETA_DRIFT = 2,
  /*
   Gaussian experts, prompt variance drifting towards the pre-trained one.
   */
  CMOE_SCENARIO_NU_DRIFT = 3,
} CmoeScenario;

/*
 Result codes. Zero is success.
 */
typedef enum CmoeStatus {
  CMOE_STATUS_OK = 0,
  CMOE_STATUS_NULL_POINTER = 1,
  CMOE_STATUS_DIMENSION = 2,
  CMOE_STATUS_DOMAIN = 3,
  CMOE_STATUS_INPUT = 4,
  CMOE_STATUS_UNDERFLOW = 5,
  CMOE_STATUS_IO = 6,
  CMOE_STATUS_FORMAT = 7,
  CMOE_STATUS_PANIC = 8,
} CmoeStatus;

typedef struct CmoeDataset CmoeDataset;

typedef struct CmoeFit CmoeFit;

/*
 Model description plus the scenario's true parameters.
 */
typedef struct CmoeModel CmoeModel;

/*
 Caller-owned buffers receiving a parameter vector.
 */
typedef struct CmoeParamsOut {
  double *beta;
  double *tau;
  double *eta;
  double *nu;
} CmoeParamsOut;

/*
 Borrowed view of gate and prompt parameters. `beta` holds `d` values and
 `eta` holds `q` values for the model it is used with.
 */
typedef struct CmoeParams {
  const double *beta;
  double tau;
  const double *eta;
  double nu;
} CmoeParams;

/*
 EM settings exposed over the ABI. Fields not listed keep library defaults.
 */
typedef struct CmoeEmOptions {
  size_t max_iter;
  double rel_tol;
  double init_perturb_scale;
  size_t restarts;
} CmoeEmOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the most recent failure on this thread, or null. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *cmoe_last_error(void);

/*
 Library version as a static nul-terminated string.
 */
const char *cmoe_version(void);

/*
 Model and truth of a benchmark scenario at sample size `n` (the drift
 scenarios depend on `n`).

 # Safety
 `out` must be a valid pointer; on success it receives a handle to free
 with [`cmoe_model_free`].
 */
enum CmoeStatus cmoe_model_from_scenario(enum CmoeScenario scenario,
                                         size_t d,
                                         size_t n,
                                         struct CmoeModel **out_model);

/*
 # Safety
 `model` must come from this library and not be used afterwards. Null is ignored.
 */
void cmoe_model_free(struct CmoeModel *model);

/*
 Covariate dimension `d` and prompt parameter dimension `q`.

 # Safety
 All pointers must be valid.
 */
enum CmoeStatus cmoe_model_dims(const struct CmoeModel *model, size_t *d, size_t *q);

/*
 Copy the true parameters into caller buffers (`d` and `q` values).

 # Safety
 `model` must be valid; the buffers must have the sizes given by [`cmoe_model_dims`].
 */
enum CmoeStatus cmoe_model_truth(const struct CmoeModel *model, struct CmoeParamsOut dst);

/*
 `log p(y | x)` under `params`; `x` holds `d` values.

 # Safety
 Pointers must be valid and sized for the model.
 */
enum CmoeStatus cmoe_log_density(const struct CmoeModel *model,
                                 const struct CmoeParams *params,
                                 const double *x,
                                 double y,
                                 double *out_value);

/*
 Gradient of `log p(y | x)` in `(beta, tau, eta, log nu)`; `out_grad`
 receives `d + 1 + q + 1` values.

 # Safety
 Pointers must be valid and sized for the model.
 */
enum CmoeStatus cmoe_log_density_grad(const struct CmoeModel *model,
                                      const struct CmoeParams *params,
                                      const double *x,
                                      double y,
                                      double *out_grad);

/*
 Gate weight `logistic(beta'x + tau)` for `d` values in `beta` and `x`.

 # Safety
 Pointers must be valid for `d` reads.
 */
enum CmoeStatus cmoe_gating_weight(const double *x,
                                   const double *beta,
                                   size_t d,
                                   double tau,
                                   double *out_value);

/*
 Draw `n` observations from the model's true parameters.

 # Safety
 `model` and `out_data` must be valid; free the result with [`cmoe_dataset_free`].
 */
enum CmoeStatus cmoe_sample(const struct CmoeModel *model,
                            size_t n,
                            uint64_t seed,
                            struct CmoeDataset **out_data);

/*
 Dataset from `n` rows of row-major covariates (`n * d` values) and `n` responses.

 # Safety
 Arrays must hold the stated number of values.
 */
enum CmoeStatus cmoe_dataset_new(size_t d,
                                 size_t n,
                                 const double *x,
                                 const double *y,
                                 struct CmoeDataset **out_data);

/*
 Number of observations; 0 for a null handle.

 # Safety
 `data` must be null or valid.
 */
size_t cmoe_dataset_len(const struct CmoeDataset *data);

/*
 Copy covariates (`n * d` values, row-major) and responses (`n` values).
 Either buffer may be null to skip it.

 # Safety
 Non-null buffers must have room for the values.
 */
enum CmoeStatus cmoe_dataset_copy(const struct CmoeDataset *data, double *x, double *y);

/*
 # Safety
 `data` must come from this library and not be used afterwards. Null is ignored.
 */
void cmoe_dataset_free(struct CmoeDataset *data);

/*
 Library defaults for EM.
 */
struct CmoeEmOptions cmoe_em_options_default(void);

/*
 Fit gate and prompt parameters by EM, starting near the model's truth.

 # Safety
 Handles and `out_fit` must be valid; free the result with [`cmoe_fit_free`].
 */
enum CmoeStatus cmoe_em_fit(const struct CmoeModel *model,
                            const struct CmoeDataset *data,
                            struct CmoeEmOptions options,
                            uint64_t seed,
                            struct CmoeFit **out_fit);

/*
 # Safety
 `fit` and the buffers must be valid and sized for the model.
 */
enum CmoeStatus cmoe_fit_estimate(const struct CmoeFit *fit, struct CmoeParamsOut dst);

/*
 EM iterations performed and whether the tolerance was met.

 # Safety
 Pointers must be valid.
 */
enum CmoeStatus cmoe_fit_summary(const struct CmoeFit *fit, size_t *iterations, bool *converged);

/*
 Copy up to `cap` entries of the average log-likelihood trace into `buf`
 and report the full trace length in `len`. Pass `cap = 0` to query the length.

 # Safety
 `buf` must have room for `cap` values; `len` must be valid.
 */
enum CmoeStatus cmoe_fit_trace(const struct CmoeFit *fit, double *buf, size_t cap, size_t *len);

/*
 # Safety
 `fit` must come from this library and not be used afterwards. Null is ignored.
 */
void cmoe_fit_free(struct CmoeFit *fit);

/*
 Loss for distinguishable pre-trained experts between `g` and `g_star`.

 # Safety
 Pointers must be valid and sized for the model.
 */
enum CmoeStatus cmoe_loss_d1(const struct CmoeModel *model,
                             const struct CmoeParams *g,
                             const struct CmoeParams *g_star,
                             double *out_value);

/*
 Drift-aware loss, using the model's pre-trained `eta0` and `nu0`.

 # Safety
 Pointers must be valid and sized for the model.
 */
enum CmoeStatus cmoe_loss_d2(const struct CmoeModel *model,
                             const struct CmoeParams *g,
                             const struct CmoeParams *g_star,
                             double *out_value);

/*
 Identifiability checks for an expert mean. `min_sigma` and `pass` each
 receive four entries: first-order gating, gradient product, mixed
 second order, distinguishability.

 # Safety
 `min_sigma` and `pass` must have room for four values.
 */
enum CmoeStatus cmoe_check_ident(enum CmoeExpert expert,
                                 size_t d,
                                 size_t samples,
                                 uint64_t seed,
                                 double threshold,
                                 double *min_sigma,
                                 bool *pass);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CMOE_H */

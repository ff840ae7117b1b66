//! Maximum likelihood for the prompt and gate by EM with a quasi-Newton M-step.
//!
//! All likelihood values are averaged over observations: `(1/n) sum_i log p`.
//! The variance is optimized as `log nu`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_dim, Error, Result};
use crate::model::{
    dot, log_logistic, logistic, point_eval_with_f0, ExpertMean, ModelSpec, PromptParams,
};
use crate::optim::{minimize_box, project, projected_gradient, BfgsOptions};
use crate::sampler::Dataset;
use crate::seed::derive_seed;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Closed interval for one block of parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }
}

/// The compact parameter set, given per block and expanded per coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamBox {
    pub beta: Interval,
    pub tau: Interval,
    pub eta: Interval,
    pub log_nu: Interval,
}

impl Default for ParamBox {
    fn default() -> Self {
        ParamBox {
            beta: Interval::new(-10.0, 10.0),
            tau: Interval::new(-10.0, 10.0),
            eta: Interval::new(-10.0, 10.0),
            log_nu: Interval::new(1e-6f64.ln(), 10f64.ln()),
        }
    }
}

impl ParamBox {
    /// Coordinatewise `(lower, upper)` in the `(beta, tau, eta, log nu)` layout.
    pub fn bounds(&self, d: usize, q: usize) -> (Vec<f64>, Vec<f64>) {
        let mut lo = Vec::with_capacity(d + q + 2);
        let mut hi = Vec::with_capacity(d + q + 2);
        let mut push = |iv: Interval, k: usize| {
            lo.extend(std::iter::repeat_n(iv.lo, k));
            hi.extend(std::iter::repeat_n(iv.hi, k));
        };
        push(self.beta, d);
        push(self.tau, 1);
        push(self.eta, q);
        push(self.log_nu, 1);
        (lo, hi)
    }

    pub fn contains(&self, p: &PromptParams) -> bool {
        let inside = |iv: Interval, v: f64| v >= iv.lo && v <= iv.hi;
        p.beta.iter().all(|b| inside(self.beta, *b))
            && inside(self.tau, p.tau)
            && p.eta.iter().all(|e| inside(self.eta, *e))
            && inside(self.log_nu, p.nu.ln())
    }

    fn validate(&self) -> Result<()> {
        for (name, iv) in [
            ("beta", self.beta),
            ("tau", self.tau),
            ("eta", self.eta),
            ("log_nu", self.log_nu),
        ] {
            if !(iv.lo <= iv.hi) {
                return Err(Error::Input(format!("empty box interval for {name}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop when the average log-likelihood changes by less than this.
    pub rel_tol: f64,
    /// Standard deviation of the initial perturbation around the hint.
    pub init_perturb_scale: f64,
    pub mstep: BfgsOptions,
    pub param_box: ParamBox,
    /// Number of EM starts; the best log-likelihood wins, ties to the lowest index.
    pub restarts: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iter: 500,
            rel_tol: 1e-8,
            init_perturb_scale: 0.1,
            mstep: BfgsOptions::default(),
            param_box: ParamBox::default(),
            restarts: 1,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || !(self.mstep.grad_tol > 0.0) {
            return Err(Error::Input("EM tolerances must be > 0".into()));
        }
        if self.init_perturb_scale < 0.0 {
            return Err(Error::Input("perturbation scale must be >= 0".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Input("restarts must be >= 1".into()));
        }
        self.param_box.validate()
    }

    /// Short SHA-256 digest of the JSON form, recorded alongside fits.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// EM output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub estimate: PromptParams,
    /// Average log-likelihood at the start and after every iteration.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    /// The log-likelihood change fell below tolerance before `max_iter`.
    pub converged: bool,
    /// M-steps that ended on a failed line search.
    pub mstep_failures: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl FitResult {
    pub fn best_loglik(&self) -> f64 {
        self.loglik_trace
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn check_data(spec: &ModelSpec, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Input("dataset is empty".into()));
    }
    check_dim("dataset covariate dimension", spec.d, data.d())
}

/// Cached `log f0(y_i | h0(x_i, eta0), nu0)`; constant across EM iterations.
fn pretrained_log_densities(spec: &ModelSpec, data: &Dataset) -> Vec<f64> {
    data.rows()
        .map(|(x, y)| spec.pretrained_log_density(x, y))
        .collect()
}

/// Average log-likelihood and responsibilities in one pass.
fn loglik_and_resp(
    spec: &ModelSpec,
    params: &PromptParams,
    data: &Dataset,
    log_f0: &[f64],
    resp: &mut [f64],
) -> f64 {
    let mut total = 0.0;
    for (i, (x, y)) in data.rows().enumerate() {
        let ev = point_eval_with_f0(spec, params, x, y, log_f0[i]);
        total += ev.log_p;
        resp[i] = ev.resp;
    }
    total / data.n() as f64
}

/// `(1/n) sum_i log p_G(y_i | x_i)`. Returns `-inf` when some density is zero.
pub fn log_likelihood(spec: &ModelSpec, params: &PromptParams, data: &Dataset) -> Result<f64> {
    check_data(spec, data)?;
    spec.check_params(params)?;
    let mut total = 0.0;
    for (x, y) in data.rows() {
        let ev = point_eval_with_f0(spec, params, x, y, spec.pretrained_log_density(x, y));
        if ev.log_p == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        total += ev.log_p;
    }
    Ok(total / data.n() as f64)
}

/// Posterior probability that each response came from the prompt expert.
pub fn e_step(spec: &ModelSpec, params: &PromptParams, data: &Dataset) -> Result<Vec<f64>> {
    check_data(spec, data)?;
    spec.check_params(params)?;
    Ok(data
        .rows()
        .map(|(x, y)| {
            point_eval_with_f0(spec, params, x, y, spec.pretrained_log_density(x, y)).resp
        })
        .collect())
}

/// Average expected complete-data log-likelihood `Q(G)` for fixed responsibilities.
pub fn expected_complete_loglik(
    spec: &ModelSpec,
    params: &PromptParams,
    data: &Dataset,
    resp: &[f64],
) -> Result<f64> {
    check_data(spec, data)?;
    spec.check_params(params)?;
    check_dim("responsibilities", data.n(), resp.len())?;
    let log_f0 = pretrained_log_densities(spec, data);
    let mut total = 0.0;
    for (i, (x, y)) in data.rows().enumerate() {
        let ev = point_eval_with_f0(spec, params, x, y, log_f0[i]);
        let r = resp[i];
        total += r * (log_logistic(ev.logit) + ev.log_f)
            + (1.0 - r) * (log_logistic(-ev.logit) + log_f0[i]);
    }
    Ok(total / data.n() as f64)
}

/// Gradient of `Q` in the `(beta, tau, eta, log nu)` layout.
pub fn expected_complete_loglik_grad(
    spec: &ModelSpec,
    params: &PromptParams,
    data: &Dataset,
    resp: &[f64],
) -> Result<Vec<f64>> {
    check_data(spec, data)?;
    spec.check_params(params)?;
    check_dim("responsibilities", data.n(), resp.len())?;
    let d = spec.d;
    let q = spec.q();
    let mut g = vec![0.0; d + q + 2];
    let act = spec.prompt_mean.activation();
    for (i, (x, y)) in data.rows().enumerate() {
        let r = resp[i];
        let lambda = logistic(dot(&params.beta, x) + params.tau);
        for (gj, xj) in g[..d].iter_mut().zip(x) {
            *gj += (r - lambda) * xj;
        }
        g[d] += r - lambda;
        let z = spec.prompt_mean.inner(&params.eta, x);
        let resid = y - act.value(z);
        let c = r * resid / params.nu * act.d1(z);
        for u in 0..q {
            g[d + 1 + u] += c * ExpertMean::feature(x, u);
        }
        g[d + 1 + q] += r * (0.5 * resid * resid / params.nu - 0.5);
    }
    let n = data.n() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    Ok(g)
}

/// Result of one M-step.
#[derive(Debug, Clone, PartialEq)]
pub struct MStepOutcome {
    pub params: PromptParams,
    /// Both blocks reached the gradient tolerance (or a binding bound).
    pub converged: bool,
    pub line_search_failed: bool,
}

/// Maximize `Q` over the box.
///
/// `Q` separates into a weighted logistic regression for `(beta, tau)` and a
/// weighted Gaussian regression for `(eta, log nu)`; each block runs its own
/// BFGS. In the expert block `nu` is profiled out in closed form (clamped to
/// the box), which leaves the `eta`-gradient of `Q` unchanged.
pub fn m_step(
    spec: &ModelSpec,
    params_in: &PromptParams,
    data: &Dataset,
    resp: &[f64],
    cfg: &EmConfig,
) -> Result<MStepOutcome> {
    check_data(spec, data)?;
    spec.check_params(params_in)?;
    check_dim("responsibilities", data.n(), resp.len())?;
    Ok(m_step_unchecked(spec, params_in, data, resp, cfg))
}

fn m_step_unchecked(
    spec: &ModelSpec,
    params_in: &PromptParams,
    data: &Dataset,
    resp: &[f64],
    cfg: &EmConfig,
) -> MStepOutcome {
    let d = spec.d;
    let q = spec.q();
    let n = data.n() as f64;
    let (lower, upper) = cfg.param_box.bounds(d, q);

    // gate block
    let gate_obj = |theta: &[f64], grad: &mut [f64]| -> f64 {
        grad.iter_mut().for_each(|v| *v = 0.0);
        let (beta, tau) = (&theta[..d], theta[d]);
        let mut f = 0.0;
        for (i, (x, _)) in data.rows().enumerate() {
            let z = dot(beta, x) + tau;
            let r = resp[i];
            f -= r * log_logistic(z) + (1.0 - r) * log_logistic(-z);
            let c = logistic(z) - r;
            for (gj, xj) in grad[..d].iter_mut().zip(x) {
                *gj += c * xj;
            }
            grad[d] += c;
        }
        grad.iter_mut().for_each(|v| *v /= n);
        f / n
    };
    let mut gate0: Vec<f64> = params_in.beta.clone();
    gate0.push(params_in.tau);
    let gate = minimize_box(gate_obj, &gate0, &lower[..=d], &upper[..=d], &cfg.mstep);

    // expert block, nu profiled
    let resp_total: f64 = resp.iter().sum();
    let log_nu_bounds = (lower[d + 1 + q], upper[d + 1 + q]);
    let (eta, nu, expert_ok, expert_ls_failed) = if resp_total > 1e-12 * n {
        let act = spec.prompt_mean.activation();
        let kind = spec.prompt_mean;
        let profiled_nu = |rss: f64| -> f64 {
            let raw = (rss / resp_total).max(f64::MIN_POSITIVE);
            raw.ln().clamp(log_nu_bounds.0, log_nu_bounds.1).exp()
        };
        let expert_obj = |eta: &[f64], grad: &mut [f64]| -> f64 {
            grad.iter_mut().for_each(|v| *v = 0.0);
            let mut rss = 0.0;
            // accumulate sum r * resid * s1 * phi first, scale by 1/nu after
            for (i, (x, y)) in data.rows().enumerate() {
                let r = resp[i];
                if r == 0.0 {
                    continue;
                }
                let z = kind.inner(eta, x);
                let (h, s1, _) = act.eval3(z);
                let resid = y - h;
                rss += r * resid * resid;
                let c = r * resid * s1;
                for (u, gu) in grad.iter_mut().enumerate() {
                    *gu += c * ExpertMean::feature(x, u);
                }
            }
            let nu = profiled_nu(rss);
            grad.iter_mut().for_each(|v| *v = -*v / (nu * n));
            (resp_total * (HALF_LN_2PI + 0.5 * nu.ln()) + rss / (2.0 * nu)) / n
        };
        let eta_lo = &lower[d + 1..d + 1 + q];
        let eta_hi = &upper[d + 1..d + 1 + q];
        let m = minimize_box(expert_obj, &params_in.eta, eta_lo, eta_hi, &cfg.mstep);
        let rss: f64 = data
            .rows()
            .enumerate()
            .map(|(i, (x, y))| {
                let resid = y - act.value(kind.inner(&m.x, x));
                resp[i] * resid * resid
            })
            .sum();
        let nu = profiled_nu(rss);
        (m.x, nu, m.converged, m.line_search_failed)
    } else {
        (params_in.eta.clone(), params_in.nu, true, false)
    };

    let params = PromptParams {
        beta: gate.x[..d].to_vec(),
        tau: gate.x[d],
        eta,
        nu,
    };
    MStepOutcome {
        params,
        converged: gate.converged && expert_ok,
        line_search_failed: gate.line_search_failed || expert_ls_failed,
    }
}

fn initial_point(
    hint: &PromptParams,
    cfg: &EmConfig,
    d: usize,
    q: usize,
    seed: u64,
) -> Result<PromptParams> {
    let mut flat = hint.to_flat();
    if cfg.init_perturb_scale > 0.0 {
        let noise = Normal::new(0.0, cfg.init_perturb_scale)
            .map_err(|e| Error::Input(format!("bad perturbation scale: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        flat.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
    }
    let (lo, hi) = cfg.param_box.bounds(d, q);
    project(&mut flat, &lo, &hi);
    PromptParams::from_flat(d, q, &flat)
}

fn em_single(
    spec: &ModelSpec,
    data: &Dataset,
    log_f0: &[f64],
    start: PromptParams,
    cfg: &EmConfig,
) -> (PromptParams, Vec<f64>, usize, bool, usize) {
    let n = data.n();
    let mut resp = vec![0.0; n];
    let mut params = start;
    let mut ll = loglik_and_resp(spec, &params, data, log_f0, &mut resp);
    let mut trace = vec![ll];
    let mut best = (ll, params.clone());
    let mut converged = false;
    let mut failures = 0;
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        iterations += 1;
        let out = m_step_unchecked(spec, &params, data, &resp, cfg);
        if out.line_search_failed && !out.converged {
            failures += 1;
        }
        params = out.params;
        let ll_new = loglik_and_resp(spec, &params, data, log_f0, &mut resp);
        trace.push(ll_new);
        if ll_new > best.0 {
            best = (ll_new, params.clone());
        }
        let change = (ll_new - ll).abs();
        ll = ll_new;
        if change < cfg.rel_tol {
            converged = true;
            break;
        }
    }
    (best.1, trace, iterations, converged, failures)
}

/// Fit by EM, starting from `truth_hint` plus Gaussian noise (`log nu` perturbed
/// on the log scale). Returns the best-likelihood iterate.
pub fn em_fit(
    spec: &ModelSpec,
    data: &Dataset,
    truth_hint: &PromptParams,
    cfg: &EmConfig,
    seed: u64,
) -> Result<FitResult> {
    spec.validate()?;
    check_data(spec, data)?;
    spec.check_params(truth_hint)?;
    cfg.validate()?;
    let d = spec.d;
    let q = spec.q();
    if data.n() < d + q + 2 {
        return Err(Error::Input(format!(
            "need at least d + q + 2 = {} observations, got {}",
            d + q + 2,
            data.n()
        )));
    }
    let log_f0 = pretrained_log_densities(spec, data);
    let mut best: Option<FitResult> = None;
    for k in 0..cfg.restarts {
        let start_seed = derive_seed(seed, &[k as u64]);
        let start = initial_point(truth_hint, cfg, d, q, start_seed)?;
        let (estimate, trace, iterations, converged, failures) =
            em_single(spec, data, &log_f0, start, cfg);
        let fit = FitResult {
            estimate,
            loglik_trace: trace,
            iterations,
            converged,
            mstep_failures: failures,
            seed,
            config_hash: cfg.hash(),
        };
        let better = match &best {
            None => true,
            Some(b) => fit.best_loglik() > b.best_loglik(),
        };
        if better {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Norm of the projected `Q` gradient at `params`, used to check M-step stationarity.
pub fn projected_q_gradient_norm(
    spec: &ModelSpec,
    params: &PromptParams,
    data: &Dataset,
    resp: &[f64],
    param_box: &ParamBox,
) -> Result<f64> {
    let g = expected_complete_loglik_grad(spec, params, data, resp)?;
    // minimization convention for the projection
    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
    let (lo, hi) = param_box.bounds(spec.d, spec.q());
    let pg = projected_gradient(&params.to_flat(), &neg, &lo, &hi);
    Ok(pg.iter().map(|v| v * v).sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{log_mixture_density, Family, PretrainedSpec};
    use crate::sampler::{make_truth, sample, Scenario, ScenarioTag};

    fn small_problem(seed: u64, n: usize) -> (ModelSpec, PromptParams, Dataset) {
        let (spec, truth) =
            make_truth(&Scenario::new(ScenarioTag::DistinguishableLaplace, 2), n).unwrap();
        let data = sample(&spec, &truth, n, seed).unwrap();
        (spec, truth, data)
    }

    #[test]
    fn loglik_single_point_is_log_density() {
        let (spec, truth, data) = small_problem(1, 30);
        let one = Dataset::new(2, data.row(0).to_vec(), vec![data.y()[0]], 0).unwrap();
        let ll = log_likelihood(&spec, &truth, &one).unwrap();
        let direct = log_mixture_density(&spec, &truth, data.row(0), data.y()[0]).unwrap();
        assert_eq!(ll, direct);
    }

    #[test]
    fn loglik_invariant_to_duplication() {
        let (spec, truth, data) = small_problem(2, 40);
        let a = log_likelihood(&spec, &truth, &data).unwrap();
        let b = log_likelihood(&spec, &truth, &data.repeat_rows(2)).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn loglik_five_points_term_by_term() {
        let (spec, truth, data) = small_problem(3, 5);
        let mut sum = 0.0;
        for (x, y) in data.rows() {
            let lam = crate::model::gating_weight(x, &truth.beta, truth.tau).unwrap();
            let f0 =
                crate::model::component_density(Family::Laplace, spec.pretrained_mean(x), 0.001, y)
                    .unwrap();
            let h = crate::model::expert_mean(ExpertMean::TANH, &truth.eta, x).unwrap();
            let f = crate::model::component_density(Family::Gaussian, h, truth.nu, y).unwrap();
            sum += ((1.0 - lam) * f0 + lam * f).ln();
        }
        let ll = log_likelihood(&spec, &truth, &data).unwrap();
        assert!((ll - sum / 5.0).abs() < 1e-10, "{ll} vs {}", sum / 5.0);
    }

    #[test]
    fn identical_components_give_gate_responsibilities() {
        let spec = ModelSpec::new(
            2,
            PretrainedSpec {
                family: Family::Gaussian,
                mean: ExpertMean::TANH,
                eta0: vec![0.5, -0.5],
                nu0: 0.2,
            },
            ExpertMean::TANH,
        )
        .unwrap();
        let p = PromptParams::new(vec![0.3, 0.8], -0.4, vec![0.5, -0.5], 0.2).unwrap();
        let data = sample(&spec, &p, 50, 4).unwrap();
        let r = e_step(&spec, &p, &data).unwrap();
        for (ri, (x, _)) in r.iter().zip(data.rows()) {
            let lam = logistic(dot(&p.beta, x) + p.tau);
            assert!((ri - lam).abs() < 1e-14);
        }
    }

    #[test]
    fn responsibility_saturates_under_dominance() {
        let (spec, truth, _) = small_problem(5, 10);
        // y sits on the prompt mean, far (in Laplace scales) from the pre-trained mean
        let x = [1.0, 0.0];
        let y = (-1.0f64).tanh();
        let data = Dataset::new(2, x.to_vec(), vec![y], 0).unwrap();
        let r = e_step(&spec, &truth, &data).unwrap();
        assert!(r[0] > 1.0 - 1e-12, "{}", r[0]);
    }

    #[test]
    fn degenerate_sample_size_refused() {
        let (spec, truth, data) = small_problem(6, 5);
        let err = em_fit(&spec, &data, &truth, &EmConfig::default(), 0).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn config_hash_tracks_changes() {
        let a = EmConfig::default();
        let mut b = a;
        b.max_iter = 10;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), EmConfig::default().hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn box_bounds_layout() {
        let (lo, hi) = ParamBox::default().bounds(2, 3);
        assert_eq!(lo.len(), 7);
        assert_eq!(hi[2], 10.0);
        assert!((lo[6] - 1e-6f64.ln()).abs() < 1e-15);
    }
}

//! Parameter discrepancies and conditional-density distances.
//!
//! `loss_d1` suits a pre-trained expert that is distinguishable from the
//! prompt; `loss_d2` carries the drift `(eta* - eta0, nu* - nu0)` that governs
//! the slower rates when it is not. Hellinger and total-variation distances
//! are computed by Simpson quadrature in `y` at fixed `x`, and averaged over
//! `x ~ N(0, I_d)` by seeded Monte Carlo.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::{dot, log_density_unchecked, log_logistic, Family, ModelSpec, PromptParams};
use crate::quadrature::simpson_rule;

/// Per-parameter estimation errors for one fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub err_exp_tau: f64,
    pub err_beta: f64,
    pub err_eta: f64,
    pub err_nu: f64,
    pub d1: f64,
    pub d2: f64,
    /// `||(eta* - eta0, nu* - nu0)||`.
    pub drift_norm: f64,
    pub hellinger: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    /// Half-width of the `y` range in component standard deviations.
    pub y_halfwidth_sds: f64,
    pub y_points: usize,
    pub x_mc_samples: usize,
    pub x_seed: u64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            y_halfwidth_sds: 12.0,
            y_points: 2048,
            x_mc_samples: 2000,
            x_seed: 0x5EED,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.y_points < 3 || self.x_mc_samples == 0 || !(self.y_halfwidth_sds > 0.0) {
            return Err(Error::Input(
                "quadrature counts and width must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// `||(beta, eta, nu) - (beta*, eta*, nu*)||` with `nu` on its natural scale.
fn joint_distance(g: &PromptParams, g_star: &PromptParams) -> f64 {
    (sq_dist(&g.beta, &g_star.beta) + sq_dist(&g.eta, &g_star.eta) + (g.nu - g_star.nu).powi(2))
        .sqrt()
}

fn check_pair(g: &PromptParams, g_star: &PromptParams) -> Result<()> {
    check_dim("beta", g_star.beta.len(), g.beta.len())?;
    check_dim("eta", g_star.eta.len(), g.eta.len())
}

/// `|e^tau - e^tau*| + (e^tau + e^tau*) ||(beta, eta, nu) - (beta*, eta*, nu*)||`.
pub fn loss_d1(g: &PromptParams, g_star: &PromptParams) -> Result<f64> {
    check_pair(g, g_star)?;
    let (a, b) = (g.tau.exp(), g_star.tau.exp());
    Ok((a - b).abs() + (a + b) * joint_distance(g, g_star))
}

/// Squared drift `||(eta - eta0, nu - nu0)||^2`.
fn drift_sq(eta: &[f64], nu: f64, eta0: &[f64], nu0: f64) -> f64 {
    sq_dist(eta, eta0) + (nu - nu0).powi(2)
}

/// Loss for a pre-trained expert that the prompt can imitate.
///
/// With `D = ||(eta - eta0, nu - nu0)||`, `D* = ||(eta* - eta0, nu* - nu0)||`,
/// `a = e^tau`, `b = e^tau*`:
///
/// ```text
/// a D^2 + b D*^2 - min(a, b) (D^2 + D*^2) + (a D + b D*) ||(beta, eta, nu) - (beta*, eta*, nu*)||
/// ```
pub fn loss_d2(g: &PromptParams, g_star: &PromptParams, eta0: &[f64], nu0: f64) -> Result<f64> {
    check_pair(g, g_star)?;
    check_dim("eta0", g.eta.len(), eta0.len())?;
    let (a, b) = (g.tau.exp(), g_star.tau.exp());
    let dd = drift_sq(&g.eta, g.nu, eta0, nu0);
    let dd_star = drift_sq(&g_star.eta, g_star.nu, eta0, nu0);
    let quad = a * dd + b * dd_star - a.min(b) * (dd + dd_star);
    let lin = (a * dd.sqrt() + b * dd_star.sqrt()) * joint_distance(g, g_star);
    // the quadratic part is exactly (a - b)^+ dd + (b - a)^+ dd_star >= 0
    Ok(quad.max(0.0) + lin)
}

/// All per-parameter errors of `fit` against `truth`; `hellinger` is left unset.
pub fn param_errors(
    fit: &PromptParams,
    truth: &PromptParams,
    eta0: &[f64],
    nu0: f64,
) -> Result<ErrorReport> {
    check_pair(fit, truth)?;
    check_dim("eta0", truth.eta.len(), eta0.len())?;
    Ok(ErrorReport {
        err_exp_tau: (fit.tau.exp() - truth.tau.exp()).abs(),
        err_beta: sq_dist(&fit.beta, &truth.beta).sqrt(),
        err_eta: sq_dist(&fit.eta, &truth.eta).sqrt(),
        err_nu: (fit.nu - truth.nu).abs(),
        d1: loss_d1(fit, truth)?,
        d2: loss_d2(fit, truth, eta0, nu0)?,
        drift_norm: drift_sq(&truth.eta, truth.nu, eta0, nu0).sqrt(),
        hellinger: None,
    })
}

/// Conditional density at fixed `x`, reduced to the two component parameters.
struct Conditional {
    log_w0: f64,
    log_w1: f64,
    family0: Family,
    mean0: f64,
    var0: f64,
    mean1: f64,
    var1: f64,
}

impl Conditional {
    fn new(spec: &ModelSpec, g: &PromptParams, x: &[f64]) -> Self {
        let logit = dot(&g.beta, x) + g.tau;
        let act = spec.prompt_mean.activation();
        Conditional {
            log_w0: log_logistic(-logit),
            log_w1: log_logistic(logit),
            family0: spec.pretrained.family,
            mean0: spec.pretrained_mean(x),
            var0: spec.pretrained.nu0,
            mean1: act.value(spec.prompt_mean.inner(&g.eta, x)),
            var1: g.nu,
        }
    }

    #[inline]
    fn density(&self, y: f64) -> f64 {
        (self.log_w0 + log_density_unchecked(self.family0, self.mean0, self.var0, y)).exp()
            + (self.log_w1 + log_density_unchecked(Family::Gaussian, self.mean1, self.var1, y))
                .exp()
    }
}

/// Simpson grid over the union of component supports, split at each component
/// mean so the Laplace kink falls on a node.
fn y_grid(parts: &[&Conditional], quad: &QuadratureConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut breaks = Vec::with_capacity(4);
    for c in parts {
        for (m, v) in [(c.mean0, c.var0), (c.mean1, c.var1)] {
            let s = v.sqrt();
            lo = lo.min(m - quad.y_halfwidth_sds * s);
            hi = hi.max(m + quad.y_halfwidth_sds * s);
            breaks.push(m);
        }
    }
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Domain(format!(
            "degenerate quadrature range [{lo}, {hi}]"
        )));
    }
    breaks.retain(|b| *b > lo && *b < hi);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut cuts = vec![lo];
    cuts.extend(breaks);
    cuts.push(hi);
    let width = hi - lo;
    let mut nodes = Vec::with_capacity(quad.y_points + 8 * cuts.len());
    let mut weights = Vec::with_capacity(nodes.capacity());
    for w in cuts.windows(2) {
        let share = ((w[1] - w[0]) / width * quad.y_points as f64).ceil() as usize;
        let (xs, ws) = simpson_rule(w[0], w[1], share.max(3));
        nodes.extend(xs);
        weights.extend(ws);
    }
    Ok((nodes, weights))
}

/// Hellinger and total-variation distances between two conditionals at `x`,
/// sharing one quadrature grid.
pub fn distances_conditional(
    spec: &ModelSpec,
    g1: &PromptParams,
    g2: &PromptParams,
    x: &[f64],
    quad: &QuadratureConfig,
) -> Result<(f64, f64)> {
    spec.check_params(g1)?;
    spec.check_params(g2)?;
    check_dim("covariate", spec.d, x.len())?;
    quad.validate()?;
    let c1 = Conditional::new(spec, g1, x);
    let c2 = Conditional::new(spec, g2, x);
    let (ys, ws) = y_grid(&[&c1, &c2], quad)?;
    let mut h2 = 0.0;
    let mut tv = 0.0;
    for (y, w) in ys.iter().zip(&ws) {
        let p = c1.density(*y);
        let q = c2.density(*y);
        let diff = p.sqrt() - q.sqrt();
        h2 += w * diff * diff;
        tv += w * (p - q).abs();
    }
    Ok(((0.5 * h2).sqrt().min(1.0), (0.5 * tv).min(1.0)))
}

/// `d_H(p_g1(.|x), p_g2(.|x))` with `d_H^2 = 1/2 int (sqrt p - sqrt q)^2`.
pub fn hellinger_conditional(
    spec: &ModelSpec,
    g1: &PromptParams,
    g2: &PromptParams,
    x: &[f64],
    quad: &QuadratureConfig,
) -> Result<f64> {
    distances_conditional(spec, g1, g2, x, quad).map(|(h, _)| h)
}

/// `d_V(p_g1(.|x), p_g2(.|x)) = 1/2 int |p - q|`.
pub fn tv_conditional(
    spec: &ModelSpec,
    g1: &PromptParams,
    g2: &PromptParams,
    x: &[f64],
    quad: &QuadratureConfig,
) -> Result<f64> {
    distances_conditional(spec, g1, g2, x, quad).map(|(_, v)| v)
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Covariates `x ~ N(0, I_d)` from one seeded stream, row-major.
pub fn covariate_draws(d: usize, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..d * count).map(|_| rng.sample(StandardNormal)).collect()
}

/// `E_X[d_H(p_g1(.|X), p_g2(.|X))]` over `X ~ N(0, I_d)`.
pub fn expected_hellinger(
    spec: &ModelSpec,
    g1: &PromptParams,
    g2: &PromptParams,
    quad: &QuadratureConfig,
) -> Result<McEstimate> {
    quad.validate()?;
    let d = spec.d;
    let xs = covariate_draws(d, quad.x_mc_samples, quad.x_seed);
    let vals = xs
        .par_chunks_exact(d)
        .map(|x| hellinger_conditional(spec, g1, g2, x, quad))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mc_summary(&vals))
}

fn mc_summary(vals: &[f64]) -> McEstimate {
    let k = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / k;
    let var = if vals.len() > 1 {
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    McEstimate {
        mean,
        stderr: (var / k).sqrt(),
        samples: vals.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ExpertMean, PretrainedSpec};

    fn p(beta: Vec<f64>, tau: f64, eta: Vec<f64>, nu: f64) -> PromptParams {
        PromptParams::new(beta, tau, eta, nu).unwrap()
    }

    #[test]
    fn d1_examples() {
        let g = p(vec![0.1, 0.2], 0.0, vec![0.3], 0.5);
        assert_eq!(loss_d1(&g, &g).unwrap(), 0.0);
        let h = p(vec![0.1, 1.2], 0.0, vec![0.3], 0.5);
        assert!((loss_d1(&h, &g).unwrap() - 2.0).abs() < 1e-15);
        let t = p(vec![0.1, 0.2], 1.0, vec![0.3], 0.5);
        assert!((loss_d1(&t, &g).unwrap() - (1f64.exp() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn d2_examples() {
        let eta0 = vec![1.0, 0.0];
        let nu0 = 0.001;
        let g = p(vec![0.3, 0.3], 1.0, vec![1.2, 0.0], 0.002);
        assert_eq!(loss_d2(&g, &g, &eta0, nu0).unwrap(), 0.0);

        // tau = tau*: the quadratic terms cancel
        let h = p(vec![0.3, 0.1], 1.0, vec![1.1, 0.1], 0.004);
        let dd = (0.1f64.powi(2) + 0.1f64.powi(2) + 0.003f64.powi(2)).sqrt();
        let dd_star = (0.2f64.powi(2) + 0.001f64.powi(2)).sqrt();
        let dist = (0.2f64.powi(2) + 0.1f64.powi(2) + 0.1f64.powi(2) + 0.002f64.powi(2)).sqrt();
        let want = 1f64.exp() * (dd + dd_star) * dist;
        assert!((loss_d2(&h, &g, &eta0, nu0).unwrap() - want).abs() < 1e-14);

        // tau = 1, tau* = 0, eta = eta* = eta0, nu - nu0 = 0.1, nu* = nu0, beta = beta*
        let a = p(vec![0.5, 0.5], 1.0, eta0.clone(), nu0 + 0.1);
        let b = p(vec![0.5, 0.5], 0.0, eta0.clone(), nu0);
        let got = loss_d2(&a, &b, &eta0, nu0).unwrap();
        let want = 0.044_365_636_569_180_9;
        assert!((got - want).abs() < 1e-12, "{got}");
    }

    #[test]
    fn param_error_examples() {
        let eta0 = vec![1.0, 0.0];
        let truth = p(vec![0.5, 0.5], 1.0, vec![1.5, 0.0], 0.001);
        let r = param_errors(&truth, &truth, &eta0, 0.001).unwrap();
        assert_eq!(
            (r.err_exp_tau, r.err_beta, r.err_eta, r.err_nu, r.d1, r.d2),
            (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        );
        assert!((r.drift_norm - 0.5).abs() < 1e-15);
        let mut fit = truth.clone();
        fit.tau = 1.1;
        let r = param_errors(&fit, &truth, &eta0, 0.001).unwrap();
        assert!((r.err_exp_tau - 0.285_884_195_487_387_9).abs() < 1e-12);
    }

    fn gaussian_spec(d: usize) -> ModelSpec {
        let mut eta0 = vec![0.0; d];
        eta0[0] = 1.0;
        ModelSpec::new(
            d,
            PretrainedSpec {
                family: Family::Gaussian,
                mean: ExpertMean::TANH,
                eta0,
                nu0: 0.01,
            },
            ExpertMean::TANH,
        )
        .unwrap()
    }

    #[test]
    fn equal_params_have_zero_distance() {
        let spec = gaussian_spec(2);
        let g = p(vec![0.4, -0.3], 0.5, vec![-1.0, 0.2], 0.02);
        let q = QuadratureConfig::default();
        assert!(hellinger_conditional(&spec, &g, &g, &[0.3, 0.1], &q).unwrap() < 1e-8);
        assert_eq!(tv_conditional(&spec, &g, &g, &[0.3, 0.1], &q).unwrap(), 0.0);
    }

    #[test]
    fn saturated_gaussian_pair_matches_closed_forms() {
        let spec = gaussian_spec(1);
        let nu = 0.05;
        let g1 = p(vec![0.0], 1e6, vec![0.4], nu);
        let g2 = p(vec![0.0], 1e6, vec![-0.3], nu);
        let x = [1.0];
        let (m1, m2) = (0.4f64.tanh(), (-0.3f64).tanh());
        let q = QuadratureConfig::default();
        let (h, tv) = distances_conditional(&spec, &g1, &g2, &x, &q).unwrap();
        let want_h = (1.0 - (-(m1 - m2).powi(2) / (8.0 * nu)).exp()).sqrt();
        let want_tv = 2.0 * crate::model::std_normal_cdf((m1 - m2).abs() / (2.0 * nu.sqrt())) - 1.0;
        assert!((h - want_h).abs() < 1e-8, "{h} vs {want_h}");
        assert!((tv - want_tv).abs() < 1e-8, "{tv} vs {want_tv}");
        let (h_rev, _) = distances_conditional(&spec, &g2, &g1, &x, &q).unwrap();
        assert!((h - h_rev).abs() < 1e-10);
    }

    #[test]
    fn expected_hellinger_is_zero_on_diagonal() {
        let spec = gaussian_spec(3);
        let g = p(vec![0.2; 3], 0.0, vec![-1.0, 0.0, 0.0], 0.01);
        let q = QuadratureConfig {
            x_mc_samples: 50,
            ..Default::default()
        };
        let e = expected_hellinger(&spec, &g, &g, &q).unwrap();
        assert!(e.mean < 1e-8);
    }

    #[test]
    fn degenerate_quadrature_config() {
        let q = QuadratureConfig {
            y_points: 0,
            ..Default::default()
        };
        assert!(q.validate().is_err());
    }
}

//! The softmax-contaminated mixture of experts.
//!
//! A frozen pre-trained expert `f0(y | h0(x, eta0), nu0)` is mixed with a
//! trainable Gaussian prompt expert `f(y | h(x, eta), nu)` through the gate
//! `lambda(x) = logistic(beta' x + tau)`:
//!
//! ```text
//! p_G(y | x) = (1 - lambda(x)) f0(y | h0(x, eta0), nu0) + lambda(x) f(y | h(x, eta), nu)
//! ```
//!
//! Every `nu` in this crate is a variance. Densities are combined in log space
//! because the experiments use `nu` as small as `1e-3`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Unknown parameters `G = (beta, tau, eta, nu)` of the gate and prompt expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptParams {
    pub beta: Vec<f64>,
    pub tau: f64,
    pub eta: Vec<f64>,
    /// Prompt variance, strictly positive.
    pub nu: f64,
}

impl PromptParams {
    pub fn new(beta: Vec<f64>, tau: f64, eta: Vec<f64>, nu: f64) -> Result<Self> {
        let p = PromptParams { beta, tau, eta, nu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(Error::Domain(format!(
                "prompt variance must be > 0, got {}",
                self.nu
            )));
        }
        let finite = self.tau.is_finite()
            && self.beta.iter().all(|v| v.is_finite())
            && self.eta.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain("non-finite prompt parameter".into()));
        }
        Ok(())
    }

    /// Length of the flattened `(beta, tau, eta, log nu)` vector.
    pub fn flat_len(&self) -> usize {
        self.beta.len() + self.eta.len() + 2
    }

    /// Flatten to the optimization coordinates `(beta, tau, eta, log nu)`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.flat_len());
        v.extend_from_slice(&self.beta);
        v.push(self.tau);
        v.extend_from_slice(&self.eta);
        v.push(self.nu.ln());
        v
    }

    pub fn from_flat(d: usize, q: usize, flat: &[f64]) -> Result<Self> {
        check_dim("flattened parameter vector", d + q + 2, flat.len())?;
        Ok(PromptParams {
            beta: flat[..d].to_vec(),
            tau: flat[d],
            eta: flat[d + 1..d + 1 + q].to_vec(),
            nu: flat[d + 1 + q].exp(),
        })
    }
}

/// Scalar activation used inside an expert mean function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Gelu,
    Relu,
}

impl Activation {
    pub fn value(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => logistic(z),
            Activation::Gelu => z * std_normal_cdf(z),
            Activation::Relu => z.max(0.0),
        }
    }

    pub fn d1(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = logistic(z);
                s * (1.0 - s)
            }
            Activation::Gelu => std_normal_cdf(z) + z * std_normal_pdf(z),
            // subgradient 0 at the kink
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn d2(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Sigmoid => {
                let s = logistic(z);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::Gelu => std_normal_pdf(z) * (2.0 - z * z),
            Activation::Relu => 0.0,
        }
    }

    /// Value and first two derivatives in one pass.
    pub(crate) fn eval3(self, z: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                let s1 = 1.0 - t * t;
                (t, s1, -2.0 * t * s1)
            }
            Activation::Sigmoid => {
                let s = logistic(z);
                let s1 = s * (1.0 - s);
                (s, s1, s1 * (1.0 - 2.0 * s))
            }
            _ => (self.value(z), self.d1(z), self.d2(z)),
        }
    }
}

/// Shape of an expert mean function `h(x, eta)`.
///
/// `Index(s)` is `s(eta' x)` with `q = d`. `AffineInner(s)` is `s(a' x + b)`
/// with `eta = (a, b)` and `q = d + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertMean {
    Index(Activation),
    AffineInner(Activation),
}

impl ExpertMean {
    pub const TANH: ExpertMean = ExpertMean::Index(Activation::Tanh);
    pub const SIGMOID: ExpertMean = ExpertMean::Index(Activation::Sigmoid);
    pub const GELU: ExpertMean = ExpertMean::Index(Activation::Gelu);
    pub const RELU: ExpertMean = ExpertMean::Index(Activation::Relu);

    pub fn activation(self) -> Activation {
        match self {
            ExpertMean::Index(a) | ExpertMean::AffineInner(a) => a,
        }
    }

    /// Number of expert parameters `q` for covariate dimension `d`.
    pub fn param_dim(self, d: usize) -> usize {
        match self {
            ExpertMean::Index(_) => d,
            ExpertMean::AffineInner(_) => d + 1,
        }
    }

    fn check(self, eta: &[f64], x: &[f64]) -> Result<()> {
        check_dim("expert parameter", self.param_dim(x.len()), eta.len())
    }

    /// Inner activation argument `eta' phi(x)`; `phi(x) = x` or `(x, 1)`.
    #[inline]
    pub(crate) fn inner(self, eta: &[f64], x: &[f64]) -> f64 {
        let z = dot(&eta[..x.len()], x);
        match self {
            ExpertMean::Index(_) => z,
            ExpertMean::AffineInner(_) => z + eta[x.len()],
        }
    }

    /// Feature `phi(x)_u`, the coefficient multiplying `eta_u`.
    #[inline]
    pub(crate) fn feature(x: &[f64], u: usize) -> f64 {
        if u < x.len() {
            x[u]
        } else {
            1.0
        }
    }
}

/// `h(x, eta)`.
pub fn expert_mean(kind: ExpertMean, eta: &[f64], x: &[f64]) -> Result<f64> {
    kind.check(eta, x)?;
    Ok(kind.activation().value(kind.inner(eta, x)))
}

/// `dh/deta`, length `q`.
pub fn expert_mean_grad(kind: ExpertMean, eta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    kind.check(eta, x)?;
    let s1 = kind.activation().d1(kind.inner(eta, x));
    Ok((0..eta.len())
        .map(|u| s1 * ExpertMean::feature(x, u))
        .collect())
}

/// `d2h/deta deta'`, a symmetric `q x q` matrix.
pub fn expert_mean_hess(kind: ExpertMean, eta: &[f64], x: &[f64]) -> Result<DMatrix<f64>> {
    kind.check(eta, x)?;
    let s2 = kind.activation().d2(kind.inner(eta, x));
    let q = eta.len();
    Ok(DMatrix::from_fn(q, q, |u, v| {
        s2 * ExpertMean::feature(x, u) * ExpertMean::feature(x, v)
    }))
}

/// Family of the pre-trained expert density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Laplace,
}

/// The frozen pre-trained expert `f0(. | h0(x, eta0), nu0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainedSpec {
    pub family: Family,
    pub mean: ExpertMean,
    pub eta0: Vec<f64>,
    /// Variance of the pre-trained component.
    pub nu0: f64,
}

/// Model structure; the prompt expert is always Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub d: usize,
    pub pretrained: PretrainedSpec,
    pub prompt_mean: ExpertMean,
}

impl ModelSpec {
    pub fn new(d: usize, pretrained: PretrainedSpec, prompt_mean: ExpertMean) -> Result<Self> {
        let spec = ModelSpec {
            d,
            pretrained,
            prompt_mean,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Input("covariate dimension must be >= 1".into()));
        }
        check_dim(
            "pre-trained expert parameter",
            self.pretrained.mean.param_dim(self.d),
            self.pretrained.eta0.len(),
        )?;
        if !(self.pretrained.nu0 > 0.0) {
            return Err(Error::Domain(format!(
                "pre-trained variance must be > 0, got {}",
                self.pretrained.nu0
            )));
        }
        Ok(())
    }

    /// Prompt expert parameter dimension `q`.
    pub fn q(&self) -> usize {
        self.prompt_mean.param_dim(self.d)
    }

    pub fn check_params(&self, params: &PromptParams) -> Result<()> {
        check_dim("gating slope beta", self.d, params.beta.len())?;
        check_dim("prompt parameter eta", self.q(), params.eta.len())?;
        params.validate()
    }

    /// `h0(x, eta0)`.
    #[inline]
    pub fn pretrained_mean(&self, x: &[f64]) -> f64 {
        let m = self.pretrained.mean;
        m.activation().value(m.inner(&self.pretrained.eta0, x))
    }

    /// `log f0(y | h0(x, eta0), nu0)`.
    #[inline]
    pub fn pretrained_log_density(&self, x: &[f64], y: f64) -> f64 {
        log_density_unchecked(
            self.pretrained.family,
            self.pretrained_mean(x),
            self.pretrained.nu0,
            y,
        )
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Numerically stable logistic function.
#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `log logistic(z)`.
#[inline]
pub(crate) fn log_logistic(z: f64) -> f64 {
    -softplus(-z)
}

#[inline]
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub(crate) fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Gating weight `logistic(beta' x + tau)`.
pub fn gating_weight(x: &[f64], beta: &[f64], tau: f64) -> Result<f64> {
    check_dim("covariate", beta.len(), x.len())?;
    Ok(logistic(dot(beta, x) + tau))
}

#[inline]
pub(crate) fn log_density_unchecked(family: Family, mean: f64, variance: f64, y: f64) -> f64 {
    let r = y - mean;
    match family {
        Family::Gaussian => -0.5 * (LN_2PI + variance.ln() + r * r / variance),
        Family::Laplace => {
            let b = (0.5 * variance).sqrt();
            -(2.0 * b).ln() - r.abs() / b
        }
    }
}

/// Log-density of a component with the given mean and variance.
pub fn component_log_density(family: Family, mean: f64, variance: f64, y: f64) -> Result<f64> {
    if !(variance > 0.0) {
        return Err(Error::Domain(format!(
            "variance must be > 0, got {variance}"
        )));
    }
    Ok(log_density_unchecked(family, mean, variance, y))
}

/// Component density. Laplace uses scale `b = sqrt(variance / 2)` so that its
/// variance equals `variance`.
pub fn component_density(family: Family, mean: f64, variance: f64, y: f64) -> Result<f64> {
    component_log_density(family, mean, variance, y).map(f64::exp)
}

/// Per-observation quantities shared by the density, E-step and gradient.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PointEval {
    /// Gate logit `beta' x + tau`.
    pub logit: f64,
    pub log_f: f64,
    /// Prompt mean `h(x, eta)`.
    pub mean: f64,
    /// `log p_G(y | x)`.
    pub log_p: f64,
    /// Posterior probability that the prompt generated `y`.
    pub resp: f64,
}

#[inline]
pub(crate) fn point_eval_with_f0(
    spec: &ModelSpec,
    params: &PromptParams,
    x: &[f64],
    y: f64,
    log_f0: f64,
) -> PointEval {
    let logit = dot(&params.beta, x) + params.tau;
    let mean = spec
        .prompt_mean
        .activation()
        .value(spec.prompt_mean.inner(&params.eta, x));
    let log_f = log_density_unchecked(Family::Gaussian, mean, params.nu, y);
    let a = log_logistic(-logit) + log_f0;
    let b = log_logistic(logit) + log_f;
    let log_p = log_add_exp(a, b);
    PointEval {
        logit,
        log_f,
        mean,
        log_p,
        resp: (b - log_p).exp(),
    }
}

fn checked_eval(spec: &ModelSpec, params: &PromptParams, x: &[f64], y: f64) -> Result<PointEval> {
    spec.check_params(params)?;
    check_dim("covariate", spec.d, x.len())?;
    let log_f0 = spec.pretrained_log_density(x, y);
    Ok(point_eval_with_f0(spec, params, x, y, log_f0))
}

/// `log p_G(y | x)`, evaluated by log-sum-exp of the two weighted components.
pub fn log_mixture_density(
    spec: &ModelSpec,
    params: &PromptParams,
    x: &[f64],
    y: f64,
) -> Result<f64> {
    Ok(checked_eval(spec, params, x, y)?.log_p)
}

/// `p_G(y | x)`.
pub fn mixture_density(spec: &ModelSpec, params: &PromptParams, x: &[f64], y: f64) -> Result<f64> {
    log_mixture_density(spec, params, x, y).map(f64::exp)
}

/// `E[Y | x] = (1 - lambda) h0(x, eta0) + lambda h(x, eta)`.
pub fn conditional_mean(spec: &ModelSpec, params: &PromptParams, x: &[f64]) -> Result<f64> {
    spec.check_params(params)?;
    check_dim("covariate", spec.d, x.len())?;
    let lambda = logistic(dot(&params.beta, x) + params.tau);
    let h = spec
        .prompt_mean
        .activation()
        .value(spec.prompt_mean.inner(&params.eta, x));
    Ok((1.0 - lambda) * spec.pretrained_mean(x) + lambda * h)
}

/// Gradient of `log p_G(y | x)` with respect to `(beta, tau, eta, log nu)`.
///
/// With `r` the prompt responsibility and `lambda` the gate, the gate block
/// is `(r - lambda) (x, 1)` and the prompt block is `r` times the Gaussian
/// score.
pub fn log_density_grad(
    spec: &ModelSpec,
    params: &PromptParams,
    x: &[f64],
    y: f64,
) -> Result<Vec<f64>> {
    let ev = checked_eval(spec, params, x, y)?;
    if !ev.log_p.is_finite() {
        return Err(Error::Underflow(ev.log_p));
    }
    let d = spec.d;
    let q = spec.q();
    let lambda = logistic(ev.logit);
    let gate = ev.resp - lambda;
    let mut g = Vec::with_capacity(d + q + 2);
    g.extend(x.iter().map(|xi| gate * xi));
    g.push(gate);
    let resid = y - ev.mean;
    let s1 = spec
        .prompt_mean
        .activation()
        .d1(spec.prompt_mean.inner(&params.eta, x));
    let c = ev.resp * resid / params.nu * s1;
    g.extend((0..q).map(|u| c * ExpertMean::feature(x, u)));
    g.push(ev.resp * (-0.5 + 0.5 * resid * resid / params.nu));
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e1(d: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[0] = 1.0;
        v
    }

    fn gaussian_spec(d: usize, eta0: Vec<f64>, nu0: f64) -> ModelSpec {
        ModelSpec::new(
            d,
            PretrainedSpec {
                family: Family::Gaussian,
                mean: ExpertMean::TANH,
                eta0,
                nu0,
            },
            ExpertMean::TANH,
        )
        .unwrap()
    }

    #[test]
    fn gate_is_half_at_zero_logit() {
        let beta = vec![0.3, -2.0, 7.0];
        assert_eq!(gating_weight(&[0.0; 3], &beta, 0.0).unwrap(), 0.5);
    }

    #[test]
    fn gate_on_ones() {
        let d = 8;
        let beta = vec![1.0 / (d as f64).sqrt(); d];
        let w = gating_weight(&vec![1.0; d], &beta, 1.0).unwrap();
        // logistic(2*sqrt(2) + 1), computed independently at high precision
        assert!((w - 0.978_718_941_823_771_5).abs() < 1e-12, "{w}");
    }

    #[test]
    fn gate_saturates_without_overflow() {
        assert!(gating_weight(&[1.0], &[0.0], -1e6).unwrap() < 1e-300);
        assert_eq!(gating_weight(&[1.0], &[0.0], 1e6).unwrap(), 1.0);
        let hi = logistic(700.0);
        let lo = logistic(-700.0);
        assert!(hi.is_finite() && lo.is_finite() && lo > 0.0);
    }

    #[test]
    fn gate_dimension_mismatch() {
        assert!(matches!(
            gating_weight(&[1.0, 2.0], &[1.0], 0.0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn tanh_mean_values() {
        let mut x = vec![0.0; 4];
        x[0] = 0.5;
        let v = expert_mean(ExpertMean::TANH, &e1(4), &x).unwrap();
        assert!((v - 0.5f64.tanh()).abs() < 1e-15);
        let neg: Vec<f64> = e1(4).iter().map(|v| -v).collect();
        assert_eq!(expert_mean(ExpertMean::TANH, &neg, &x).unwrap(), -v);
    }

    #[test]
    fn activations_at_zero_parameter() {
        let x = [0.4, -1.2];
        let zero = [0.0, 0.0];
        assert_eq!(expert_mean(ExpertMean::TANH, &zero, &x).unwrap(), 0.0);
        assert_eq!(expert_mean(ExpertMean::SIGMOID, &zero, &x).unwrap(), 0.5);
        assert_eq!(expert_mean(ExpertMean::RELU, &zero, &x).unwrap(), 0.0);
        assert_eq!(expert_mean(ExpertMean::GELU, &zero, &x).unwrap(), 0.0);
    }

    #[test]
    fn affine_inner_needs_extra_parameter() {
        let kind = ExpertMean::AffineInner(Activation::Sigmoid);
        assert!(expert_mean(kind, &[1.0, 2.0], &[0.1, 0.2]).is_err());
        let v = expert_mean(kind, &[1.0, 2.0, -0.3], &[0.1, 0.2]).unwrap();
        assert!((v - logistic(0.1 + 0.4 - 0.3)).abs() < 1e-15);
    }

    #[test]
    fn tanh_grad_closed_form() {
        let eta = [0.3, -0.7, 1.1];
        let x = [1.5, 0.2, -0.4];
        let t = (0.3 * 1.5 - 0.7 * 0.2 - 1.1 * 0.4f64).tanh();
        let g = expert_mean_grad(ExpertMean::TANH, &eta, &x).unwrap();
        for (gu, xu) in g.iter().zip(&x) {
            assert!((gu - (1.0 - t * t) * xu).abs() < 1e-15);
        }
    }

    #[test]
    fn relu_hessian_vanishes() {
        let h = expert_mean_hess(ExpertMean::RELU, &[0.5, 1.0], &[1.0, 2.0]).unwrap();
        assert!(h.iter().all(|v| *v == 0.0));
        let g = expert_mean_grad(ExpertMean::RELU, &[1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(g, vec![0.0, 0.0], "kink uses subgradient 0");
    }

    #[test]
    fn densities_at_mode() {
        let g = component_density(Family::Gaussian, 0.0, 1.0, 0.0).unwrap();
        assert!((g - 0.398_942_280_401_432_7).abs() < 1e-15);
        let l = component_density(Family::Laplace, 0.0, 2.0, 0.0).unwrap();
        assert!((l - 0.5).abs() < 1e-15);
        assert!(matches!(
            component_density(Family::Gaussian, 0.0, 0.0, 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn laplace_density_matches_textbook_form() {
        // scale b = sqrt(nu / 2) = 0.5
        let b: f64 = 0.5;
        let want = (-(1.3f64 - 0.2).abs() / b).exp() / (2.0 * b);
        let got = component_density(Family::Laplace, 0.2, 0.5, 1.3).unwrap();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn identical_components_collapse() {
        let eta = vec![0.4, -0.2];
        let spec = gaussian_spec(2, eta.clone(), 0.3);
        let x = [0.7, 1.1];
        for tau in [-5.0, 0.0, 3.0] {
            let p = PromptParams::new(vec![0.2, 0.9], tau, eta.clone(), 0.3).unwrap();
            let mix = mixture_density(&spec, &p, &x, 0.1).unwrap();
            let h = expert_mean(ExpertMean::TANH, &eta, &x).unwrap();
            let f = component_density(Family::Gaussian, h, 0.3, 0.1).unwrap();
            assert!((mix - f).abs() < 1e-14 * f);
        }
    }

    #[test]
    fn closed_gate_is_pretrained() {
        let spec = gaussian_spec(2, vec![1.0, 0.0], 0.01);
        let p = PromptParams::new(vec![0.0, 0.0], -1e6, vec![-1.0, 0.5], 0.2).unwrap();
        let x = [0.3, -0.4];
        let y = 0.25;
        let mix = mixture_density(&spec, &p, &x, y).unwrap();
        let f0 = component_density(Family::Gaussian, 0.3f64.tanh(), 0.01, y).unwrap();
        assert!((mix - f0).abs() < 1e-12);
    }

    #[test]
    fn conditional_mean_cases() {
        let eta = vec![0.5, 0.5];
        let spec = gaussian_spec(2, eta.clone(), 0.1);
        let p = PromptParams::new(vec![1.0, -1.0], 0.3, eta.clone(), 0.4).unwrap();
        let x = [0.2, 0.9];
        let m = conditional_mean(&spec, &p, &x).unwrap();
        assert!((m - expert_mean(ExpertMean::TANH, &eta, &x).unwrap()).abs() < 1e-15);

        // lambda = 1/2 and h0 = -h cancel
        let spec = gaussian_spec(2, vec![-0.5, -0.5], 0.1);
        let p = PromptParams::new(vec![0.0, 0.0], 0.0, eta, 0.4).unwrap();
        assert!(conditional_mean(&spec, &p, &x).unwrap().abs() < 1e-15);
    }

    #[test]
    fn grad_vanishes_at_one_sample_stationary_point() {
        // x = 0 zeroes the beta and eta blocks; equal components give r = lambda
        // so the tau block vanishes; resid^2 = nu zeroes the log nu block.
        let nu = 0.5;
        let spec = gaussian_spec(2, vec![0.8, -0.1], nu);
        let p = PromptParams::new(vec![0.3, 0.1], 0.2, vec![0.8, 0.4], nu).unwrap();
        let g = log_density_grad(&spec, &p, &[0.0, 0.0], nu.sqrt()).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12), "{g:?}");
    }

    #[test]
    fn grad_length_matches_layout() {
        let spec = gaussian_spec(3, vec![1.0, 0.0, 0.0], 0.1);
        let p = PromptParams::new(vec![0.1; 3], 0.0, vec![0.2; 3], 0.3).unwrap();
        let g = log_density_grad(&spec, &p, &[0.1, 0.2, 0.3], 0.0).unwrap();
        assert_eq!(g.len(), 3 + 1 + 3 + 1);
        assert_eq!(p.flat_len(), g.len());
    }

    #[test]
    fn flat_roundtrip() {
        let p = PromptParams::new(vec![0.1, -0.2], 1.0, vec![0.3, 0.4], 0.001).unwrap();
        let q = PromptParams::from_flat(2, 2, &p.to_flat()).unwrap();
        assert_eq!(p.beta, q.beta);
        assert!((p.nu - q.nu).abs() < 1e-18);
    }
}

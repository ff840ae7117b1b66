//! Finite-sample rank tests for distinguishability of the pre-trained expert
//! and strong identifiability of the prompt expert function.
//!
//! A family of functions is evaluated on sample points, each column is scaled
//! to unit Euclidean norm, and the family counts as linearly independent when
//! the smallest singular value of that matrix exceeds a threshold.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::metrics::covariate_draws;
use crate::model::{log_density_unchecked, ExpertMean, Family, ModelSpec, PretrainedSpec};

/// Default cut-off on the smallest singular value.
pub const DEFAULT_THRESHOLD: f64 = 1e-6;

/// Relative tolerance for treating two normalized columns of one family as
/// the same function.
const DUPLICATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    FirstOrderGating,
    GradientProduct,
    MixedSecondOrder,
    Distinguishability,
}

impl Condition {
    pub fn name(self) -> &'static str {
        match self {
            Condition::FirstOrderGating => "first-order-gating",
            Condition::GradientProduct => "gradient-product",
            Condition::MixedSecondOrder => "mixed-second-order",
            Condition::Distinguishability => "distinguishability",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentVerdict {
    pub condition: Condition,
    pub min_singular_value: f64,
    pub threshold: f64,
    pub pass: bool,
    pub sample_size: usize,
    /// Number of columns in the tested family.
    pub columns: usize,
}

impl IdentVerdict {
    fn new(condition: Condition, sigma: f64, threshold: f64, m: usize, columns: usize) -> Self {
        IdentVerdict {
            condition,
            min_singular_value: sigma,
            threshold,
            pass: sigma > threshold,
            sample_size: m,
            columns,
        }
    }
}

/// Smallest singular value after scaling each column to unit norm. Zero
/// columns stay zero.
pub fn min_singular_value_normalized(mut mat: DMatrix<f64>) -> f64 {
    for mut col in mat.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    if mat.ncols() == 0 {
        return f64::INFINITY;
    }
    let sv = mat.singular_values();
    // a wide matrix has ncols - nrows structural zeros
    if mat.ncols() > mat.nrows() {
        return 0.0;
    }
    sv.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Columns of one function family, with repeats of the same function dropped.
struct Family_ {
    cols: Vec<Vec<f64>>,
    unit: Vec<Vec<f64>>,
}

impl Family_ {
    fn new() -> Self {
        Family_ {
            cols: Vec::new(),
            unit: Vec::new(),
        }
    }

    fn push(&mut self, col: Vec<f64>) {
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let unit: Vec<f64> = if norm > 0.0 {
            col.iter().map(|v| v / norm).collect()
        } else {
            col.clone()
        };
        if norm > 0.0 {
            let dup = self.unit.iter().any(|u| {
                let same = u
                    .iter()
                    .zip(&unit)
                    .all(|(a, b)| (a - b).abs() <= DUPLICATE_TOL);
                let flip = u
                    .iter()
                    .zip(&unit)
                    .all(|(a, b)| (a + b).abs() <= DUPLICATE_TOL);
                same || flip
            });
            if dup {
                return;
            }
        }
        self.cols.push(col);
        self.unit.push(unit);
    }
}

fn assemble(m: usize, families: Vec<Family_>) -> DMatrix<f64> {
    let cols: Vec<Vec<f64>> = families.into_iter().flat_map(|f| f.cols).collect();
    DMatrix::from_fn(m, cols.len(), |i, j| cols[j][i])
}

/// The three strong-identifiability families, evaluated at the rows of
/// `x_samples` (`m x d`):
///
/// 1. `{dh/deta_u, e^{beta'x} dh/deta_u}`
/// 2. `{1, x_w, e^{beta'x}, dh/deta_u dh/deta_v, e^{beta'x} dh/deta_u dh/deta_v}`
/// 3. `{dh/deta_u, e^{beta'x} dh/deta_u, x_w dh/deta_u, d2h/deta_u deta_v, e^{beta'x} d2h/deta_u deta_v}`
///
/// Within each listed family, entries that coincide as functions (for
/// example `d2h/deta_u deta_v` and `d2h/deta_v deta_u`) are one element.
/// Coincidences across families are kept: they are exactly the degeneracies
/// the conditions rule out.
pub fn strong_identifiability_check(
    kind: ExpertMean,
    beta: &[f64],
    eta: &[f64],
    x_samples: &DMatrix<f64>,
    threshold: f64,
) -> Result<[IdentVerdict; 3]> {
    let (m, d) = x_samples.shape();
    check_dim("gating slope beta", d, beta.len())?;
    let q = kind.param_dim(d);
    check_dim("expert parameter eta", q, eta.len())?;
    let largest = 2 * q + d * q + q * (q + 1);
    if m < 4 * largest {
        return Err(Error::Input(format!(
            "need at least {} covariate samples, got {m}",
            4 * largest
        )));
    }
    let act = kind.activation();
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|i| x_samples.row(i).iter().copied().collect())
        .collect();
    let gate: Vec<f64> = rows
        .iter()
        .map(|x| crate::model::dot(beta, x).exp())
        .collect();
    let z: Vec<f64> = rows.iter().map(|x| kind.inner(eta, x)).collect();
    let grad = |u: usize| -> Vec<f64> {
        (0..m)
            .map(|i| act.d1(z[i]) * ExpertMean::feature(&rows[i], u))
            .collect()
    };
    let hess = |u: usize, v: usize| -> Vec<f64> {
        (0..m)
            .map(|i| {
                act.d2(z[i]) * ExpertMean::feature(&rows[i], u) * ExpertMean::feature(&rows[i], v)
            })
            .collect()
    };
    let gated = |c: &[f64]| -> Vec<f64> { c.iter().zip(&gate).map(|(a, g)| a * g).collect() };
    let grads: Vec<Vec<f64>> = (0..q).map(grad).collect();

    // set 1
    let mut first = Family_::new();
    let mut first_gated = Family_::new();
    for g in &grads {
        first.push(g.clone());
        first_gated.push(gated(g));
    }
    let set1 = assemble(m, vec![first, first_gated]);

    // set 2
    let mut ones = Family_::new();
    ones.push(vec![1.0; m]);
    let mut linear = Family_::new();
    for w in 0..d {
        linear.push(rows.iter().map(|x| x[w]).collect());
    }
    let mut expo = Family_::new();
    expo.push(gate.clone());
    let mut products = Family_::new();
    let mut products_gated = Family_::new();
    for u in 0..q {
        for v in u..q {
            let prod: Vec<f64> = grads[u].iter().zip(&grads[v]).map(|(a, b)| a * b).collect();
            products_gated.push(gated(&prod));
            products.push(prod);
        }
    }
    let set2 = assemble(m, vec![ones, linear, expo, products, products_gated]);

    // set 3
    let mut first = Family_::new();
    let mut first_gated = Family_::new();
    let mut cross = Family_::new();
    for g in &grads {
        first.push(g.clone());
        first_gated.push(gated(g));
        for w in 0..d {
            cross.push(g.iter().zip(&rows).map(|(a, x)| a * x[w]).collect());
        }
    }
    let mut second = Family_::new();
    let mut second_gated = Family_::new();
    for u in 0..q {
        for v in u..q {
            let h = hess(u, v);
            second_gated.push(gated(&h));
            second.push(h);
        }
    }
    let set3 = assemble(m, vec![first, first_gated, cross, second, second_gated]);

    let verdict = |cond, mat: DMatrix<f64>| {
        let cols = mat.ncols();
        IdentVerdict::new(cond, min_singular_value_normalized(mat), threshold, m, cols)
    };
    Ok([
        verdict(Condition::FirstOrderGating, set1),
        verdict(Condition::GradientProduct, set2),
        verdict(Condition::MixedSecondOrder, set3),
    ])
}

/// A pair of distinct prompt parameters `(eta1, nu1)`, `(eta2, nu2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub eta1: Vec<f64>,
    pub nu1: f64,
    pub eta2: Vec<f64>,
    pub nu2: f64,
}

/// Relative `y` grid: `points` nodes spanning the component means widened by
/// `halfwidth_sds` times the largest component standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YGrid {
    pub points: usize,
    pub halfwidth_sds: f64,
}

impl Default for YGrid {
    fn default() -> Self {
        YGrid {
            points: 512,
            halfwidth_sds: 6.0,
        }
    }
}

/// Gaussian density and its derivatives in the mean and the variance.
fn gaussian_with_derivs(mean: f64, var: f64, y: f64) -> (f64, f64, f64) {
    let f = log_density_unchecked(Family::Gaussian, mean, var, y).exp();
    let r = y - mean;
    (f, f * r / var, f * (r * r / (2.0 * var * var) - 0.5 / var))
}

/// Distinguishability surrogate: at each sampled `x`, the functions of `y`
///
/// `f0(y|h0(x,eta0),nu0), f(y|h(x,eta1),nu1), f(y|h(x,eta2),nu2),
///  df/dmean(y|h(x,eta2),nu2), df/dnu(y|h(x,eta2),nu2)`
///
/// must be linearly independent on the grid. The `eta`-derivatives of `f`
/// at fixed `x` are all multiples of `df/dmean`, so the mean derivative
/// stands in for them. Reports the minimum over probes and `x`.
pub fn distinguishability_check(
    spec: &ModelSpec,
    probes: &[Probe],
    x_samples: &DMatrix<f64>,
    y_grid: YGrid,
    threshold: f64,
) -> Result<IdentVerdict> {
    spec.validate()?;
    let (m, d) = x_samples.shape();
    check_dim("covariate dimension", spec.d, d)?;
    if y_grid.points < 8 || !(y_grid.halfwidth_sds > 0.0) {
        return Err(Error::Input(
            "y grid needs >= 8 points and a positive width".into(),
        ));
    }
    if probes.is_empty() || m == 0 {
        return Err(Error::Input(
            "need at least one probe and one covariate".into(),
        ));
    }
    let q = spec.q();
    for p in probes {
        check_dim("probe eta1", q, p.eta1.len())?;
        check_dim("probe eta2", q, p.eta2.len())?;
        if !(p.nu1 > 0.0 && p.nu2 > 0.0) {
            return Err(Error::Domain("probe variances must be > 0".into()));
        }
        if p.eta1 == p.eta2 && p.nu1 == p.nu2 {
            return Err(Error::Input("probe pairs must be distinct".into()));
        }
    }
    let act = spec.prompt_mean.activation();
    let mut worst = f64::INFINITY;
    for i in 0..m {
        let x: Vec<f64> = x_samples.row(i).iter().copied().collect();
        let m0 = spec.pretrained_mean(&x);
        let v0 = spec.pretrained.nu0;
        for p in probes {
            let m1 = act.value(spec.prompt_mean.inner(&p.eta1, &x));
            let m2 = act.value(spec.prompt_mean.inner(&p.eta2, &x));
            let sd = v0.max(p.nu1).max(p.nu2).sqrt();
            let lo = m0.min(m1).min(m2) - y_grid.halfwidth_sds * sd;
            let hi = m0.max(m1).max(m2) + y_grid.halfwidth_sds * sd;
            let k = y_grid.points;
            let mat = DMatrix::from_fn(k, 5, |r, c| {
                let y = lo + (hi - lo) * r as f64 / (k - 1) as f64;
                match c {
                    0 => log_density_unchecked(spec.pretrained.family, m0, v0, y).exp(),
                    1 => log_density_unchecked(Family::Gaussian, m1, p.nu1, y).exp(),
                    2 => gaussian_with_derivs(m2, p.nu2, y).0,
                    3 => gaussian_with_derivs(m2, p.nu2, y).1,
                    _ => gaussian_with_derivs(m2, p.nu2, y).2,
                }
            });
            worst = worst.min(min_singular_value_normalized(mat));
        }
    }
    Ok(IdentVerdict::new(
        Condition::Distinguishability,
        worst,
        threshold,
        m,
        5,
    ))
}

/// All four checks for one expert mean at a fixed reference point:
/// `beta = 1/sqrt(d)`, a decreasing `eta`, covariates `N(0, I_d)` drawn from
/// `seed`. Distinguishability uses a Laplace pre-trained expert with the same
/// mean function and a sign-flipped probe.
pub fn check_expert(
    kind: ExpertMean,
    d: usize,
    samples: usize,
    seed: u64,
    threshold: f64,
) -> Result<Vec<IdentVerdict>> {
    if d == 0 {
        return Err(Error::Input("dimension must be >= 1".into()));
    }
    let q = kind.param_dim(d);
    let beta = vec![1.0 / (d as f64).sqrt(); d];
    let mut eta: Vec<f64> = (0..q).map(|i| 0.6 - 0.15 * i as f64).collect();
    if q > d {
        eta[d] = 0.3;
    }
    let x = DMatrix::from_row_slice(samples, d, &covariate_draws(d, samples, seed));
    let mut out = strong_identifiability_check(kind, &beta, &eta, &x, threshold)?.to_vec();
    let spec = ModelSpec::new(
        d,
        PretrainedSpec {
            family: Family::Laplace,
            mean: kind,
            eta0: eta.clone(),
            nu0: 0.001,
        },
        kind,
    )?;
    let mut eta2 = eta.clone();
    eta2[0] = -eta2[0];
    let probes = [Probe {
        eta1: eta,
        nu1: 0.002,
        eta2,
        nu2: 0.001,
    }];
    let xs = DMatrix::from_row_slice(16, d, &covariate_draws(d, 16, seed ^ 1));
    out.push(distinguishability_check(
        &spec,
        &probes,
        &xs,
        YGrid::default(),
        threshold,
    )?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_column_is_rank_deficient() {
        let mat = DMatrix::from_column_slice(
            4,
            3,
            &[
                1.0, 2.0, 3.0, 4.0, //
                0.5, -1.0, 2.0, 0.0, //
                2.0, 4.0, 6.0, 8.0,
            ],
        );
        assert!(min_singular_value_normalized(mat) < 1e-12);
    }

    #[test]
    fn orthogonal_columns_have_unit_sigma() {
        let mat = DMatrix::from_column_slice(2, 2, &[3.0, 0.0, 0.0, -0.2]);
        assert!((min_singular_value_normalized(mat) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn too_few_samples_rejected() {
        let x = DMatrix::zeros(10, 2);
        let err =
            strong_identifiability_check(ExpertMean::TANH, &[0.1, 0.2], &[1.0, 0.5], &x, 1e-6);
        assert!(matches!(err, Err(Error::Input(_))));
    }

    #[test]
    fn family_drops_repeated_functions_only() {
        let mut f = Family_::new();
        f.push(vec![1.0, 2.0]);
        f.push(vec![2.0, 4.0 + 1e-15]);
        f.push(vec![-1.0, -2.0]);
        f.push(vec![1.0, 0.0]);
        f.push(vec![0.0, 0.0]);
        f.push(vec![0.0, 0.0]);
        assert_eq!(f.cols.len(), 4);
    }
}

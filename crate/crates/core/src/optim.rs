//! Box-constrained BFGS with a projected backtracking (Armijo) line search.
//!
//! Small dense problems only: the inverse Hessian approximation is stored in
//! full. Coordinates pinned at a bound with the gradient pushing outward are
//! frozen for the step.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the projected gradient norm falls below this.
    pub grad_tol: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

fn default_armijo() -> f64 {
    1e-4
}

fn default_backtracks() -> usize {
    60
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 100,
            grad_tol: 1e-8,
            armijo: default_armijo(),
            max_backtracks: default_backtracks(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    /// Projected gradient norm below tolerance.
    pub converged: bool,
    pub line_search_failed: bool,
}

/// Project `x` into `[lower, upper]` coordinatewise.
pub fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Gradient with components that would push `x` through an active bound zeroed.
pub fn projected_gradient(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((xi, gi), (lo, hi))| {
            if (*xi <= *lo && *gi > 0.0) || (*xi >= *hi && *gi < 0.0) {
                0.0
            } else {
                *gi
            }
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Minimize `objective` over the box. `objective(x, grad)` returns `f(x)` and
/// writes the gradient into `grad`.
///
/// Every accepted step strictly decreases `f`, so the returned point is never
/// worse than the projected start.
pub fn minimize_box<F>(
    mut objective: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &BfgsOptions,
) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut g = vec![0.0; n];
    let mut f = objective(&x, &mut g);
    // row-major inverse Hessian approximation
    let mut h = identity(n);
    let mut scaled = false;
    let mut g_new = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut line_search_failed = false;

    for iter in 0..opts.max_iter {
        let pg = projected_gradient(&x, &g, lower, upper);
        if norm(&pg) < opts.grad_tol {
            return Minimum {
                x,
                f,
                grad: g,
                iterations: iter,
                converged: true,
                line_search_failed: false,
            };
        }
        let free: Vec<bool> = pg
            .iter()
            .zip(&g)
            .map(|(p, gi)| *p != 0.0 || *gi == 0.0)
            .collect();
        let mut dir = direction(&h, &pg, &free);
        if !(dot(&dir, &pg) < 0.0) {
            h = identity(n);
            scaled = false;
            dir = pg.iter().map(|v| -v).collect();
        }

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..opts.max_backtracks {
            for i in 0..n {
                x_new[i] = (x[i] + step * dir[i]).clamp(lower[i], upper[i]);
            }
            if x_new == x {
                break;
            }
            let f_new = objective(&x_new, &mut g_new);
            let decrease: f64 = x_new
                .iter()
                .zip(&x)
                .zip(&g)
                .map(|((a, b), gi)| gi * (a - b))
                .sum();
            if f_new.is_finite() && f_new <= f + opts.armijo * decrease.min(0.0) && f_new < f {
                accepted = true;
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &yv);
                if sy > 1e-12 * norm(&s) * norm(&yv) && sy > 0.0 {
                    if !scaled {
                        let gamma = sy / dot(&yv, &yv);
                        h = identity(n);
                        h.iter_mut().for_each(|v| *v *= gamma);
                        scaled = true;
                    }
                    bfgs_update(&mut h, &s, &yv, sy);
                }
                x.copy_from_slice(&x_new);
                g.copy_from_slice(&g_new);
                f = f_new;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            line_search_failed = true;
            let pg = projected_gradient(&x, &g, lower, upper);
            return Minimum {
                converged: norm(&pg) < opts.grad_tol,
                x,
                f,
                grad: g,
                iterations: iter,
                line_search_failed,
            };
        }
    }
    let pg = projected_gradient(&x, &g, lower, upper);
    Minimum {
        converged: norm(&pg) < opts.grad_tol,
        x,
        f,
        grad: g,
        iterations: opts.max_iter,
        line_search_failed,
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

/// `-H pg` restricted to free coordinates.
fn direction(h: &[f64], pg: &[f64], free: &[bool]) -> Vec<f64> {
    let n = pg.len();
    (0..n)
        .map(|i| {
            if !free[i] {
                return 0.0;
            }
            -(0..n)
                .filter(|&j| free[j])
                .map(|j| h[i * n + j] * pg[j])
                .sum::<f64>()
        })
        .collect()
}

/// `H <- (I - rho s y') H (I - rho y s') + rho s s'`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum())
        .collect();
    let yhy = dot(y, &hy);
    let coef = (1.0 + rho * yhy) * rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += coef * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn solves_rosenbrock() {
        let opts = BfgsOptions {
            max_iter: 500,
            grad_tol: 1e-9,
            ..Default::default()
        };
        let m = minimize_box(rosenbrock, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], &opts);
        assert!(m.converged, "{m:?}");
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn respects_active_bound() {
        // minimum of (x - 3)^2 + (y + 1)^2 over [0, 2] x [0, 2] is (2, 0)
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 3.0);
            g[1] = 2.0 * (x[1] + 1.0);
            (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2)
        };
        let m = minimize_box(
            f,
            &[1.0, 1.0],
            &[0.0, 0.0],
            &[2.0, 2.0],
            &BfgsOptions::default(),
        );
        assert!(m.converged);
        assert_eq!(m.x, vec![2.0, 0.0]);
    }

    #[test]
    fn start_at_minimum_is_fixed_point() {
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * x[0];
            x[0] * x[0]
        };
        let m = minimize_box(f, &[0.0], &[-1.0], &[1.0], &BfgsOptions::default());
        assert_eq!(m.iterations, 0);
        assert_eq!(m.x, vec![0.0]);
    }

    #[test]
    fn never_worse_than_start() {
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 4.0 * x[0].powi(3) - 3.0;
            x[0].powi(4) - 3.0 * x[0]
        };
        let mut g = [0.0];
        for start in [-3.0, -0.5, 0.0, 0.7, 2.5] {
            let f0 = f(&[start], &mut g);
            let m = minimize_box(f, &[start], &[-3.0], &[3.0], &BfgsOptions::default());
            assert!(m.f <= f0);
        }
    }
}

//! One-dimensional quadrature rules.

/// Composite Simpson rule over `[a, b]` with `intervals` subintervals (rounded
/// up to even).
pub fn simpson<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, intervals: usize) -> f64 {
    let m = intervals.max(2).div_ceil(2) * 2;
    let h = (b - a) / m as f64;
    let mut acc = f(a) + f(b);
    for k in 1..m {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

/// Simpson weights for `points` equally spaced nodes on `[a, b]`
/// (`points` odd and >= 3). Returns `(nodes, weights)`.
pub fn simpson_rule(a: f64, b: f64, points: usize) -> (Vec<f64>, Vec<f64>) {
    let points = if points.is_multiple_of(2) {
        points + 1
    } else {
        points.max(3)
    };
    let m = points - 1;
    let h = (b - a) / m as f64;
    let nodes = (0..points).map(|k| a + k as f64 * h).collect();
    let weights = (0..points)
        .map(|k| {
            let w = if k == 0 || k == m {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * h / 3.0
        })
        .collect();
    (nodes, weights)
}

/// Adaptive Simpson with Richardson correction.
pub fn adaptive_simpson<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    recurse(&mut f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson over `[a, b]` split at the interior `breaks` (sorted and
/// clipped internally), so kinks at known points do not slow convergence.
pub fn adaptive_simpson_with_breaks<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: f64,
) -> f64 {
    let mut pts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|p| *p > a && *p < b)
        .collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts.insert(0, a);
    pts.push(b);
    let pieces = (pts.len() - 1) as f64;
    pts.windows(2)
        .map(|w| adaptive_simpson(&mut f, w[0], w[1], tol / pieces))
        .sum()
}

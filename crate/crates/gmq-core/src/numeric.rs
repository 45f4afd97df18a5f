//! Small numeric helpers shared across modules.

/// Pairwise (binary-tree) summation over `values` in index order.
///
/// Deterministic for a fixed input order regardless of how callers chunk
/// their work, and with O(log n) error growth instead of O(n).
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        let mut acc = 0.0;
        for v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Relative gap `|a - b| / max(1, |a|, |b|)`.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
}

/// Adaptive Simpson integration of `f` over the finite interval `[a, b]`
/// to absolute tolerance `tol` (Richardson-extrapolated).
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    // Fixed initial panels keep the error estimate honest on wide
    // intervals, where a single coarse pass can agree with its first
    // refinement by accident and stop before resolving the integrand.
    const INITIAL_PANELS: usize = 8;
    let h = (b - a) / INITIAL_PANELS as f64;
    let panel_tol = tol / INITIAL_PANELS as f64;
    let mut total = 0.0;
    for k in 0..INITIAL_PANELS {
        let lo = a + k as f64 * h;
        let hi = if k + 1 == INITIAL_PANELS { b } else { a + (k + 1) as f64 * h };
        let (fl, fh) = (f(lo), f(hi));
        let m = 0.5 * (lo + hi);
        let fm = f(m);
        total += simpson_recurse(f, lo, hi, fl, fm, fh, simpson(lo, hi, fl, fm, fh), panel_tol, 56);
    }
    total
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson_recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_inputs() {
        let xs: Vec<f64> = (0..7).map(|i| i as f64 * 0.1).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-15);
    }

    #[test]
    fn pairwise_sum_is_accurate_on_long_alternating_series() {
        // 1e5 terms of alternating +/- 1e-3 plus a big head term.
        let mut xs = vec![1e9];
        for i in 0..100_000 {
            xs.push(if i % 2 == 0 { 1e-3 } else { -1e-3 });
        }
        let s = pairwise_sum(&xs);
        assert_eq!(s, 1e9);
    }

    #[test]
    fn pairwise_sum_empty_is_zero() {
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn simpson_integrates_polynomials() {
        let f = |x: f64| x * x;
        assert!((integrate(&f, 0.0, 1.0, 1e-12) - 1.0 / 3.0).abs() < 1e-12);
        let g = |x: f64| x.powi(5) - 2.0 * x + 1.0;
        assert!((integrate(&g, -1.0, 2.0, 1e-12) - (63.0 / 6.0 - 3.0 + 3.0)).abs() < 1e-10);
        assert_eq!(integrate(&f, 1.0, 1.0, 1e-12), 0.0);
    }
}

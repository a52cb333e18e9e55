//! Adaptive Simpson quadrature.

/// Maximum recursion depth of the adaptive bisection.
pub const MAX_DEPTH: u32 = 50;

/// Upper limit on integrand evaluations in the adaptive phase; when it is
/// reached the remaining panels accept their extrapolated estimates.
pub const MAX_EVALUATIONS: usize = 1 << 22;

/// Number of equal panels the interval is split into before adaptation, so
/// that narrow features are not missed by the first five-point estimate.
const INITIAL_PANELS: usize = 16;

/// Integrates `f` over `[a, b]` to relative tolerance `rel_tol`.
///
/// The tolerance is measured against a coarse estimate of the total
/// integral, with an absolute floor of `rel_tol * 1e-12` so that integrals
/// that are exactly zero terminate. `a > b` yields the negated integral.
pub fn adaptive_simpson<F>(f: F, a: f64, b: f64, rel_tol: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    adaptive_simpson_with_floor(f, a, b, rel_tol, 0.0)
}

/// As [`adaptive_simpson`], with an absolute error floor `abs_tol`. Use it
/// when the integral is one piece of a larger quantity whose scale is known.
pub fn adaptive_simpson_with_floor<F>(f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    if a == b {
        return 0.0;
    }
    if a > b {
        return -adaptive_simpson_with_floor(f, b, a, rel_tol, abs_tol);
    }
    let h = (b - a) / INITIAL_PANELS as f64;
    let mut panels = Vec::with_capacity(INITIAL_PANELS);
    let mut coarse = 0.0;
    for i in 0..INITIAL_PANELS {
        let lo = a + i as f64 * h;
        let hi = if i + 1 == INITIAL_PANELS { b } else { lo + h };
        let (flo, fhi) = (f(lo), f(hi));
        let mid = 0.5 * (lo + hi);
        let fmid = f(mid);
        let whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
        coarse += whole.abs();
        panels.push((lo, hi, flo, fmid, fhi, whole));
    }
    let tol = (rel_tol * coarse).max(rel_tol * 1e-12).max(abs_tol);
    let panel_tol = tol / INITIAL_PANELS as f64;
    let mut budget = MAX_EVALUATIONS;
    panels
        .into_iter()
        .map(|(lo, hi, flo, fmid, fhi, whole)| {
            refine(
                &f,
                lo,
                hi,
                flo,
                fmid,
                fhi,
                whole,
                panel_tol,
                MAX_DEPTH,
                &mut budget,
            )
        })
        .sum()
}

/// Composite Simpson estimate on `panels` equal panels.
pub fn simpson<F>(f: F, a: f64, b: f64, panels: usize) -> f64
where
    F: Fn(f64) -> f64,
{
    let n = panels.max(1);
    let h = (b - a) / n as f64;
    (0..n)
        .map(|i| {
            let lo = a + i as f64 * h;
            let hi = if i + 1 == n { b } else { lo + h };
            (hi - lo) / 6.0 * (f(lo) + 4.0 * f(0.5 * (lo + hi)) + f(hi))
        })
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn refine<F>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    budget: &mut usize,
) -> f64
where
    F: Fn(f64) -> f64,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    *budget = budget.saturating_sub(2);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || *budget == 0 || delta.abs() <= 15.0 * tol || m <= a || m >= b {
        return left + right + delta / 15.0;
    }
    refine(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, budget)
        + refine(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, budget)
}

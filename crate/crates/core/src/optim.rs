//! Derivative-free minimisation by the Nelder-Mead simplex method.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplexControls {
    /// Stop when the spread of objective values over the simplex is below this.
    pub f_tol: f64,
    /// Budget of objective evaluations, shared by all restarts.
    pub max_evals: usize,
    /// Fresh simplices built around the best point after convergence.
    pub max_restarts: usize,
}

impl Default for SimplexControls {
    fn default() -> Self {
        SimplexControls {
            f_tol: 1e-9,
            max_evals: 10_000,
            max_restarts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimises `f` from `x0` with initial simplex edges `steps`.
///
/// Non-finite objective values are treated as `+inf`. After the simplex
/// collapses, the search restarts around the best point with the original
/// step sizes, until a restart fails to improve by more than `f_tol`.
pub fn nelder_mead<F>(
    mut f: F,
    x0: &[f64],
    steps: &[f64],
    controls: &SimplexControls,
) -> Result<SimplexResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    if n == 0 || steps.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} start values, {} steps",
            n,
            steps.len()
        )));
    }
    if x0.iter().chain(steps).any(|v| !v.is_finite()) || steps.contains(&0.0) {
        return Err(Error::invalid(
            "simplex",
            "start point and steps must be finite, steps nonzero",
        ));
    }
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut best_x = x0.to_vec();
    let mut best_v = eval(x0, &mut evals);
    let mut iterations = 0;
    let mut converged = false;
    for restart in 0..=controls.max_restarts {
        let before = best_v;
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((best_x.clone(), best_v));
        for i in 0..n {
            let mut p = best_x.clone();
            p[i] += steps[i];
            let v = eval(&p, &mut evals);
            simplex.push((p, v));
        }
        let mut collapsed = false;
        while evals < controls.max_evals {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let spread = simplex[n].1 - simplex[0].1;
            if spread.abs() < controls.f_tol
                || (simplex[0].1 == simplex[n].1 && simplex[0].1.is_finite())
            {
                collapsed = true;
                break;
            }
            iterations += 1;
            let mut centroid = vec![0.0; n];
            for (p, _) in &simplex[..n] {
                for (c, v) in centroid.iter_mut().zip(p) {
                    *c += v / n as f64;
                }
            }
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[n].0)
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };
            let xr = along(REFLECT);
            let fr = eval(&xr, &mut evals);
            if fr < simplex[0].1 {
                let xe = along(EXPAND);
                let fe = eval(&xe, &mut evals);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let t = if fr < simplex[n].1 {
                    CONTRACT
                } else {
                    -CONTRACT
                };
                let xc = along(t);
                let fc = eval(&xc, &mut evals);
                if fc < simplex[n].1.min(fr) {
                    simplex[n] = (xc, fc);
                } else {
                    let (head, tail) = simplex.split_at_mut(1);
                    let x_best = &head[0].0;
                    for (p, v) in tail.iter_mut() {
                        for (pi, bi) in p.iter_mut().zip(x_best) {
                            *pi = bi + SHRINK * (*pi - bi);
                        }
                        *v = eval(p, &mut evals);
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if simplex[0].1 < best_v {
            best_v = simplex[0].1;
            best_x = simplex[0].0.clone();
        }
        if !collapsed {
            break;
        }
        if restart > 0 && before - best_v <= controls.f_tol {
            converged = true;
            break;
        }
        if restart == controls.max_restarts {
            converged = true;
        }
    }
    Ok(SimplexResult {
        x: best_x,
        value: best_v,
        evaluations: evals,
        iterations,
        converged,
    })
}

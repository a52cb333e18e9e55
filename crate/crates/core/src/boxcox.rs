//! Box-Cox power transform and per-lead-time coefficient fitting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// |lambda| below this uses the logarithmic branch.
pub const LOG_BRANCH_THRESHOLD: f64 = 1e-8;

/// Minimum number of observations for a stable coefficient fit.
pub const MIN_FIT_SAMPLES: usize = 30;

/// A fitted Box-Cox coefficient and the data slice it was fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCoxParam {
    pub lambda: f64,
    pub lead_time_h: Option<u32>,
    pub n_samples: usize,
}

impl BoxCoxParam {
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::invalid(
                "lambda",
                format!("must be finite, got {lambda}"),
            ));
        }
        Ok(BoxCoxParam {
            lambda,
            lead_time_h: None,
            n_samples: 0,
        })
    }

    pub fn transform(&self, x: f64) -> Result<f64> {
        transform(x, self.lambda)
    }

    pub fn inverse(&self, y: f64) -> Result<f64> {
        inverse(y, self.lambda)
    }
}

#[inline]
fn is_log_branch(lambda: f64) -> bool {
    lambda.abs() < LOG_BRANCH_THRESHOLD
}

/// h_lambda(x) = (x^lambda - 1) / lambda, or log(x) for lambda = 0.
pub fn transform(x: f64, lambda: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain {
            what: "Box-Cox transform (x > 0)",
            value: x,
        });
    }
    Ok(transform_unchecked(x, lambda))
}

#[inline]
pub(crate) fn transform_unchecked(x: f64, lambda: f64) -> f64 {
    let lx = x.ln();
    if is_log_branch(lambda) {
        lx
    } else {
        (lambda * lx).exp_m1() / lambda
    }
}

/// Inverse transform: (lambda y + 1)^(1/lambda), or exp(y) for lambda = 0.
pub fn inverse(y: f64, lambda: f64) -> Result<f64> {
    if y.is_nan() {
        return Err(Error::Domain {
            what: "inverse Box-Cox transform",
            value: y,
        });
    }
    if is_log_branch(lambda) {
        return Ok(y.exp());
    }
    let base = lambda * y + 1.0;
    if !(base > 0.0) {
        return Err(Error::Domain {
            what: "inverse Box-Cox transform (lambda * y + 1 > 0)",
            value: y,
        });
    }
    Ok(((lambda * y).ln_1p() / lambda).exp())
}

/// Largest transformed value strictly inside the domain of the inverse, or
/// `None` when the domain is unbounded on that side.
pub fn inverse_domain(lambda: f64) -> (Option<f64>, Option<f64>) {
    if is_log_branch(lambda) {
        (None, None)
    } else if lambda > 0.0 {
        (Some(-1.0 / lambda), None)
    } else {
        (None, Some(-1.0 / lambda))
    }
}

/// Grid of candidate coefficients `lo, lo + step, ..., hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid {
            lo: -1.0,
            hi: 2.0,
            step: 0.01,
        }
    }
}

impl LambdaGrid {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::invalid(
                "lambda grid",
                format!("need lo < hi, got ({}, {})", self.lo, self.hi),
            ));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid(
                "lambda grid",
                format!("step must be positive, got {}", self.step),
            ));
        }
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        if n > 1_000_000 {
            return Err(Error::invalid("lambda grid", "more than 10^6 grid points"));
        }
        // Indexing avoids accumulated rounding; round to kill representation noise.
        Ok((0..=n)
            .map(|i| {
                let v = self.lo + i as f64 * self.step;
                (v * 1e12).round() / 1e12
            })
            .collect())
    }
}

/// Box-Cox profile log-likelihood of `x` at `lambda`, up to a constant:
/// -n/2 log(sigma_hat^2) + (lambda - 1) sum log x.
pub fn profile_log_likelihood(x: &[f64], lambda: f64) -> Result<f64> {
    let n = x.len() as f64;
    let mut sum_log = 0.0;
    let mut transformed = Vec::with_capacity(x.len());
    for &v in x {
        transformed.push(transform(v, lambda)?);
        sum_log += v.ln();
    }
    let mean = transformed.iter().sum::<f64>() / n;
    let var = transformed
        .iter()
        .map(|t| (t - mean) * (t - mean))
        .sum::<f64>()
        / n;
    if !(var > 0.0) {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(-0.5 * n * var.ln() + (lambda - 1.0) * sum_log)
}

/// Fits lambda by maximising the profile log-likelihood over a grid; ties
/// resolve to the smaller lambda.
pub fn fit_lambda(observations: &[f64], grid: &LambdaGrid) -> Result<BoxCoxParam> {
    if observations.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "Box-Cox fit needs at least {MIN_FIT_SAMPLES} observations, got {}",
            observations.len()
        )));
    }
    let mut best: Option<(f64, f64)> = None;
    for lambda in grid.points()? {
        let ll = profile_log_likelihood(observations, lambda)?;
        match best {
            Some((_, b)) if ll <= b => {}
            _ => best = Some((lambda, ll)),
        }
    }
    let (lambda, _) = best.expect("grid is nonempty");
    Ok(BoxCoxParam {
        lambda,
        lead_time_h: None,
        n_samples: observations.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_examples() {
        assert!((transform(std::f64::consts::E, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((transform(7.25, 1.0).unwrap() - 6.25).abs() < 1e-15);
        assert!((transform(4.0, 0.5).unwrap() - 2.0).abs() < 1e-15);
        assert!(transform(0.0, 0.5).is_err());
        assert!(transform(-3.0, 0.0).is_err());
        assert!(transform(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(inverse(0.0, 0.0).unwrap(), 1.0);
        assert!((inverse(2.0, 0.5).unwrap() - 4.0).abs() < 1e-14);
        assert!(inverse(-2.0, 0.5).is_err());
        assert!(inverse(2.0, -0.5).is_err());
        assert!(inverse(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn round_trip_on_landmarks() {
        for &x in &[17.5, 35.0, 546.0, 825.0, 1650.0] {
            for &l in &[-0.5, 0.0, 0.3, 1.0] {
                let back = inverse(transform(x, l).unwrap(), l).unwrap();
                assert!(((back - x) / x).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn continuity_at_zero() {
        for &x in &[17.5, 100.0, 1650.0] {
            assert!((transform(x, 1e-9).unwrap() - x.ln()).abs() < 1e-7);
            assert!((transform(x, 1e-6).unwrap() - x.ln()).abs() < 1e-4);
        }
    }

    #[test]
    fn grid_points_are_exact() {
        let g = LambdaGrid::default().points().unwrap();
        assert_eq!(g.len(), 301);
        assert_eq!(g[0], -1.0);
        assert_eq!(g[100], 0.0);
        assert_eq!(g[300], 2.0);
        assert!(LambdaGrid {
            lo: 1.0,
            hi: 0.0,
            step: 0.1
        }
        .points()
        .is_err());
    }

    #[test]
    fn fit_needs_enough_data() {
        let x: Vec<f64> = (1..30).map(|i| i as f64).collect();
        assert!(matches!(
            fit_lambda(&x, &LambdaGrid::default()),
            Err(Error::InsufficientData(_))
        ));
    }
}

use super::{
    check_finite, check_probability, crps_by_quadrature, PredictiveCdf, TruncatedNormal,
    CRPS_REL_TOL,
};
use crate::error::{Error, Result};

/// Tolerance on the sum of mixture weights.
const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Absolute tolerance of the quantile bisection.
const QUANTILE_TOL: f64 = 1e-10;

/// A finite mixture of truncated normals sharing the same bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedNormalMixture {
    components: Vec<TruncatedNormal>,
    weights: Vec<f64>,
}

impl TruncatedNormalMixture {
    pub fn new(components: Vec<TruncatedNormal>, weights: Vec<f64>) -> Result<Self> {
        Self::validate_shape(&components, &weights)?;
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(
                "weights",
                format!("must sum to 1, got {sum}"),
            ));
        }
        Ok(TruncatedNormalMixture {
            components,
            weights,
        })
    }

    /// Builds a mixture after rescaling nonnegative weights to sum to one.
    pub fn normalized(components: Vec<TruncatedNormal>, weights: Vec<f64>) -> Result<Self> {
        Self::validate_shape(&components, &weights)?;
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::invalid(
                "weights",
                format!("must have a positive sum, got {sum}"),
            ));
        }
        let weights = weights.iter().map(|w| w / sum).collect();
        Ok(TruncatedNormalMixture {
            components,
            weights,
        })
    }

    fn validate_shape(components: &[TruncatedNormal], weights: &[f64]) -> Result<()> {
        if components.is_empty() {
            return Err(Error::invalid(
                "components",
                "mixture needs at least one component",
            ));
        }
        if components.len() != weights.len() {
            return Err(Error::invalid(
                "weights",
                format!(
                    "{} weights for {} components",
                    weights.len(),
                    components.len()
                ),
            ));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::invalid(
                "weights",
                format!("must be nonnegative, got {w}"),
            ));
        }
        let (a, b) = (components[0].lower(), components[0].upper());
        if components.iter().any(|c| c.lower() != a || c.upper() != b) {
            return Err(Error::invalid(
                "components",
                "all components must share the same bounds",
            ));
        }
        Ok(())
    }

    pub fn components(&self) -> &[TruncatedNormal] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn active(&self) -> impl Iterator<Item = (&TruncatedNormal, f64)> {
        self.components
            .iter()
            .zip(self.weights.iter().copied())
            .filter(|(_, w)| *w > 0.0)
    }

    pub fn pdf(&self, x: f64) -> Result<f64> {
        check_finite("mixture pdf argument", x)?;
        Ok(self.active().map(|(c, w)| w * c.density(x)).sum())
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        check_finite("mixture cdf argument", x)?;
        Ok(self.eval_cdf(x))
    }
}

impl PredictiveCdf for TruncatedNormalMixture {
    fn eval_cdf(&self, x: f64) -> f64 {
        // Components share the support, so the bounds are exact.
        let c = &self.components[0];
        if x <= c.lower() {
            return 0.0;
        }
        if x >= c.upper() {
            return 1.0;
        }
        let s: f64 = self.active().map(|(c, w)| w * c.eval_cdf(x)).sum();
        s.clamp(0.0, 1.0)
    }

    fn quantile(&self, p: f64) -> Result<f64> {
        check_probability(p)?;
        // The mixture quantile lies between the extreme component quantiles.
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (c, _) in self.active() {
            let q = c.quantile(p)?;
            lo = lo.min(q);
            hi = hi.max(q);
        }
        if lo == hi {
            return Ok(lo);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.eval_cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= QUANTILE_TOL && (self.eval_cdf(0.5 * (lo + hi)) - p).abs() < 1e-12 {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    fn bounds(&self) -> (f64, f64) {
        (self.components[0].lower(), self.components[0].upper())
    }

    fn effective_support(&self) -> (f64, f64) {
        self.active()
            .map(|(c, _)| c.effective_support())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (l, h)| {
                (lo.min(l), hi.max(h))
            })
    }

    fn crps(&self, x: f64) -> Result<f64> {
        check_finite("CRPS observation", x)?;
        let (lo, hi) = self.effective_support();
        Ok(crps_by_quadrature(
            |y| self.eval_cdf(y),
            lo,
            hi,
            x,
            CRPS_REL_TOL,
        ))
    }
}

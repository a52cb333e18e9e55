//! Verification of probabilistic forecasts on the original scale.
//!
//! Predictive distributions live on the Box-Cox scale; CRPS is integrated on
//! the original scale and quantiles are back-transformed before point and
//! interval scores are computed. PIT values are invariant under the monotone
//! transform and are evaluated directly.

mod stats;

pub use stats::{
    dm_lags, dm_test, dm_test_values, dm_test_with_lags, ks_uniformity, ks_uniformity_subsampled,
    pit_histogram, rank_pit, verification_rank, DmResult, RankHistogram, DM_MIN_CASES,
};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::boxcox;
use crate::distributions::{crps_by_quadrature, PredictiveCdf};
use crate::error::{Error, Result};

/// Relative tolerance of the back-transformed CRPS quadrature.
pub const BACKTRANSFORM_REL_TOL: f64 = 1e-7;

/// Predictive CDF mass tolerated outside the domain of the inverse transform.
const DOMAIN_MASS_TOL: f64 = 1e-12;

/// Kind and unit of the values in a [`ScoreSeries`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    CrpsCm,
    AbsErrCm,
    Pit,
    IntervalHit,
    IntervalWidthCm,
}

/// Identifies a verification case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CaseId {
    pub date: NaiveDate,
    pub lead_time_h: u32,
}

/// Per-case scores of one model, in case order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub kind: ScoreKind,
    pub case_ids: Vec<CaseId>,
    pub values: Vec<f64>,
}

impl ScoreSeries {
    pub fn new(kind: ScoreKind, case_ids: Vec<CaseId>, values: Vec<f64>) -> Result<Self> {
        if case_ids.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} case ids for {} values",
                case_ids.len(),
                values.len()
            )));
        }
        Ok(ScoreSeries {
            kind,
            case_ids,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean over the non-NaN values.
    pub fn mean(&self) -> f64 {
        let (s, n) = self
            .values
            .iter()
            .filter(|v| !v.is_nan())
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        s / n as f64
    }
}

/// Values of two series over their common cases, dropping a case from both
/// when either value is missing. The case ids must match one-to-one.
pub fn align(a: &ScoreSeries, b: &ScoreSeries) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.case_ids != b.case_ids {
        return Err(Error::DimensionMismatch(
            "score series cover different cases".into(),
        ));
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .filter(|(x, y)| !x.is_nan() && !y.is_nan())
        .map(|(x, y)| (*x, *y))
        .unzip())
}

/// Maps transformed values into the domain of the inverse transform, or
/// fails when the distribution puts mass outside it.
fn original_scale_limits<F: PredictiveCdf + ?Sized>(f: &F, lambda: f64) -> Result<(f64, f64)> {
    let (lo, hi) = f.effective_support();
    let (dom_lo, dom_hi) = boxcox::inverse_domain(lambda);
    let lo = match dom_lo {
        Some(edge) if lo <= edge => {
            if f.eval_cdf(edge) > DOMAIN_MASS_TOL {
                return Err(Error::Domain {
                    what: "inverse Box-Cox transform of the predictive support",
                    value: lo,
                });
            }
            0.0
        }
        _ => boxcox::inverse(lo, lambda)?,
    };
    let hi = match dom_hi {
        // The original scale would be unbounded above.
        Some(edge) if hi >= edge => {
            return Err(Error::Domain {
                what: "inverse Box-Cox transform of the predictive support",
                value: hi,
            });
        }
        _ => boxcox::inverse(hi, lambda)?,
    };
    Ok((lo, hi))
}

/// CRPS on the original scale of a distribution given on the Box-Cox scale.
///
/// Integrates `F(h(u))^2` below and `(1 - F(h(u)))^2` above the observation
/// `y` over the back-transformed support; observations outside the support
/// add the linear distance to it.
pub fn crps_backtransformed<F: PredictiveCdf + ?Sized>(f: &F, lambda: f64, y: f64) -> Result<f64> {
    if !(y.is_finite() && y > 0.0) {
        return Err(Error::Domain {
            what: "observation on the original scale (y > 0)",
            value: y,
        });
    }
    let (lo, hi) = original_scale_limits(f, lambda)?;
    let cdf = |u: f64| {
        if u <= 0.0 {
            // Only reachable when lambda > 0 and the domain edge is the limit.
            f.eval_cdf(
                boxcox::inverse_domain(lambda)
                    .0
                    .unwrap_or(f64::NEG_INFINITY),
            )
        } else {
            f.eval_cdf(boxcox::transform_unchecked(u, lambda))
        }
    };
    Ok(crps_by_quadrature(cdf, lo, hi, y, BACKTRANSFORM_REL_TOL))
}

/// CRPS of the empirical distribution of `members` at `y`.
///
/// Uses the sorted form of E|X - y| - E|X - X'| / 2, which is exact and
/// O(M log M).
pub fn crps_ensemble(members: &[f64], y: f64) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::invalid("members", "ensemble is empty"));
    }
    if let Some(v) = members
        .iter()
        .chain(std::iter::once(&y))
        .find(|v| !v.is_finite())
    {
        return Err(Error::Domain {
            what: "ensemble CRPS input",
            value: *v,
        });
    }
    let mut sorted = members.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    let abs_dev: f64 = sorted.iter().map(|x| (x - y).abs()).sum::<f64>() / m;
    let spread: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i as f64 + 1.0) - m - 1.0) * x)
        .sum::<f64>()
        / (m * m);
    Ok((abs_dev - spread).max(0.0))
}

/// Skill of the mean score relative to the mean reference score.
pub fn crpss(score: &ScoreSeries, reference: &ScoreSeries) -> Result<f64> {
    let (s, r) = align(score, reference)?;
    if s.is_empty() {
        return Err(Error::InsufficientData(
            "no common cases for the skill score".into(),
        ));
    }
    let ms = s.iter().sum::<f64>() / s.len() as f64;
    let mr = r.iter().sum::<f64>() / r.len() as f64;
    if !(mr > 0.0) {
        return Err(Error::invalid(
            "reference",
            format!("mean reference score must be positive, got {mr}"),
        ));
    }
    Ok(1.0 - ms / mr)
}

/// Mean absolute error of point forecasts.
pub fn mae_median(medians: &[f64], observations: &[f64]) -> Result<f64> {
    if medians.len() != observations.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} medians for {} observations",
            medians.len(),
            observations.len()
        )));
    }
    if medians.is_empty() {
        return Err(Error::InsufficientData("no cases for the MAE".into()));
    }
    Ok(medians
        .iter()
        .zip(observations)
        .map(|(m, x)| (m - x).abs())
        .sum::<f64>()
        / medians.len() as f64)
}

/// Empirical median; the midpoint of the central pair for an even count.
pub fn ensemble_median(members: &[f64]) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::invalid("members", "ensemble is empty"));
    }
    let mut sorted = members.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

/// Back-transforms a quantile, mapping values beyond the inverse domain to
/// its edge.
fn backtransform_quantile(q: f64, lambda: f64) -> Result<f64> {
    match boxcox::inverse_domain(lambda) {
        (Some(edge), _) if q <= edge => Ok(0.0),
        (_, Some(edge)) if q >= edge => Ok(f64::INFINITY),
        _ => boxcox::inverse(q, lambda),
    }
}

/// Predictive median on the original scale.
pub fn predictive_median<F: PredictiveCdf + ?Sized>(f: &F, lambda: f64) -> Result<f64> {
    backtransform_quantile(f.quantile(0.5)?, lambda)
}

/// Level `alpha` matched to an ensemble of `m` members, whose range is a
/// central interval with nominal coverage (m - 1) / (m + 1).
pub fn ensemble_alpha(m: usize) -> f64 {
    2.0 / (m as f64 + 1.0)
}

/// Whether `y` falls inside the central `(1 - alpha)` interval, and the
/// interval width, both on the original scale.
pub fn interval_coverage_width<F: PredictiveCdf + ?Sized>(
    f: &F,
    lambda: f64,
    alpha: f64,
    y: f64,
) -> Result<(bool, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(
            "alpha",
            format!("must lie in (0, 1), got {alpha}"),
        ));
    }
    let lo = backtransform_quantile(f.quantile(alpha / 2.0)?, lambda)?;
    let hi = backtransform_quantile(f.quantile(1.0 - alpha / 2.0)?, lambda)?;
    Ok((lo <= y && y <= hi, hi - lo))
}

/// Coverage and width of the ensemble range.
pub fn ensemble_interval(members: &[f64], y: f64) -> Result<(bool, f64)> {
    if members.is_empty() {
        return Err(Error::invalid("members", "ensemble is empty"));
    }
    let lo = members.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = members.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo <= y && y <= hi, hi - lo))
}

/// Probability integral transform: the predictive CDF at the observation.
pub fn pit<F: PredictiveCdf + ?Sized>(f: &F, x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::Domain {
            what: "PIT observation",
            value: x,
        });
    }
    let (lo, hi) = f.bounds();
    Ok(if x <= lo {
        0.0
    } else if x >= hi {
        1.0
    } else {
        f.eval_cdf(x)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxcox::transform;
    use crate::distributions::{TruncatedNormal, TruncatedNormalMixture};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn crps_ensemble_examples() {
        assert_eq!(crps_ensemble(&[3.0], 1.5).unwrap(), 1.5);
        assert_eq!(crps_ensemble(&[0.0, 2.0], 1.0).unwrap(), 0.5);
        assert!(crps_ensemble(&[], 1.0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let members: Vec<f64> = (0..79).map(|_| rng.random_range(100.0..400.0)).collect();
        let y = 250.0;
        let m = members.len() as f64;
        let a: f64 = members.iter().map(|x| (x - y).abs()).sum::<f64>() / m;
        let b: f64 = members
            .iter()
            .flat_map(|p| members.iter().map(move |q| (p - q).abs()))
            .sum::<f64>()
            / (m * m);
        assert!((crps_ensemble(&members, y).unwrap() - (a - 0.5 * b)).abs() < 1e-10);
    }

    fn lambda_quarter_mixture() -> TruncatedNormalMixture {
        let lam = 0.25;
        let (a, b) = (
            transform(17.5, lam).unwrap(),
            transform(1650.0, lam).unwrap(),
        );
        TruncatedNormalMixture::new(
            vec![
                TruncatedNormal::new(transform(500.0, lam).unwrap(), 0.8, a, b).unwrap(),
                TruncatedNormal::new(transform(600.0, lam).unwrap(), 0.8, a, b).unwrap(),
            ],
            vec![0.4, 0.6],
        )
        .unwrap()
    }

    #[test]
    fn backtransformed_crps_reference_value() {
        let m = lambda_quarter_mixture();
        // 50-digit quadrature reference on the original scale.
        let got = crps_backtransformed(&m, 0.25, 546.0).unwrap();
        assert!((got - 25.394_978_111_919_11).abs() < 1e-5, "{got}");
    }

    #[test]
    fn identity_transform_matches_shifted_crps() {
        let d = TruncatedNormal::new(5.0, 1.3, 2.0, 9.0).unwrap();
        for &y in &[2.5, 4.0, 6.2, 10.5, 11.0] {
            let want = d.crps(y - 1.0).unwrap();
            let got = crps_backtransformed(&d, 1.0, y).unwrap();
            assert!(
                (got - want).abs() < 1e-7 * (1.0 + want),
                "{y}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn sharp_forecast_has_tiny_crps() {
        let lam = 0.5;
        let (a, b) = (
            transform(17.5, lam).unwrap(),
            transform(1650.0, lam).unwrap(),
        );
        let d = TruncatedNormal::new(transform(300.0, lam).unwrap(), 1e-6, a, b).unwrap();
        assert!(crps_backtransformed(&d, lam, 300.0).unwrap() < 1e-4);
        assert!(crps_backtransformed(&d, lam, -1.0).is_err());
    }

    #[test]
    fn log_transform_without_lower_bound() {
        let d = TruncatedNormal::untruncated(5.0, 0.3).unwrap();
        let got = crps_backtransformed(&d, 0.0, 150.0).unwrap();
        assert!(got.is_finite() && got > 0.0);
        // Unbounded parent beyond the inverse domain is rejected.
        let d = TruncatedNormal::untruncated(0.0, 1.0).unwrap();
        assert!(crps_backtransformed(&d, 0.5, 1.0).is_err());
    }

    fn series(values: Vec<f64>) -> ScoreSeries {
        let d0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let ids = (0..values.len())
            .map(|i| CaseId {
                date: d0 + chrono::Days::new(i as u64),
                lead_time_h: 24,
            })
            .collect();
        ScoreSeries::new(ScoreKind::CrpsCm, ids, values).unwrap()
    }

    #[test]
    fn crpss_examples() {
        let r = series(vec![1.0, 2.0, 3.0]);
        assert_eq!(crpss(&r, &r).unwrap(), 0.0);
        assert_eq!(crpss(&series(vec![0.0; 3]), &r).unwrap(), 1.0);
        let s = series(vec![0.8, 0.8]);
        assert!((crpss(&s, &series(vec![1.0, 1.0])).unwrap() - 0.2).abs() < 1e-15);
        assert!(crpss(&s, &series(vec![0.0, 0.0])).is_err());
        // A missing value drops the case from both series.
        let s = series(vec![0.5, f64::NAN, 0.5]);
        let r = series(vec![1.0, 100.0, 1.0]);
        assert_eq!(crpss(&s, &r).unwrap(), 0.5);
    }

    #[test]
    fn median_and_mae() {
        assert_eq!(mae_median(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae_median(&[1.5, 4.5], &[1.0, 4.0]).unwrap(), 0.5);
        let members: Vec<f64> = (1..=79).rev().map(f64::from).collect();
        assert_eq!(ensemble_median(&members).unwrap(), 40.0);
        assert_eq!(ensemble_median(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
        let d = TruncatedNormal::new(2.0, 1.0, 0.0, 4.0).unwrap();
        assert!((predictive_median(&d, 1.0).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn interval_examples() {
        assert!((1.0 - ensemble_alpha(79) - 0.975).abs() < 1e-15);
        let d = TruncatedNormal::untruncated(10.0, 1.0).unwrap();
        let (hit, width) = interval_coverage_width(&d, 1.0, 0.05, 11.0).unwrap();
        assert!(hit);
        assert!((width - 2.0 * 1.959_963_984_540_054).abs() < 1e-9);
        let (hit, _) = interval_coverage_width(&d, 1.0, 0.05, 9.0).unwrap();
        assert!(!hit);
        let sharp = TruncatedNormal::untruncated(30.0, 1e-12).unwrap();
        assert!(interval_coverage_width(&sharp, 1.0, 0.05, 31.0).unwrap().1 < 1e-10);
        assert_eq!(
            ensemble_interval(&[3.0, 1.0, 2.0], 2.5).unwrap(),
            (true, 2.0)
        );
        assert!(!ensemble_interval(&[3.0, 1.0, 2.0], 0.5).unwrap().0);
    }

    #[test]
    fn calibrated_coverage_is_nominal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let alpha = ensemble_alpha(79);
        let mut hits = 0;
        for _ in 0..10_000 {
            let mu: f64 = rng.random_range(3.0..7.0);
            let d = TruncatedNormal::new(mu, 1.0, 0.0, 10.0).unwrap();
            let x = d.quantile(rng.random_range(1e-12..1.0)).unwrap();
            if interval_coverage_width(&d, 0.5, alpha, boxcox::inverse(x, 0.5).unwrap())
                .unwrap()
                .0
            {
                hits += 1;
            }
        }
        let cov = hits as f64 / 10_000.0;
        assert!((0.965..=0.985).contains(&cov), "{cov}");
    }

    #[test]
    fn pit_examples() {
        let d = TruncatedNormal::new(2.0, 1.0, 0.0, 5.0).unwrap();
        assert_eq!(pit(&d, 0.0).unwrap(), 0.0);
        assert_eq!(pit(&d, -3.0).unwrap(), 0.0);
        assert_eq!(pit(&d, 6.0).unwrap(), 1.0);
        let med = d.quantile(0.5).unwrap();
        assert!((pit(&d, med).unwrap() - 0.5).abs() < 1e-12);
    }
}

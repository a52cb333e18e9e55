//! Truncated normal EMOS: location affine in the group means, variance
//! affine in the ensemble variance, fitted by minimum mean CRPS.

use serde::{Deserialize, Serialize};

use crate::bma::{ForecastCase, GroupSpec};
use crate::distributions::{PredictiveCdf, TruncatedNormal};
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, SimplexControls};

/// Group means and the pooled unbiased ensemble variance of one case.
#[derive(Debug, Clone, PartialEq)]
pub struct EmosFeatures {
    pub group_means: Vec<f64>,
    pub variance: f64,
    /// Set when the ensemble has a single member and the variance is zero.
    pub single_member: bool,
}

pub fn emos_features(case: &ForecastCase, spec: &GroupSpec) -> Result<EmosFeatures> {
    case.check(spec)?;
    let group_means = case
        .members
        .iter()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect();
    let m = spec.total_members();
    if m == 1 {
        return Ok(EmosFeatures {
            group_means,
            variance: 0.0,
            single_member: true,
        });
    }
    let mean = case.flat_members().sum::<f64>() / m as f64;
    let variance = case
        .flat_members()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (m - 1) as f64;
    Ok(EmosFeatures {
        group_means,
        variance,
        single_member: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmosDiagnostics {
    pub evaluations: usize,
    pub iterations: usize,
    #[serde(with = "crate::serde_float")]
    pub initial_mean_crps: f64,
    #[serde(with = "crate::serde_float")]
    pub final_mean_crps: f64,
    pub converged: bool,
    /// Some training case had a single member, so its variance was zero.
    pub single_member: bool,
    /// The predicted scale hit its floor for some training case.
    pub scale_floored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmosModel {
    pub group_spec: GroupSpec,
    /// Intercept followed by one coefficient per group mean.
    pub a: Vec<f64>,
    pub b0: f64,
    pub b1: f64,
    #[serde(with = "crate::serde_float")]
    pub lower: f64,
    #[serde(with = "crate::serde_float")]
    pub upper: f64,
    pub diagnostics: EmosDiagnostics,
}

/// Smallest predicted scale: 1e-6 (b - a), or 1e-6 for unbounded support.
fn sigma_floor(lower: f64, upper: f64) -> f64 {
    let span = upper - lower;
    if span.is_finite() {
        1e-6 * span
    } else {
        1e-6
    }
}

fn location_scale(
    a: &[f64],
    b0: f64,
    b1: f64,
    feat: &EmosFeatures,
    floor: f64,
) -> (f64, f64, bool) {
    let mu = a[0]
        + a[1..]
            .iter()
            .zip(&feat.group_means)
            .map(|(c, m)| c * m)
            .sum::<f64>();
    let sigma = (b0 + b1 * feat.variance).sqrt();
    if sigma > floor {
        (mu, sigma, false)
    } else {
        (mu, floor, true)
    }
}

impl EmosModel {
    pub fn validate(&self) -> Result<()> {
        let k = self.group_spec.n_groups();
        if self.a.len() != k + 1 {
            return Err(Error::Document(format!(
                "expected {} location coefficients, got {}",
                k + 1,
                self.a.len()
            )));
        }
        if self.a.iter().any(|c| !c.is_finite()) {
            return Err(Error::Document(
                "location coefficients must be finite".into(),
            ));
        }
        if !(self.b0 >= 0.0 && self.b1 >= 0.0 && self.b0.is_finite() && self.b1.is_finite()) {
            return Err(Error::Document(format!(
                "scale coefficients must be nonnegative, got {} and {}",
                self.b0, self.b1
            )));
        }
        if self.lower.is_nan() || self.upper.is_nan() || self.lower >= self.upper {
            return Err(Error::Document(format!(
                "bad bounds [{}, {}]",
                self.lower, self.upper
            )));
        }
        Ok(())
    }

    /// Number of free parameters: K + 1 location and two scale coefficients.
    pub fn free_parameters(&self) -> usize {
        self.a.len() + 2
    }

    /// Predictive distribution and whether its scale was floored.
    pub fn predict_flagged(&self, case: &ForecastCase) -> Result<(TruncatedNormal, bool)> {
        let feat = emos_features(case, &self.group_spec)?;
        let (mu, sigma, floored) = location_scale(
            &self.a,
            self.b0,
            self.b1,
            &feat,
            sigma_floor(self.lower, self.upper),
        );
        Ok((
            TruncatedNormal::new(mu, sigma, self.lower, self.upper)?,
            floored,
        ))
    }

    pub fn predict(&self, case: &ForecastCase) -> Result<TruncatedNormal> {
        self.predict_flagged(case).map(|(d, _)| d)
    }
}

pub fn emos_predict(model: &EmosModel, case: &ForecastCase) -> Result<TruncatedNormal> {
    model.predict(case)
}

/// Optimiser settings for [`emos_fit`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EmosControls {
    pub simplex: SimplexControls,
}

/// Fits the coefficients by minimising the mean CRPS over `training`.
///
/// The scale coefficients are optimised through their square roots, so they
/// are nonnegative by construction. The search starts at a zero intercept,
/// group coefficients proportional to group size, the residual variance of
/// the ensemble mean as `b0` and `b1 = 1`.
pub fn emos_fit(
    training: &[ForecastCase],
    spec: &GroupSpec,
    bounds: (f64, f64),
    controls: &EmosControls,
) -> Result<EmosModel> {
    let (lower, upper) = bounds;
    if lower.is_nan() || upper.is_nan() || lower >= upper {
        return Err(Error::invalid(
            "bounds",
            format!("need lower < upper, got [{lower}, {upper}]"),
        ));
    }
    if training.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "EMOS needs at least 2 training cases, got {}",
            training.len()
        )));
    }
    let mut feats = Vec::with_capacity(training.len());
    let mut obs = Vec::with_capacity(training.len());
    for case in training {
        feats.push(emos_features(case, spec)?);
        obs.push(case.observation.ok_or_else(|| {
            Error::InsufficientData(format!(
                "training case {} lead {} h has no observation",
                case.date, case.lead_time_h
            ))
        })?);
    }
    let single_member = feats.iter().any(|f| f.single_member);
    let k = spec.n_groups();
    let m = spec.total_members() as f64;
    let n = training.len() as f64;

    let residuals: Vec<f64> = feats
        .iter()
        .zip(&obs)
        .map(|(f, x)| {
            let ens_mean: f64 = f
                .group_means
                .iter()
                .zip(spec.groups())
                .map(|(v, g)| v * g.size as f64)
                .sum::<f64>()
                / m;
            x - ens_mean
        })
        .collect();
    let r_mean = residuals.iter().sum::<f64>() / n;
    let r_var = residuals
        .iter()
        .map(|r| (r - r_mean) * (r - r_mean))
        .sum::<f64>()
        / (n - 1.0);
    let obs_mean = obs.iter().sum::<f64>() / n;
    let obs_sd = (obs
        .iter()
        .map(|x| (x - obs_mean) * (x - obs_mean))
        .sum::<f64>()
        / (n - 1.0))
        .sqrt();
    let scale = if obs_sd > 0.0 { obs_sd } else { 1.0 };

    let floor = sigma_floor(lower, upper);
    let objective = |theta: &[f64]| -> f64 {
        let a = &theta[..=k];
        let (b0, b1) = (theta[k + 1] * theta[k + 1], theta[k + 2] * theta[k + 2]);
        let mut total = 0.0;
        for (feat, &x) in feats.iter().zip(&obs) {
            let (mu, sigma, _) = location_scale(a, b0, b1, feat, floor);
            match TruncatedNormal::new(mu, sigma, lower, upper).and_then(|d| d.crps(x)) {
                Ok(c) => total += c,
                Err(_) => return f64::INFINITY,
            }
        }
        total / n
    };

    let mut x0 = Vec::with_capacity(k + 3);
    x0.push(0.0);
    x0.extend(spec.groups().iter().map(|g| g.size as f64 / m));
    x0.push(r_var.max(floor * floor).sqrt());
    x0.push(1.0);
    let steps: Vec<f64> = x0
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if i == 0 {
                0.25 * scale
            } else if v.abs() > 1e-3 {
                0.25 * v.abs()
            } else {
                0.05
            }
        })
        .collect();
    let initial = objective(&x0);
    let result = nelder_mead(objective, &x0, &steps, &controls.simplex)?;
    if !result.converged {
        log::debug!(
            "EMOS optimisation stopped after {} evaluations",
            result.evaluations
        );
    }
    let theta = result.x;
    let (b0, b1) = (theta[k + 1] * theta[k + 1], theta[k + 2] * theta[k + 2]);
    let scale_floored = feats
        .iter()
        .any(|f| location_scale(&theta[..=k], b0, b1, f, floor).2);
    Ok(EmosModel {
        group_spec: spec.clone(),
        a: theta[..=k].to_vec(),
        b0,
        b1,
        lower,
        upper,
        diagnostics: EmosDiagnostics {
            evaluations: result.evaluations,
            iterations: result.iterations,
            initial_mean_crps: initial,
            final_mean_crps: result.value,
            converged: result.converged,
            single_member,
            scale_floored,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn case(members: Vec<Vec<f64>>, obs: Option<f64>) -> ForecastCase {
        ForecastCase {
            date: NaiveDate::from_ymd_opt(2019, 6, 1).unwrap(),
            lead_time_h: 48,
            members,
            observation: obs,
        }
    }

    #[test]
    fn feature_examples() {
        let spec = GroupSpec::parse("a:1,b:2").unwrap();
        let f = emos_features(&case(vec![vec![3.0], vec![3.0, 3.0]], None), &spec).unwrap();
        assert_eq!(f.group_means, vec![3.0, 3.0]);
        assert_eq!(f.variance, 0.0);
        let spec = GroupSpec::parse("g:2").unwrap();
        let f = emos_features(&case(vec![vec![0.0, 2.0]], None), &spec).unwrap();
        assert_eq!((f.group_means[0], f.variance), (1.0, 2.0));
        let spec = GroupSpec::parse("g:1").unwrap();
        let f = emos_features(&case(vec![vec![5.0]], None), &spec).unwrap();
        assert!(f.single_member && f.variance == 0.0);
        let f = emos_features(
            &case(
                vec![vec![0.0; 1], vec![1.0; 51], vec![2.0; 16], vec![3.0; 11]],
                None,
            ),
            &GroupSpec::rhine_default(),
        )
        .unwrap();
        assert_eq!(f.group_means.len(), 4);
    }

    fn model(spec: GroupSpec, a: Vec<f64>, b0: f64, b1: f64) -> EmosModel {
        EmosModel {
            group_spec: spec,
            a,
            b0,
            b1,
            lower: 0.0,
            upper: 10.0,
            diagnostics: EmosDiagnostics {
                evaluations: 0,
                iterations: 0,
                initial_mean_crps: 0.0,
                final_mean_crps: 0.0,
                converged: true,
                single_member: false,
                scale_floored: false,
            },
        }
    }

    #[test]
    fn prediction_examples() {
        let spec = GroupSpec::parse("a:1,b:3").unwrap();
        let m = model(spec, vec![0.0, 0.25, 0.75], 0.49, 0.0);
        let c = case(vec![vec![2.0], vec![4.0, 5.0, 6.0]], None);
        let d = m.predict(&c).unwrap();
        assert!((d.mu() - 4.25).abs() < 1e-15);
        assert!((d.sigma() - 0.7).abs() < 1e-15);
        let flat = case(vec![vec![5.0], vec![5.0; 3]], None);
        assert!((m.predict(&flat).unwrap().sigma() - 0.7).abs() < 1e-15);
        let zero = EmosModel {
            b0: 0.0,
            ..m.clone()
        };
        let (d, floored) = zero.predict_flagged(&flat).unwrap();
        assert!(floored && (d.sigma() - 1e-5).abs() < 1e-18);
        assert_eq!(
            model(GroupSpec::rhine_default(), vec![0.0; 5], 1.0, 1.0).free_parameters(),
            7
        );
        assert!(m.predict(&case(vec![vec![2.0]], None)).is_err());
    }

    fn synthetic(seed: u64, n: usize) -> (GroupSpec, Vec<ForecastCase>) {
        let spec = GroupSpec::parse("solo:1").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let cases = (0..n)
            .map(|_| {
                let f: f64 = rng.random_range(0.0..20.0);
                let x = 2.0 + 0.5 * f + noise.sample(&mut rng);
                case(vec![vec![f]], Some(x))
            })
            .collect();
        (spec, cases)
    }

    #[test]
    fn recovers_generating_coefficients() {
        let (spec, cases) = synthetic(7, 400);
        let m = emos_fit(&cases, &spec, (-100.0, 100.0), &EmosControls::default()).unwrap();
        assert!((m.a[0] - 2.0).abs() < 0.3, "{:?}", m.a);
        assert!((m.a[1] - 0.5).abs() < 0.1, "{:?}", m.a);
        // A single member has zero variance, so b0 carries the spread.
        assert!((m.b0 + m.b1 * 0.0 - 1.0).abs() < 0.2, "{} {}", m.b0, m.b1);
        assert!(m.diagnostics.single_member);
        assert!(m.diagnostics.final_mean_crps <= m.diagnostics.initial_mean_crps);
        m.validate().unwrap();
    }

    #[test]
    fn beats_the_raw_ensemble() {
        let spec = GroupSpec::parse("g:5").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = Normal::new(0.0, 1.0).unwrap();
        let cases: Vec<_> = (0..150)
            .map(|_| {
                let truth: f64 = rng.random_range(2.0..8.0);
                let center = truth + 0.8 * z.sample(&mut rng);
                let members = (0..5)
                    .map(|_| center + 0.7 + 0.2 * z.sample(&mut rng))
                    .collect();
                case(vec![members], Some(truth))
            })
            .collect();
        let m = emos_fit(&cases, &spec, (0.0, 10.0), &EmosControls::default()).unwrap();
        let raw: f64 = cases
            .iter()
            .map(|c| {
                let v = &c.members[0];
                let x = c.observation.unwrap();
                let n = v.len() as f64;
                let a: f64 = v.iter().map(|f| (f - x).abs()).sum::<f64>() / n;
                let b: f64 = v
                    .iter()
                    .flat_map(|p| v.iter().map(move |q| (p - q).abs()))
                    .sum::<f64>()
                    / (2.0 * n * n);
                a - b
            })
            .sum::<f64>()
            / cases.len() as f64;
        assert!(
            m.diagnostics.final_mean_crps < raw,
            "{} vs {raw}",
            m.diagnostics.final_mean_crps
        );
        assert!(m.b0 >= 0.0 && m.b1 >= 0.0);
    }

    #[test]
    fn shifted_data_gives_shifted_predictions() {
        let (spec, cases) = synthetic(11, 200);
        let c = 3.0;
        let shifted: Vec<_> = cases
            .iter()
            .map(|k| {
                case(
                    vec![vec![k.members[0][0] + c]],
                    Some(k.observation.unwrap() + c),
                )
            })
            .collect();
        let m1 = emos_fit(&cases, &spec, (-50.0, 50.0), &EmosControls::default()).unwrap();
        let m2 = emos_fit(
            &shifted,
            &spec,
            (-50.0 + c, 50.0 + c),
            &EmosControls::default(),
        )
        .unwrap();
        for k in cases.iter().zip(&shifted).take(20) {
            let d1 = m1.predict(k.0).unwrap();
            let d2 = m2.predict(k.1).unwrap();
            for &y in &[-1.0, 0.0, 2.5, 6.0, 12.0] {
                assert!((d1.eval_cdf(y) - d2.eval_cdf(y + c)).abs() < 1e-4);
            }
        }
    }
}

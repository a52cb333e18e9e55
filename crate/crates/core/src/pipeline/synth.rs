//! Synthetic bounded water-level data with a biased, underdispersed ensemble.

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::bma::{ForecastCase, GroupSpec};
use crate::error::{Error, Result};

/// Parameters of the synthetic generator. Errors and biases are in units of
/// log water level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub start: NaiveDate,
    pub days: usize,
    pub lead_times: Vec<u32>,
    pub groups: GroupSpec,
    /// Additive bias of each group's members.
    pub group_bias: Vec<f64>,
    /// Member spread relative to the forecast error; 1 is calibrated.
    pub dispersion: f64,
    /// Forecast error standard deviation at lead time zero.
    pub error_sd: f64,
    /// Growth of the error standard deviation per 120 h of lead time.
    pub error_growth: f64,
    /// Median water level in cm.
    pub median_cm: f64,
    /// Stationary standard deviation of the log level.
    pub level_sd: f64,
    /// Day-to-day autocorrelation of the log level.
    pub persistence: f64,
    /// Standard deviation of the observation noise.
    pub obs_noise_sd: f64,
    /// The latent level is reflected into this range (cm).
    pub range_cm: (f64, f64),
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            start: NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date"),
            days: 400,
            lead_times: vec![1, 24, 72, 120],
            groups: GroupSpec::rhine_default(),
            group_bias: vec![0.06, 0.08, 0.05, 0.10],
            dispersion: 0.4,
            error_sd: 0.05,
            error_growth: 0.15,
            median_cm: 220.0,
            level_sd: 0.45,
            persistence: 0.97,
            obs_noise_sd: 0.01,
            range_cm: (40.0, 800.0),
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid("scenario", what.to_string()));
        if self.days == 0 {
            return bad("needs at least one day");
        }
        if self.lead_times.is_empty() || self.lead_times.contains(&0) {
            return bad("lead times must be positive and nonempty");
        }
        if self.group_bias.len() != self.groups.n_groups() {
            return bad("one bias per group is required");
        }
        let (lo, hi) = self.range_cm;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return bad("range must satisfy 0 < lower < upper");
        }
        if !(self.median_cm > lo && self.median_cm < hi) {
            return bad("median level must lie inside the range");
        }
        if !(0.0..1.0).contains(&self.persistence) {
            return bad("persistence must lie in [0, 1)");
        }
        let nonneg = [
            self.dispersion,
            self.error_sd,
            self.error_growth,
            self.level_sd,
            self.obs_noise_sd,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0))
            || self.group_bias.iter().any(|b| !b.is_finite())
        {
            return bad("spreads must be finite and nonnegative, biases finite");
        }
        Ok(())
    }

    fn error_sd_at(&self, lead_time_h: u32) -> f64 {
        self.error_sd + self.error_growth * lead_time_h as f64 / 120.0
    }
}

fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    let mut t = (v - lo).rem_euclid(2.0 * span);
    if t > span {
        t = 2.0 * span - t;
    }
    lo + t
}

/// Generates a dataset: a persistent latent log level, forecasts centred on
/// a noisy version of the truth at the valid time, members scattered around
/// that centre with `dispersion` times the error spread plus a group bias,
/// and observations equal to the truth with small noise.
pub fn synth_generate(scenario: &Scenario, seed: u64) -> Result<Dataset> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let (lo, hi) = (scenario.range_cm.0.ln(), scenario.range_cm.1.ln());
    let centre = scenario.median_cm.ln();
    let innovation = scenario.level_sd * (1.0 - scenario.persistence * scenario.persistence).sqrt();

    // Daily latent levels covering the longest lead time.
    let max_lead_days = scenario
        .lead_times
        .iter()
        .max()
        .copied()
        .unwrap_or(0)
        .div_ceil(24) as usize;
    let n = scenario.days + max_lead_days + 1;
    let mut level = Vec::with_capacity(n);
    let mut x = centre + scenario.level_sd * normal();
    for _ in 0..n {
        x = reflect(x, lo, hi);
        level.push(x);
        x = centre + scenario.persistence * (x - centre) + innovation * normal();
    }
    let truth_at = |day: usize, lead: u32| -> f64 {
        // Issue at 6 UTC; interpolate between daily values.
        let t = day as f64 + lead as f64 / 24.0;
        let i = t.floor() as usize;
        let w = t - i as f64;
        (1.0 - w) * level[i] + w * level[(i + 1).min(n - 1)]
    };

    let sizes = scenario.groups.sizes();
    let mut cases = BTreeMap::new();
    for day in 0..scenario.days {
        let date = scenario
            .start
            .checked_add_days(Days::new(day as u64))
            .ok_or_else(|| Error::invalid("scenario", "dates overflow the calendar"))?;
        for &lead in &scenario.lead_times {
            let truth = truth_at(day, lead);
            let tau = scenario.error_sd_at(lead);
            let centre_fc = truth + tau * normal();
            let members: Vec<Vec<f64>> = sizes
                .iter()
                .zip(&scenario.group_bias)
                .map(|(&size, bias)| {
                    (0..size)
                        .map(|_| (centre_fc + bias + scenario.dispersion * tau * normal()).exp())
                        .collect()
                })
                .collect();
            let obs = (truth + scenario.obs_noise_sd * normal().clamp(-3.0, 3.0)).exp();
            cases.insert(
                (date, lead),
                ForecastCase {
                    date,
                    lead_time_h: lead,
                    members,
                    observation: Some(obs),
                },
            );
        }
    }
    Ok(Dataset {
        group_spec: scenario.groups.clone(),
        cases,
        exclusions: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verification::{verification_rank, RankHistogram};

    fn rank_histogram(ds: &Dataset, seed: u64) -> RankHistogram {
        let m = ds.group_spec.total_members();
        let mut h = RankHistogram::new(m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for c in ds.cases.values() {
            let members: Vec<f64> = c.flat_members().collect();
            h.add(verification_rank(&members, c.observation.unwrap(), &mut rng).unwrap())
                .unwrap();
        }
        h
    }

    fn chi_square_p(counts: &[u64]) -> f64 {
        // Wilson-Hilferty approximation of the chi-square upper tail.
        let n: u64 = counts.iter().sum();
        let e = n as f64 / counts.len() as f64;
        let x2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        let k = (counts.len() - 1) as f64;
        let z = ((x2 / k).cbrt() - (1.0 - 2.0 / (9.0 * k))) / (2.0 / (9.0 * k)).sqrt();
        crate::special::norm_sf(z)
    }

    fn scenario(dispersion: f64, bias: f64) -> Scenario {
        Scenario {
            groups: GroupSpec::parse("a:4,b:5").unwrap(),
            group_bias: vec![bias, bias],
            dispersion,
            days: 1500,
            lead_times: vec![24],
            obs_noise_sd: 0.0,
            ..Scenario::default()
        }
    }

    #[test]
    fn calibrated_scenario_has_flat_ranks() {
        let mut passed = 0;
        for seed in 0..10 {
            let ds = synth_generate(&scenario(1.0, 0.0), seed).unwrap();
            if chi_square_p(&rank_histogram(&ds, seed).counts) > 0.01 {
                passed += 1;
            }
        }
        assert!(passed >= 8, "{passed}");
    }

    #[test]
    fn underdispersed_scenario_is_u_shaped() {
        let ds = synth_generate(&scenario(0.4, 0.0), 3).unwrap();
        let h = rank_histogram(&ds, 3).counts;
        let ends = (h[0] + h[h.len() - 1]) as f64;
        let interior = h[1..h.len() - 1].iter().sum::<u64>() as f64 / (h.len() - 2) as f64;
        assert!(ends > 2.0 * interior, "{h:?}");
    }

    #[test]
    fn default_scenario_shape_and_determinism() {
        let s = Scenario {
            days: 20,
            ..Scenario::default()
        };
        let a = synth_generate(&s, 9).unwrap();
        assert_eq!(a.cases.len(), 80);
        assert_eq!(a.group_spec.total_members(), 79);
        assert!(a.cases.values().all(|c| c.flat_members().all(|v| v > 0.0)));
        assert_eq!(a, synth_generate(&s, 9).unwrap());
        assert_ne!(a, synth_generate(&s, 10).unwrap());
    }

    #[test]
    fn infeasible_scenarios_are_rejected() {
        let bad = Scenario {
            range_cm: (500.0, 100.0),
            ..Scenario::default()
        };
        assert!(synth_generate(&bad, 1).is_err());
        let bad = Scenario {
            group_bias: vec![0.0],
            ..Scenario::default()
        };
        assert!(synth_generate(&bad, 1).is_err());
    }
}

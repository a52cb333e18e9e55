use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{align, ScoreSeries};
use crate::error::{Error, Result};
use crate::special::{kolmogorov_sf, norm_sf};

/// Minimum series length for the Diebold-Mariano test.
pub const DM_MIN_CASES: usize = 30;

/// Rank of `x` among `members` in 1..=M+1, ties broken uniformly at random.
pub fn verification_rank<R: Rng + ?Sized>(members: &[f64], x: f64, rng: &mut R) -> Result<usize> {
    if members.is_empty() {
        return Err(Error::invalid("members", "ensemble is empty"));
    }
    let below = members.iter().filter(|&&m| m < x).count();
    let ties = members.iter().filter(|&&m| m == x).count();
    let extra = if ties > 0 {
        rng.random_range(0..=ties)
    } else {
        0
    };
    Ok(below + 1 + extra)
}

/// Uniform value within the rank's slot: (rank - 1 + u) / (M + 1), `u` in [0, 1).
pub fn rank_pit(rank: usize, m: usize, u: f64) -> f64 {
    (rank as f64 - 1.0 + u) / (m as f64 + 1.0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankHistogram {
    pub counts: Vec<u64>,
}

impl RankHistogram {
    /// Empty histogram for an ensemble of `m` members.
    pub fn new(m: usize) -> Self {
        RankHistogram {
            counts: vec![0; m + 1],
        }
    }

    pub fn add(&mut self, rank: usize) -> Result<()> {
        if rank == 0 || rank > self.counts.len() {
            return Err(Error::invalid(
                "rank",
                format!("{rank} outside 1..={}", self.counts.len()),
            ));
        }
        self.counts[rank - 1] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Counts of PIT values in `bins` equal bins on [0, 1]; 1 falls in the last.
pub fn pit_histogram(pits: &[f64], bins: usize) -> Result<Vec<u64>> {
    if bins == 0 {
        return Err(Error::invalid("bins", "need at least one bin"));
    }
    let mut counts = vec![0; bins];
    for &p in pits {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain {
                what: "PIT value",
                value: p,
            });
        }
        counts[((p * bins as f64) as usize).min(bins - 1)] += 1;
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Autocovariance lags beyond zero included in the variance.
    pub lags: usize,
}

/// Diebold-Mariano test of equal mean loss for two aligned score series.
pub fn dm_test(a: &ScoreSeries, b: &ScoreSeries, horizon_h: u32) -> Result<DmResult> {
    let (a, b) = align(a, b)?;
    dm_test_values(&a, &b, horizon_h)
}

/// Autocovariance lags used for daily forecasts at `horizon_h`: forecasts
/// whose valid times overlap share errors, `ceil(horizon_h / 24) - 1` lags.
pub fn dm_lags(horizon_h: u32) -> usize {
    (horizon_h.div_ceil(24) as usize).saturating_sub(1)
}

/// Diebold-Mariano test on raw loss values with the lag count implied by
/// the forecast horizon.
pub fn dm_test_values(a: &[f64], b: &[f64], horizon_h: u32) -> Result<DmResult> {
    dm_test_with_lags(a, b, dm_lags(horizon_h))
}

/// Diebold-Mariano test on raw loss values.
///
/// The loss differential `d = a - b` has its long-run variance estimated by
/// the autocovariances up to `lags` with equal weights; a nonpositive
/// estimate falls back to the lag-zero variance. The p-value is two-sided
/// from the standard normal.
pub fn dm_test_with_lags(a: &[f64], b: &[f64], lags: usize) -> Result<DmResult> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "series of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < DM_MIN_CASES {
        return Err(Error::InsufficientData(format!(
            "Diebold-Mariano test needs at least {DM_MIN_CASES} cases, got {n}"
        )));
    }
    if let Some(v) = a.iter().chain(b).find(|v| !v.is_finite()) {
        return Err(Error::Domain {
            what: "Diebold-Mariano loss value",
            value: *v,
        });
    }
    let lags = lags.min(n - 1);
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let autocov = |lag: usize| -> f64 {
        d.iter()
            .zip(&d[lag..])
            .map(|(x, y)| (x - mean) * (y - mean))
            .sum::<f64>()
            / nf
    };
    let gamma0 = autocov(0);
    if !(gamma0 > 0.0) {
        return Ok(DmResult {
            statistic: 0.0,
            p_value: 1.0,
            lags,
        });
    }
    let mut var = gamma0 + 2.0 * (1..=lags).map(autocov).sum::<f64>();
    if !(var > 0.0) {
        var = gamma0;
    }
    let statistic = mean / (var / nf).sqrt();
    let p_value = (2.0 * norm_sf(statistic.abs())).min(1.0);
    Ok(DmResult {
        statistic,
        p_value,
        lags,
    })
}

/// One-sample Kolmogorov-Smirnov test against Uniform[0, 1]: the statistic
/// and its asymptotic p-value.
pub fn ks_uniformity(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InsufficientData(
            "KS test needs at least one value".into(),
        ));
    }
    let mut sorted = values.to_vec();
    for &v in &sorted {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain {
                what: "PIT value",
                value: v,
            });
        }
    }
    sorted.sort_by(f64::total_cmp);
    Ok(ks_sorted(&sorted))
}

fn ks_sorted(sorted: &[f64]) -> (f64, f64) {
    let n = sorted.len() as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, &u)| ((i as f64 + 1.0) / n - u).max(u - i as f64 / n))
        .fold(0.0, f64::max);
    (d, kolmogorov_sf(n.sqrt() * d))
}

/// Mean KS p-value over `n_samples` random subsamples of `sample_size` PIT
/// values drawn without replacement.
pub fn ks_uniformity_subsampled(
    pits: &[f64],
    n_samples: usize,
    sample_size: usize,
    seed: u64,
) -> Result<f64> {
    if sample_size == 0 || n_samples == 0 {
        return Err(Error::invalid(
            "subsampling",
            "sample count and size must be positive",
        ));
    }
    if pits.len() < sample_size {
        return Err(Error::InsufficientData(format!(
            "{} PIT values for subsamples of size {sample_size}",
            pits.len()
        )));
    }
    if let Some(v) = pits.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain {
            what: "PIT value",
            value: *v,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = Vec::with_capacity(sample_size);
    let mut total = 0.0;
    for _ in 0..n_samples {
        buf.clear();
        buf.extend(
            index::sample(&mut rng, pits.len(), sample_size)
                .into_iter()
                .map(|i| pits[i]),
        );
        buf.sort_by(f64::total_cmp);
        total += ks_sorted(&buf).1;
    }
    Ok(total / n_samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = [1.0, 2.0, 3.0];
        assert_eq!(verification_rank(&m, 0.5, &mut rng).unwrap(), 1);
        assert_eq!(verification_rank(&m, 3.5, &mut rng).unwrap(), 4);
        assert_eq!(verification_rank(&m, 2.5, &mut rng).unwrap(), 3);
        let mut seen = [0; 4];
        for _ in 0..4000 {
            seen[verification_rank(&[2.0; 3], 2.0, &mut rng).unwrap() - 1] += 1;
        }
        assert!(seen.iter().all(|&c| (800..1200).contains(&c)), "{seen:?}");
        let mut again = ChaCha8Rng::seed_from_u64(9);
        let mut first = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(
            verification_rank(&[2.0; 10], 2.0, &mut first).unwrap(),
            verification_rank(&[2.0; 10], 2.0, &mut again).unwrap()
        );
    }

    #[test]
    fn histograms() {
        let mut h = RankHistogram::new(3);
        for r in [1, 4, 4, 2] {
            h.add(r).unwrap();
        }
        assert_eq!(h.counts, vec![1, 1, 0, 2]);
        assert_eq!(h.total(), 4);
        assert!(h.add(5).is_err() && h.add(0).is_err());
        assert_eq!(
            pit_histogram(&[0.0, 0.1, 0.55, 1.0], 2).unwrap(),
            vec![2, 2]
        );
        assert!(pit_histogram(&[1.2], 2).is_err());
    }

    #[test]
    fn dm_identical_and_antisymmetric() {
        let a: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64).collect();
        let r = dm_test_values(&a, &a, 24).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        let b: Vec<f64> = (0..50).map(|i| ((i * 13) % 7) as f64 * 1.3).collect();
        let ab = dm_test_values(&a, &b, 72).unwrap();
        let ba = dm_test_values(&b, &a, 72).unwrap();
        assert_eq!(ab.statistic, -ba.statistic);
        assert_eq!(ab.p_value, ba.p_value);
        assert_eq!(ab.lags, 2);
        assert_eq!(dm_test_values(&a, &b, 1).unwrap().lags, 0);
        assert_eq!(dm_test_values(&a, &b, 120).unwrap().lags, 4);
        assert!(dm_test_values(&a[..20], &b[..20], 24).is_err());
    }

    #[test]
    fn dm_detects_a_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        let a: Vec<f64> = b
            .iter()
            .map(|v| v + 0.1 + 0.2 * (rng.random::<f64>() - 0.5))
            .collect();
        let r = dm_test_values(&a, &b, 24).unwrap();
        assert!(r.statistic > 0.0 && r.p_value < 1e-10);
    }

    #[test]
    fn ks_examples() {
        let grid: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let (d, p) = ks_uniformity(&grid).unwrap();
        assert!((d - 0.0005).abs() < 1e-15);
        assert!((p - 1.0).abs() < 1e-12);
        let mean_p = ks_uniformity_subsampled(&grid, 20, 1000, 1).unwrap();
        assert!((mean_p - 1.0).abs() < 1e-12);
        let half = vec![0.5; 1000];
        assert!(ks_uniformity_subsampled(&half, 5, 500, 1).unwrap() < 1e-100);
        assert!(ks_uniformity_subsampled(&half, 5, 2000, 1).is_err());
        assert!(ks_uniformity(&[1.5]).is_err());
    }

    #[test]
    fn ks_subsampling_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u: Vec<f64> = (0..3000).map(|_| rng.random::<f64>()).collect();
        let a = ks_uniformity_subsampled(&u, 50, 1000, 77).unwrap();
        let b = ks_uniformity_subsampled(&u, 50, 1000, 77).unwrap();
        assert_eq!(a, b);
    }
}

use super::{check_finite, check_probability, crps_by_quadrature, PredictiveCdf, CRPS_REL_TOL};
use crate::error::{Error, Result};
use crate::special::{
    mills_ratio, norm_cdf, norm_pdf, norm_quantile, norm_quantile_upper, norm_sf, INV_SQRT_PI,
};

/// Smallest normalising constant used as a divisor.
const NORMALIZER_FLOOR: f64 = 1e-300;

/// Standardised distance beyond which the normal CDF is 0 or 1 in f64.
const SATURATION: f64 = 40.0;

/// Standardised distance beyond which a normal tail mass is below half an
/// ulp of 1, so a normaliser with both bounds this far out is exactly 1.
const UNIT_MASS: f64 = 8.5;

/// Standardised distance of the nearer bound beyond which a one-sided
/// truncation is evaluated through Mills ratios instead of the normaliser,
/// which underflows near 37.
const FAR: f64 = 30.0;

pub(crate) const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Truncation far in one tail, reflected so the support is [l, u] with
/// 0 < l < u in standard units. Densities are expressed relative to phi(l).
#[derive(Debug, Clone, Copy, PartialEq)]
struct FarTail {
    /// +1 for the upper tail, -1 when reflected from the lower tail.
    sign: f64,
    l: f64,
    u: f64,
    /// Z / phi(l).
    d: f64,
}

impl FarTail {
    fn new(lo_std: f64, hi_std: f64) -> Option<Self> {
        let (sign, l, u) = if lo_std >= FAR {
            (1.0, lo_std, hi_std)
        } else if hi_std <= -FAR {
            (-1.0, -hi_std, -lo_std)
        } else {
            return None;
        };
        let mut t = FarTail { sign, l, u, d: 0.0 };
        t.d = mills_ratio(l) - t.tail(u);
        Some(t)
    }

    /// phi(t) / phi(l).
    #[inline]
    fn rel_pdf(&self, t: f64) -> f64 {
        if t.is_infinite() {
            0.0
        } else {
            (-0.5 * (t - self.l) * (t + self.l)).exp()
        }
    }

    /// (1 - Phi(t)) / phi(l).
    #[inline]
    fn tail(&self, t: f64) -> f64 {
        if t.is_infinite() {
            0.0
        } else {
            self.rel_pdf(t) * mills_ratio(t)
        }
    }

    /// ln Z.
    fn ln_mass(&self) -> f64 {
        -0.5 * self.l * self.l - LN_SQRT_2PI + self.d.ln()
    }

    /// (phi(alpha) - phi(beta)) / Z in the original orientation.
    fn offset(&self) -> f64 {
        self.sign * (1.0 - self.rel_pdf(self.u)) / self.d
    }

    /// (beta phi(beta) - alpha phi(alpha)) / Z; invariant under reflection.
    fn scale_correction(&self) -> f64 {
        let upper = if self.u.is_infinite() {
            0.0
        } else {
            self.u * self.rel_pdf(self.u)
        };
        (upper - self.l) / self.d
    }

    /// Standard value t in [l, u] at which the mass above t equals `target`
    /// (relative to phi(l)); Newton on the concave ln tail.
    fn solve_tail(&self, target: f64) -> f64 {
        let ln_target = target.ln();
        let mut t = self.l;
        for _ in 0..100 {
            let m = mills_ratio(t);
            let step = m * ((-0.5 * (t - self.l) * (t + self.l)) + m.ln() - ln_target);
            let next = (t + step).clamp(self.l, self.u);
            if !next.is_finite() || (next - t).abs() <= 1e-15 * t {
                return next.min(self.u);
            }
            t = next;
        }
        t
    }
}

/// The doubly truncated normal distribution N_a^b(mu, sigma^2).
///
/// `mu` and `sigma` are the location and scale of the parent normal; the
/// bounds may be `-inf` / `+inf` for one-sided or no truncation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormal {
    mu: f64,
    sigma: f64,
    lower: f64,
    upper: f64,
    lo_std: f64,
    hi_std: f64,
    /// Z = Phi(hi_std) - Phi(lo_std), floored.
    norm: f64,
    /// Evaluate through the survival function (both bounds above `mu`).
    upper_tail: bool,
    far: Option<FarTail>,
}

/// Phi(hi) - Phi(lo) without cancellation when both points lie in the
/// upper tail.
#[inline]
fn normalizer(lo_std: f64, hi_std: f64) -> f64 {
    if lo_std <= -UNIT_MASS && hi_std >= UNIT_MASS {
        return 1.0;
    }
    let z = if lo_std > 0.0 {
        norm_sf(lo_std) - norm_sf(hi_std)
    } else {
        norm_cdf(hi_std) - norm_cdf(lo_std)
    };
    z.max(NORMALIZER_FLOOR)
}

/// t * phi(t), zero at infinity.
#[inline]
fn t_phi(t: f64) -> f64 {
    if t.is_infinite() {
        0.0
    } else {
        t * norm_pdf(t)
    }
}

/// (phi(alpha) - phi(beta)) / (Phi(beta) - Phi(alpha)) with
/// alpha = (lower - mu) / sigma and beta = (upper - mu) / sigma.
///
/// This is (mean - mu) / sigma of the truncated distribution, i.e. the offset
/// used by the mean correction of the EM location update.
#[inline]
pub fn location_offset_ratio(mu: f64, sigma: f64, lower: f64, upper: f64) -> f64 {
    location_offset_given_mass(
        mu,
        sigma,
        lower,
        upper,
        truncation_mass(mu, sigma, lower, upper),
    )
}

/// The location offset ratio with a precomputed `truncation_mass`.
#[inline]
pub(crate) fn location_offset_given_mass(
    mu: f64,
    sigma: f64,
    lower: f64,
    upper: f64,
    mass: f64,
) -> f64 {
    let lo = (lower - mu) / sigma;
    let hi = (upper - mu) / sigma;
    if let Some(t) = FarTail::new(lo, hi) {
        return t.offset();
    }
    (norm_pdf(lo) - norm_pdf(hi)) / mass
}

/// The normaliser Phi(beta) - Phi(alpha), floored; exactly 1 when both
/// bounds are far from `mu`.
#[inline]
pub(crate) fn truncation_mass(mu: f64, sigma: f64, lower: f64, upper: f64) -> f64 {
    if mu - lower >= UNIT_MASS * sigma && upper - mu >= UNIT_MASS * sigma {
        return 1.0;
    }
    normalizer((lower - mu) / sigma, (upper - mu) / sigma)
}

/// (beta phi(beta) - alpha phi(alpha)) / (Phi(beta) - Phi(alpha)), the
/// boundary correction of the EM scale update divided by sigma^2.
#[inline]
pub fn scale_correction_ratio(mu: f64, sigma: f64, lower: f64, upper: f64) -> f64 {
    scale_correction_given_mass(
        mu,
        sigma,
        lower,
        upper,
        truncation_mass(mu, sigma, lower, upper),
    )
}

/// The scale correction ratio with a precomputed `truncation_mass`.
#[inline]
pub(crate) fn scale_correction_given_mass(
    mu: f64,
    sigma: f64,
    lower: f64,
    upper: f64,
    mass: f64,
) -> f64 {
    let lo = (lower - mu) / sigma;
    let hi = (upper - mu) / sigma;
    if let Some(t) = FarTail::new(lo, hi) {
        return t.scale_correction();
    }
    (t_phi(hi) - t_phi(lo)) / mass
}

/// Log density of N_a^b(mu, sigma^2) at `x`; `-inf` outside the bounds.
#[inline]
pub fn truncated_ln_pdf(x: f64, mu: f64, sigma: f64, lower: f64, upper: f64) -> f64 {
    if x < lower || x > upper {
        return f64::NEG_INFINITY;
    }
    let z = (x - mu) / sigma;
    -0.5 * z * z - LN_SQRT_2PI - sigma.ln() - ln_truncation_mass(mu, sigma, lower, upper)
}

/// ln of the normaliser, finite even where the normaliser underflows.
pub(crate) fn ln_truncation_mass(mu: f64, sigma: f64, lower: f64, upper: f64) -> f64 {
    match FarTail::new((lower - mu) / sigma, (upper - mu) / sigma) {
        Some(t) => t.ln_mass(),
        None => truncation_mass(mu, sigma, lower, upper).ln(),
    }
}

impl TruncatedNormal {
    pub fn new(mu: f64, sigma: f64, lower: f64, upper: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::invalid("mu", format!("must be finite, got {mu}")));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(
                "sigma",
                format!("must be positive and finite, got {sigma}"),
            ));
        }
        if lower.is_nan() || upper.is_nan() || lower >= upper {
            return Err(Error::invalid(
                "bounds",
                format!("lower must be below upper, got [{lower}, {upper}]"),
            ));
        }
        let lo_std = (lower - mu) / sigma;
        let hi_std = (upper - mu) / sigma;
        Ok(TruncatedNormal {
            mu,
            sigma,
            lower,
            upper,
            lo_std,
            hi_std,
            norm: normalizer(lo_std, hi_std),
            upper_tail: lo_std > 0.0,
            far: FarTail::new(lo_std, hi_std),
        })
    }

    /// Untruncated normal distribution.
    pub fn untruncated(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(mu, sigma, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    /// Probability mass of the parent normal inside the bounds.
    pub fn normalizer(&self) -> f64 {
        self.norm
    }

    pub fn pdf(&self, x: f64) -> Result<f64> {
        check_finite("truncated normal pdf argument", x)?;
        Ok(self.density(x))
    }

    #[inline]
    pub(crate) fn density(&self, x: f64) -> f64 {
        if x < self.lower || x > self.upper {
            return 0.0;
        }
        let z = (x - self.mu) / self.sigma;
        if let Some(t) = &self.far {
            return t.rel_pdf(t.sign * z) / (self.sigma * t.d);
        }
        norm_pdf(z) / (self.sigma * self.norm)
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        check_finite("truncated normal cdf argument", x)?;
        Ok(self.eval_cdf(x))
    }

    /// Mean and variance.
    pub fn moments(&self) -> (f64, f64) {
        if let Some(t) = &self.far {
            let r = t.offset();
            let mean = self.mu + self.sigma * r;
            let var = self.sigma * self.sigma * (1.0 - t.scale_correction() - r * r);
            return (mean.clamp(self.lower, self.upper), var.max(0.0));
        }
        let (pl, pu) = (norm_pdf(self.lo_std), norm_pdf(self.hi_std));
        let ratio = (pl - pu) / self.norm;
        let mean = self.mu + self.sigma * ratio;
        let var = self.sigma
            * self.sigma
            * (1.0 + (t_phi(self.lo_std) - t_phi(self.hi_std)) / self.norm - ratio * ratio);
        (mean.clamp(self.lower, self.upper), var.max(0.0))
    }

    fn standard_cdf_diff(&self, z: f64) -> f64 {
        if self.upper_tail {
            norm_sf(self.lo_std) - norm_sf(z)
        } else {
            norm_cdf(z) - norm_cdf(self.lo_std)
        }
    }

    fn crps_closed_form(&self, x: f64) -> Option<f64> {
        let z = (x - self.mu) / self.sigma;
        let sat = |t: f64| {
            if t <= -SATURATION {
                f64::NEG_INFINITY
            } else if t >= SATURATION {
                f64::INFINITY
            } else {
                t
            }
        };
        let (l, u) = (sat(self.lo_std), sat(self.hi_std));
        if l == u {
            // Both bounds saturated on the same side.
            return None;
        }
        standard_crps(l, u, z).map(|c| self.sigma * c)
    }
}

/// CRPS of the standard normal truncated to [l, u] at z, in standard units.
///
/// Writes the score as E|X - z| - E|X - X'| / 2 and integrates both terms in
/// closed form using the antiderivatives
/// int Phi = t Phi + phi and int Phi^2 = t Phi^2 + 2 Phi phi - Phi(sqrt(2) t) / sqrt(pi).
fn standard_crps(l: f64, u: f64, z: f64) -> Option<f64> {
    if l == f64::NEG_INFINITY && u == f64::INFINITY {
        return Some(z * (2.0 * norm_cdf(z) - 1.0) + 2.0 * norm_pdf(z) - INV_SQRT_PI);
    }
    // Reflect so the finite mass sits in the lower tail, where Phi is exact.
    if u == f64::INFINITY || (l > 0.0 && l.is_finite()) {
        return standard_crps(-u, -l, -z);
    }
    if u < -20.0 {
        // Phi^2 underflows; leave it to quadrature.
        return None;
    }
    if z < l {
        return standard_crps(l, u, l).map(|c| c + (l - z));
    }
    if z > u {
        return standard_crps(l, u, u).map(|c| c + (z - u));
    }
    let cdf = |t: f64| {
        if t == f64::NEG_INFINITY {
            0.0
        } else {
            norm_cdf(t)
        }
    };
    let g1 = |t: f64| {
        if t == f64::NEG_INFINITY {
            0.0
        } else {
            t * norm_cdf(t) + norm_pdf(t)
        }
    };
    let g2 = |t: f64| {
        if t == f64::NEG_INFINITY {
            0.0
        } else {
            let p = norm_cdf(t);
            t * p * p + 2.0 * p * norm_pdf(t) - INV_SQRT_PI * norm_cdf(std::f64::consts::SQRT_2 * t)
        }
    };
    let (pl, pu, pz) = (cdf(l), cdf(u), norm_cdf(z));
    let mass = pu - pl;
    if mass <= 0.0 {
        return None;
    }
    let abs_dev = (z * (2.0 * pz - pl - pu) + 2.0 * norm_pdf(z) - norm_pdf(l) - norm_pdf(u)) / mass;
    let width_term = if l == f64::NEG_INFINITY {
        0.0
    } else {
        pl * pu * (u - l)
    };
    let gini_half = -(g2(u) - g2(l)) + (pu + pl) * (g1(u) - g1(l)) - width_term;
    Some((abs_dev - gini_half / (mass * mass)).max(0.0))
}

impl PredictiveCdf for TruncatedNormal {
    #[inline]
    fn eval_cdf(&self, x: f64) -> f64 {
        if x <= self.lower {
            return 0.0;
        }
        if x >= self.upper {
            return 1.0;
        }
        let z = (x - self.mu) / self.sigma;
        if let Some(t) = &self.far {
            let zc = t.sign * z;
            let c = if t.sign > 0.0 {
                (mills_ratio(t.l) - t.tail(zc)) / t.d
            } else {
                (t.tail(zc) - t.tail(t.u)) / t.d
            };
            return c.clamp(0.0, 1.0);
        }
        (self.standard_cdf_diff(z) / self.norm).clamp(0.0, 1.0)
    }

    fn quantile(&self, p: f64) -> Result<f64> {
        check_probability(p)?;
        if let Some(t) = &self.far {
            let target = if t.sign > 0.0 {
                mills_ratio(t.l) - p * t.d
            } else {
                t.tail(t.u) + p * t.d
            };
            let x = self.mu + self.sigma * t.sign * t.solve_tail(target);
            return Ok(x.clamp(self.lower, self.upper));
        }
        // Work from whichever end keeps the target probability small.
        let z = if self.upper_tail {
            norm_quantile_upper(norm_sf(self.lo_std) - p * self.norm)
        } else {
            let below = norm_cdf(self.lo_std) + p * self.norm;
            if below > 0.5 {
                norm_quantile_upper(norm_sf(self.hi_std) + (1.0 - p) * self.norm)
            } else {
                norm_quantile(below)
            }
        };
        let mut x = (self.mu + self.sigma * z).clamp(self.lower, self.upper);
        if !x.is_finite() {
            x = self.mu.clamp(self.lower, self.upper);
        }
        // Newton polish against the closed-form CDF.
        for _ in 0..3 {
            let dens = self.density(x);
            if dens <= 0.0 || !dens.is_finite() {
                break;
            }
            let step = (self.eval_cdf(x) - p) / dens;
            let next = (x - step).clamp(self.lower, self.upper);
            if !next.is_finite() || next == x {
                break;
            }
            x = next;
        }
        Ok(x)
    }

    fn bounds(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    fn effective_support(&self) -> (f64, f64) {
        if let Some(t) = &self.far {
            // The tail decays at least like exp(-l (t - l)).
            let width = self.sigma * SATURATION / t.l;
            return if t.sign > 0.0 {
                (self.lower, self.upper.min(self.lower + width))
            } else {
                (self.lower.max(self.upper - width), self.upper)
            };
        }
        let left = self.mu - SATURATION * self.sigma;
        let right = self.mu + SATURATION * self.sigma;
        let mut lo = if left > self.lower && left < self.upper {
            left
        } else {
            self.lower
        };
        let mut hi = if right < self.upper && right > self.lower {
            right
        } else {
            self.upper
        };
        if !lo.is_finite() {
            lo = hi - SATURATION * self.sigma;
        }
        if !hi.is_finite() {
            hi = lo + SATURATION * self.sigma;
        }
        (lo, hi)
    }

    fn crps(&self, x: f64) -> Result<f64> {
        check_finite("CRPS observation", x)?;
        if let Some(c) = self.crps_closed_form(x) {
            if c.is_finite() {
                return Ok(c);
            }
        }
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::adaptive_simpson;

    const INF: f64 = f64::INFINITY;

    #[test]
    fn construction_rejects_bad_parameters() {
        assert!(TruncatedNormal::new(0.0, 0.0, -1.0, 1.0).is_err());
        assert!(TruncatedNormal::new(0.0, -1.0, -1.0, 1.0).is_err());
        assert!(TruncatedNormal::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(TruncatedNormal::new(0.0, 1.0, 2.0, 1.0).is_err());
        assert!(TruncatedNormal::new(f64::NAN, 1.0, 0.0, 1.0).is_err());
        assert!(TruncatedNormal::new(0.0, 1.0, -INF, INF).is_ok());
    }

    #[test]
    fn pdf_examples() {
        let std = TruncatedNormal::untruncated(0.0, 1.0).unwrap();
        assert!((std.pdf(0.0).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-16);
        let half = TruncatedNormal::new(0.0, 1.0, 0.0, INF).unwrap();
        assert!((half.pdf(0.0).unwrap() - 0.797_884_560_802_865_4).abs() < 1e-15);
        // 50-digit reference.
        let d = TruncatedNormal::new(1.0, 2.0, 0.0, 3.0).unwrap();
        assert!((d.pdf(1.5).unwrap() - 0.362_859_315_221_546_8).abs() < 1e-15);
        assert_eq!(d.pdf(-0.1).unwrap(), 0.0);
        assert_eq!(d.pdf(3.1).unwrap(), 0.0);
        assert!(d.pdf(f64::NAN).is_err());
        assert!(d.pdf(INF).is_err());
    }

    #[test]
    fn cdf_examples() {
        let d = TruncatedNormal::new(0.0, 1.0, -1.0, 1.0).unwrap();
        assert_eq!(d.cdf(-1.0).unwrap(), 0.0);
        assert_eq!(d.cdf(1.0).unwrap(), 1.0);
        assert!((d.cdf(0.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(d.cdf(-7.0).unwrap(), 0.0);
        assert_eq!(d.cdf(7.0).unwrap(), 1.0);
        assert!(d.cdf(f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn quantile_examples() {
        let d = TruncatedNormal::new(0.0, 1.0, -1.0, 1.0).unwrap();
        assert!(d.quantile(0.5).unwrap().abs() < 1e-15);
        let e = TruncatedNormal::new(2.0, 1.0, 0.0, 3.0).unwrap();
        assert!((e.quantile(0.9).unwrap() - 2.704_647_821_094_745).abs() < 1e-12);
        assert!(e.quantile(0.0).is_err());
        assert!(e.quantile(1.0).is_err());
        assert!(e.quantile(f64::NAN).is_err());
    }

    #[test]
    fn quantile_in_far_upper_tail() {
        let d = TruncatedNormal::new(0.0, 1.0, 12.0, 14.0).unwrap();
        for &p in &[1e-6, 0.3, 0.5, 0.999] {
            let x = d.quantile(p).unwrap();
            assert!((d.eval_cdf(x) - p).abs() < 1e-10, "p={p} x={x}");
        }
    }

    #[test]
    fn moments_examples() {
        let d = TruncatedNormal::untruncated(1.5, 0.7).unwrap();
        let (m, v) = d.moments();
        assert!((m - 1.5).abs() < 1e-15);
        assert!((v - 0.49).abs() < 1e-15);
        let sym = TruncatedNormal::new(0.0, 1.3, -0.4, 0.4).unwrap();
        assert!(sym.moments().0.abs() < 1e-16);
        let d = TruncatedNormal::new(1.0, 2.0, 0.0, 3.0).unwrap();
        let (m, v) = d.moments();
        assert!((m - 1.413_262_436_123_066).abs() < 1e-14);
        assert!((v - 0.691_093_036_345_973).abs() < 1e-14);
        assert!(v < 4.0);
    }

    #[test]
    fn offset_ratio_matches_mean_shift() {
        for &(mu, s, a, b) in &[
            (1.0, 2.0, 0.0, 3.0),
            (0.2, 0.5, 0.0, 10.0),
            (9.0, 1.5, 0.0, 10.0),
        ] {
            let d = TruncatedNormal::new(mu, s, a, b).unwrap();
            let (mean, _) = d.moments();
            let via_ratio = mu + s * location_offset_ratio(mu, s, a, b);
            assert!((mean - via_ratio).abs() < 1e-14);
        }
        assert_eq!(location_offset_ratio(3.0, 1.0, -INF, INF), 0.0);
        assert_eq!(scale_correction_ratio(3.0, 1.0, -INF, INF), 0.0);
        // Symmetric bounds around the location give a zero offset.
        assert!(location_offset_ratio(5.0, 2.0, 1.0, 9.0).abs() < 1e-16);
    }

    #[test]
    fn ln_pdf_agrees_with_density() {
        let d = TruncatedNormal::new(1.0, 2.0, 0.0, 3.0).unwrap();
        for &x in &[0.0, 0.5, 2.9] {
            let lp = truncated_ln_pdf(x, 1.0, 2.0, 0.0, 3.0);
            assert!((lp.exp() - d.density(x)).abs() < 1e-15);
        }
        assert_eq!(truncated_ln_pdf(3.5, 1.0, 2.0, 0.0, 3.0), f64::NEG_INFINITY);
    }

    #[test]
    fn crps_examples() {
        let std = TruncatedNormal::untruncated(0.0, 1.0).unwrap();
        assert!((std.crps(0.0).unwrap() - 0.233_694_977_255_109_07).abs() < 1e-15);
        let d = TruncatedNormal::new(1.0, 2.0, 0.0, 3.0).unwrap();
        assert!((d.crps(1.2).unwrap() - 0.244_500_439_760_149_65).abs() < 1e-13);
        let sharp = TruncatedNormal::new(5.0, 1e-12, 0.0, 10.0).unwrap();
        assert!(sharp.crps(5.0).unwrap() < 1e-11);
        assert!(d.crps(f64::NAN).is_err());
    }

    #[test]
    fn crps_outside_support_adds_distance() {
        let d = TruncatedNormal::new(1.0, 2.0, 0.0, 3.0).unwrap();
        let at_lower = d.crps(0.0).unwrap();
        assert!((d.crps(-2.5).unwrap() - (at_lower + 2.5)).abs() < 1e-13);
        let at_upper = d.crps(3.0).unwrap();
        assert!((d.crps(4.0).unwrap() - (at_upper + 1.0)).abs() < 1e-13);
    }

    #[test]
    fn crps_one_sided_and_far_tail() {
        let cases = [
            TruncatedNormal::new(0.3, 1.2, -INF, 1.0).unwrap(),
            TruncatedNormal::new(0.3, 1.2, 0.0, INF).unwrap(),
            TruncatedNormal::new(0.0, 1.0, 5.0, 9.0).unwrap(),
            TruncatedNormal::new(0.0, 1.0, -9.0, -5.0).unwrap(),
            TruncatedNormal::new(0.0, 1.0, 45.0, 47.0).unwrap(),
        ];
        for d in cases {
            let (lo, hi) = d.effective_support();
            for &x in &[lo - 0.3, lo + 0.1, 0.5 * (lo + hi), hi - 0.01] {
                let want = crps_by_quadrature(|y| d.eval_cdf(y), lo, hi, x, 1e-12);
                let got = d.crps(x).unwrap();
                assert!((got - want).abs() < 1e-9, "{d:?} x={x}: {got} vs {want}");
            }
        }
    }

    // 60-digit references; the normaliser underflows in both cases.
    #[test]
    fn far_tail_truncation() {
        let up = TruncatedNormal::new(0.0, 1.0, 40.0, 45.0).unwrap();
        assert!((up.pdf(40.01).unwrap() / 26.828_197_516_823_355 - 1.0).abs() < 1e-13);
        assert!((up.eval_cdf(40.02) - 0.550_985_120_437_611_7).abs() < 1e-12);
        let (m, v) = up.moments();
        assert!((m - 40.024_968_847_207_264).abs() < 1e-12);
        assert!((v - 6.226_683_785_913_888e-4).abs() < 1e-12);
        let q = up.quantile(0.550_985_120_437_611_7).unwrap();
        assert!((q - 40.02).abs() < 1e-12);

        let down = TruncatedNormal::new(2.0, 0.5, -INF, -20.0).unwrap();
        assert!((down.pdf(-20.005).unwrap() / 56.701_614_122_185_27 - 1.0).abs() < 1e-13);
        assert!((down.eval_cdf(-20.005) - 0.643_858_039_457_298_7).abs() < 1e-12);
        assert!((down.moments().0 - -20.011_351_927_272_977).abs() < 1e-12);
        assert!((down.quantile(0.643_858_039_457_298_7).unwrap() - -20.005).abs() < 1e-12);
        let lz = ln_truncation_mass(2.0, 0.5, -INF, -20.0);
        assert!((lz - -972.703_644_030_736_6).abs() < 1e-12 * 972.7);
        assert!(
            (truncated_ln_pdf(-20.005, 2.0, 0.5, -INF, -20.0) - 56.701_614_122_185_27f64.ln())
                .abs()
                < 1e-12
        );
        let total = adaptive_simpson(|x| down.density(x), -21.0, -20.0, 1e-12);
        assert!((total - 1.0).abs() < 1e-10);
        // The EM corrections follow the far-tail moments.
        let offset = location_offset_ratio(2.0, 0.5, -INF, -20.0);
        assert!((2.0 + 0.5 * offset - down.moments().0).abs() < 1e-12);
    }

    #[test]
    fn pdf_normalizes() {
        let d = TruncatedNormal::new(-0.4, 0.3, -1.0, 2.0).unwrap();
        let total = adaptive_simpson(|x| d.density(x), -1.0, 2.0, 1e-12);
        assert!((total - 1.0).abs() < 1e-10);
    }
}

//! EM estimation of the BMA parameters in three variants.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{
    clamp_into_bounds, BmaModel, BmaVariant, EmDiagnostics, EmFlag, ForecastCase, GroupSpec,
};
use crate::distributions::{
    ln_truncation_mass, location_offset_given_mass, location_offset_ratio,
    scale_correction_given_mass, scale_correction_ratio, truncation_mass, LN_SQRT_2PI,
};

/// Distance from both bounds, in units of sigma, beyond which the truncation
/// corrections are below rounding and are skipped.
const NEGLIGIBLE_TRUNCATION: f64 = 8.5;

/// Location offset ratio, reusing the truncation `mass` when it is known.
#[inline]
fn offset(mu: f64, sigma: f64, lo: f64, hi: f64, mass: f64) -> f64 {
    if mu - lo >= NEGLIGIBLE_TRUNCATION * sigma && hi - mu >= NEGLIGIBLE_TRUNCATION * sigma {
        0.0
    } else if mass.is_nan() {
        location_offset_ratio(mu, sigma, lo, hi)
    } else {
        location_offset_given_mass(mu, sigma, lo, hi, mass)
    }
}

#[inline]
fn scale_correction(mu: f64, sigma: f64, lo: f64, hi: f64, mass: f64) -> f64 {
    if mu - lo >= NEGLIGIBLE_TRUNCATION * sigma && hi - mu >= NEGLIGIBLE_TRUNCATION * sigma {
        0.0
    } else if mass.is_nan() {
        scale_correction_ratio(mu, sigma, lo, hi)
    } else {
        scale_correction_given_mass(mu, sigma, lo, hi, mass)
    }
}
use crate::error::{Error, Result};

/// Smallest responsibility mass or regressor spread accepted by a
/// location update.
const SINGULAR_TOL: f64 = 1e-12;

/// Where the mean correction of the pure ML variant is anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanAnchor {
    /// The initial regression locations, every iteration.
    #[default]
    Initial,
    /// The locations implied by the freshly updated coefficients.
    Current,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmControls {
    pub max_iter: usize,
    /// Relative change of the log-likelihood that counts as converged.
    pub tol: f64,
    pub anchor: MeanAnchor,
}

impl Default for EmControls {
    fn default() -> Self {
        EmControls {
            max_iter: 500,
            tol: 1e-6,
            anchor: MeanAnchor::Initial,
        }
    }
}

/// Parameters after one EM iteration and the log-likelihood they attain.
#[derive(Debug, Clone, PartialEq)]
pub struct EmTraceStep {
    pub iteration: usize,
    pub weights: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub log_likelihood: f64,
}

/// Working state of the EM algorithm.
///
/// Arrays indexed by case and member are stored case-major with members in
/// group-major order. Members are sorted within each group so that the fit
/// does not depend on how exchangeable members are labelled.
#[derive(Debug, Clone)]
pub struct EmState {
    n_cases: usize,
    n_members: usize,
    /// Member index range of each group.
    ranges: Vec<std::ops::Range<usize>>,
    member_group: Vec<usize>,
    x: Vec<f64>,
    f: Vec<f64>,
    mu0: Vec<f64>,
    mu: Vec<f64>,
    z: Vec<f64>,
    /// Truncation masses at the locations and scale of the last E-step;
    /// NaN where not computed or no longer valid.
    mass: Vec<f64>,
    weights: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    sigma: f64,
    lower: f64,
    upper: f64,
    flags: BTreeSet<EmFlag>,
}

/// Ordinary least squares of `y` on `x`, or `None` for a constant regressor.
fn ols(pairs: impl Iterator<Item = (f64, f64)> + Clone) -> (f64, f64, bool) {
    let (mut n, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs.clone() {
        n += 1.0;
        sx += x;
        sy += y;
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in pairs {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if !(sxx > SINGULAR_TOL * n * (1.0 + mx * mx)) {
        return (my - mx, 1.0, false);
    }
    let beta = sxy / sxx;
    (my - beta * mx, beta, true)
}

impl EmState {
    /// Initial state: per-group least squares locations, the sample standard
    /// deviation of the observations as scale, and uniform member weights.
    pub fn init(
        training: &[ForecastCase],
        spec: &GroupSpec,
        lower: f64,
        upper: f64,
    ) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower >= upper {
            return Err(Error::invalid(
                "bounds",
                format!("need lower < upper, got [{lower}, {upper}]"),
            ));
        }
        if training.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "EM needs at least 2 training cases, got {}",
                training.len()
            )));
        }
        let n = training.len();
        let m = spec.total_members();
        let mut flags = BTreeSet::new();
        let mut x = Vec::with_capacity(n);
        let mut f = Vec::with_capacity(n * m);
        for case in training {
            case.check(spec)?;
            let obs = case.observation.ok_or_else(|| {
                Error::InsufficientData(format!(
                    "training case {} lead {} h has no observation",
                    case.date, case.lead_time_h
                ))
            })?;
            let (obs, moved) = clamp_into_bounds(obs, lower, upper);
            if moved {
                flags.insert(EmFlag::ClampedValues);
            }
            x.push(obs);
            for values in &case.members {
                let start = f.len();
                for &v in values {
                    let (v, moved) = clamp_into_bounds(v, lower, upper);
                    if moved {
                        flags.insert(EmFlag::ClampedValues);
                    }
                    f.push(v);
                }
                f[start..].sort_by(f64::total_cmp);
            }
        }
        if flags.contains(&EmFlag::ClampedValues) {
            log::debug!("training values outside [{lower}, {upper}] were clamped into the bounds");
        }

        let mut ranges = Vec::with_capacity(spec.n_groups());
        let mut start = 0;
        for g in spec.groups() {
            ranges.push(start..start + g.size);
            start += g.size;
        }
        let mut alpha = Vec::with_capacity(ranges.len());
        let mut beta = Vec::with_capacity(ranges.len());
        for (k, r) in ranges.iter().enumerate() {
            let pairs = r
                .clone()
                .flat_map(|j| (0..n).map(move |i| (i, j)))
                .map(|(i, j)| (f[i * m + j], x[i]));
            let (a, b, ok) = ols(pairs);
            if !ok {
                flags.insert(EmFlag::DegenerateRegressor { group: k });
            }
            alpha.push(a);
            beta.push(b);
        }

        let mean = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        let floor = sigma2_floor(lower, upper);
        let sigma = if var < floor {
            flags.insert(EmFlag::SigmaFloored);
            floor.sqrt()
        } else {
            var.sqrt()
        };

        let member_group = spec.member_groups();
        let mu0: Vec<f64> = (0..n * m)
            .map(|idx| {
                let k = member_group[idx % m];
                alpha[k] + beta[k] * f[idx]
            })
            .collect();
        Ok(EmState {
            n_cases: n,
            n_members: m,
            ranges,
            member_group,
            x,
            f,
            mu: mu0.clone(),
            mu0,
            z: vec![0.0; n * m],
            mass: vec![f64::NAN; n * m],
            weights: vec![1.0 / m as f64; spec.n_groups()],
            alpha,
            beta,
            sigma,
            lower,
            upper,
            flags,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Responsibilities, case-major.
    pub fn responsibilities(&self) -> &[f64] {
        &self.z
    }

    /// Current component locations, case-major.
    pub fn locations(&self) -> &[f64] {
        &self.mu
    }

    pub fn flags(&self) -> impl Iterator<Item = EmFlag> + '_ {
        self.flags.iter().copied()
    }

    /// Member values after clamping and sorting, case-major.
    pub fn member_values(&self) -> &[f64] {
        &self.f
    }

    /// Replaces the current parameters; `weights` are per member.
    pub fn set_parameters(&mut self, weights: &[f64], sigma: f64) -> Result<()> {
        if weights.len() != self.weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} groups",
                weights.len(),
                self.weights.len()
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(
                "sigma",
                format!("must be positive, got {sigma}"),
            ));
        }
        self.weights.copy_from_slice(weights);
        self.sigma = sigma;
        self.mass.fill(f64::NAN);
        Ok(())
    }

    /// Log of weight times density for each member of case `i`, with the
    /// truncation masses written to `mass`; returns the largest term.
    fn log_terms(&self, i: usize, log_weights: &[f64], logs: &mut [f64], mass: &mut [f64]) -> f64 {
        let m = self.n_members;
        // Observations were clamped into the bounds at initialisation.
        let xi = self.x[i];
        let shift = -LN_SQRT_2PI - self.sigma.ln();
        let mut max = f64::NEG_INFINITY;
        for j in 0..m {
            let lw = log_weights[self.member_group[j]];
            let l = if lw > f64::NEG_INFINITY {
                let mu = self.mu[i * m + j];
                let z = (xi - mu) / self.sigma;
                let c = truncation_mass(mu, self.sigma, self.lower, self.upper);
                mass[j] = c;
                let ln_c = if c == 1.0 {
                    0.0
                } else if c > 1e-250 {
                    c.ln()
                } else {
                    ln_truncation_mass(mu, self.sigma, self.lower, self.upper)
                };
                lw + shift + (-0.5 * z * z - ln_c)
            } else {
                mass[j] = f64::NAN;
                f64::NEG_INFINITY
            };
            logs[j] = l;
            if l > max {
                max = l;
            }
        }
        max
    }

    /// Observed-data log-likelihood at the current parameters.
    pub fn log_likelihood(&self) -> f64 {
        let mut logs = vec![0.0; self.n_members];
        let mut mass = vec![0.0; self.n_members];
        let log_weights: Vec<f64> = self.weights.iter().map(|w| w.ln()).collect();
        let mut total = 0.0;
        for i in 0..self.n_cases {
            let max = self.log_terms(i, &log_weights, &mut logs, &mut mass);
            if !max.is_finite() {
                total += max;
                continue;
            }
            let s: f64 = logs.iter().map(|l| (l - max).exp()).sum();
            total += max + s.ln();
        }
        total
    }

    /// E step: responsibilities at the current parameters. Returns the
    /// observed-data log-likelihood at those parameters.
    pub fn e_step(&mut self) -> f64 {
        let m = self.n_members;
        let mut logs = vec![0.0; m];
        let log_weights: Vec<f64> = self.weights.iter().map(|w| w.ln()).collect();
        let mut mass = std::mem::take(&mut self.mass);
        let mut total = 0.0;
        for i in 0..self.n_cases {
            let max = self.log_terms(i, &log_weights, &mut logs, &mut mass[i * m..(i + 1) * m]);
            let z = &mut self.z[i * m..(i + 1) * m];
            if !max.is_finite() {
                z.fill(1.0 / m as f64);
                self.flags.insert(EmFlag::UniformResponsibilities);
                total += max;
                continue;
            }
            let mut s = 0.0;
            for (zj, l) in z.iter_mut().zip(&logs) {
                *zj = (l - max).exp();
                s += *zj;
            }
            for zj in z.iter_mut() {
                *zj /= s;
            }
            total += max + s.ln();
        }
        self.mass = mass;
        total
    }

    /// Per-member weight of each group: the group's mean responsibility
    /// divided by its size.
    pub fn update_weights(&mut self) {
        let (n, m) = (self.n_cases, self.n_members);
        for (k, r) in self.ranges.iter().enumerate() {
            let mut mass = 0.0;
            for j in r.clone() {
                for i in 0..n {
                    mass += self.z[i * m + j];
                }
            }
            self.weights[k] = mass / (n as f64 * r.len() as f64);
        }
    }

    /// Pure ML location update: responsibility-weighted least squares of the
    /// mean-shifted observations on the member values, followed by the mean
    /// correction of the locations.
    pub fn update_location(&mut self, anchor: MeanAnchor) {
        let (n, m) = (self.n_cases, self.n_members);
        let (sigma, lo, hi) = (self.sigma, self.lower, self.upper);
        for (k, r) in self.ranges.iter().enumerate() {
            let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for j in r.clone() {
                for i in 0..n {
                    let idx = i * m + j;
                    let w = self.z[idx];
                    let fv = self.f[idx];
                    let t = self.x[i] - sigma * offset(self.mu[idx], sigma, lo, hi, self.mass[idx]);
                    s0 += w;
                    s1 += w * fv;
                    s2 += w * fv * fv;
                    t0 += w * t;
                    t1 += w * fv * t;
                }
            }
            let det = s0 * s2 - s1 * s1;
            if s0 < SINGULAR_TOL || s2 < SINGULAR_TOL || !(det > SINGULAR_TOL * s0 * s2) {
                self.flags
                    .insert(EmFlag::SingularLocationUpdate { group: k });
                continue;
            }
            let b = (s0 * t1 - s1 * t0) / det;
            self.beta[k] = b;
            self.alpha[k] = (t0 - b * s1) / s0;
        }
        for idx in 0..n * m {
            let k = self.member_group[idx % m];
            let loc = self.alpha[k] + self.beta[k] * self.f[idx];
            let base = match anchor {
                MeanAnchor::Initial => self.mu0[idx],
                MeanAnchor::Current => loc,
            };
            self.mu[idx] = base - sigma * offset(loc, sigma, lo, hi, f64::NAN);
        }
        self.mass.fill(f64::NAN);
    }

    /// Simplified location update: mean correction evaluated at the current
    /// locations, anchored at the initial ones.
    pub fn update_location_simplified(&mut self) {
        let (sigma, lo, hi) = (self.sigma, self.lower, self.upper);
        for ((mu, mu0), mass) in self.mu.iter_mut().zip(&self.mu0).zip(&mut self.mass) {
            *mu = mu0 - sigma * offset(*mu, sigma, lo, hi, *mass);
            *mass = f64::NAN;
        }
    }

    /// Scale update from the weighted squared residuals plus the boundary
    /// correction at the previous scale.
    pub fn update_sigma(&mut self) {
        let (n, m) = (self.n_cases, self.n_members);
        let (sigma, lo, hi) = (self.sigma, self.lower, self.upper);
        let s2 = sigma * sigma;
        let mut total = 0.0;
        for j in 0..m {
            for i in 0..n {
                let idx = i * m + j;
                let mu = self.mu[idx];
                let r = self.x[i] - mu;
                total += self.z[idx]
                    * (r * r + s2 * scale_correction(mu, sigma, lo, hi, self.mass[idx]));
            }
        }
        let var = total / n as f64;
        let floor = sigma2_floor(lo, hi);
        if !(var >= floor) {
            self.flags.insert(EmFlag::SigmaFloored);
            self.sigma = floor.sqrt();
        } else {
            self.sigma = var.sqrt();
        }
        self.mass.fill(f64::NAN);
    }

    /// Unweighted least squares of the current locations on the member
    /// values, per group.
    fn regress_locations(&mut self) {
        let (n, m) = (self.n_cases, self.n_members);
        for (k, r) in self.ranges.iter().enumerate() {
            let pairs = r
                .clone()
                .flat_map(|j| (0..n).map(move |i| i * m + j))
                .map(|idx| (self.f[idx], self.mu[idx]));
            let (a, b, ok) = ols(pairs);
            if !ok {
                self.flags.insert(EmFlag::DegenerateRegressor { group: k });
            }
            self.alpha[k] = a;
            self.beta[k] = b;
        }
    }

    /// One M step for `variant`.
    pub fn m_step(&mut self, variant: BmaVariant, anchor: MeanAnchor) {
        self.update_weights();
        match variant {
            BmaVariant::PureMl => self.update_location(anchor),
            BmaVariant::Simplified => self.update_location_simplified(),
            BmaVariant::Naive => {}
        }
        self.update_sigma();
    }
}

/// Lower limit of sigma^2: 1e-8 (b - a)^2, or 1e-8 for unbounded support.
fn sigma2_floor(lower: f64, upper: f64) -> f64 {
    let span = upper - lower;
    if span.is_finite() {
        1e-8 * span * span
    } else {
        1e-8
    }
}

#[derive(Clone)]
struct Snapshot {
    weights: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    sigma: f64,
    mu: Vec<f64>,
    log_likelihood: f64,
}

impl Snapshot {
    fn of(state: &EmState, log_likelihood: f64) -> Self {
        Snapshot {
            weights: state.weights.clone(),
            alpha: state.alpha.clone(),
            beta: state.beta.clone(),
            sigma: state.sigma,
            mu: state.mu.clone(),
            log_likelihood,
        }
    }
}

/// Fits a BMA model by EM; see [`bma_fit_traced`].
pub fn bma_fit(
    training: &[ForecastCase],
    spec: &GroupSpec,
    bounds: (f64, f64),
    variant: BmaVariant,
    controls: &EmControls,
) -> Result<BmaModel> {
    bma_fit_traced(training, spec, bounds, variant, controls).map(|(model, _)| model)
}

/// Fits a BMA model by EM and returns the per-iteration trace.
///
/// Iterates until the relative change of the log-likelihood drops below
/// `controls.tol` or `controls.max_iter` is reached, and returns the iterate
/// with the highest log-likelihood. For the naive variant the locations stay
/// at the initial regression; for the simplified variant the coefficients are
/// regressed on the final locations.
pub fn bma_fit_traced(
    training: &[ForecastCase],
    spec: &GroupSpec,
    bounds: (f64, f64),
    variant: BmaVariant,
    controls: &EmControls,
) -> Result<(BmaModel, Vec<EmTraceStep>)> {
    if !(controls.tol >= 0.0) {
        return Err(Error::invalid(
            "tol",
            format!("must be nonnegative, got {}", controls.tol),
        ));
    }
    let mut state = EmState::init(training, spec, bounds.0, bounds.1)?;
    let initial = state.e_step();
    let mut best = Snapshot::of(&state, initial);
    let mut previous = initial;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    if !initial.is_finite() {
        state.flags.insert(EmFlag::NonFiniteLikelihood);
    } else {
        for iteration in 1..=controls.max_iter {
            state.m_step(variant, controls.anchor);
            let ll = state.e_step();
            iterations = iteration;
            trace.push(EmTraceStep {
                iteration,
                weights: state.weights.clone(),
                alpha: state.alpha.clone(),
                beta: state.beta.clone(),
                sigma: state.sigma,
                log_likelihood: ll,
            });
            let finite = ll.is_finite()
                && state.sigma.is_finite()
                && state.alpha.iter().chain(&state.beta).all(|c| c.is_finite())
                && state.mu.iter().all(|v| v.is_finite());
            if !finite {
                state.flags.insert(EmFlag::NonFiniteLikelihood);
                break;
            }
            if ll > best.log_likelihood {
                best = Snapshot::of(&state, ll);
            }
            let change = (ll - previous).abs() / ll.abs().max(f64::MIN_POSITIVE);
            previous = ll;
            if change < controls.tol {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        log::debug!(
            "EM did not converge in {iterations} iterations ({})",
            variant.as_str()
        );
    }

    state.weights = best.weights;
    state.alpha = best.alpha;
    state.beta = best.beta;
    state.sigma = best.sigma;
    state.mu = best.mu;
    if variant == BmaVariant::Simplified {
        state.regress_locations();
    }
    let model = BmaModel {
        group_spec: spec.clone(),
        weights: state.weights.clone(),
        alpha: state.alpha.clone(),
        beta: state.beta.clone(),
        sigma: state.sigma,
        lower: bounds.0,
        upper: bounds.1,
        variant,
        diagnostics: EmDiagnostics {
            iterations,
            initial_log_likelihood: initial,
            final_log_likelihood: best.log_likelihood,
            converged,
            flags: state.flags.iter().copied().collect(),
        },
    };
    Ok((model, trace))
}

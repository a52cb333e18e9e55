//! Doubly truncated normal BMA over exchangeable member groups.
//!
//! Every member of group `k` carries the same weight `w_k` and the same
//! affine location `alpha_k + beta_k * f`; all components share one scale.
//! Weights are stored per member, so `sum_k M_k w_k = 1`.

mod em;

pub use em::{bma_fit, bma_fit_traced, EmControls, EmState, EmTraceStep, MeanAnchor};

use std::collections::BTreeSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::distributions::{TruncatedNormal, TruncatedNormalMixture};
use crate::error::{Error, Result};

/// Tolerance on `sum_k M_k w_k = 1` for a stored model.
pub const WEIGHT_SUM_TOL: f64 = 1e-8;

/// One exchangeable group of ensemble members.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    pub size: usize,
}

/// Ordered list of exchangeable member groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Group>", into = "Vec<Group>")]
pub struct GroupSpec {
    groups: Vec<Group>,
}

impl TryFrom<Vec<Group>> for GroupSpec {
    type Error = Error;

    fn try_from(groups: Vec<Group>) -> Result<Self> {
        GroupSpec::new(groups)
    }
}

impl From<GroupSpec> for Vec<Group> {
    fn from(spec: GroupSpec) -> Self {
        spec.groups
    }
}

impl GroupSpec {
    pub fn new(groups: Vec<Group>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::invalid("group spec", "needs at least one group"));
        }
        let mut seen = BTreeSet::new();
        for g in &groups {
            if g.size == 0 {
                return Err(Error::invalid(
                    "group spec",
                    format!("group `{}` has no members", g.name),
                ));
            }
            if g.name.is_empty() || g.name.contains([',', ':']) || g.name.trim() != g.name {
                return Err(Error::invalid(
                    "group spec",
                    format!("bad group name `{}`", g.name),
                ));
            }
            if !seen.insert(g.name.as_str()) {
                return Err(Error::invalid(
                    "group spec",
                    format!("duplicate group `{}`", g.name),
                ));
            }
        }
        Ok(GroupSpec { groups })
    }

    /// Builds a spec from `(name, size)` pairs.
    pub fn from_pairs<S: Into<String>>(
        pairs: impl IntoIterator<Item = (S, usize)>,
    ) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .map(|(name, size)| Group {
                    name: name.into(),
                    size,
                })
                .collect(),
        )
    }

    /// Parses `name:size,name:size,...`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut groups = Vec::new();
        for item in text.split(',') {
            let item = item.trim();
            let (name, size) = item.split_once(':').ok_or_else(|| {
                Error::invalid("group spec", format!("expected name:size, got `{item}`"))
            })?;
            let size: usize = size.trim().parse().map_err(|_| {
                Error::invalid("group spec", format!("bad member count in `{item}`"))
            })?;
            groups.push(Group {
                name: name.trim().to_string(),
                size,
            });
        }
        Self::new(groups)
    }

    /// The four-model Rhine configuration: one high-resolution run and three
    /// perturbed ensembles.
    pub fn rhine_default() -> Self {
        Self::from_pairs([
            ("hres", 1),
            ("eps", 51),
            ("cosmo_leps", 16),
            ("ncep_gefs", 11),
        ])
        .expect("static spec is valid")
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.size).collect()
    }

    pub fn total_members(&self) -> usize {
        self.groups.iter().map(|g| g.size).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }

    /// Group index of each member in group-major order.
    pub fn member_groups(&self) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(k, g)| std::iter::repeat_n(k, g.size))
            .collect()
    }
}

impl std::fmt::Display for GroupSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, g) in self.groups.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}:{}", g.name, g.size)?;
        }
        Ok(())
    }
}

/// Forecasts for one issue date and lead time, on the transformed scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastCase {
    pub date: NaiveDate,
    pub lead_time_h: u32,
    /// Member values per group, in group order.
    pub members: Vec<Vec<f64>>,
    pub observation: Option<f64>,
}

impl ForecastCase {
    pub fn check(&self, spec: &GroupSpec) -> Result<()> {
        if self.members.len() != spec.n_groups() {
            return Err(Error::DimensionMismatch(format!(
                "{} member groups for a spec with {}",
                self.members.len(),
                spec.n_groups()
            )));
        }
        for (values, g) in self.members.iter().zip(spec.groups()) {
            if values.len() != g.size {
                return Err(Error::DimensionMismatch(format!(
                    "group `{}` has {} members, expected {}",
                    g.name,
                    values.len(),
                    g.size
                )));
            }
            if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                return Err(Error::Domain {
                    what: "member forecast",
                    value: *v,
                });
            }
        }
        if let Some(x) = self.observation {
            if !x.is_finite() {
                return Err(Error::Domain {
                    what: "observation",
                    value: x,
                });
            }
        }
        Ok(())
    }

    /// All member values in group-major order.
    pub fn flat_members(&self) -> impl Iterator<Item = f64> + '_ {
        self.members.iter().flatten().copied()
    }
}

/// Distance kept from the bounds when clamping values into `[a, b]`.
pub fn clamp_margin(lower: f64, upper: f64) -> f64 {
    let span = upper - lower;
    if span.is_finite() {
        1e-9 * span
    } else {
        0.0
    }
}

/// Clamps `v` into `[a + eps, b - eps]`; reports whether it moved.
pub fn clamp_into_bounds(v: f64, lower: f64, upper: f64) -> (f64, bool) {
    let eps = clamp_margin(lower, upper);
    let lo = lower + eps;
    let hi = upper - eps;
    if v < lo {
        (lo, true)
    } else if v > hi {
        (hi, true)
    } else {
        (v, false)
    }
}

/// How location coefficients are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BmaVariant {
    /// Maximum likelihood updates of the coefficients with mean correction.
    PureMl,
    /// Mean correction of the locations only; coefficients regressed at the end.
    Simplified,
    /// Coefficients fixed at their initial regression values.
    Naive,
}

impl BmaVariant {
    pub const ALL: [BmaVariant; 3] = [
        BmaVariant::PureMl,
        BmaVariant::Simplified,
        BmaVariant::Naive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BmaVariant::PureMl => "pure_ml",
            BmaVariant::Simplified => "simplified",
            BmaVariant::Naive => "naive",
        }
    }
}

impl std::str::FromStr for BmaVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pure_ml" => Ok(BmaVariant::PureMl),
            "simplified" => Ok(BmaVariant::Simplified),
            "naive" => Ok(BmaVariant::Naive),
            _ => Err(Error::invalid(
                "variant",
                format!("unknown BMA variant `{s}`"),
            )),
        }
    }
}

/// Conditions noticed while fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmFlag {
    /// Constant forecasts in a group; its initial regression fell back to a shift.
    DegenerateRegressor { group: usize },
    /// Every component density vanished at some observation.
    UniformResponsibilities,
    /// Location update skipped for a group with too little responsibility mass.
    SingularLocationUpdate { group: usize },
    /// The scale update fell below its floor.
    SigmaFloored,
    /// Training values were moved inside the bounds.
    ClampedValues,
    /// The log-likelihood became non-finite; the best iterate was kept.
    NonFiniteLikelihood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmDiagnostics {
    pub iterations: usize,
    #[serde(with = "crate::serde_float")]
    pub initial_log_likelihood: f64,
    #[serde(with = "crate::serde_float")]
    pub final_log_likelihood: f64,
    pub converged: bool,
    pub flags: Vec<EmFlag>,
}

/// A fitted BMA model on the transformed scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmaModel {
    pub group_spec: GroupSpec,
    /// Weight of each single member of group `k`.
    pub weights: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma: f64,
    #[serde(with = "crate::serde_float")]
    pub lower: f64,
    #[serde(with = "crate::serde_float")]
    pub upper: f64,
    pub variant: BmaVariant,
    pub diagnostics: EmDiagnostics,
}

impl BmaModel {
    /// Checks the structural invariants; used after deserialisation.
    pub fn validate(&self) -> Result<()> {
        let k = self.group_spec.n_groups();
        if self.weights.len() != k || self.alpha.len() != k || self.beta.len() != k {
            return Err(Error::Document(format!(
                "expected {k} weights and coefficients, got {}/{}/{}",
                self.weights.len(),
                self.alpha.len(),
                self.beta.len()
            )));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Document(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let mass = self.group_masses().iter().sum::<f64>();
        if (mass - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Document(format!(
                "member weights sum to {mass}, not 1"
            )));
        }
        if self.alpha.iter().chain(&self.beta).any(|c| !c.is_finite()) {
            return Err(Error::Document(
                "location coefficients must be finite".into(),
            ));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Document(format!(
                "sigma must be positive, got {}",
                self.sigma
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

    /// Total weight `M_k w_k` of each group.
    pub fn group_masses(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(self.group_spec.groups())
            .map(|(w, g)| w * g.size as f64)
            .collect()
    }

    /// Number of free parameters: K - 1 weights, 2K coefficients, one scale.
    pub fn free_parameters(&self) -> usize {
        3 * self.group_spec.n_groups()
    }

    /// Predictive mixture with one component per member.
    pub fn predict(&self, case: &ForecastCase) -> Result<TruncatedNormalMixture> {
        bma_predict(self, case)
    }
}

/// Predictive mixture for `case`: component `(k, l)` is the truncated normal
/// at `alpha_k + beta_k f_kl` with weight `w_k`.
pub fn bma_predict(model: &BmaModel, case: &ForecastCase) -> Result<TruncatedNormalMixture> {
    case.check(&model.group_spec)?;
    let m = model.group_spec.total_members();
    let mut components = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for (k, values) in case.members.iter().enumerate() {
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        for f in sorted {
            let mu = model.alpha[k] + model.beta[k] * f;
            components.push(TruncatedNormal::new(
                mu,
                model.sigma,
                model.lower,
                model.upper,
            )?);
            weights.push(model.weights[k]);
        }
    }
    TruncatedNormalMixture::normalized(components, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::PredictiveCdf;

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()
    }

    fn model(spec: GroupSpec, weights: Vec<f64>) -> BmaModel {
        let k = spec.n_groups();
        BmaModel {
            group_spec: spec,
            weights,
            alpha: vec![0.5; k],
            beta: vec![0.9; k],
            sigma: 0.7,
            lower: 0.0,
            upper: 10.0,
            variant: BmaVariant::PureMl,
            diagnostics: EmDiagnostics {
                iterations: 0,
                initial_log_likelihood: 0.0,
                final_log_likelihood: 0.0,
                converged: true,
                flags: vec![],
            },
        }
    }

    #[test]
    fn group_spec_parsing() {
        let s = GroupSpec::parse("hres:1, eps:51,cosmo_leps:16,ncep_gefs:11").unwrap();
        assert_eq!(s, GroupSpec::rhine_default());
        assert_eq!(s.total_members(), 79);
        assert_eq!(s.to_string(), "hres:1,eps:51,cosmo_leps:16,ncep_gefs:11");
        assert_eq!(s.member_groups().iter().filter(|&&k| k == 2).count(), 16);
        for bad in ["", "a", "a:0", "a:1,a:2", "a:x", ":3", "a:-1"] {
            assert!(GroupSpec::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn group_spec_json_is_validated() {
        let s = GroupSpec::rhine_default();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<GroupSpec>(&json).unwrap(), s);
        assert!(serde_json::from_str::<GroupSpec>(r#"[{"name":"a","size":0}]"#).is_err());
    }

    #[test]
    fn case_shape_is_checked() {
        let spec = GroupSpec::parse("a:1,b:2").unwrap();
        let mut case = ForecastCase {
            date: date(),
            lead_time_h: 24,
            members: vec![vec![1.0], vec![2.0, 3.0]],
            observation: Some(2.0),
        };
        assert!(case.check(&spec).is_ok());
        case.members[1].pop();
        assert!(matches!(
            case.check(&spec),
            Err(Error::DimensionMismatch(_))
        ));
        case.members[1].push(f64::NAN);
        assert!(case.check(&spec).is_err());
    }

    #[test]
    fn clamping_keeps_a_margin() {
        assert_eq!(clamp_into_bounds(5.0, 0.0, 10.0), (5.0, false));
        let (v, moved) = clamp_into_bounds(-1.0, 0.0, 10.0);
        assert!(moved && v == 1e-8);
        let (v, moved) = clamp_into_bounds(12.0, 0.0, 10.0);
        assert!(moved && v == 10.0 - 1e-8);
        assert_eq!(
            clamp_into_bounds(1e300, f64::NEG_INFINITY, f64::INFINITY),
            (1e300, false)
        );
    }

    #[test]
    fn single_member_prediction() {
        let spec = GroupSpec::parse("solo:1").unwrap();
        let m = model(spec, vec![1.0]);
        let case = ForecastCase {
            date: date(),
            lead_time_h: 1,
            members: vec![vec![4.0]],
            observation: None,
        };
        let mix = m.predict(&case).unwrap();
        let tn = TruncatedNormal::new(0.5 + 0.9 * 4.0, 0.7, 0.0, 10.0).unwrap();
        for &x in &[0.5, 4.1, 9.0] {
            assert!((mix.eval_cdf(x) - tn.eval_cdf(x)).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicate_members_merge() {
        let spec = GroupSpec::parse("a:1,b:2").unwrap();
        let m = model(spec.clone(), vec![0.4, 0.3]);
        let case = ForecastCase {
            date: date(),
            lead_time_h: 1,
            members: vec![vec![2.0], vec![6.0, 6.0]],
            observation: None,
        };
        let mix = m.predict(&case).unwrap();
        let merged = TruncatedNormalMixture::new(
            vec![
                TruncatedNormal::new(0.5 + 0.9 * 2.0, 0.7, 0.0, 10.0).unwrap(),
                TruncatedNormal::new(0.5 + 0.9 * 6.0, 0.7, 0.0, 10.0).unwrap(),
            ],
            vec![0.4, 0.6],
        )
        .unwrap();
        for &x in &[1.0, 3.0, 5.5, 7.0] {
            assert!((mix.eval_cdf(x) - merged.eval_cdf(x)).abs() < 1e-14);
        }
        let bad = ForecastCase {
            members: vec![vec![2.0], vec![6.0]],
            ..case
        };
        assert!(m.predict(&bad).is_err());
    }

    #[test]
    fn rhine_model_shape() {
        let spec = GroupSpec::rhine_default();
        let m = model(spec, vec![1.0 / 79.0; 4]);
        assert_eq!(m.free_parameters(), 12);
        assert!(m.validate().is_ok());
        let case = ForecastCase {
            date: date(),
            lead_time_h: 24,
            members: vec![vec![5.0], vec![5.5; 51], vec![4.5; 16], vec![6.0; 11]],
            observation: None,
        };
        let mix = m.predict(&case).unwrap();
        assert_eq!(mix.components().len(), 79);
        let total = crate::quadrature::adaptive_simpson(|x| mix.pdf(x).unwrap(), 0.0, 10.0, 1e-12);
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn validation_rejects_bad_documents() {
        let spec = GroupSpec::parse("a:1,b:2").unwrap();
        assert!(model(spec.clone(), vec![0.5, 0.5]).validate().is_err());
        assert!(model(spec.clone(), vec![1.0, 0.0]).validate().is_ok());
        let mut m = model(spec, vec![0.2, 0.4]);
        m.sigma = 0.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn model_json_round_trip_with_infinite_bounds() {
        let spec = GroupSpec::parse("a:1,b:2").unwrap();
        let mut m = model(spec, vec![0.2, 0.4]);
        m.lower = f64::NEG_INFINITY;
        m.upper = f64::INFINITY;
        let json = serde_json::to_string(&m).unwrap();
        let back: BmaModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}

//! Versioned JSON documents holding one fitted model.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::bma::{BmaModel, ForecastCase};
use crate::boxcox;
use crate::distributions::{PredictiveCdf, TruncatedNormal, TruncatedNormalMixture};
use crate::emos::EmosModel;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Relative tolerance between stored transformed bounds and those implied
/// by the physical bounds and the transform coefficient.
const BOUNDS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_type", content = "parameters", rename_all = "snake_case")]
pub enum FittedModel {
    Bma(BmaModel),
    Emos(EmosModel),
}

impl FittedModel {
    pub fn predict(&self, case: &ForecastCase) -> Result<Predictive> {
        Ok(match self {
            FittedModel::Bma(m) => Predictive::Mixture(m.predict(case)?),
            FittedModel::Emos(m) => Predictive::Single(m.predict(case)?),
        })
    }

    pub fn bounds(&self) -> (f64, f64) {
        match self {
            FittedModel::Bma(m) => (m.lower, m.upper),
            FittedModel::Emos(m) => (m.lower, m.upper),
        }
    }
}

/// A predictive distribution from either model family.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictive {
    Mixture(TruncatedNormalMixture),
    Single(TruncatedNormal),
}

impl PredictiveCdf for Predictive {
    fn eval_cdf(&self, x: f64) -> f64 {
        match self {
            Predictive::Mixture(d) => d.eval_cdf(x),
            Predictive::Single(d) => d.eval_cdf(x),
        }
    }

    fn quantile(&self, p: f64) -> Result<f64> {
        match self {
            Predictive::Mixture(d) => d.quantile(p),
            Predictive::Single(d) => d.quantile(p),
        }
    }

    fn bounds(&self) -> (f64, f64) {
        match self {
            Predictive::Mixture(d) => d.bounds(),
            Predictive::Single(d) => d.bounds(),
        }
    }

    fn effective_support(&self) -> (f64, f64) {
        match self {
            Predictive::Mixture(d) => d.effective_support(),
            Predictive::Single(d) => d.effective_support(),
        }
    }

    fn crps(&self, x: f64) -> Result<f64> {
        match self {
            Predictive::Mixture(d) => d.crps(x),
            Predictive::Single(d) => d.crps(x),
        }
    }
}

/// First and last issue date and number of cases in a training window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSpan {
    pub first: NaiveDate,
    pub last: NaiveDate,
    pub cases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    /// Model name as used in score tables, e.g. `bma_pure_ml`.
    pub model: String,
    pub target_date: NaiveDate,
    pub lead_time_h: u32,
    pub lambda: f64,
    pub bounds_cm: (f64, f64),
    pub training: TrainingSpan,
    #[serde(flatten)]
    pub fitted: FittedModel,
}

impl ModelDocument {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Document(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        match &self.fitted {
            FittedModel::Bma(m) => m.validate()?,
            FittedModel::Emos(m) => m.validate()?,
        }
        if !self.lambda.is_finite() {
            return Err(Error::Document(format!(
                "lambda must be finite, got {}",
                self.lambda
            )));
        }
        let (lo, hi) = self.bounds_cm;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::Document(format!("bad physical bounds [{lo}, {hi}]")));
        }
        let (a, b) = self.fitted.bounds();
        let close = |x: f64, y: f64| (x - y).abs() <= BOUNDS_TOL * (1.0 + y.abs());
        let (ta, tb) = (
            boxcox::transform(lo, self.lambda)?,
            boxcox::transform(hi, self.lambda)?,
        );
        if !close(a, ta) || !close(b, tb) {
            return Err(Error::Document(format!(
                "transformed bounds [{a}, {b}] do not match [{ta}, {tb}] from the physical bounds"
            )));
        }
        if self.training.first > self.training.last || self.training.last >= self.target_date {
            return Err(Error::Document(
                "training window must end before the target date".into(),
            ));
        }
        let expected = match &self.fitted {
            FittedModel::Bma(m) => format!("bma_{}", m.variant.as_str()),
            FittedModel::Emos(_) => "emos".to_string(),
        };
        if self.model != expected {
            return Err(Error::Document(format!(
                "model name `{}` does not match its parameters",
                self.model
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Parses and validates a model document.
pub fn parse_model_document(text: &str) -> Result<ModelDocument> {
    let doc: ModelDocument =
        serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))?;
    doc.validate()?;
    Ok(doc)
}

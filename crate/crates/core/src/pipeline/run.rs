//! Rolling-window calibration runs and their output files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::document::{FittedModel, ModelDocument, Predictive, TrainingSpan, FORMAT_VERSION};
use super::windows::{rolling_windows, SkippedTarget, Window};
use super::{Dataset, Exclusion};
use crate::bma::{bma_fit, BmaVariant, EmControls, ForecastCase};
use crate::boxcox::{self, fit_lambda, BoxCoxParam, LambdaGrid};
use crate::emos::{emos_fit, EmosControls};
use crate::error::{Error, Result};
use crate::optim::SimplexControls;
use crate::verification::{
    self, crps_backtransformed, crps_ensemble, dm_test_values, ensemble_alpha, ensemble_interval,
    ensemble_median, interval_coverage_width, ks_uniformity_subsampled, pit_histogram,
    predictive_median, rank_pit, verification_rank, RankHistogram,
};

/// Name of the raw ensemble in score tables.
pub const RAW: &str = "raw";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    BmaPureMl,
    BmaSimplified,
    BmaNaive,
    Emos,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::BmaPureMl,
        ModelKind::BmaSimplified,
        ModelKind::BmaNaive,
        ModelKind::Emos,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::BmaPureMl => "bma_pure_ml",
            ModelKind::BmaSimplified => "bma_simplified",
            ModelKind::BmaNaive => "bma_naive",
            ModelKind::Emos => "emos",
        }
    }

    fn bma_variant(self) -> Option<BmaVariant> {
        match self {
            ModelKind::BmaPureMl => Some(BmaVariant::PureMl),
            ModelKind::BmaSimplified => Some(BmaVariant::Simplified),
            ModelKind::BmaNaive => Some(BmaVariant::Naive),
            ModelKind::Emos => None,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid("model", format!("unknown model `{s}`")))
    }
}

/// How the physical bounds of the water level are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum BoundsPolicy {
    /// Half the smallest and twice the largest observation of the initial
    /// training period. Later data cannot influence earlier fits.
    InitialPeriod,
    /// Half the smallest and twice the largest observation of the whole
    /// record. Uses future observations to set the bounds.
    FullRecord,
    Explicit {
        lower_cm: f64,
        upper_cm: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub window_days: usize,
    pub models: Vec<ModelKind>,
    pub bounds: BoundsPolicy,
    pub lambda_grid: LambdaGrid,
    /// Refit the transform coefficient on every training window instead of
    /// once on the initial period.
    pub refit_lambda: bool,
    pub seed: u64,
    pub em: EmControls,
    pub emos: SimplexControls,
    pub ks_samples: usize,
    pub ks_sample_size: usize,
    /// Lead times to process; all lead times in the data when `None`.
    pub lead_times: Option<Vec<u32>>,
    /// Worker threads; 0 uses one per core. Does not affect results.
    #[serde(skip)]
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            window_days: 100,
            models: ModelKind::ALL.to_vec(),
            bounds: BoundsPolicy::InitialPeriod,
            lambda_grid: LambdaGrid::default(),
            refit_lambda: false,
            seed: 0,
            em: EmControls::default(),
            emos: SimplexControls::default(),
            ks_samples: 1000,
            ks_sample_size: 1000,
            lead_times: None,
            workers: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_days < boxcox::MIN_FIT_SAMPLES {
            return Err(Error::invalid(
                "window_days",
                format!(
                    "must be at least {}, got {}",
                    boxcox::MIN_FIT_SAMPLES,
                    self.window_days
                ),
            ));
        }
        if self.models.is_empty() {
            return Err(Error::invalid("models", "at least one model is required"));
        }
        let mut seen = self.models.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.models.len() {
            return Err(Error::invalid("models", "models must be distinct"));
        }
        if let BoundsPolicy::Explicit { lower_cm, upper_cm } = self.bounds {
            if !(lower_cm > 0.0 && lower_cm < upper_cm && upper_cm.is_finite()) {
                return Err(Error::invalid(
                    "bounds",
                    format!("need 0 < lower < upper, got [{lower_cm}, {upper_cm}]"),
                ));
            }
        }
        if self.ks_samples == 0 || self.ks_sample_size == 0 {
            return Err(Error::invalid(
                "ks",
                "subsample count and size must be positive",
            ));
        }
        self.lambda_grid.points()?;
        Ok(())
    }
}

/// Transform coefficient and transformed bounds of one lead time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadSetup {
    pub lead_time_h: u32,
    pub lambda: BoxCoxParam,
    pub bounds_transformed: (f64, f64),
}

/// Verification of one forecast on the original scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub date: NaiveDate,
    pub lead_time_h: u32,
    pub model: String,
    pub crps_cm: f64,
    pub median_cm: f64,
    pub abs_err_cm: f64,
    pub pit: f64,
    pub hit: bool,
    pub width_cm: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Failure {
    pub date: NaiveDate,
    pub lead_time_h: u32,
    pub model: String,
    pub message: String,
}

/// Summary scores of one model at one lead time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub lead_time_h: u32,
    pub model: String,
    pub cases: usize,
    pub mean_crps_cm: f64,
    pub crpss_vs_raw: f64,
    pub mae_cm: f64,
    pub coverage: f64,
    pub avg_width_cm: f64,
    pub dm_p_vs_emos: f64,
    pub ks_mean_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: RunConfig,
    pub bounds_cm: (f64, f64),
    pub leads: Vec<LeadSetup>,
    pub documents: Vec<ModelDocument>,
    /// Per-case scores ordered by lead time, model and date; includes the raw ensemble.
    pub case_scores: Vec<CaseScore>,
    pub score_table: Vec<ScoreRow>,
    /// PIT counts in M + 1 bins per lead time and model.
    pub pit_histograms: Vec<(u32, String, Vec<u64>)>,
    pub rank_histograms: Vec<(u32, RankHistogram)>,
    pub exclusions: Vec<Exclusion>,
    pub skipped: Vec<SkippedTarget>,
    pub failures: Vec<Failure>,
    pub elapsed_seconds: f64,
}

impl RunReport {
    /// True when some target was skipped or some fit failed.
    pub fn is_partial(&self) -> bool {
        !self.skipped.is_empty() || !self.failures.is_empty()
    }

    pub fn rows_for(&self, lead_time_h: u32) -> impl Iterator<Item = &ScoreRow> {
        self.score_table
            .iter()
            .filter(move |r| r.lead_time_h == lead_time_h)
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent random stream for a case, fixed by the run seed.
fn case_rng(seed: u64, date: NaiveDate, lead_time_h: u32) -> ChaCha8Rng {
    let key =
        splitmix(seed) ^ splitmix(((date.num_days_from_ce() as u64) << 32) | lead_time_h as u64);
    ChaCha8Rng::seed_from_u64(splitmix(key))
}

/// Case with members and observation mapped through the transform.
pub fn transform_case(case: &ForecastCase, lambda: f64) -> ForecastCase {
    ForecastCase {
        date: case.date,
        lead_time_h: case.lead_time_h,
        members: case
            .members
            .iter()
            .map(|g| {
                g.iter()
                    .map(|&v| boxcox::transform_unchecked(v, lambda))
                    .collect()
            })
            .collect(),
        observation: case
            .observation
            .map(|v| boxcox::transform_unchecked(v, lambda)),
    }
}

/// Scores a predictive distribution on the Box-Cox scale against the
/// observation `y_cm`.
pub fn score_prediction(
    pred: &Predictive,
    lambda: f64,
    alpha: f64,
    date: NaiveDate,
    lead_time_h: u32,
    model: &str,
    y_cm: f64,
) -> Result<CaseScore> {
    let crps_cm = crps_backtransformed(pred, lambda, y_cm)?;
    let median_cm = predictive_median(pred, lambda)?;
    let (hit, width_cm) = interval_coverage_width(pred, lambda, alpha, y_cm)?;
    let pit = verification::pit(pred, boxcox::transform(y_cm, lambda)?)?;
    Ok(CaseScore {
        date,
        lead_time_h,
        model: model.to_string(),
        crps_cm,
        median_cm,
        abs_err_cm: (median_cm - y_cm).abs(),
        pit,
        hit,
        width_cm,
    })
}

struct TaskOutput {
    documents: Vec<ModelDocument>,
    scores: Vec<CaseScore>,
    raw: CaseScore,
    rank: usize,
    failures: Vec<Failure>,
}

/// Physical bounds in cm under `policy`; `initial` holds the cases of the
/// initial training period.
fn bounds_cm(ds: &Dataset, policy: BoundsPolicy, initial: &[&ForecastCase]) -> Result<(f64, f64)> {
    let half_double = |range: Option<(f64, f64)>, what: &str| {
        range
            .map(|(lo, hi)| (0.5 * lo, 2.0 * hi))
            .ok_or_else(|| Error::InsufficientData(format!("no observations in the {what}")))
    };
    let bounds = match policy {
        BoundsPolicy::Explicit { lower_cm, upper_cm } => (lower_cm, upper_cm),
        BoundsPolicy::InitialPeriod => half_double(
            super::data::observed_range(initial.iter().copied()),
            "initial training period",
        )?,
        BoundsPolicy::FullRecord => half_double(ds.observed_range(), "dataset")?,
    };
    if let Some((lo, hi)) = ds.observed_range() {
        if lo <= bounds.0 || hi >= bounds.1 {
            log::warn!(
                "observations span [{lo}, {hi}] cm, not inside the bounds [{}, {}] cm",
                bounds.0,
                bounds.1
            );
        }
    }
    Ok(bounds)
}

fn run_task(
    ds: &Dataset,
    cfg: &RunConfig,
    w: &Window,
    setup: &LeadSetup,
    bounds_cm: (f64, f64),
) -> Result<TaskOutput> {
    let lead = w.lead_time_h;
    let target = ds
        .case(w.target, lead)
        .ok_or_else(|| Error::Data(format!("missing target case {} lead {lead} h", w.target)))?;
    let y = target.observation.ok_or_else(|| {
        Error::Data(format!(
            "target {} lead {lead} h has no observation",
            w.target
        ))
    })?;
    let training_cm: Vec<&ForecastCase> = w
        .training
        .iter()
        .map(|d| {
            ds.case(*d, lead)
                .expect("window dates come from the dataset")
        })
        .collect();
    let lambda = if cfg.refit_lambda {
        let obs: Vec<f64> = training_cm.iter().filter_map(|c| c.observation).collect();
        fit_lambda(&obs, &cfg.lambda_grid)?.lambda
    } else {
        setup.lambda.lambda
    };
    let bounds = (
        boxcox::transform(bounds_cm.0, lambda)?,
        boxcox::transform(bounds_cm.1, lambda)?,
    );
    let training: Vec<ForecastCase> = training_cm
        .iter()
        .map(|c| transform_case(c, lambda))
        .collect();
    let target_t = transform_case(target, lambda);
    let span = TrainingSpan {
        first: w.training[0],
        last: *w.training.last().expect("windows are nonempty"),
        cases: training.len(),
    };

    let members: Vec<f64> = target.flat_members().collect();
    let m = members.len();
    let mut rng = case_rng(cfg.seed, w.target, lead);
    let rank = verification_rank(&members, y, &mut rng)?;
    let (hit, width_cm) = ensemble_interval(&members, y)?;
    let median_cm = ensemble_median(&members)?;
    let raw = CaseScore {
        date: w.target,
        lead_time_h: lead,
        model: RAW.to_string(),
        crps_cm: crps_ensemble(&members, y)?,
        median_cm,
        abs_err_cm: (median_cm - y).abs(),
        pit: rank_pit(rank, m, rng.random::<f64>()),
        hit,
        width_cm,
    };

    let alpha = ensemble_alpha(m);
    let mut out = TaskOutput {
        documents: Vec::new(),
        scores: Vec::new(),
        raw,
        rank,
        failures: Vec::new(),
    };
    for &kind in &cfg.models {
        let fitted = match kind.bma_variant() {
            Some(variant) => {
                bma_fit(&training, &ds.group_spec, bounds, variant, &cfg.em).map(FittedModel::Bma)
            }
            None => emos_fit(
                &training,
                &ds.group_spec,
                bounds,
                &EmosControls { simplex: cfg.emos },
            )
            .map(FittedModel::Emos),
        };
        let result = fitted.and_then(|fitted| {
            let pred = fitted.predict(&target_t)?;
            let score = score_prediction(&pred, lambda, alpha, w.target, lead, kind.name(), y)?;
            let doc = ModelDocument {
                format_version: FORMAT_VERSION,
                model: kind.name().to_string(),
                target_date: w.target,
                lead_time_h: lead,
                lambda,
                bounds_cm,
                training: span,
                fitted,
            };
            Ok((doc, score))
        });
        match result {
            Ok((doc, score)) => {
                out.documents.push(doc);
                out.scores.push(score);
            }
            Err(e) => {
                log::warn!("{} {} lead {lead} h failed: {e}", kind.name(), w.target);
                out.failures.push(Failure {
                    date: w.target,
                    lead_time_h: lead,
                    model: kind.name().to_string(),
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

fn nan_mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Fits every requested model on every rolling window and verifies the
/// predictions for the target dates.
pub fn run_calibration(ds: &Dataset, cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    let available = ds.lead_times();
    let leads: Vec<u32> = match &cfg.lead_times {
        Some(l) => {
            if let Some(missing) = l.iter().find(|x| !available.contains(x)) {
                return Err(Error::Data(format!(
                    "lead time {missing} h is not in the data"
                )));
            }
            let mut l = l.clone();
            l.sort_unstable();
            l.dedup();
            l
        }
        None => available,
    };
    let first = ds
        .cases
        .keys()
        .next()
        .map(|k| k.0)
        .ok_or_else(|| Error::InsufficientData("dataset has no complete cases".into()))?;
    let initial_end = first + chrono::Days::new(cfg.window_days as u64);
    let initial: Vec<&ForecastCase> = ds.cases.values().filter(|c| c.date < initial_end).collect();
    let bounds_cm = bounds_cm(ds, cfg.bounds, &initial)?;

    let mut setups = Vec::new();
    let mut windows = Vec::new();
    let mut skipped = Vec::new();
    for &lead in &leads {
        let obs: Vec<f64> = initial
            .iter()
            .filter(|c| c.lead_time_h == lead)
            .filter_map(|c| c.observation)
            .collect();
        let mut lambda = fit_lambda(&obs, &cfg.lambda_grid)?;
        lambda.lead_time_h = Some(lead);
        setups.push(LeadSetup {
            lead_time_h: lead,
            bounds_transformed: (
                boxcox::transform(bounds_cm.0, lambda.lambda)?,
                boxcox::transform(bounds_cm.1, lambda.lambda)?,
            ),
            lambda,
        });
        let (w, s) = rolling_windows(ds, cfg.window_days, lead);
        windows.extend(w);
        skipped.extend(s);
    }
    let setup_of: BTreeMap<u32, &LeadSetup> = setups.iter().map(|s| (s.lead_time_h, s)).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::invalid("workers", e.to_string()))?;
    let outputs: Vec<(usize, Result<TaskOutput>)> = pool.install(|| {
        windows
            .par_iter()
            .enumerate()
            .map(|(i, w)| (i, run_task(ds, cfg, w, setup_of[&w.lead_time_h], bounds_cm)))
            .collect()
    });

    let model_names: Vec<&str> = std::iter::once(RAW)
        .chain(cfg.models.iter().map(|m| m.name()))
        .collect();
    let mut documents = Vec::new();
    let mut failures = Vec::new();
    let mut per_lead: BTreeMap<u32, BTreeMap<&str, BTreeMap<NaiveDate, CaseScore>>> =
        BTreeMap::new();
    let m = ds.group_spec.total_members();
    let mut ranks: BTreeMap<u32, RankHistogram> =
        leads.iter().map(|&l| (l, RankHistogram::new(m))).collect();
    for (i, out) in outputs {
        let w = &windows[i];
        match out {
            Ok(out) => {
                documents.extend(out.documents);
                failures.extend(out.failures);
                ranks
                    .get_mut(&w.lead_time_h)
                    .expect("lead registered")
                    .add(out.rank)?;
                let lead = per_lead.entry(w.lead_time_h).or_default();
                lead.entry(RAW).or_default().insert(w.target, out.raw);
                for s in out.scores {
                    let name = model_names
                        .iter()
                        .find(|n| **n == s.model)
                        .expect("known model");
                    lead.entry(name).or_default().insert(w.target, s);
                }
            }
            Err(e) => {
                log::warn!("{} lead {} h failed: {e}", w.target, w.lead_time_h);
                failures.push(Failure {
                    date: w.target,
                    lead_time_h: w.lead_time_h,
                    model: RAW.to_string(),
                    message: e.to_string(),
                });
            }
        }
    }
    documents.sort_by(|a, b| {
        (a.lead_time_h, a.target_date, &a.model).cmp(&(b.lead_time_h, b.target_date, &b.model))
    });
    failures.sort();
    skipped.sort();

    let mut case_scores = Vec::new();
    let mut score_table = Vec::new();
    let mut pit_histograms = Vec::new();
    for &lead in &leads {
        let Some(by_model) = per_lead.get(&lead) else {
            continue;
        };
        let raw = &by_model[RAW];
        let series = |name: &str| -> Vec<f64> {
            raw.keys()
                .map(|d| {
                    by_model
                        .get(name)
                        .and_then(|s| s.get(d))
                        .map_or(f64::NAN, |s| s.crps_cm)
                })
                .collect()
        };
        let raw_crps = series(RAW);
        let emos_crps = by_model.contains_key("emos").then(|| series("emos"));
        for (mi, &name) in model_names.iter().enumerate() {
            let Some(scores) = by_model.get(name) else {
                continue;
            };
            let crps = series(name);
            let paired = |other: &[f64]| -> (Vec<f64>, Vec<f64>) {
                crps.iter()
                    .zip(other)
                    .filter(|(a, b)| !a.is_nan() && !b.is_nan())
                    .map(|(a, b)| (*a, *b))
                    .unzip()
            };
            let (mine, reference) = paired(&raw_crps);
            let ref_mean = nan_mean(reference.iter().copied());
            let crpss = if ref_mean > 0.0 {
                1.0 - nan_mean(mine.iter().copied()) / ref_mean
            } else {
                f64::NAN
            };
            let dm_p = match &emos_crps {
                Some(e) if name != "emos" => {
                    let (a, b) = paired(e);
                    dm_test_values(&a, &b, lead).map_or(f64::NAN, |r| r.p_value)
                }
                _ => f64::NAN,
            };
            let pits: Vec<f64> = scores.values().map(|s| s.pit).collect();
            let size = cfg.ks_sample_size.min(pits.len() / 2);
            let ks_seed = splitmix(cfg.seed ^ splitmix(((lead as u64) << 8) | mi as u64));
            let ks = if size == 0 {
                f64::NAN
            } else {
                ks_uniformity_subsampled(&pits, cfg.ks_samples, size, ks_seed)?
            };
            score_table.push(ScoreRow {
                lead_time_h: lead,
                model: name.to_string(),
                cases: scores.len(),
                mean_crps_cm: nan_mean(scores.values().map(|s| s.crps_cm)),
                crpss_vs_raw: crpss,
                mae_cm: nan_mean(scores.values().map(|s| s.abs_err_cm)),
                coverage: nan_mean(scores.values().map(|s| if s.hit { 1.0 } else { 0.0 })),
                avg_width_cm: nan_mean(scores.values().map(|s| s.width_cm)),
                dm_p_vs_emos: dm_p,
                ks_mean_p: ks,
            });
            pit_histograms.push((lead, name.to_string(), pit_histogram(&pits, m + 1)?));
            case_scores.extend(scores.values().cloned());
        }
    }

    Ok(RunReport {
        config: cfg.clone(),
        bounds_cm,
        leads: setups,
        documents,
        case_scores,
        score_table,
        pit_histograms,
        rank_histograms: ranks.into_iter().collect(),
        exclusions: ds.exclusions.clone(),
        skipped,
        failures,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Re-verifies model documents against the observations in `ds`. Documents
/// whose target case is absent are skipped.
pub fn rescore(ds: &Dataset, documents: &[ModelDocument]) -> Result<Vec<CaseScore>> {
    let alpha = ensemble_alpha(ds.group_spec.total_members());
    let mut out = Vec::new();
    for doc in documents {
        let Some(case) = ds.case(doc.target_date, doc.lead_time_h) else {
            continue;
        };
        let Some(y) = case.observation else { continue };
        let pred = doc.fitted.predict(&transform_case(case, doc.lambda))?;
        out.push(score_prediction(
            &pred,
            doc.lambda,
            alpha,
            doc.target_date,
            doc.lead_time_h,
            &doc.model,
            y,
        )?);
    }
    Ok(out)
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Data(e.to_string()))
}

/// Writes case scores in the `scores/cases.csv` format.
pub fn case_scores_csv(scores: &[CaseScore]) -> Result<Vec<u8>> {
    csv_bytes(
        &[
            "date",
            "lead_time_h",
            "model",
            "crps_cm",
            "median_cm",
            "abs_err_cm",
            "pit",
            "hit",
            "width_cm",
        ],
        scores.iter().map(|s| {
            vec![
                s.date.to_string(),
                s.lead_time_h.to_string(),
                s.model.clone(),
                fmt(s.crps_cm),
                fmt(s.median_cm),
                fmt(s.abs_err_cm),
                fmt(s.pit),
                u8::from(s.hit).to_string(),
                fmt(s.width_cm),
            ]
        }),
    )
}

/// Writes the score table in the `scores/scores.csv` format.
pub fn score_table_csv(rows: &[ScoreRow]) -> Result<Vec<u8>> {
    csv_bytes(
        &[
            "lead_time_h",
            "model",
            "mean_crps_cm",
            "crpss_vs_raw",
            "mae_cm",
            "coverage",
            "avg_width_cm",
            "dm_p_vs_emos",
            "ks_mean_p",
        ],
        rows.iter().map(|r| {
            vec![
                r.lead_time_h.to_string(),
                r.model.clone(),
                fmt(r.mean_crps_cm),
                fmt(r.crpss_vs_raw),
                fmt(r.mae_cm),
                fmt(r.coverage),
                fmt(r.avg_width_cm),
                fmt(r.dm_p_vs_emos),
                fmt(r.ks_mean_p),
            ]
        }),
    )
}

#[derive(Serialize)]
struct Manifest<'a> {
    format_version: u32,
    tool_version: &'static str,
    config: &'a RunConfig,
    seed: u64,
    bounds_cm: (f64, f64),
    leads: &'a [LeadSetup],
    targets: usize,
    documents: usize,
    partial: bool,
    skipped: &'a [SkippedTarget],
    failures: &'a [Failure],
    excluded_cases: usize,
    files: Vec<String>,
}

#[derive(Serialize)]
struct Timing {
    elapsed_seconds: f64,
    workers: usize,
}

/// Relative path of a model document inside a run directory.
pub fn document_path(doc: &ModelDocument) -> PathBuf {
    PathBuf::from("models").join(format!(
        "{}_lt{:03}_{}.json",
        doc.target_date, doc.lead_time_h, doc.model
    ))
}

impl RunReport {
    /// Writes models, score tables, histograms, exclusions and the manifest
    /// into `dir`. Everything except `timing.json` depends only on the data,
    /// configuration and seed.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut files = Vec::new();
        let mut put = |rel: PathBuf, bytes: Vec<u8>| -> Result<()> {
            write_file(&dir.join(&rel), &bytes)?;
            files.push(rel.to_string_lossy().replace('\\', "/"));
            Ok(())
        };
        for doc in &self.documents {
            put(document_path(doc), doc.to_json()?.into_bytes())?;
        }
        put(
            PathBuf::from("scores/scores.csv"),
            score_table_csv(&self.score_table)?,
        )?;
        put(
            PathBuf::from("scores/cases.csv"),
            case_scores_csv(&self.case_scores)?,
        )?;
        put(
            PathBuf::from("scores/pit_histogram.csv"),
            csv_bytes(
                &["lead_time_h", "model", "bin", "count"],
                self.pit_histograms
                    .iter()
                    .flat_map(|(lead, model, counts)| {
                        counts.iter().enumerate().map(move |(i, c)| {
                            vec![
                                lead.to_string(),
                                model.clone(),
                                (i + 1).to_string(),
                                c.to_string(),
                            ]
                        })
                    }),
            )?,
        )?;
        put(
            PathBuf::from("scores/rank_histogram.csv"),
            csv_bytes(
                &["lead_time_h", "rank", "count"],
                self.rank_histograms.iter().flat_map(|(lead, h)| {
                    h.counts.iter().enumerate().map(move |(i, c)| {
                        vec![lead.to_string(), (i + 1).to_string(), c.to_string()]
                    })
                }),
            )?,
        )?;
        put(
            PathBuf::from("exclusions.csv"),
            csv_bytes(
                &["date", "lead_time_h", "reason"],
                self.exclusions.iter().map(|e| {
                    vec![
                        e.date.to_string(),
                        e.lead_time_h.to_string(),
                        e.reason.clone(),
                    ]
                }),
            )?,
        )?;
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            config: &self.config,
            seed: self.config.seed,
            bounds_cm: self.bounds_cm,
            leads: &self.leads,
            targets: self
                .rank_histograms
                .iter()
                .map(|(_, h)| h.total() as usize)
                .sum(),
            documents: self.documents.len(),
            partial: self.is_partial(),
            skipped: &self.skipped,
            failures: &self.failures,
            excluded_cases: self.exclusions.len(),
            files,
        };
        write_file(
            &dir.join("manifest.json"),
            (serde_json::to_string_pretty(&manifest)? + "\n").as_bytes(),
        )?;
        let timing = Timing {
            elapsed_seconds: self.elapsed_seconds,
            workers: self.config.workers,
        };
        write_file(
            &dir.join("timing.json"),
            (serde_json::to_string_pretty(&timing)? + "\n").as_bytes(),
        )?;
        Ok(())
    }
}

/// Reads every model document under `dir/models`, in file-name order.
pub fn read_documents(dir: &Path) -> Result<Vec<ModelDocument>> {
    let models = dir.join("models");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&models)
        .map_err(|e| Error::io(&models, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            super::document::parse_model_document(&text)
                .map_err(|e| Error::Document(format!("{}: {e}", p.display())))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{synth_generate, Scenario};

    fn small_run(workers: usize) -> RunReport {
        let scenario = Scenario {
            days: 140,
            lead_times: vec![24],
            ..Scenario::default()
        };
        let ds = synth_generate(&scenario, 11).unwrap();
        let cfg = RunConfig {
            window_days: 100,
            seed: 5,
            workers,
            em: EmControls {
                max_iter: 100,
                ..EmControls::default()
            },
            ks_samples: 50,
            ..RunConfig::default()
        };
        run_calibration(&ds, &cfg).unwrap()
    }

    #[test]
    fn small_run_is_complete_and_worker_independent() {
        let one = small_run(1);
        let three = small_run(3);
        assert_eq!(one.documents, three.documents);
        assert_eq!(one.case_scores, three.case_scores);
        assert_eq!(
            format!("{:?}", one.score_table),
            format!("{:?}", three.score_table)
        );
        assert!(!one.is_partial(), "{:?}", one.failures);
        assert_eq!(one.documents.len(), 40 * 4);
        assert_eq!(one.score_table.len(), 5);
        let raw = one.rows_for(24).find(|r| r.model == RAW).unwrap();
        assert_eq!(raw.crpss_vs_raw, 0.0);
        for r in &one.score_table {
            assert_eq!(r.cases, 40);
            assert!(r.mean_crps_cm > 0.0 && (0.0..=1.0).contains(&r.coverage));
        }
        for doc in &one.documents {
            doc.validate().unwrap();
        }
    }

    #[test]
    fn written_run_round_trips() {
        let report = small_run(0);
        let dir = tempfile::tempdir().unwrap();
        report.write(dir.path()).unwrap();
        let docs = read_documents(dir.path()).unwrap();
        assert_eq!(docs.len(), report.documents.len());
        let mut sorted = report.documents.clone();
        sorted.sort_by_key(document_path);
        assert_eq!(docs, sorted);
        let manifest: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("manifest.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(manifest["partial"], false);
        assert!(manifest.get("elapsed_seconds").is_none());
        assert!(manifest["config"].get("workers").is_none());
        let cases = std::fs::read_to_string(dir.path().join("scores/cases.csv")).unwrap();
        assert_eq!(cases.lines().count(), 1 + report.case_scores.len());
    }

    #[test]
    fn rescoring_documents_reproduces_scores() {
        let scenario = Scenario {
            days: 140,
            lead_times: vec![24],
            ..Scenario::default()
        };
        let ds = synth_generate(&scenario, 11).unwrap();
        let report = small_run(1);
        let again = rescore(&ds, &report.documents).unwrap();
        for s in &again {
            let orig = report
                .case_scores
                .iter()
                .find(|o| o.date == s.date && o.model == s.model)
                .unwrap();
            assert_eq!(orig, s);
        }
        assert_eq!(again.len(), report.documents.len());
    }

    #[test]
    fn half_min_double_max_bounds() {
        let scenario = Scenario {
            days: 140,
            lead_times: vec![24],
            range_cm: (60.0, 600.0),
            ..Scenario::default()
        };
        let mut ds = synth_generate(&scenario, 3).unwrap();
        let last = *ds.cases.keys().next_back().unwrap();
        ds.cases.values_mut().next().unwrap().observation = Some(35.0);
        ds.cases.get_mut(&last).unwrap().observation = Some(825.0);
        let initial: Vec<&ForecastCase> = ds.cases.values().take(100).collect();
        assert_eq!(
            bounds_cm(&ds, BoundsPolicy::FullRecord, &initial).unwrap(),
            (17.5, 1650.0)
        );
        let (lo, hi) = bounds_cm(&ds, BoundsPolicy::InitialPeriod, &initial).unwrap();
        assert_eq!(lo, 17.5);
        assert!(hi < 1650.0);
        let explicit = BoundsPolicy::Explicit {
            lower_cm: 10.0,
            upper_cm: 2000.0,
        };
        assert_eq!(bounds_cm(&ds, explicit, &initial).unwrap(), (10.0, 2000.0));
    }

    #[test]
    fn config_validation() {
        let mut cfg = RunConfig::default();
        cfg.validate().unwrap();
        cfg.window_days = 10;
        assert!(cfg.validate().is_err());
        let cfg = RunConfig {
            models: vec![ModelKind::Emos, ModelKind::Emos],
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig {
            bounds: BoundsPolicy::Explicit {
                lower_cm: 10.0,
                upper_cm: 5.0,
            },
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert_eq!(
            "bma_naive".parse::<ModelKind>().unwrap(),
            ModelKind::BmaNaive
        );
        assert!("bma".parse::<ModelKind>().is_err());
    }
}

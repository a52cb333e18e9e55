//! Data files, rolling windows, batch calibration runs and synthetic data.

mod data;
mod document;
mod run;
mod synth;
mod windows;

pub use data::{
    load_dataset, parse_forecasts, parse_observations, Dataset, Exclusion, ForecastTable,
    ObservationTable, FORECAST_HEADER, OBSERVATION_HEADER,
};
pub use document::{
    parse_model_document, FittedModel, ModelDocument, Predictive, TrainingSpan, FORMAT_VERSION,
};
pub use run::{
    case_scores_csv, document_path, read_documents, rescore, run_calibration, score_prediction,
    score_table_csv, transform_case, BoundsPolicy, CaseScore, Failure, LeadSetup, ModelKind,
    RunConfig, RunReport, ScoreRow, RAW,
};
pub use synth::{synth_generate, Scenario};
pub use windows::{rolling_windows, SkippedTarget, Window, MIN_PRESENCE};

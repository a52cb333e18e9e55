use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};

use tnbma::bma::{EmControls, GroupSpec, MeanAnchor};
use tnbma::boxcox::LambdaGrid;
use tnbma::optim::SimplexControls;
use tnbma::pipeline::{
    case_scores_csv, load_dataset, parse_model_document, read_documents, rescore, run_calibration,
    synth_generate, BoundsPolicy, FittedModel, ModelKind, RunConfig, Scenario,
};
use tnbma::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

/// Post-processing of bounded ensemble forecasts with truncated normal BMA and EMOS.
#[derive(Parser)]
#[command(name = "tnbma", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit, predict and verify every model on rolling training windows.
    Calibrate(CalibrateArgs),
    /// Write a synthetic forecast and observation data set.
    Simulate(SimulateArgs),
    /// Re-verify the model documents of a run against observations.
    Score(ScoreArgs),
    /// Validate a model document and print a summary.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Forecast CSV: date,lead_time_h,group,member_index,value_cm
    #[arg(long)]
    forecasts: PathBuf,
    /// Observation CSV: date,lead_time_h,value_cm
    #[arg(long)]
    observations: PathBuf,
    /// Exchangeable groups as name:size pairs.
    #[arg(long, default_value = "hres:1,eps:51,cosmo_leps:16,ncep_gefs:11")]
    groups: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundsArg {
    InitialPeriod,
    FullRecord,
    Explicit,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnchorArg {
    Initial,
    Current,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    window_days: usize,
    /// Comma-separated subset of bma_pure_ml, bma_simplified, bma_naive, emos.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "bma_pure_ml,bma_simplified,bma_naive,emos"
    )]
    models: Vec<String>,
    #[arg(long, value_enum, default_value = "initial-period")]
    bounds: BoundsArg,
    /// Lower physical bound in cm, with --bounds explicit.
    #[arg(long)]
    lower_cm: Option<f64>,
    /// Upper physical bound in cm, with --bounds explicit.
    #[arg(long)]
    upper_cm: Option<f64>,
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    lambda_min: f64,
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    lambda_max: f64,
    #[arg(long, default_value_t = 0.01)]
    lambda_step: f64,
    /// Refit the transform coefficient on every training window.
    #[arg(long)]
    refit_lambda: bool,
    /// Lead times to process; all when omitted.
    #[arg(long, value_delimiter = ',')]
    lead_times: Option<Vec<u32>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Locations the EM mean correction starts from.
    #[arg(long, value_enum, default_value = "initial")]
    anchor: AnchorArg,
    #[arg(long, default_value_t = 10_000)]
    emos_max_evals: usize,
    #[arg(long, default_value_t = 1000)]
    ks_samples: usize,
    #[arg(long, default_value_t = 1000)]
    ks_sample_size: usize,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    seed: u64,
    /// Output directory for forecasts.csv and observations.csv.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with generator parameters; flags below override it.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    days: Option<usize>,
    #[arg(long)]
    start: Option<NaiveDate>,
    #[arg(long, value_delimiter = ',')]
    lead_times: Option<Vec<u32>>,
    /// Ensemble spread relative to a calibrated ensemble.
    #[arg(long)]
    dispersion: Option<f64>,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Run directory containing models/.
    #[arg(long)]
    run: PathBuf,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    document: PathBuf,
    /// Print the full document instead of a summary.
    #[arg(long)]
    json: bool,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_data_error() {
            Failure::Data(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::Simulate(a) => simulate(a).map(|()| 0),
        Command::Score(a) => score(a).map(|()| 0),
        Command::Inspect(a) => inspect(a).map(|()| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_DATA)
        }
    }
}

fn run_config(a: &CalibrateArgs) -> Result<RunConfig, Failure> {
    let models = a
        .models
        .iter()
        .map(|m| m.trim().parse::<ModelKind>())
        .collect::<Result<Vec<_>, _>>()?;
    let bounds = match (a.bounds, a.lower_cm, a.upper_cm) {
        (BoundsArg::Explicit, Some(lower_cm), Some(upper_cm)) => {
            BoundsPolicy::Explicit { lower_cm, upper_cm }
        }
        (BoundsArg::Explicit, _, _) => {
            return Err(Failure::Usage(
                "--bounds explicit needs --lower-cm and --upper-cm".into(),
            ))
        }
        (_, None, None) => match a.bounds {
            BoundsArg::InitialPeriod => BoundsPolicy::InitialPeriod,
            _ => BoundsPolicy::FullRecord,
        },
        _ => {
            return Err(Failure::Usage(
                "--lower-cm and --upper-cm need --bounds explicit".into(),
            ))
        }
    };
    let cfg = RunConfig {
        window_days: a.window_days,
        models,
        bounds,
        lambda_grid: LambdaGrid {
            lo: a.lambda_min,
            hi: a.lambda_max,
            step: a.lambda_step,
        },
        refit_lambda: a.refit_lambda,
        seed: a.seed,
        em: EmControls {
            max_iter: a.max_iter,
            tol: a.tol,
            anchor: match a.anchor {
                AnchorArg::Initial => MeanAnchor::Initial,
                AnchorArg::Current => MeanAnchor::Current,
            },
        },
        emos: SimplexControls {
            max_evals: a.emos_max_evals,
            ..SimplexControls::default()
        },
        ks_samples: a.ks_samples,
        ks_sample_size: a.ks_sample_size,
        lead_times: a.lead_times.clone(),
        workers: a.workers,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn calibrate(a: CalibrateArgs) -> Result<u8, Failure> {
    let cfg = run_config(&a)?;
    let spec = GroupSpec::parse(&a.data.groups)?;
    let ds = load_dataset(&a.data.forecasts, &a.data.observations, &spec)?;
    let report = run_calibration(&ds, &cfg)?;
    report.write(&a.out)?;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "{:>8} {:<15} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "lead_h", "model", "crps_cm", "crpss", "mae_cm", "coverage", "width_cm"
    );
    for r in &report.score_table {
        let _ = writeln!(
            out,
            "{:>8} {:<15} {:>9.3} {:>9.4} {:>9.3} {:>9.4} {:>9.2}",
            r.lead_time_h,
            r.model,
            r.mean_crps_cm,
            r.crpss_vs_raw,
            r.mae_cm,
            r.coverage,
            r.avg_width_cm
        );
    }
    if report.is_partial() {
        eprintln!(
            "partial run: {} targets skipped, {} fits failed; see {}",
            report.skipped.len(),
            report.failures.len(),
            a.out.join("manifest.json").display()
        );
        return Ok(EXIT_PARTIAL);
    }
    Ok(0)
}

fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let mut scenario = match &a.scenario {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?
        }
        None => Scenario::default(),
    };
    if let Some(d) = a.days {
        scenario.days = d;
    }
    if let Some(s) = a.start {
        scenario.start = s;
    }
    if let Some(l) = a.lead_times {
        scenario.lead_times = l;
    }
    if let Some(d) = a.dispersion {
        scenario.dispersion = d;
    }
    let ds = synth_generate(&scenario, a.seed)?;
    std::fs::create_dir_all(&a.out).map_err(|e| io_failure(&a.out, e))?;
    let create = |name: &str| {
        let p = a.out.join(name);
        File::create(&p)
            .map(BufWriter::new)
            .map_err(|e| io_failure(&p, e))
    };
    ds.write_csv(create("forecasts.csv")?, create("observations.csv")?)?;
    let scenario_path = a.out.join("scenario.json");
    let text = serde_json::to_string_pretty(&scenario).map_err(Error::from)? + "\n";
    std::fs::write(&scenario_path, text).map_err(|e| io_failure(&scenario_path, e))?;
    println!(
        "{} cases, {} lead times, groups {} -> {}",
        ds.cases.len(),
        ds.lead_times().len(),
        ds.group_spec,
        a.out.display()
    );
    Ok(())
}

fn score(a: ScoreArgs) -> Result<(), Failure> {
    let spec = GroupSpec::parse(&a.data.groups)?;
    let ds = load_dataset(&a.data.forecasts, &a.data.observations, &spec)?;
    let docs = read_documents(&a.run)?;
    let scores = rescore(&ds, &docs)?;
    let bytes = case_scores_csv(&scores)?;
    match &a.out {
        Some(p) => std::fs::write(p, bytes).map_err(|e| io_failure(p, e))?,
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| Failure::Data(e.to_string()))?,
    }
    if scores.len() < docs.len() {
        log::warn!(
            "{} of {} documents have no verifying observation",
            docs.len() - scores.len(),
            docs.len()
        );
    }
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&a.document).map_err(|e| io_failure(&a.document, e))?;
    let doc = parse_model_document(&text)?;
    if a.json {
        print!("{}", doc.to_json()?);
        return Ok(());
    }
    println!("model        {}", doc.model);
    println!(
        "target       {} lead {} h",
        doc.target_date, doc.lead_time_h
    );
    println!(
        "training     {} .. {} ({} cases)",
        doc.training.first, doc.training.last, doc.training.cases
    );
    println!("lambda       {}", doc.lambda);
    println!("bounds       [{}, {}] cm", doc.bounds_cm.0, doc.bounds_cm.1);
    match &doc.fitted {
        FittedModel::Bma(m) => {
            println!("sigma        {:.6}", m.sigma);
            println!(
                "{:<12} {:>5} {:>10} {:>10} {:>10}",
                "group", "size", "weight", "alpha", "beta"
            );
            for (k, g) in m.group_spec.groups().iter().enumerate() {
                println!(
                    "{:<12} {:>5} {:>10.6} {:>10.5} {:>10.5}",
                    g.name, g.size, m.weights[k], m.alpha[k], m.beta[k]
                );
            }
            let d = &m.diagnostics;
            println!(
                "em           {} iterations, converged {}, log-likelihood {:.4} -> {:.4}",
                d.iterations, d.converged, d.initial_log_likelihood, d.final_log_likelihood
            );
            for f in &d.flags {
                println!("flag         {f:?}");
            }
        }
        FittedModel::Emos(m) => {
            println!("a            {:?}", m.a);
            println!("b0 b1        {} {}", m.b0, m.b1);
            let d = &m.diagnostics;
            println!(
                "optimiser    {} evaluations, converged {}, mean crps {:.6} -> {:.6}",
                d.evaluations, d.converged, d.initial_mean_crps, d.final_mean_crps
            );
        }
    }
    Ok(())
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use confact::harness::{self, Execution, Method, SplitPlan};
use confact::sim::{ClaimCount, GeneratorConfig, ScoreModel, TheoremCheck};
use confact::{io, ErrorKind, LossSpec, Scalar};

#[derive(Parser)]
#[command(name = "confact", version, about = "Conformal claim filtering with factuality guarantees")]
struct Cli {
    /// Floating-point precision used for scores and thresholds.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F64)]
    precision: Precision,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a filtering threshold on annotated records.
    Calibrate(CalibrateArgs),
    /// Filter records with a saved calibration artifact.
    Filter(FilterArgs),
    /// Random-split calibration/test evaluation.
    Evaluate(EvaluateArgs),
    /// Evaluate a grid of alphas, lambdas and score fields.
    Sweep(SweepArgs),
    /// Coverage as a function of calibration-set size.
    CalibStudy(CalibStudyArgs),
    /// Monte Carlo check of the coverage bounds on synthetic data.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    alpha: f64,
    #[arg(long, value_parser = parse_lambda)]
    lambda: f64,
    #[arg(long)]
    score_field: String,
    /// Preset name (scene, medical, document) or path to a TOML spec.
    #[arg(long, default_value = "scene")]
    loss_spec: String,
    #[arg(long)]
    out_artifact: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    artifact: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long, default_value_t = 50)]
    splits: usize,
    #[arg(long, default_value_t = 400)]
    calib_size: usize,
    #[arg(long, default_value_t = 100)]
    test_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run splits one after another instead of in parallel.
    #[arg(long)]
    serial: bool,
}

impl SplitArgs {
    fn plan(&self) -> SplitPlan {
        SplitPlan {
            n_calib: self.calib_size,
            n_test: self.test_size,
            n_splits: self.splits,
            seed: self.seed,
        }
    }
}

fn execution(serial: bool) -> Execution {
    if serial {
        Execution::Serial
    } else {
        Execution::Parallel
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    alpha: f64,
    #[arg(long, value_parser = parse_lambda)]
    lambda: f64,
    #[arg(long)]
    score_field: String,
    #[arg(long, default_value = "scene")]
    loss_spec: String,
    #[command(flatten)]
    split: SplitArgs,
    /// `none` evaluates the calibrated filter.
    #[arg(long, default_value = "none", value_parser = parse_method)]
    baseline: Method,
    /// JSON report path; stdout when omitted.
    #[arg(long)]
    out_report: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_lambda)]
    lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    score_fields: Vec<String>,
    #[arg(long, default_value = "scene")]
    loss_spec: String,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, default_value = "none", value_parser = parse_method)]
    baseline: Method,
    #[arg(long)]
    out_csv: PathBuf,
}

#[derive(Args)]
struct CalibStudyArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    repeats: usize,
    #[arg(long)]
    alpha: f64,
    #[arg(long, value_parser = parse_lambda, default_value = "0")]
    lambda: f64,
    #[arg(long)]
    score_field: String,
    #[arg(long, default_value = "scene")]
    loss_spec: String,
    #[arg(long, default_value_t = 100)]
    test_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    serial: bool,
    /// Report path; `.csv` writes CSV, anything else JSON.
    #[arg(long)]
    out_report: Option<PathBuf>,
}

#[derive(Args)]
struct GeneratorArgs {
    /// TOML generator config; overrides the inline generator flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    n_responses: usize,
    /// Claims per response: `5`, `2..8` (uniform, inclusive) or `poisson:4`.
    #[arg(long, default_value = "5", value_parser = parse_claims)]
    claims: ClaimCount,
    #[arg(long, default_value_t = 0.3)]
    error_prob: f64,
    /// Distance between correct and erroneous score means.
    #[arg(long, default_value_t = 1.7)]
    score_sep: f64,
    #[arg(long, default_value_t = 1.0)]
    sd: f64,
    #[arg(long, default_value = "scene")]
    loss_spec: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl GeneratorArgs {
    fn config(&self) -> confact::Result<GeneratorConfig> {
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| confact::Error::Config(format!("{}: {e}", path.display())))?;
            return GeneratorConfig::from_toml_str(&text);
        }
        Ok(GeneratorConfig {
            n_responses: self.n_responses,
            claims: self.claims,
            error_prob: self.error_prob,
            score_model: ScoreModel::separated(self.score_sep, self.sd),
            seed: self.seed,
            ..Default::default()
        })
    }
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
struct SimulateArgs {
    #[command(subcommand)]
    action: Option<SimulateAction>,
    #[command(flatten)]
    generator: GeneratorArgs,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, value_parser = parse_lambda, default_value = "0")]
    lambda: f64,
    #[arg(long, default_value_t = 400)]
    n_calib: usize,
    #[arg(long, default_value_t = 100)]
    n_test: usize,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Band half-width in standard errors.
    #[arg(long, default_value_t = 4.0)]
    z: f64,
    #[arg(long)]
    out_report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SimulateAction {
    /// Write a synthetic record file instead of running the check.
    Gen(GenArgs),
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    generator: GeneratorArgs,
    #[arg(long)]
    out: PathBuf,
}

fn parse_lambda(s: &str) -> Result<f64, String> {
    match s.trim() {
        "inf" | "+inf" | "∞" | "infinity" => Ok(f64::INFINITY),
        t => {
            let v: f64 = t.parse().map_err(|e| format!("{e}"))?;
            if v.is_nan() || v < 0.0 {
                return Err(format!("lambda must be >= 0 or inf, got {t}"));
            }
            Ok(v)
        }
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: confact::Error| e.to_string())
}

fn parse_claims(s: &str) -> Result<ClaimCount, String> {
    let s = s.trim();
    if let Some(mean) = s.strip_prefix("poisson:") {
        return mean
            .parse()
            .map(|mean| ClaimCount::Poisson { mean })
            .map_err(|e| format!("{e}"));
    }
    if let Some((a, b)) = s.split_once("..") {
        let min = a.parse().map_err(|e| format!("{e}"))?;
        let max = b.trim_start_matches('=').parse().map_err(|e| format!("{e}"))?;
        return Ok(ClaimCount::Uniform { min, max });
    }
    s.parse().map(ClaimCount::Fixed).map_err(|e| format!("{e}"))
}

fn load_records<S: Scalar>(path: &Path, spec: Option<&LossSpec>) -> confact::Result<Vec<confact::ResponseRecord<S>>> {
    let set = io::load_records::<S>(path, spec)?;
    for w in &set.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(set.records)
}

fn emit_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> confact::Result<()> {
    match out {
        Some(path) => io::save_json(value, path),
        None => {
            let text = serde_json::to_string_pretty(value).map_err(|e| confact::Error::Data(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}

fn run<S: Scalar>(command: Command) -> confact::Result<()> {
    match command {
        Command::Calibrate(a) => {
            let spec = LossSpec::resolve(&a.loss_spec)?;
            let records = load_records::<S>(&a.records, Some(&spec))?;
            let mut artifact =
                confact::calibrate(&records, S::lit(a.alpha), S::lit(a.lambda), &a.score_field, &spec)?;
            artifact.provenance = format!("records={}", a.records.display());
            io::save_artifact(&artifact, &a.out_artifact)?;
            log::info!(
                "tau_hat = {} (rank {} of {})",
                artifact.tau(),
                artifact.quantile_rank,
                artifact.n_calib
            );
        }
        Command::Filter(a) => {
            let artifact = io::load_artifact::<S>(&a.artifact)?;
            let records = load_records::<S>(&a.records, None)?;
            let filtered = records
                .iter()
                .map(|r| confact::apply(&artifact, r))
                .collect::<confact::Result<Vec<_>>>()?;
            io::save_json_lines(&filtered, &a.out)?;
        }
        Command::Evaluate(a) => {
            let spec = LossSpec::resolve(&a.loss_spec)?;
            let records = load_records::<S>(&a.records, Some(&spec))?;
            let report = harness::run_split_experiment(
                &records,
                &a.split.plan(),
                S::lit(a.alpha),
                S::lit(a.lambda),
                &a.score_field,
                &spec,
                a.baseline,
                execution(a.split.serial),
            )?;
            emit_json(&report, a.out_report.as_deref())?;
        }
        Command::Sweep(a) => {
            let spec = LossSpec::resolve(&a.loss_spec)?;
            let records = load_records::<S>(&a.records, Some(&spec))?;
            let alphas: Vec<S> = a.alphas.iter().map(|&x| S::lit(x)).collect();
            let lambdas: Vec<S> = a.lambdas.iter().map(|&x| S::lit(x)).collect();
            let report = harness::sweep(
                &records,
                &a.split.plan(),
                &alphas,
                &lambdas,
                &a.score_fields,
                &spec,
                a.baseline,
                execution(a.split.serial),
            )?;
            report.write_csv(&a.out_csv)?;
        }
        Command::CalibStudy(a) => {
            let spec = LossSpec::resolve(&a.loss_spec)?;
            let records = load_records::<S>(&a.records, Some(&spec))?;
            let plan = SplitPlan {
                n_test: a.test_size,
                seed: a.seed,
                ..Default::default()
            };
            let report = harness::calibration_size_study(
                &records,
                &a.sizes,
                a.repeats,
                &plan,
                S::lit(a.alpha),
                S::lit(a.lambda),
                &a.score_field,
                &spec,
                execution(a.serial),
            )?;
            match a.out_report.as_deref() {
                Some(p) if p.extension().is_some_and(|e| e == "csv") => {
                    io::write_atomic(p, report.to_csv().as_bytes())?
                }
                out => emit_json(&report, out)?,
            }
        }
        Command::Simulate(a) => match a.action {
            Some(SimulateAction::Gen(g)) => {
                let spec = LossSpec::resolve(&g.generator.loss_spec)?;
                let records = confact::generate::<S>(&g.generator.config()?, &spec)?;
                io::save_records(&records, &g.out)?;
            }
            None => {
                let spec = LossSpec::resolve(&a.generator.loss_spec)?;
                let check = TheoremCheck {
                    z: a.z,
                    ..TheoremCheck::new(a.alpha, a.lambda, a.n_calib, a.n_test, a.trials)
                };
                let result = confact::verify_theorem::<S>(&a.generator.config()?, &check, &spec)?;
                log::info!(
                    "mean coverage {:.4} +- {:.4}, bounds [{:.4}, {:.4}], pass = {}",
                    result.mean_coverage,
                    result.std_error,
                    result.lower_bound,
                    result.upper_bound,
                    result.pass
                );
                emit_json(&result, a.out_report.as_deref())?;
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.precision {
        Precision::F32 => run::<f32>(cli.command),
        Precision::F64 => run::<f64>(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.kind() {
                ErrorKind::Config => ExitCode::from(2),
                ErrorKind::Data => ExitCode::from(3),
            }
        }
    }
}

//! Random-split experiments, claim- and response-level metrics, baselines
//! and parameter sweeps.
//!
//! Each split samples `n_calib + n_test` distinct responses from the
//! dataset with a generator seeded from `(plan seed, split index)`, so every
//! grid point of a sweep sees the same splits and results do not depend on
//! whether splits run in parallel.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate_values, FilteredResponse, ScoredResponse};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::loss::{LossSpec, LossTolerance};
use crate::record::ResponseRecord;
use crate::scalar::Scalar;
use crate::seeding::{job_rng, JobRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub n_calib: usize,
    pub n_test: usize,
    pub n_splits: usize,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan {
            n_calib: 400,
            n_test: 100,
            n_splits: 50,
            seed: 0,
        }
    }
}

impl SplitPlan {
    fn check(&self, dataset_size: usize) -> Result<()> {
        if self.n_splits == 0 {
            return Err(Error::config("n_splits must be at least 1"));
        }
        if self.n_test == 0 {
            return Err(Error::config("n_test must be at least 1"));
        }
        let need = self.n_calib + self.n_test;
        if need > dataset_size {
            return Err(Error::data(format!(
                "insufficient data: a split needs n_calib + n_test = {need} responses, \
                 dataset has {dataset_size}"
            )));
        }
        Ok(())
    }
}

/// What produces the filtered test responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Calibrated threshold.
    Conformal,
    /// Each claim dropped independently with probability `alpha`.
    Random,
    /// No filtering.
    Vanilla,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "conformal" => Ok(Method::Conformal),
            "random" => Ok(Method::Random),
            "vanilla" => Ok(Method::Vanilla),
            other => Err(Error::config(format!(
                "unknown baseline {other:?} (expected none, random or vanilla)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Conformal => "conformal",
            Method::Random => "random",
            Method::Vanilla => "vanilla",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

/// Claim-level detection quality of a filter; "positive" means erroneous.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaimMetrics {
    pub tpr: f64,
    pub fnr: f64,
    pub precision: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct ClaimCounts {
    erroneous: u64,
    removed: u64,
    removed_erroneous: u64,
}

impl ClaimCounts {
    fn add(&mut self, loss: u64, removed: bool) {
        let bad = loss > 0;
        self.erroneous += u64::from(bad);
        self.removed += u64::from(removed);
        self.removed_erroneous += u64::from(bad && removed);
    }

    /// With no erroneous claims TPR and FNR are both reported as 0.
    fn metrics(&self) -> ClaimMetrics {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let tpr = ratio(self.removed_erroneous, self.erroneous);
        let fnr = if self.erroneous == 0 { 0.0 } else { 1.0 - tpr };
        let precision = ratio(self.removed_erroneous, self.removed);
        let f1 = if precision + tpr == 0.0 {
            0.0
        } else {
            2.0 * precision * tpr / (precision + tpr)
        };
        ClaimMetrics {
            tpr,
            fnr,
            precision,
            f1,
        }
    }
}

/// TPR, FNR and F1 of filtered responses against their annotated originals.
///
/// Counts are pooled over every claim of every response.
pub fn evaluate_claim_metrics<S: Scalar>(
    test_responses: &[ResponseRecord<S>],
    filtered: &[FilteredResponse<S>],
    spec: &LossSpec,
) -> Result<ClaimMetrics> {
    if test_responses.len() != filtered.len() {
        return Err(Error::data(format!(
            "{} test responses but {} filtered responses",
            test_responses.len(),
            filtered.len()
        )));
    }
    let mut counts = ClaimCounts::default();
    for (orig, out) in test_responses.iter().zip(filtered) {
        if orig.response_id != out.response_id {
            return Err(Error::data(format!(
                "filtered response {:?} does not match test response {:?}",
                out.response_id, orig.response_id
            )));
        }
        for claim in &orig.claims {
            let removed = out.removed.iter().any(|c| c.claim_id == claim.claim_id);
            counts.add(claim.loss(spec)?.value(), removed);
        }
    }
    Ok(counts.metrics())
}

fn random_keep_mask(n: usize, alpha: f64, rng: &mut JobRng) -> Vec<bool> {
    (0..n).map(|_| !rng.random_bool(alpha)).collect()
}

/// Drops each claim independently with probability `alpha`.
pub fn random_filter_baseline<S: Scalar>(
    response: &ResponseRecord<S>,
    alpha: f64,
    seed: u64,
) -> Result<FilteredResponse<S>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!(
            "random filtering probability must be in [0, 1], got {alpha}"
        )));
    }
    let mut rng = job_rng(seed, 0);
    let keep = random_keep_mask(response.claims.len(), alpha, &mut rng);
    Ok(FilteredResponse::from_mask(response, &keep))
}

/// Metrics of one calibration/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split_index: usize,
    #[serde(with = "crate::calibration::ext_real")]
    pub tau_hat: f64,
    pub empirical_coverage: f64,
    pub filter_ratio: f64,
    pub abstention_rate: f64,
    pub tpr: f64,
    pub fnr: f64,
    pub f1: f64,
    pub error_rate: f64,
    pub avg_loss: f64,
    pub n_calib: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub std_error: f64,
}

/// Means and standard errors across splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub empirical_coverage: MeanSe,
    pub filter_ratio: MeanSe,
    pub abstention_rate: MeanSe,
    pub tpr: MeanSe,
    pub fnr: MeanSe,
    pub f1: MeanSe,
    pub error_rate: MeanSe,
    pub avg_loss: MeanSe,
}

impl MetricSummary {
    fn from_splits(splits: &[SplitMetrics]) -> Self {
        let col = |f: fn(&SplitMetrics) -> f64| {
            let xs: Vec<f64> = splits.iter().map(f).collect();
            let (mean, std_error) = mean_and_std_error(&xs);
            MeanSe { mean, std_error }
        };
        MetricSummary {
            empirical_coverage: col(|s| s.empirical_coverage),
            filter_ratio: col(|s| s.filter_ratio),
            abstention_rate: col(|s| s.abstention_rate),
            tpr: col(|s| s.tpr),
            fnr: col(|s| s.fnr),
            f1: col(|s| s.f1),
            error_rate: col(|s| s.error_rate),
            avg_loss: col(|s| s.avg_loss),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: Method,
    pub alpha: f64,
    #[serde(with = "crate::calibration::ext_real")]
    pub lambda: f64,
    pub score_field: String,
    pub loss_spec: String,
    pub plan: SplitPlan,
    pub summary: MetricSummary,
    pub splits: Vec<SplitMetrics>,
}

/// Sample mean and standard error (sample sd over `sqrt(n)`); 0 for n < 2.
pub fn mean_and_std_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Records reduced to one score channel and integer claim losses.
///
/// Build once and reuse across grid points; conformity scores are
/// recomputed per tolerance.
#[derive(Debug, Clone)]
pub struct PreparedDataset<S> {
    score_field: String,
    loss_spec: String,
    responses: Vec<ScoredResponse<S>>,
}

impl<S: Scalar> PreparedDataset<S> {
    pub fn new(records: &[ResponseRecord<S>], score_field: &str, spec: &LossSpec) -> Result<Self> {
        let responses = records
            .iter()
            .map(|r| ScoredResponse::from_record(r, score_field, spec))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedDataset {
            score_field: score_field.to_string(),
            loss_spec: spec.name().to_string(),
            responses,
        })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn score_field(&self) -> &str {
        &self.score_field
    }

    /// Runs `plan.n_splits` calibrate-then-evaluate splits.
    pub fn run(
        &self,
        plan: &SplitPlan,
        alpha: S,
        lambda: S,
        method: Method,
        execution: Execution,
    ) -> Result<EvaluationReport> {
        plan.check(self.len())?;
        let tolerance = LossTolerance::new(lambda)?;
        let alpha_f = alpha.as_f64();
        match method {
            Method::Conformal => {
                crate::calibration::quantile_rank(plan.n_calib, alpha)?;
            }
            Method::Random if !(0.0..=1.0).contains(&alpha_f) => {
                return Err(Error::config(format!(
                    "random filtering probability must be in [0, 1], got {alpha}"
                )));
            }
            _ => {}
        }
        // conformity scores only depend on the tolerance; unbounded means vanilla
        let conformity = match method {
            Method::Conformal if !tolerance.is_unbounded() => Some(
                self.responses
                    .iter()
                    .map(|r| r.conformity(tolerance))
                    .collect::<Vec<_>>(),
            ),
            _ => None,
        };

        let one = |split: usize| -> Result<SplitMetrics> {
            let mut rng = job_rng(plan.seed, split as u64);
            let picked =
                rand::seq::index::sample(&mut rng, self.len(), plan.n_calib + plan.n_test).into_vec();
            let (calib, test) = picked.split_at(plan.n_calib);
            let tau = match &conformity {
                Some(values) => {
                    let calib_values = calib.iter().map(|&i| values[i]).collect();
                    calibrate_values(calib_values, alpha)?.0.value()
                }
                None => S::neg_infinity(),
            };
            let masks: Vec<Vec<bool>> = test
                .iter()
                .enumerate()
                .map(|(j, &i)| {
                    let r = &self.responses[i];
                    match method {
                        Method::Random => {
                            let mut rng = job_rng(crate::seeding::derive_seed(plan.seed, split as u64), j as u64);
                            random_keep_mask(r.len(), alpha_f, &mut rng)
                        }
                        _ => r.scores.iter().map(|&s| s > tau).collect(),
                    }
                })
                .collect();
            let test_responses: Vec<&ScoredResponse<S>> = test.iter().map(|&i| &self.responses[i]).collect();
            Ok(split_metrics(split, tau.as_f64(), plan.n_calib, &test_responses, &masks, tolerance))
        };

        let splits: Vec<SplitMetrics> = match execution {
            Execution::Serial => (0..plan.n_splits).map(one).collect::<Result<_>>()?,
            Execution::Parallel => (0..plan.n_splits).into_par_iter().map(one).collect::<Result<_>>()?,
        };
        Ok(EvaluationReport {
            method,
            alpha: alpha_f,
            lambda: lambda.as_f64(),
            score_field: self.score_field.clone(),
            loss_spec: self.loss_spec.clone(),
            plan: *plan,
            summary: MetricSummary::from_splits(&splits),
            splits,
        })
    }
}

fn split_metrics<S: Scalar>(
    split_index: usize,
    tau_hat: f64,
    n_calib: usize,
    test: &[&ScoredResponse<S>],
    keep: &[Vec<bool>],
    tolerance: LossTolerance,
) -> SplitMetrics {
    let mut counts = ClaimCounts::default();
    let mut covered = 0usize;
    let mut erroneous = 0usize;
    let mut loss_sum = 0u64;
    let mut ratio_sum = 0.0;
    let mut abstained = 0usize;
    let mut non_empty = 0usize;
    for (r, mask) in test.iter().zip(keep) {
        let mut retained_loss = 0u64;
        let mut kept = 0usize;
        for (&loss, &k) in r.losses.iter().zip(mask) {
            counts.add(loss, !k);
            if k {
                retained_loss += loss;
                kept += 1;
            }
        }
        covered += usize::from(tolerance.admits(retained_loss));
        erroneous += usize::from(retained_loss > 0);
        loss_sum += retained_loss;
        if !r.is_empty() {
            non_empty += 1;
            ratio_sum += (r.len() - kept) as f64 / r.len() as f64;
            abstained += usize::from(kept == 0);
        }
    }
    let n = test.len() as f64;
    let per_nonempty = |x: f64| if non_empty == 0 { 0.0 } else { x / non_empty as f64 };
    let claim = counts.metrics();
    SplitMetrics {
        split_index,
        tau_hat,
        empirical_coverage: covered as f64 / n,
        filter_ratio: per_nonempty(ratio_sum),
        abstention_rate: per_nonempty(abstained as f64),
        tpr: claim.tpr,
        fnr: claim.fnr,
        f1: claim.f1,
        error_rate: erroneous as f64 / n,
        avg_loss: loss_sum as f64 / n,
        n_calib,
        n_test: test.len(),
    }
}

/// Calibrates and evaluates `plan.n_splits` random splits of `records`.
#[allow(clippy::too_many_arguments)]
pub fn run_split_experiment<S: Scalar>(
    records: &[ResponseRecord<S>],
    plan: &SplitPlan,
    alpha: S,
    lambda: S,
    score_field: &str,
    spec: &LossSpec,
    method: Method,
    execution: Execution,
) -> Result<EvaluationReport> {
    PreparedDataset::new(records, score_field, spec)?.run(plan, alpha, lambda, method, execution)
}

/// Column order of sweep CSV files.
pub const SWEEP_CSV_COLUMNS: [&str; 13] = [
    "alpha",
    "lambda",
    "split_index",
    "empirical_coverage",
    "filter_ratio",
    "abstention_rate",
    "tpr",
    "fnr",
    "f1",
    "error_rate",
    "avg_loss",
    "n_calib",
    "score_field",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub reports: Vec<EvaluationReport>,
    /// Grid points skipped, with the reason.
    pub warnings: Vec<String>,
}

fn fmt_lambda(lambda: f64) -> String {
    if lambda.is_infinite() {
        "inf".to_string()
    } else {
        lambda.to_string()
    }
}

impl SweepReport {
    /// Per-split rows, then `mean` and `stderr` summary rows, per grid point.
    pub fn to_csv(&self) -> String {
        let mut out = SWEEP_CSV_COLUMNS.join(",");
        out.push('\n');
        for rep in &self.reports {
            let lambda = fmt_lambda(rep.lambda);
            for s in &rep.splits {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    rep.alpha,
                    lambda,
                    s.split_index,
                    s.empirical_coverage,
                    s.filter_ratio,
                    s.abstention_rate,
                    s.tpr,
                    s.fnr,
                    s.f1,
                    s.error_rate,
                    s.avg_loss,
                    s.n_calib,
                    rep.score_field
                );
            }
            let m = &rep.summary;
            for (label, pick) in [
                ("mean", (|x: &MeanSe| x.mean) as fn(&MeanSe) -> f64),
                ("stderr", |x: &MeanSe| x.std_error),
            ] {
                let _ = writeln!(
                    out,
                    "{},{},{label},{},{},{},{},{},{},{},{},{},{}",
                    rep.alpha,
                    lambda,
                    pick(&m.empirical_coverage),
                    pick(&m.filter_ratio),
                    pick(&m.abstention_rate),
                    pick(&m.tpr),
                    pick(&m.fnr),
                    pick(&m.f1),
                    pick(&m.error_rate),
                    pick(&m.avg_loss),
                    rep.plan.n_calib,
                    rep.score_field
                );
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Runs every `(score_field, alpha, lambda)` combination on shared splits.
///
/// Alphas infeasible for `plan.n_calib` are skipped and noted in
/// [`SweepReport::warnings`].
pub fn sweep<S: Scalar>(
    records: &[ResponseRecord<S>],
    plan: &SplitPlan,
    alphas: &[S],
    lambdas: &[S],
    score_fields: &[String],
    spec: &LossSpec,
    method: Method,
    execution: Execution,
) -> Result<SweepReport> {
    if alphas.is_empty() || lambdas.is_empty() || score_fields.is_empty() {
        return Err(Error::config("sweep grids must be non-empty"));
    }
    let mut reports = Vec::new();
    let mut warnings = Vec::new();
    for field in score_fields {
        let data = PreparedDataset::new(records, field, spec)?;
        for &alpha in alphas {
            for &lambda in lambdas {
                match data.run(plan, alpha, lambda, method, execution) {
                    Ok(r) => reports.push(r),
                    Err(Error::Config(msg)) => {
                        let w = format!(
                            "skipped score_field={field} alpha={alpha} lambda={}: {msg}",
                            fmt_lambda(lambda.as_f64())
                        );
                        log::warn!("{w}");
                        warnings.push(w);
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(SweepReport { reports, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibSizeRow {
    pub n_calib: usize,
    pub repeats: usize,
    pub mean_coverage: f64,
    pub std_error: f64,
    /// Normal-approximation 95% interval for the mean coverage.
    pub ci_low: f64,
    pub ci_high: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub mean_filter_ratio: f64,
    pub filter_ratio_std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibSizeReport {
    pub alpha: f64,
    #[serde(with = "crate::calibration::ext_real")]
    pub lambda: f64,
    pub score_field: String,
    pub n_test: usize,
    pub seed: u64,
    pub rows: Vec<CalibSizeRow>,
}

pub const CALIB_STUDY_CSV_COLUMNS: [&str; 10] = [
    "n_calib",
    "repeats",
    "mean_coverage",
    "std_error",
    "ci_low",
    "ci_high",
    "lower_bound",
    "upper_bound",
    "mean_filter_ratio",
    "filter_ratio_std_error",
];

impl CalibSizeReport {
    pub fn to_csv(&self) -> String {
        let mut out = CALIB_STUDY_CSV_COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.n_calib,
                r.repeats,
                r.mean_coverage,
                r.std_error,
                r.ci_low,
                r.ci_high,
                r.lower_bound,
                r.upper_bound,
                r.mean_filter_ratio,
                r.filter_ratio_std_error
            );
        }
        out
    }
}

/// Repeats split experiments at several calibration-set sizes.
///
/// `n_test` and `seed` come from `plan`; its `n_calib` and `n_splits` are
/// replaced by each size and `repeats`.
#[allow(clippy::too_many_arguments)]
pub fn calibration_size_study<S: Scalar>(
    records: &[ResponseRecord<S>],
    sizes: &[usize],
    repeats: usize,
    plan: &SplitPlan,
    alpha: S,
    lambda: S,
    score_field: &str,
    spec: &LossSpec,
    execution: Execution,
) -> Result<CalibSizeReport> {
    if sizes.is_empty() {
        return Err(Error::config("sizes must be non-empty"));
    }
    let largest = *sizes.iter().max().expect("non-empty");
    if largest + plan.n_test > records.len() {
        return Err(Error::data(format!(
            "insufficient data: largest size {largest} plus n_test {} exceeds dataset size {}",
            plan.n_test,
            records.len()
        )));
    }
    let data = PreparedDataset::new(records, score_field, spec)?;
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let p = SplitPlan {
            n_calib: size,
            n_splits: repeats,
            ..*plan
        };
        let rep = data.run(&p, alpha, lambda, Method::Conformal, execution)?;
        let cov = rep.summary.empirical_coverage;
        let a = alpha.as_f64();
        rows.push(CalibSizeRow {
            n_calib: size,
            repeats,
            mean_coverage: cov.mean,
            std_error: cov.std_error,
            ci_low: cov.mean - 1.96 * cov.std_error,
            ci_high: cov.mean + 1.96 * cov.std_error,
            lower_bound: 1.0 - a,
            upper_bound: 1.0 - a + 1.0 / (size as f64 + 1.0),
            mean_filter_ratio: rep.summary.filter_ratio.mean,
            filter_ratio_std_error: rep.summary.filter_ratio.std_error,
        });
    }
    Ok(CalibSizeReport {
        alpha: alpha.as_f64(),
        lambda: lambda.as_f64(),
        score_field: score_field.to_string(),
        n_test: plan.n_test,
        seed: plan.seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::ClaimAnnotation;
    use crate::record::ClaimRecord;
    use crate::sim::{generate, GeneratorConfig, ScoreModel};

    fn scene() -> LossSpec {
        LossSpec::preset("scene").unwrap()
    }

    fn sim(n: usize, seed: u64) -> Vec<ResponseRecord<f64>> {
        let cfg = GeneratorConfig {
            n_responses: n,
            seed,
            ..Default::default()
        };
        generate(&cfg, &scene()).unwrap()
    }

    fn small_plan() -> SplitPlan {
        SplitPlan {
            n_calib: 100,
            n_test: 50,
            n_splits: 10,
            seed: 3,
        }
    }

    #[test]
    fn all_correct_dataset_is_untouched() {
        let cfg = GeneratorConfig {
            n_responses: 200,
            error_prob: 0.0,
            ..Default::default()
        };
        let recs = generate::<f64>(&cfg, &scene()).unwrap();
        for alpha in [0.1, 0.5] {
            let rep = run_split_experiment(
                &recs, &small_plan(), alpha, 0.0, "score", &scene(), Method::Conformal, Execution::Serial,
            )
            .unwrap();
            assert_eq!(rep.summary.empirical_coverage.mean, 1.0);
            assert_eq!(rep.summary.filter_ratio.mean, 0.0);
            assert_eq!(rep.summary.abstention_rate.mean, 0.0);
        }
    }

    /// Class-constant scores: every erroneous claim scores exactly 0 and
    /// every correct claim exactly 20, so the calibrated threshold is 0.
    pub(crate) fn separated_config(n: usize) -> GeneratorConfig {
        GeneratorConfig {
            n_responses: n,
            score_model: ScoreModel {
                correct: crate::sim::Gaussian { mean: 20.0, sd: 0.1 },
                erroneous: crate::sim::Gaussian { mean: 0.0, sd: 0.1 },
            },
            score_quantum: Some(20.0),
            ..Default::default()
        }
    }

    #[test]
    fn perfect_separation_catches_every_error() {
        let recs = generate::<f64>(&separated_config(300), &scene()).unwrap();
        let rep = run_split_experiment(
            &recs, &small_plan(), 0.1, 0.0, "score", &scene(), Method::Conformal, Execution::Parallel,
        )
        .unwrap();
        for s in &rep.splits {
            assert_eq!(s.tpr, 1.0, "{s:?}");
            assert_eq!(s.empirical_coverage, 1.0, "{s:?}");
            assert_eq!(s.tau_hat, 0.0);
        }
    }

    #[test]
    fn insufficient_data_states_minimum() {
        let recs = sim(100, 1);
        let err = run_split_experiment(
            &recs, &small_plan(), 0.1, 0.0, "score", &scene(), Method::Conformal, Execution::Serial,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        assert!(err.to_string().contains("150"), "{err}");
    }

    #[test]
    fn serial_and_parallel_agree() {
        let recs = sim(400, 2);
        let run = |e| {
            run_split_experiment(&recs, &small_plan(), 0.2, 1.0, "score", &scene(), Method::Conformal, e)
                .unwrap()
        };
        assert_eq!(run(Execution::Serial), run(Execution::Parallel));
        let random = |e| {
            run_split_experiment(&recs, &small_plan(), 0.2, 1.0, "score", &scene(), Method::Random, e)
                .unwrap()
        };
        assert_eq!(random(Execution::Serial), random(Execution::Parallel));
    }

    #[test]
    fn coverage_matches_loss_invariant() {
        let recs = sim(400, 4);
        let rep = run_split_experiment(
            &recs, &small_plan(), 0.2, 0.0, "score", &scene(), Method::Conformal, Execution::Serial,
        )
        .unwrap();
        for s in &rep.splits {
            // lambda = 0: covered iff filtered loss is 0
            assert!((s.empirical_coverage - (1.0 - s.error_rate)).abs() < 1e-12);
            assert!((s.tpr + s.fnr - 1.0).abs() < 1e-12);
        }
    }

    fn claim(id: &str, loss_errors: &[&str]) -> ClaimRecord<f64> {
        ClaimRecord::new(id, id)
            .with_score("s", 0.0)
            .with_annotation(ClaimAnnotation::with_errors(loss_errors.iter().copied()))
    }

    #[test]
    fn claim_metrics_degenerate_filters() {
        let spec = scene();
        let r = ResponseRecord::new("r").with_claims(vec![
            claim("a", &["Object"]),
            claim("b", &[]),
            claim("c", &[]),
            claim("d", &["Spatial"]),
        ]);
        let vanilla = FilteredResponse::from_mask(&r, &[true; 4]);
        let m = evaluate_claim_metrics(std::slice::from_ref(&r), &[vanilla], &spec).unwrap();
        assert_eq!((m.tpr, m.f1), (0.0, 0.0));
        assert_eq!(m.fnr, 1.0);

        let everything = FilteredResponse::from_mask(&r, &[false; 4]);
        let m = evaluate_claim_metrics(std::slice::from_ref(&r), &[everything], &spec).unwrap();
        assert_eq!(m.tpr, 1.0);
        assert_eq!(m.precision, 0.5);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);

        let other = ResponseRecord::new("x").with_claims(vec![]);
        let f = FilteredResponse::from_mask(&other, &[]);
        assert!(evaluate_claim_metrics(std::slice::from_ref(&r), &[f], &spec).is_err());
    }

    #[test]
    fn random_baseline_edges() {
        let r = ResponseRecord::new("r").with_claims((0..20).map(|i| claim(&i.to_string(), &[])).collect());
        assert_eq!(random_filter_baseline(&r, 0.0, 1).unwrap().retained.len(), 20);
        assert!(random_filter_baseline(&r, 1.0, 1).unwrap().abstained);
        assert_eq!(
            random_filter_baseline(&r, 0.5, 9).unwrap(),
            random_filter_baseline(&r, 0.5, 9).unwrap()
        );
        assert!(random_filter_baseline(&r, 1.5, 1).is_err());
    }

    #[test]
    fn random_baseline_rate() {
        let r = ResponseRecord::new("r")
            .with_claims((0..10_000).map(|i| claim(&i.to_string(), &[])).collect());
        let removed = random_filter_baseline(&r, 0.1, 77).unwrap().removed.len();
        let frac = removed as f64 / 10_000.0;
        assert!((frac - 0.1).abs() <= 0.01, "{frac}");
    }

    #[test]
    fn sweep_skips_infeasible_alpha() {
        let recs = sim(200, 5);
        let plan = SplitPlan {
            n_calib: 9,
            n_test: 20,
            n_splits: 3,
            seed: 1,
        };
        let rep = sweep(
            &recs,
            &plan,
            &[0.05, 0.5],
            &[0.0, f64::INFINITY],
            &["score".to_string()],
            &scene(),
            Method::Conformal,
            Execution::Serial,
        )
        .unwrap();
        assert_eq!(rep.reports.len(), 2);
        assert_eq!(rep.warnings.len(), 2);
        let csv = rep.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), SWEEP_CSV_COLUMNS.join(","));
        // 2 grid points x (3 splits + mean + stderr)
        assert_eq!(lines.count(), 10);
        assert!(csv.contains(",inf,mean,1,0,"), "{csv}");
    }

    #[test]
    fn calib_study_rejects_tiny_size() {
        let recs = sim(300, 6);
        let plan = SplitPlan {
            n_test: 50,
            ..Default::default()
        };
        let err = calibration_size_study(
            &recs, &[5], 10, &plan, 0.1, 0.0, "score", &scene(), Execution::Serial,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(calibration_size_study(
            &recs, &[50, 400], 10, &plan, 0.1, 0.0, "score", &scene(), Execution::Serial,
        )
        .is_err());
        let ok = calibration_size_study(
            &recs, &[50], 10, &plan, 0.1, 0.0, "score", &scene(), Execution::Serial,
        )
        .unwrap();
        assert_eq!(ok.rows[0].n_calib, 50);
        assert!(ok.to_csv().starts_with("n_calib,repeats,"));
    }

    #[test]
    fn method_parse() {
        assert_eq!("none".parse::<Method>().unwrap(), Method::Conformal);
        assert_eq!("random".parse::<Method>().unwrap(), Method::Random);
        assert_eq!("vanilla".parse::<Method>().unwrap(), Method::Vanilla);
        assert!("other".parse::<Method>().is_err());
    }

    #[test]
    fn std_error_basics() {
        assert_eq!(mean_and_std_error(&[]), (0.0, 0.0));
        assert_eq!(mean_and_std_error(&[2.0]), (2.0, 0.0));
        let (m, se) = mean_and_std_error(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-12);
    }
}

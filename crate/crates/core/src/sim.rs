//! Synthetic claim data and Monte Carlo verification of the coverage bounds.
//!
//! Responses are drawn IID, which makes any calibration/test sequence
//! exchangeable. Each claim is independently erroneous with a fixed
//! probability, carries exactly one error type when it is, and receives a
//! Gaussian score whose mean depends on whether it is correct.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate_values, filter_claims, ConformityValue, ScoredResponse};
use crate::error::{Error, Result};
use crate::loss::{response_loss, ClaimAnnotation, LossSpec, LossTolerance};
use crate::record::{ClaimRecord, ResponseRecord};
use crate::scalar::Scalar;
use crate::seeding::{job_rng, JobRng};

/// How many claims each synthetic response has.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimCount {
    Fixed(usize),
    /// Uniform on `min..=max`.
    Uniform { min: usize, max: usize },
    /// Poisson with the given mean, redrawn until at least one claim.
    Poisson { mean: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub sd: f64,
}

/// Class-conditional score distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub correct: Gaussian,
    pub erroneous: Gaussian,
}

impl ScoreModel {
    /// Correct claims centred at `+separation / 2`, erroneous at `-separation / 2`.
    pub fn separated(separation: f64, sd: f64) -> Self {
        ScoreModel {
            correct: Gaussian {
                mean: separation / 2.0,
                sd,
            },
            erroneous: Gaussian {
                mean: -separation / 2.0,
                sd,
            },
        }
    }
}

fn default_score_field() -> String {
    "score".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_responses: usize,
    pub claims: ClaimCount,
    pub error_prob: f64,
    /// Relative weights over error types; empty means uniform over the spec.
    #[serde(default)]
    pub error_type_weights: Vec<(String, f64)>,
    pub score_model: ScoreModel,
    /// Rounds every score to a multiple of this step, forcing ties.
    #[serde(default)]
    pub score_quantum: Option<f64>,
    #[serde(default = "default_score_field")]
    pub score_field: String,
    #[serde(default)]
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_responses: 500,
            claims: ClaimCount::Fixed(5),
            error_prob: 0.3,
            error_type_weights: Vec::new(),
            score_model: ScoreModel::separated(1.7, 1.0),
            score_quantum: None,
            score_field: default_score_field(),
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("invalid generator config: {e}")))
    }
}

/// Validated sampler built from a [`GeneratorConfig`] and a loss spec.
#[derive(Debug, Clone)]
pub struct Generator {
    claims: ClaimCount,
    poisson: Option<Poisson<f64>>,
    error_prob: f64,
    error_types: Vec<(String, u64)>,
    error_pick: WeightedIndex<f64>,
    correct: Normal<f64>,
    erroneous: Normal<f64>,
    quantum: Option<f64>,
}

/// One synthetic claim: score and, if erroneous, the index of its error type.
type DrawnClaim = (f64, Option<usize>);

impl Generator {
    pub fn new(config: &GeneratorConfig, spec: &LossSpec) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.error_prob) {
            return Err(Error::config(format!(
                "error_prob must be in [0, 1], got {}",
                config.error_prob
            )));
        }
        let poisson = match config.claims {
            ClaimCount::Fixed(_) => None,
            ClaimCount::Uniform { min, max } => {
                if min > max {
                    return Err(Error::config(format!(
                        "claims uniform range {min}..={max} is empty"
                    )));
                }
                None
            }
            ClaimCount::Poisson { mean } => Some(Poisson::new(mean).map_err(|e| {
                Error::config(format!("invalid Poisson claim count mean {mean}: {e}"))
            })?),
        };
        let normal = |g: Gaussian, which: &str| {
            if !(g.sd > 0.0 && g.sd.is_finite() && g.mean.is_finite()) {
                return Err(Error::config(format!(
                    "{which} score distribution needs finite mean and sd > 0, got N({}, {})",
                    g.mean, g.sd
                )));
            }
            Normal::new(g.mean, g.sd).map_err(|e| Error::config(e.to_string()))
        };
        let correct = normal(config.score_model.correct, "correct-claim")?;
        let erroneous = normal(config.score_model.erroneous, "erroneous-claim")?;

        let (error_types, weights): (Vec<(String, u64)>, Vec<f64>) =
            if config.error_type_weights.is_empty() {
                spec.weights()
                    .iter()
                    .map(|(t, w)| ((t.to_string(), *w), 1.0))
                    .unzip()
            } else {
                config
                    .error_type_weights
                    .iter()
                    .map(|(name, p)| {
                        let w = spec.weight(name).ok_or_else(|| {
                            Error::config(format!(
                                "error type {name:?} is not in loss spec {:?}",
                                spec.name()
                            ))
                        })?;
                        Ok(((name.clone(), w), *p))
                    })
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .unzip()
            };
        let error_pick = WeightedIndex::new(&weights)
            .map_err(|e| Error::config(format!("invalid error type weights: {e}")))?;
        if let Some(q) = config.score_quantum {
            if !(q > 0.0 && q.is_finite()) {
                return Err(Error::config(format!("score_quantum must be > 0, got {q}")));
            }
        }
        Ok(Generator {
            claims: config.claims,
            poisson,
            error_prob: config.error_prob,
            error_types,
            error_pick,
            correct,
            erroneous,
            quantum: config.score_quantum,
        })
    }

    fn claim_count(&self, rng: &mut JobRng) -> usize {
        match self.claims {
            ClaimCount::Fixed(k) => k,
            ClaimCount::Uniform { min, max } => rng.random_range(min..=max),
            ClaimCount::Poisson { .. } => {
                let dist = self.poisson.as_ref().expect("built with Poisson");
                loop {
                    let k = dist.sample(rng) as usize;
                    if k >= 1 {
                        return k;
                    }
                }
            }
        }
    }

    fn draw_response(&self, rng: &mut JobRng) -> Vec<DrawnClaim> {
        let k = self.claim_count(rng);
        (0..k)
            .map(|_| {
                let error = rng
                    .random_bool(self.error_prob)
                    .then(|| self.error_pick.sample(rng));
                let dist = if error.is_some() { &self.erroneous } else { &self.correct };
                let mut score = dist.sample(rng);
                if let Some(q) = self.quantum {
                    score = (score / q).round() * q;
                }
                (score, error)
            })
            .collect()
    }

    /// Dense draw for Monte Carlo loops; same distribution as [`Self::record`].
    pub fn scored<S: Scalar>(&self, rng: &mut JobRng) -> ScoredResponse<S> {
        let (scores, losses) = self
            .draw_response(rng)
            .into_iter()
            .map(|(s, e)| (S::lit(s), e.map_or(0, |i| self.error_types[i].1)))
            .unzip();
        ScoredResponse::new(scores, losses)
    }

    pub fn record<S: Scalar>(&self, rng: &mut JobRng, response_id: &str, score_field: &str) -> ResponseRecord<S> {
        let claims = self
            .draw_response(rng)
            .into_iter()
            .enumerate()
            .map(|(j, (score, error))| {
                let annotation = match error {
                    Some(i) => ClaimAnnotation::with_errors([self.error_types[i].0.clone()]),
                    None => ClaimAnnotation::correct(),
                };
                ClaimRecord::new(format!("{response_id}.{j}"), format!("Synthetic claim {j}"))
                    .with_score(score_field, S::lit(score))
                    .with_annotation(annotation)
            })
            .collect();
        let mut rec = ResponseRecord::new(response_id).with_claims(claims);
        rec.image_ref = format!("synthetic:{response_id}");
        rec
    }
}

/// Draws `config.n_responses` annotated synthetic responses.
pub fn generate<S: Scalar>(config: &GeneratorConfig, spec: &LossSpec) -> Result<Vec<ResponseRecord<S>>> {
    let generator = Generator::new(config, spec)?;
    let mut rng = job_rng(config.seed, 0);
    Ok((0..config.n_responses)
        .map(|i| generator.record(&mut rng, &format!("sim-{i:06}"), &config.score_field))
        .collect())
}

/// Conformity score by exhaustive search, independent of the sweep in
/// [`ScoredResponse::conformity`].
///
/// Tries `-inf` and then every distinct claim score in ascending order,
/// filtering the record and summing the retained losses from scratch each
/// time. Intended for small responses (tens of claims).
pub fn brute_force_conformity<S: Scalar>(
    response: &ResponseRecord<S>,
    lambda: S,
    score_field: &str,
    spec: &LossSpec,
) -> Result<ConformityValue<S>> {
    let tolerance = LossTolerance::new(lambda)?;
    let mut candidates = vec![S::neg_infinity()];
    for claim in &response.claims {
        let s = claim.score(score_field)?;
        if !candidates.contains(&s) {
            candidates.push(s);
        }
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    for tau in candidates {
        let kept = filter_claims(response, tau, score_field)?;
        let losses = kept
            .retained
            .iter()
            .map(|c| c.loss(spec))
            .collect::<Result<Vec<_>>>()?;
        if tolerance.admits(response_loss(losses)) {
            return Ok(if tau == S::neg_infinity() {
                ConformityValue::neg_infinity()
            } else {
                ConformityValue::finite(tau)
            });
        }
    }
    unreachable!("the largest score removes every claim")
}

/// Parameters of one Monte Carlo coverage check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheck {
    pub alpha: f64,
    pub lambda: f64,
    pub n_calib: usize,
    pub n_test: usize,
    pub n_trials: usize,
    /// Width of the acceptance band in standard errors.
    pub z: f64,
}

impl TheoremCheck {
    pub fn new(alpha: f64, lambda: f64, n_calib: usize, n_test: usize, n_trials: usize) -> Self {
        TheoremCheck {
            alpha,
            lambda,
            n_calib,
            n_test,
            n_trials,
            z: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheckResult {
    pub alpha: f64,
    #[serde(with = "crate::calibration::ext_real")]
    pub lambda: f64,
    pub n_calib: usize,
    pub n_test: usize,
    pub n_trials: usize,
    pub quantile_rank: usize,
    pub mean_coverage: f64,
    pub std_error: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub z: f64,
    /// False when scores are quantized, since ties void the upper bound.
    pub upper_bound_checked: bool,
    /// Fraction of calibration conformity scores equal to `-inf`.
    pub neg_inf_fraction: f64,
    pub pass: bool,
}

/// Per trial: fresh calibration and test draws, calibrate, measure test
/// coverage. Trials run in parallel with per-trial seeds.
pub fn verify_theorem<S: Scalar>(
    config: &GeneratorConfig,
    check: &TheoremCheck,
    spec: &LossSpec,
) -> Result<TheoremCheckResult> {
    let generator = Generator::new(config, spec)?;
    let alpha = S::lit(check.alpha);
    let k = crate::calibration::quantile_rank(check.n_calib, alpha)?;
    let tolerance = LossTolerance::new(S::lit(check.lambda))?;
    if check.n_trials < 100 {
        return Err(Error::config(format!(
            "n_trials must be at least 100, got {}",
            check.n_trials
        )));
    }
    if check.n_test == 0 {
        return Err(Error::config("n_test must be at least 1"));
    }

    let trials: Vec<(f64, usize)> = (0..check.n_trials)
        .into_par_iter()
        .map(|t| -> Result<(f64, usize)> {
            let mut rng = job_rng(config.seed, t as u64);
            let values: Vec<ConformityValue<S>> = (0..check.n_calib)
                .map(|_| generator.scored::<S>(&mut rng).conformity(tolerance))
                .collect();
            let neg_inf = values.iter().filter(|v| v.is_neg_infinity()).count();
            let (tau, _) = calibrate_values(values, alpha)?;
            let covered = (0..check.n_test)
                .filter(|_| {
                    let r = generator.scored::<S>(&mut rng);
                    tolerance.admits(r.retained_loss(tau.value()))
                })
                .count();
            Ok((covered as f64 / check.n_test as f64, neg_inf))
        })
        .collect::<Result<_>>()?;

    let coverages: Vec<f64> = trials.iter().map(|t| t.0).collect();
    let (mean_coverage, std_error) = crate::harness::mean_and_std_error(&coverages);
    let neg_inf_fraction =
        trials.iter().map(|t| t.1).sum::<usize>() as f64 / (check.n_trials * check.n_calib) as f64;
    let lower_bound = 1.0 - check.alpha;
    let upper_bound = 1.0 - check.alpha + 1.0 / (check.n_calib as f64 + 1.0);
    let slack = check.z * std_error;
    let upper_bound_checked = config.score_quantum.is_none();
    let pass = mean_coverage >= lower_bound - slack
        && (!upper_bound_checked || mean_coverage <= upper_bound + slack);
    Ok(TheoremCheckResult {
        alpha: check.alpha,
        lambda: check.lambda,
        n_calib: check.n_calib,
        n_test: check.n_test,
        n_trials: check.n_trials,
        quantile_rank: k,
        mean_coverage,
        std_error,
        lower_bound,
        upper_bound,
        z: check.z,
        upper_bound_checked,
        neg_inf_fraction,
        pass,
    })
}

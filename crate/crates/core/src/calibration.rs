//! Claim filtering, per-response conformity scores and split-conformal
//! calibration of the filtering threshold.
//!
//! The filter keeps claims whose score is *strictly* greater than the
//! threshold. A response's conformity score is the smallest threshold at
//! which the retained loss is within tolerance, or `-inf` when the
//! unfiltered response already is. Calibration takes the
//! `ceil((n + 1)(1 - alpha))`-th smallest conformity score of the
//! calibration set as the deployed threshold.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::loss::{LossSpec, LossTolerance};
use crate::record::{ClaimRecord, ResponseRecord};
use crate::scalar::Scalar;

/// Marker text produced when every claim is filtered out.
pub const ABSTAIN_MARKER: &str = "[ABSTAIN]";

/// Current on-disk version of [`CalibrationArtifact`].
pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

/// Extended-real conformity score; `-inf` means no filtering is needed.
///
/// Never NaN, so the ordering is total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConformityValue<S>(S);

impl<S: Scalar> ConformityValue<S> {
    pub fn neg_infinity() -> Self {
        ConformityValue(S::neg_infinity())
    }

    pub fn finite(value: S) -> Self {
        debug_assert!(value.is_finite());
        ConformityValue(value)
    }

    pub fn value(self) -> S {
        self.0
    }

    pub fn is_neg_infinity(self) -> bool {
        self.0 == S::neg_infinity()
    }
}

impl<S: Scalar> Eq for ConformityValue<S> {}

impl<S: Scalar> PartialOrd for ConformityValue<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<S: Scalar> Ord for ConformityValue<S> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .partial_cmp(&other.0)
            .expect("conformity values are never NaN")
    }
}

impl<S: Scalar> fmt::Display for ConformityValue<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_neg_infinity() {
            f.write_str("-inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Scores and losses of one response for a single score channel.
///
/// This is the dense form the calibration math runs on; record-level
/// operations build one and delegate to it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredResponse<S> {
    pub scores: Vec<S>,
    pub losses: Vec<u64>,
}

impl<S: Scalar> ScoredResponse<S> {
    pub fn new(scores: Vec<S>, losses: Vec<u64>) -> Self {
        assert_eq!(scores.len(), losses.len(), "one loss per score");
        ScoredResponse { scores, losses }
    }

    /// Extracts `score_field` and per-claim losses from an annotated record.
    pub fn from_record(
        response: &ResponseRecord<S>,
        score_field: &str,
        spec: &LossSpec,
    ) -> Result<Self> {
        let mut scores = Vec::with_capacity(response.claims.len());
        let mut losses = Vec::with_capacity(response.claims.len());
        for claim in &response.claims {
            scores.push(claim_score(response, claim, score_field)?);
            losses.push(claim.loss(spec)?.value());
        }
        Ok(ScoredResponse { scores, losses })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn total_loss(&self) -> u64 {
        self.losses.iter().fold(0u64, |a, &l| a.saturating_add(l))
    }

    /// Loss of the claims kept by a strict `score > tau` filter.
    pub fn retained_loss(&self, tau: S) -> u64 {
        self.scores
            .iter()
            .zip(&self.losses)
            .filter(|(s, _)| **s > tau)
            .fold(0u64, |a, (_, &l)| a.saturating_add(l))
    }

    pub fn retained_count(&self, tau: S) -> usize {
        self.scores.iter().filter(|s| **s > tau).count()
    }

    /// Smallest threshold whose filtered loss is admitted by `tolerance`.
    ///
    /// Retained loss is a right-continuous, non-increasing step function of
    /// the threshold that only drops at claim scores, so the infimum is either
    /// `-inf` or one of the scores. Sweeping distinct scores in ascending
    /// order and removing each tied group at once finds it in one pass.
    pub fn conformity(&self, tolerance: LossTolerance) -> ConformityValue<S> {
        let mut retained = self.total_loss();
        if tolerance.admits(retained) {
            return ConformityValue::neg_infinity();
        }
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_unstable_by(|&a, &b| {
            self.scores[a]
                .partial_cmp(&self.scores[b])
                .expect("scores are finite")
        });
        let mut i = 0;
        while i < order.len() {
            let s = self.scores[order[i]];
            while i < order.len() && self.scores[order[i]] == s {
                retained -= self.losses[order[i]];
                i += 1;
            }
            if tolerance.admits(retained) {
                return ConformityValue::finite(s);
            }
        }
        unreachable!("removing every claim leaves loss 0, which any tolerance admits")
    }
}

fn claim_score<S: Scalar>(
    response: &ResponseRecord<S>,
    claim: &ClaimRecord<S>,
    score_field: &str,
) -> Result<S> {
    claim.scores.get(score_field).copied().ok_or_else(|| {
        Error::data(format!(
            "response {:?}, claim {:?}: missing score field {score_field:?}",
            response.response_id, claim.claim_id
        ))
    })
}

/// Outcome of filtering one response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "S: Scalar"))]
pub struct FilteredResponse<S> {
    pub response_id: String,
    pub retained: Vec<ClaimRecord<S>>,
    pub removed: Vec<ClaimRecord<S>>,
    pub abstained: bool,
    pub merged_text: String,
}

impl<S: Scalar> FilteredResponse<S> {
    /// Splits `response` by a keep-mask, preserving claim order on both sides.
    pub fn from_mask(response: &ResponseRecord<S>, keep: &[bool]) -> Self {
        debug_assert_eq!(keep.len(), response.claims.len());
        let (retained, removed): (Vec<_>, Vec<_>) = response
            .claims
            .iter()
            .zip(keep)
            .partition(|(_, &k)| k);
        let retained: Vec<ClaimRecord<S>> = retained.into_iter().map(|(c, _)| c.clone()).collect();
        let removed = removed.into_iter().map(|(c, _)| c.clone()).collect();
        let merged_text = merge_claims(&retained);
        FilteredResponse {
            response_id: response.response_id.clone(),
            abstained: retained.is_empty(),
            retained,
            removed,
            merged_text,
        }
    }

    /// Loss of the retained claims; every retained claim must be annotated.
    pub fn retained_loss(&self, spec: &LossSpec) -> Result<u64> {
        self.retained
            .iter()
            .try_fold(0u64, |acc, c| Ok(acc.saturating_add(c.loss(spec)?.value())))
    }
}

/// Keeps the claims whose `score_field` is strictly greater than `tau`.
pub fn filter_claims<S: Scalar>(
    response: &ResponseRecord<S>,
    tau: S,
    score_field: &str,
) -> Result<FilteredResponse<S>> {
    let keep = response
        .claims
        .iter()
        .map(|c| claim_score(response, c, score_field).map(|s| s > tau))
        .collect::<Result<Vec<bool>>>()?;
    Ok(FilteredResponse::from_mask(response, &keep))
}

/// Conformity score of one annotated response at tolerance `lambda`.
pub fn conformity_score<S: Scalar>(
    response: &ResponseRecord<S>,
    lambda: S,
    score_field: &str,
    spec: &LossSpec,
) -> Result<ConformityValue<S>> {
    let tolerance = LossTolerance::new(lambda)?;
    Ok(ScoredResponse::from_record(response, score_field, spec)?.conformity(tolerance))
}

/// `ceil((n + 1)(1 - alpha))`, the rank of the calibrated threshold.
///
/// Feasible when `1/(n+1) <= alpha < 1`, i.e. when the rank does not exceed
/// `n`. At `alpha = 1/(n+1)` the rank is `n` and the lower bound is exact.
pub fn quantile_rank<S: Scalar>(n: usize, alpha: S) -> Result<usize> {
    if n == 0 {
        return Err(Error::data("calibration set is empty"));
    }
    let a = alpha.as_f64();
    let min_alpha = 1.0 / (n as f64 + 1.0);
    let infeasible = |k: Option<usize>| {
        let rank = k.map(|k| format!(" (rank {k} > n)")).unwrap_or_default();
        Error::config(format!(
            "alpha = {alpha} is infeasible for n = {n}{rank}: alpha must lie in [1/(n+1), 1); \
             the minimum feasible alpha for this n is {min_alpha}"
        ))
    };
    if !(a > 0.0 && a < 1.0) {
        return Err(infeasible(None));
    }
    let k = ceil_tolerant((n as f64 + 1.0) * (1.0 - a)).max(1);
    if k > n {
        return Err(infeasible(Some(k)));
    }
    Ok(k)
}

/// Ceiling that treats values within rounding noise of an integer as that
/// integer, so `(9 + 1) * (1 - 0.1)` ranks as 9 rather than 10.
fn ceil_tolerant(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// The `k`-th smallest (1-based) conformity value. Ties stay adjacent.
pub fn kth_smallest<S: Scalar>(values: &mut [ConformityValue<S>], k: usize) -> ConformityValue<S> {
    assert!(k >= 1 && k <= values.len(), "rank {k} out of range");
    *values.select_nth_unstable(k - 1).1
}

/// Calibrated threshold plus the parameters it was fit under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct CalibrationArtifact<S> {
    pub format_version: u32,
    #[serde(with = "ext_real")]
    pub tau_hat: S,
    pub alpha: S,
    #[serde(with = "ext_real")]
    pub lambda: S,
    pub n_calib: usize,
    pub score_field: String,
    pub loss_spec_name: String,
    pub quantile_rank: usize,
    #[serde(default)]
    pub provenance: String,
}

impl<S: Scalar> CalibrationArtifact<S> {
    pub fn tau(&self) -> ConformityValue<S> {
        ConformityValue(self.tau_hat)
    }
}

/// Threshold and rank from precomputed conformity values.
pub fn calibrate_values<S: Scalar>(
    mut values: Vec<ConformityValue<S>>,
    alpha: S,
) -> Result<(ConformityValue<S>, usize)> {
    let k = quantile_rank(values.len(), alpha)?;
    Ok((kth_smallest(&mut values, k), k))
}

/// Fits the filtering threshold on an annotated calibration set.
pub fn calibrate<S: Scalar>(
    calibration_set: &[ResponseRecord<S>],
    alpha: S,
    lambda: S,
    score_field: &str,
    spec: &LossSpec,
) -> Result<CalibrationArtifact<S>> {
    if calibration_set.is_empty() {
        return Err(Error::data("calibration set is empty"));
    }
    let tolerance = LossTolerance::new(lambda)?;
    quantile_rank(calibration_set.len(), alpha)?;
    let values = calibration_set
        .iter()
        .map(|r| Ok(ScoredResponse::from_record(r, score_field, spec)?.conformity(tolerance)))
        .collect::<Result<Vec<_>>>()?;
    let (tau, k) = calibrate_values(values, alpha)?;
    Ok(CalibrationArtifact {
        format_version: ARTIFACT_FORMAT_VERSION,
        tau_hat: tau.value(),
        alpha,
        lambda,
        n_calib: calibration_set.len(),
        score_field: score_field.to_string(),
        loss_spec_name: spec.name().to_string(),
        quantile_rank: k,
        provenance: String::new(),
    })
}

/// Filters `response` with a calibrated threshold.
pub fn apply<S: Scalar>(
    artifact: &CalibrationArtifact<S>,
    response: &ResponseRecord<S>,
) -> Result<FilteredResponse<S>> {
    filter_claims(response, artifact.tau_hat, &artifact.score_field)
}

/// Joins claim texts in order, terminating each with a period when it has
/// no closing punctuation. An empty list yields [`ABSTAIN_MARKER`].
pub fn merge_claims<S>(retained: &[ClaimRecord<S>]) -> String {
    if retained.is_empty() {
        return ABSTAIN_MARKER.to_string();
    }
    let mut out = String::new();
    for claim in retained {
        let text = claim.text.trim();
        if text.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(text);
        if !text.ends_with(['.', '!', '?']) {
            out.push('.');
        }
    }
    out
}

/// Serde adapter for extended reals: finite values as JSON numbers,
/// infinities as the strings `"-inf"` / `"inf"`.
pub mod ext_real {
    use super::*;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr<S> {
        Num(S),
        Str(String),
    }

    pub fn serialize<S: Scalar, Ser: Serializer>(v: &S, ser: Ser) -> Result<Ser::Ok, Ser::Error> {
        if v.is_finite() {
            v.serialize(ser)
        } else if *v == S::neg_infinity() {
            ser.serialize_str("-inf")
        } else if *v == S::infinity() {
            ser.serialize_str("inf")
        } else {
            Err(serde::ser::Error::custom("NaN is not a valid extended real"))
        }
    }

    pub fn deserialize<'de, S: Scalar, D: Deserializer<'de>>(de: D) -> Result<S, D::Error> {
        match Repr::<S>::deserialize(de)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "-inf" => Ok(S::neg_infinity()),
                "inf" | "+inf" => Ok(S::infinity()),
                other => Err(serde::de::Error::custom(format!(
                    "expected a number, \"-inf\" or \"inf\", got {other:?}"
                ))),
            },
        }
    }
}

//! Claim and response records, the unit of data everything else consumes.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{claim_loss, ClaimAnnotation, ClaimLoss, LossSpec};
use crate::scalar::Scalar;

/// One decomposed claim with its named score channels and optional annotation.
///
/// On the wire the annotation is flattened: `{"claim_id", "text", "scores",
/// "errors"?, "reasoning"?}`. A claim without `errors` is unannotated, which
/// is fine at inference time but rejected by calibration and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "S: Scalar"))]
pub struct ClaimRecord<S> {
    pub claim_id: String,
    #[serde(default)]
    pub text: String,
    pub scores: BTreeMap<String, S>,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<ClaimAnnotation>,
}

impl<S: Scalar> ClaimRecord<S> {
    pub fn new(claim_id: impl Into<String>, text: impl Into<String>) -> Self {
        ClaimRecord {
            claim_id: claim_id.into(),
            text: text.into(),
            scores: BTreeMap::new(),
            annotation: None,
        }
    }

    pub fn with_score(mut self, field: impl Into<String>, value: S) -> Self {
        self.scores.insert(field.into(), value);
        self
    }

    pub fn with_annotation(mut self, annotation: ClaimAnnotation) -> Self {
        self.annotation = Some(annotation);
        self
    }

    pub fn score(&self, field: &str) -> Result<S> {
        self.scores.get(field).copied().ok_or_else(|| {
            Error::data(format!(
                "claim {:?} has no score field {field:?}",
                self.claim_id
            ))
        })
    }

    /// Loss under `spec`; errors if the claim is unannotated.
    pub fn loss(&self, spec: &LossSpec) -> Result<ClaimLoss> {
        let annotation = self.annotation.as_ref().ok_or_else(|| {
            Error::data(format!("claim {:?} is not annotated", self.claim_id))
        })?;
        claim_loss(annotation, spec).map_err(|e| match e {
            Error::Data(msg) => Error::data(format!("claim {:?}: {msg}", self.claim_id)),
            other => other,
        })
    }
}

/// A prompt/image instance and its ordered claims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "S: Scalar"))]
pub struct ResponseRecord<S> {
    pub response_id: String,
    #[serde(default)]
    pub image_ref: String,
    #[serde(default)]
    pub prompt: String,
    #[serde(default = "Vec::new")]
    pub claims: Vec<ClaimRecord<S>>,
}

impl<S: Scalar> ResponseRecord<S> {
    pub fn new(response_id: impl Into<String>) -> Self {
        ResponseRecord {
            response_id: response_id.into(),
            image_ref: String::new(),
            prompt: String::new(),
            claims: Vec::new(),
        }
    }

    pub fn with_claims(mut self, claims: Vec<ClaimRecord<S>>) -> Self {
        self.claims = claims;
        self
    }

    /// Checks the record-level invariants: unique claim ids, finite scores,
    /// and (when `spec` is given) annotations drawn from the taxonomy.
    pub fn validate(&self, spec: Option<&LossSpec>) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.claims.len());
        for claim in &self.claims {
            if !seen.insert(claim.claim_id.as_str()) {
                return Err(Error::data(format!(
                    "response {:?}: duplicate claim_id {:?}",
                    self.response_id, claim.claim_id
                )));
            }
            if let Some((field, v)) = claim.scores.iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::data(format!(
                    "response {:?}, claim {:?}: score {field:?} is not finite ({v})",
                    self.response_id, claim.claim_id
                )));
            }
            if let (Some(spec), Some(ann)) = (spec, claim.annotation.as_ref()) {
                if let Some(bad) = ann.unknown_error_type(spec) {
                    return Err(Error::data(format!(
                        "response {:?}, claim {:?}: unknown error type {bad:?} for loss spec {:?}",
                        self.response_id,
                        claim.claim_id,
                        spec.name()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Applies `f` to every score of every claim.
    pub fn map_scores(&self, f: impl Fn(S) -> S) -> Self {
        let mut out = self.clone();
        for claim in &mut out.claims {
            for v in claim.scores.values_mut() {
                *v = f(*v);
            }
        }
        out
    }

    pub fn is_annotated(&self) -> bool {
        self.claims.iter().all(|c| c.annotation.is_some())
    }
}

//! Error taxonomies, per-claim losses and the cumulative response loss.
//!
//! A response's loss is the sum of its claims' losses, and a claim's loss is
//! the sum of the weights of every error occurrence annotated on it. Both are
//! exact non-negative integers. The empty response (abstention) has loss 0,
//! and the loss is monotone under claim-set inclusion, which is what the
//! coverage upper bound requires.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Name of one error category, e.g. `"Object"` or `"Numerical"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ErrorType(String);

impl ErrorType {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::config("error type name must be non-empty"));
        }
        Ok(ErrorType(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A named error taxonomy with an integer weight per error type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LossSpec {
    name: String,
    weights: Vec<(ErrorType, u64)>,
}

const SCENE: &[(&str, u64)] = &[
    ("Object", 3),
    ("Attribute", 1),
    ("Spatial", 1),
    ("Interaction", 1),
    ("Quantitative", 1),
];
const MEDICAL: &[(&str, u64)] = &[("Conflicting", 3), ("Implausible", 2), ("Plausible", 1)];
const DOCUMENT: &[(&str, u64)] = &[
    ("Numerical", 3),
    ("Date", 3),
    ("Field", 2),
    ("Item", 2),
    ("Other", 1),
];

/// Names accepted by [`LossSpec::preset`].
pub const PRESET_NAMES: &[&str] = &["scene", "medical", "document"];

#[derive(Deserialize)]
struct LossSpecFile {
    name: String,
    weights: BTreeMap<String, u64>,
}

impl LossSpec {
    /// Builds a spec from `(error type, weight)` pairs, keeping their order.
    pub fn new<I, S>(name: impl Into<String>, weights: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let name = name.into();
        let mut out: Vec<(ErrorType, u64)> = Vec::new();
        for (ty, w) in weights {
            let ty = ErrorType::new(ty)?;
            if out.iter().any(|(t, _)| *t == ty) {
                return Err(Error::config(format!(
                    "loss spec {name:?}: duplicate error type {ty:?}"
                )));
            }
            out.push((ty, w));
        }
        if out.is_empty() {
            return Err(Error::config(format!(
                "loss spec {name:?} defines no error types"
            )));
        }
        Ok(LossSpec { name, weights: out })
    }

    /// One of the compiled-in taxonomies: `scene`, `medical` or `document`.
    pub fn preset(preset_name: &str) -> Result<Self> {
        let table = match preset_name {
            "scene" => SCENE,
            "medical" => MEDICAL,
            "document" => DOCUMENT,
            other => {
                return Err(Error::config(format!(
                    "unknown loss preset {other:?} (expected one of {})",
                    PRESET_NAMES.join(", ")
                )))
            }
        };
        LossSpec::new(preset_name, table.iter().map(|&(t, w)| (t, w)))
    }

    /// Parses a TOML spec: a top-level `name` and a `[weights]` table.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: LossSpecFile = toml::from_str(text)
            .map_err(|e| Error::config(format!("invalid loss spec: {e}")))?;
        LossSpec::new(file.name, file.weights)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Preset name if it is one, otherwise a path to a TOML spec file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if PRESET_NAMES.contains(&name_or_path) {
            Self::preset(name_or_path)
        } else if Path::new(name_or_path).exists() {
            Self::from_path(name_or_path)
        } else {
            Err(Error::config(format!(
                "loss spec {name_or_path:?} is neither a preset ({}) nor an existing file",
                PRESET_NAMES.join(", ")
            )))
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn weights(&self) -> &[(ErrorType, u64)] {
        &self.weights
    }

    pub fn error_types(&self) -> impl Iterator<Item = &ErrorType> {
        self.weights.iter().map(|(t, _)| t)
    }

    pub fn weight(&self, error_type: &str) -> Option<u64> {
        self.weights
            .iter()
            .find(|(t, _)| t.as_str() == error_type)
            .map(|&(_, w)| w)
    }

    pub fn contains(&self, error_type: &str) -> bool {
        self.weight(error_type).is_some()
    }

    /// Largest weight in the taxonomy.
    pub fn max_weight(&self) -> u64 {
        self.weights.iter().map(|&(_, w)| w).max().unwrap_or(0)
    }
}

/// Error annotation for one claim. Empty `error_types` means correct.
///
/// The list is a multiset: a type named twice contributes its weight twice.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimAnnotation {
    #[serde(rename = "errors")]
    pub error_types: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
}

impl ClaimAnnotation {
    pub fn correct() -> Self {
        Self::default()
    }

    pub fn with_errors<I, S>(errors: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ClaimAnnotation {
            error_types: errors.into_iter().map(Into::into).collect(),
            reasoning: None,
        }
    }

    pub fn is_correct(&self) -> bool {
        self.error_types.is_empty()
    }

    /// First error type not present in `spec`, if any.
    pub fn unknown_error_type<'a>(&'a self, spec: &LossSpec) -> Option<&'a str> {
        self.error_types
            .iter()
            .map(String::as_str)
            .find(|t| !spec.contains(t))
    }
}

/// Loss of a single claim.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClaimLoss(pub u64);

impl ClaimLoss {
    pub fn value(self) -> u64 {
        self.0
    }
}

/// Sum of the weights of every annotated error occurrence.
pub fn claim_loss(annotation: &ClaimAnnotation, spec: &LossSpec) -> Result<ClaimLoss> {
    let mut total = 0u64;
    for ty in &annotation.error_types {
        let w = spec.weight(ty).ok_or_else(|| {
            Error::data(format!(
                "unknown error type {ty:?} for loss spec {:?}",
                spec.name()
            ))
        })?;
        total = total.saturating_add(w);
    }
    Ok(ClaimLoss(total))
}

/// Cumulative loss of a (possibly empty) set of claims.
pub fn response_loss<I>(claim_losses: I) -> u64
where
    I: IntoIterator<Item = ClaimLoss>,
{
    claim_losses
        .into_iter()
        .fold(0u64, |acc, l| acc.saturating_add(l.0))
}

/// Error tolerance `lambda`, stored as the largest admissible integer loss.
///
/// Losses are integers, so `loss <= lambda` is equivalent to
/// `loss <= floor(lambda)`. `lambda = +inf` admits every loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LossTolerance {
    cap: Option<u64>,
}

impl LossTolerance {
    pub const UNBOUNDED: LossTolerance = LossTolerance { cap: None };

    pub fn new<S: Scalar>(lambda: S) -> Result<Self> {
        if lambda.is_nan() || lambda < S::zero() {
            return Err(Error::config(format!(
                "lambda must be a non-negative number or inf, got {lambda}"
            )));
        }
        if lambda.is_infinite() {
            return Ok(Self::UNBOUNDED);
        }
        let floor = lambda.floor().to_u64().unwrap_or(u64::MAX);
        Ok(LossTolerance { cap: Some(floor) })
    }

    pub fn from_cap(cap: u64) -> Self {
        LossTolerance { cap: Some(cap) }
    }

    pub fn is_unbounded(&self) -> bool {
        self.cap.is_none()
    }

    pub fn cap(&self) -> Option<u64> {
        self.cap
    }

    pub fn admits(&self, loss: u64) -> bool {
        self.cap.is_none_or(|c| loss <= c)
    }
}

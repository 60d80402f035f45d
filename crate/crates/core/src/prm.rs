//! Process-reward scoring: the five-class value discretization and the
//! backend trait search uses to score candidate steps.
//!
//! Scalars live in `[0,1]` and discretize into five classes over uniform
//! 0.2-wide bins. Bins are half-open with 1.0 folded into the top bin, so
//! exact boundary values (which do occur in labeled data) land deterministically.
//! The inverse mapping returns bin midpoints.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::backend::BackendError;
use crate::tasks::Problem;

/// Quality class of a reasoning step, ordered worst to best.
///
/// Declaration order gives `Bad < Poor < Fair < Good < Perfect` under the
/// derived `Ord`. Serialized names are exactly the capitalized variant names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ValueClass {
    Bad,
    Poor,
    Fair,
    Good,
    Perfect,
}

/// All classes in ordinal order (`Bad` first). Index in this array equals
/// [`ValueClass::ordinal`], which is also the index convention for
/// `class_probs` vectors.
pub const ALL_CLASSES: [ValueClass; 5] = [
    ValueClass::Bad,
    ValueClass::Poor,
    ValueClass::Fair,
    ValueClass::Good,
    ValueClass::Perfect,
];

impl ValueClass {
    /// Ordinal position, `Bad = 0` through `Perfect = 4`.
    pub fn ordinal(self) -> usize {
        self as usize
    }

    /// The exact serialized name.
    pub fn as_str(self) -> &'static str {
        match self {
            ValueClass::Perfect => "Perfect",
            ValueClass::Good => "Good",
            ValueClass::Fair => "Fair",
            ValueClass::Poor => "Poor",
            ValueClass::Bad => "Bad",
        }
    }
}

impl fmt::Display for ValueClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ValueClass {
    type Err = PrmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Perfect" => Ok(ValueClass::Perfect),
            "Good" => Ok(ValueClass::Good),
            "Fair" => Ok(ValueClass::Fair),
            "Poor" => Ok(ValueClass::Poor),
            "Bad" => Ok(ValueClass::Bad),
            other => Err(PrmError::UnknownClass(other.to_string())),
        }
    }
}

/// Validation failures for scores and conversions.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrmError {
    #[error("value {0} outside [0,1]")]
    OutOfRange(f64),
    #[error("class probabilities sum to {0}, expected 1 within 1e-9")]
    ProbSum(f64),
    #[error("class probability {value} at index {index} is negative")]
    NegativeProb { index: usize, value: f64 },
    #[error("class {class} inconsistent with value {value}")]
    ClassMismatch { value: f64, class: ValueClass },
    #[error("unknown class name {0:?}")]
    UnknownClass(String),
}

/// Maps a scalar in `[0,1]` to its class bin.
///
/// Bins are `[0,0.2) -> Bad`, `[0.2,0.4) -> Poor`, `[0.4,0.6) -> Fair`,
/// `[0.6,0.8) -> Good`, `[0.8,1.0] -> Perfect`. Comparisons are explicit so
/// boundary behavior does not depend on floating division.
pub fn class_of_value(v: f64) -> Result<ValueClass, PrmError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(PrmError::OutOfRange(v));
    }
    Ok(if v < 0.2 {
        ValueClass::Bad
    } else if v < 0.4 {
        ValueClass::Poor
    } else if v < 0.6 {
        ValueClass::Fair
    } else if v < 0.8 {
        ValueClass::Good
    } else {
        ValueClass::Perfect
    })
}

/// Inverse of [`class_of_value`]: the midpoint of the class's bin.
pub fn value_of_class(c: ValueClass) -> f64 {
    match c {
        ValueClass::Bad => 0.1,
        ValueClass::Poor => 0.3,
        ValueClass::Fair => 0.5,
        ValueClass::Good => 0.7,
        ValueClass::Perfect => 0.9,
    }
}

/// Expected scalar under a distribution over classes: sum of probability
/// times bin midpoint, indexed by ordinal (`probs[0]` is `Bad`).
pub fn expected_value(probs: &[f64; 5]) -> f64 {
    let mut v = 0.0;
    for (i, class) in ALL_CLASSES.iter().enumerate() {
        v += probs[i] * value_of_class(*class);
    }
    v
}

/// A scored step: scalar value, its class bin, and (when the backend is a
/// classifier) the full class distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrmScore {
    pub value: f64,
    pub class: ValueClass,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_probs: Option<[f64; 5]>,
}

impl PrmScore {
    /// Builds a score from a scalar; the class is derived.
    pub fn from_value(value: f64) -> Result<Self, PrmError> {
        Ok(PrmScore {
            value,
            class: class_of_value(value)?,
            class_probs: None,
        })
    }

    /// Builds a score from a bare class; the value is the bin midpoint.
    pub fn from_class(class: ValueClass) -> Self {
        PrmScore {
            value: value_of_class(class),
            class,
            class_probs: None,
        }
    }

    /// Builds a score from a class distribution: value is the expected
    /// midpoint and the class is that value's bin.
    pub fn from_probs(probs: [f64; 5]) -> Result<Self, PrmError> {
        validate_probs(&probs)?;
        let value = expected_value(&probs);
        Ok(PrmScore {
            value,
            class: class_of_value(value)?,
            class_probs: Some(probs),
        })
    }

    /// Checks every score invariant: value in range, class consistent with
    /// value, probabilities (if present) non-negative and summing to 1
    /// within 1e-9.
    pub fn validate(&self) -> Result<(), PrmError> {
        let expect = class_of_value(self.value)?;
        if expect != self.class {
            return Err(PrmError::ClassMismatch {
                value: self.value,
                class: self.class,
            });
        }
        if let Some(probs) = &self.class_probs {
            validate_probs(probs)?;
        }
        Ok(())
    }
}

fn validate_probs(probs: &[f64; 5]) -> Result<(), PrmError> {
    for (index, &value) in probs.iter().enumerate() {
        if value < 0.0 {
            return Err(PrmError::NegativeProb { index, value });
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(PrmError::ProbSum(sum));
    }
    Ok(())
}

/// Scores one candidate step, validated against every `PrmScore` invariant.
pub trait PrmBackend {
    /// Scores appending `candidate` after `prefix` for `problem`.
    fn score(
        &self,
        problem: &Problem,
        prefix: &[String],
        candidate: &str,
    ) -> Result<PrmScore, BackendError>;
}

impl<T: PrmBackend + ?Sized> PrmBackend for &T {
    fn score(
        &self,
        problem: &Problem,
        prefix: &[String],
        candidate: &str,
    ) -> Result<PrmScore, BackendError> {
        (**self).score(problem, prefix, candidate)
    }
}

/// Scores a candidate through `backend` and rejects malformed output before
/// it can reach search or memory thresholds.
pub fn score_step<B: PrmBackend>(
    backend: &B,
    problem: &Problem,
    prefix: &[String],
    candidate: &str,
) -> Result<PrmScore, BackendError> {
    let score = backend.score(problem, prefix, candidate)?;
    score
        .validate()
        .map_err(|e| match e {
            PrmError::OutOfRange(v) => BackendError::ValueOutOfRange(v),
            other => BackendError::Parse {
                message: other.to_string(),
                raw: format!("{score:?}"),
            },
        })
        .map(|()| score)
}

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Seed type of built-in classes, in default class-list order.
pub const BUILTIN_CLASSES: [&str; 5] = ["canola", "rough_rice", "sorghum", "soy", "wheat"];

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("class label must be nonempty")]
    Empty,
    #[error("class label {0:?} contains a reserved character (comma, quote, whitespace or path separator)")]
    Reserved(String),
    #[error("capture height {0} m is not one of 0.3, 0.5, 0.7")]
    UnknownHeight(f64),
}

/// Seed class name. Built-in classes plus any user-defined label.
///
/// Labels appear unquoted in manifest headers and as directory names, so they
/// may not contain commas, quotes, whitespace, or path separators.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ClassLabel(String);

impl ClassLabel {
    pub fn new(label: impl Into<String>) -> Result<Self, LabelError> {
        let label = label.into();
        if label.is_empty() {
            return Err(LabelError::Empty);
        }
        if label
            .chars()
            .any(|c| c == ',' || c == '"' || c == '/' || c == '\\' || c.is_whitespace())
        {
            return Err(LabelError::Reserved(label));
        }
        Ok(Self(label))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn builtin() -> Vec<ClassLabel> {
        BUILTIN_CLASSES.iter().map(|s| ClassLabel((*s).to_string())).collect()
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for ClassLabel {
    type Err = LabelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl TryFrom<String> for ClassLabel {
    type Error = LabelError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<ClassLabel> for String {
    fn from(c: ClassLabel) -> Self {
        c.0
    }
}

/// Capture altitude of the cutouts composing a scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub enum HeightBucket {
    Low,
    Mid,
    High,
}

impl HeightBucket {
    pub const ALL: [HeightBucket; 3] = [HeightBucket::Low, HeightBucket::Mid, HeightBucket::High];

    pub fn meters(self) -> f64 {
        match self {
            HeightBucket::Low => 0.3,
            HeightBucket::Mid => 0.5,
            HeightBucket::High => 0.7,
        }
    }

    pub fn from_meters(m: f64) -> Result<Self, LabelError> {
        Self::ALL
            .into_iter()
            .find(|b| (b.meters() - m).abs() < 1e-6)
            .ok_or(LabelError::UnknownHeight(m))
    }

    /// Stable short name used in seed derivation and file names.
    pub fn tag(self) -> &'static str {
        match self {
            HeightBucket::Low => "0.3",
            HeightBucket::Mid => "0.5",
            HeightBucket::High => "0.7",
        }
    }
}

impl fmt::Display for HeightBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl TryFrom<f64> for HeightBucket {
    type Error = LabelError;
    fn try_from(m: f64) -> Result<Self, Self::Error> {
        Self::from_meters(m)
    }
}

impl From<HeightBucket> for f64 {
    fn from(b: HeightBucket) -> Self {
        b.meters()
    }
}

impl FromStr for HeightBucket {
    type Err = LabelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let m: f64 = s.trim().parse().map_err(|_| LabelError::UnknownHeight(f64::NAN))?;
        Self::from_meters(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_reserved_labels() {
        assert_eq!(ClassLabel::new(""), Err(LabelError::Empty));
        assert!(ClassLabel::new("a,b").is_err());
        assert!(ClassLabel::new("a b").is_err());
        assert!(ClassLabel::new("../x").is_err());
        assert!(ClassLabel::new("maize").is_ok());
    }

    #[test]
    fn height_round_trip() {
        for b in HeightBucket::ALL {
            assert_eq!(HeightBucket::from_meters(b.meters()).unwrap(), b);
            assert_eq!(b.tag().parse::<HeightBucket>().unwrap(), b);
        }
        assert!(HeightBucket::from_meters(0.4).is_err());
    }
}

//! Emotion labels and discrete emotion distributions.
//!
//! The in-domain vocabulary is the fixed set of eight Mikels categories.
//! Anything else is carried as an out-of-domain token and routed through
//! the zero-shot paths of the planner and critic.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Allowed deviation of a distribution's total mass from 1.
pub const DISTRIBUTION_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EmotionError {
    #[error("emotion label is empty")]
    EmptyLabel,
    #[error("emotion label {0:?} contains whitespace")]
    NotAToken(String),
    #[error("unknown emotion key {0:?} in distribution")]
    UnknownKey(String),
    #[error("distribution entry {label} = {value} is negative or not finite")]
    BadProbability { label: &'static str, value: f64 },
    #[error("distribution sums to {0}, expected 1")]
    NotNormalized(f64),
}

/// One of the eight canonical emotion categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emotion {
    Amusement,
    Awe,
    Contentment,
    Excitement,
    Anger,
    Disgust,
    Fear,
    Sadness,
}

impl Emotion {
    /// Canonical order: the four positive categories, then the four negative ones.
    pub const ALL: [Emotion; 8] = [
        Emotion::Amusement,
        Emotion::Awe,
        Emotion::Contentment,
        Emotion::Excitement,
        Emotion::Anger,
        Emotion::Disgust,
        Emotion::Fear,
        Emotion::Sadness,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Amusement => "amusement",
            Emotion::Awe => "awe",
            Emotion::Contentment => "contentment",
            Emotion::Excitement => "excitement",
            Emotion::Anger => "anger",
            Emotion::Disgust => "disgust",
            Emotion::Fear => "fear",
            Emotion::Sadness => "sadness",
        }
    }

    pub fn index(self) -> usize {
        Emotion::ALL.iter().position(|e| *e == self).unwrap()
    }

    pub fn from_name(name: &str) -> Option<Emotion> {
        Emotion::ALL.into_iter().find(|e| e.as_str() == name)
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A target or source emotion: canonical, or a free-form lowercase token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EmotionLabel {
    InDomain(Emotion),
    OutOfDomain(String),
}

impl EmotionLabel {
    pub fn parse(raw: &str) -> Result<Self, EmotionError> {
        let token = raw.trim().to_lowercase();
        if token.is_empty() {
            return Err(EmotionError::EmptyLabel);
        }
        if token.chars().any(char::is_whitespace) {
            return Err(EmotionError::NotAToken(token));
        }
        Ok(match Emotion::from_name(&token) {
            Some(e) => EmotionLabel::InDomain(e),
            None => EmotionLabel::OutOfDomain(token),
        })
    }

    pub fn in_domain(&self) -> Option<Emotion> {
        match self {
            EmotionLabel::InDomain(e) => Some(*e),
            EmotionLabel::OutOfDomain(_) => None,
        }
    }

    pub fn is_in_domain(&self) -> bool {
        self.in_domain().is_some()
    }

    pub fn as_str(&self) -> &str {
        match self {
            EmotionLabel::InDomain(e) => e.as_str(),
            EmotionLabel::OutOfDomain(s) => s,
        }
    }
}

impl From<Emotion> for EmotionLabel {
    fn from(e: Emotion) -> Self {
        EmotionLabel::InDomain(e)
    }
}

impl FromStr for EmotionLabel {
    type Err = EmotionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EmotionLabel::parse(s)
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for EmotionLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for EmotionLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        EmotionLabel::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// Probability mass over the eight canonical emotions.
///
/// Constructed through [`EmotionDistribution::new`], which rejects
/// non-normalized input instead of renormalizing it. The only exception is
/// [`EmotionDistribution::sentinel`], an all-zero placeholder recorded for
/// out-of-domain targets and skipped by every metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmotionDistribution {
    probs: [f64; 8],
}

impl EmotionDistribution {
    pub fn new(probs: [f64; 8]) -> Result<Self, EmotionError> {
        for (e, &p) in Emotion::ALL.iter().zip(&probs) {
            if !p.is_finite() || p < 0.0 {
                return Err(EmotionError::BadProbability {
                    label: e.as_str(),
                    value: p,
                });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_SUM_TOLERANCE {
            return Err(EmotionError::NotNormalized(sum));
        }
        Ok(Self { probs })
    }

    pub fn uniform() -> Self {
        Self { probs: [0.125; 8] }
    }

    /// All-zero placeholder for assessments that carry no distribution.
    pub fn sentinel() -> Self {
        Self { probs: [0.0; 8] }
    }

    pub fn is_sentinel(&self) -> bool {
        self.probs.iter().all(|p| *p == 0.0)
    }

    /// Point mass at `emotion`.
    pub fn one_hot(emotion: Emotion) -> Self {
        let mut probs = [0.0; 8];
        probs[emotion.index()] = 1.0;
        Self { probs }
    }

    pub fn from_map(map: &BTreeMap<String, f64>) -> Result<Self, EmotionError> {
        let mut probs = [0.0; 8];
        for (k, v) in map {
            let e = Emotion::from_name(k).ok_or_else(|| EmotionError::UnknownKey(k.clone()))?;
            probs[e.index()] = *v;
        }
        Self::new(probs)
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        Emotion::ALL
            .iter()
            .map(|e| (e.as_str().to_string(), self.probs[e.index()]))
            .collect()
    }

    pub fn get(&self, emotion: Emotion) -> f64 {
        self.probs[emotion.index()]
    }

    pub fn probs(&self) -> &[f64; 8] {
        &self.probs
    }

    /// Most probable emotion; exact ties go to the lexicographically smallest name.
    pub fn argmax(&self) -> Emotion {
        let mut best = Emotion::ALL[0];
        for e in Emotion::ALL.into_iter().skip(1) {
            let (p, q) = (self.get(e), self.get(best));
            if p > q || (p == q && e.as_str() < best.as_str()) {
                best = e;
            }
        }
        best
    }
}

impl Serialize for EmotionDistribution {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_map().serialize(s)
    }
}

impl<'de> Deserialize<'de> for EmotionDistribution {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<String, f64>::deserialize(d)?;
        if map.values().all(|v| *v == 0.0) && map.len() == 8 {
            return Ok(Self::sentinel());
        }
        Self::from_map(&map).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_canonical_and_free_form_labels() {
        assert_eq!(
            EmotionLabel::parse(" Awe ").unwrap(),
            EmotionLabel::InDomain(Emotion::Awe)
        );
        assert_eq!(
            EmotionLabel::parse("Depression").unwrap(),
            EmotionLabel::OutOfDomain("depression".into())
        );
        assert_eq!(EmotionLabel::parse("  "), Err(EmotionError::EmptyLabel));
        assert!(matches!(
            EmotionLabel::parse("deep sorrow"),
            Err(EmotionError::NotAToken(_))
        ));
    }

    #[test]
    fn uniform_argmax_is_lexicographically_first() {
        assert_eq!(EmotionDistribution::uniform().argmax(), Emotion::Amusement);
        let mut probs = [0.0; 8];
        probs[Emotion::Sadness.index()] = 0.5;
        probs[Emotion::Fear.index()] = 0.5;
        assert_eq!(EmotionDistribution::new(probs).unwrap().argmax(), Emotion::Fear);
    }

    #[test]
    fn rejects_non_normalized() {
        let probs = [0.1; 8];
        assert!(matches!(
            EmotionDistribution::new(probs),
            Err(EmotionError::NotNormalized(_))
        ));
        let mut neg = [0.125; 8];
        neg[0] = -0.125;
        neg[1] = 0.375;
        assert!(matches!(
            EmotionDistribution::new(neg),
            Err(EmotionError::BadProbability { .. })
        ));
    }

    #[test]
    fn distribution_serializes_as_label_map() {
        let d = EmotionDistribution::one_hot(Emotion::Awe);
        let json = serde_json::to_string(&d).unwrap();
        assert!(json.contains("\"awe\":1.0"));
        let back: EmotionDistribution = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
        let sentinel: EmotionDistribution =
            serde_json::from_str(&serde_json::to_string(&EmotionDistribution::sentinel()).unwrap())
                .unwrap();
        assert!(sentinel.is_sentinel());
    }
}

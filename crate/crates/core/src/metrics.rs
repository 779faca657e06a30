//! Evaluation metrics: Emo-A, Emo-S, ESR, CLIP-I, LPIPS diversity and Sem-D.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::backends::{
    BackendError, ClassifierBackend, ClassifyRequest, ImageRef, PerceptualBackend,
    PerceptualDistanceRequest,
};
use crate::emotion::{Emotion, EmotionDistribution, DISTRIBUTION_SUM_TOLERANCE};
use crate::knowledge::{cosine_similarity, VectorError};

pub const DEFAULT_KL_EPSILON: f64 = 1e-6;

/// Printed with every report so readers know how ESR was counted.
pub const ESR_RULE: &str = "shifted = KL(edit || source) > 0 and target mass strictly increased";

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("out-of-domain target has no distribution-based metric")]
    OutOfDomain,
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

fn check_distribution(p: &[f64], name: &str) -> Result<(), MetricsError> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(MetricsError::InvalidDistribution(format!(
            "{name} has negative or non-finite entries"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > DISTRIBUTION_SUM_TOLERANCE {
        return Err(MetricsError::InvalidDistribution(format!("{name} sums to {sum}")));
    }
    Ok(())
}

/// KL(p || q) after adding `epsilon` to every entry of both and renormalizing.
pub fn kl_divergence(p: &[f64], q: &[f64], epsilon: f64) -> Result<f64, MetricsError> {
    if p.len() != q.len() || p.is_empty() {
        return Err(MetricsError::InvalidDistribution(format!(
            "lengths {} and {} differ or are zero",
            p.len(),
            q.len()
        )));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(MetricsError::InvalidDistribution("epsilon must be positive".into()));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    let zp = 1.0 + epsilon * p.len() as f64;
    let zq = 1.0 + epsilon * q.len() as f64;
    let kl = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| {
            let a = (a + epsilon) / zp;
            let b = (b + epsilon) / zq;
            a * (a / b).ln()
        })
        .sum::<f64>();
    // rounding can leave a tiny negative residue near equality
    Ok(kl.max(0.0))
}

/// Increase of target mass from source to edit.
pub fn emo_s(src: &EmotionDistribution, edit: &EmotionDistribution, target: Emotion) -> f64 {
    edit.get(target) - src.get(target)
}

pub fn is_shifted(
    src: &EmotionDistribution,
    edit: &EmotionDistribution,
    target: Emotion,
) -> Result<bool, MetricsError> {
    let kl = kl_divergence(edit.probs(), src.probs(), DEFAULT_KL_EPSILON)?;
    Ok(kl > 0.0 && edit.get(target) > src.get(target))
}

/// Fraction of (source, edit, target) triples counted as shifted.
pub fn esr(pairs: &[(EmotionDistribution, EmotionDistribution, Emotion)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut shifted = 0usize;
    for (src, edit, target) in pairs {
        if src.is_sentinel() || edit.is_sentinel() {
            return Err(MetricsError::OutOfDomain);
        }
        shifted += usize::from(is_shifted(src, edit, *target)?);
    }
    Ok(shifted as f64 / pairs.len() as f64)
}

/// Fraction of images whose classified argmax equals the target.
pub fn emo_a(
    images: &[ImageRef],
    target: Emotion,
    classifier: &dyn ClassifierBackend,
) -> Result<f64, MetricsError> {
    if images.is_empty() {
        return Err(MetricsError::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut hits = 0usize;
    for img in images {
        let d = classifier
            .classify(&ClassifyRequest { image: img.clone() })?
            .distribution();
        hits += usize::from(d.argmax() == target);
    }
    Ok(hits as f64 / images.len() as f64)
}

pub fn clip_i(src: &[f64], edit: &[f64]) -> Result<f64, MetricsError> {
    Ok(cosine_similarity(src, edit)?)
}

/// Mean cosine distance over unordered pairs.
pub fn sem_d(embeddings: &[Vec<f64>]) -> Result<f64, MetricsError> {
    let n = embeddings.len();
    if n < 2 {
        return Err(MetricsError::InsufficientSamples { needed: 2, got: n });
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += 1.0 - cosine_similarity(&embeddings[i], &embeddings[j])?;
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

/// Mean backend perceptual distance over unordered pairs.
pub fn lpips_diversity(
    images: &[ImageRef],
    backend: &dyn PerceptualBackend,
) -> Result<f64, MetricsError> {
    let n = images.len();
    if n < 2 {
        return Err(MetricsError::InsufficientSamples { needed: 2, got: n });
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += backend
                .perceptual_distance(&PerceptualDistanceRequest {
                    a: images[i].clone(),
                    b: images[j].clone(),
                })?
                .distance;
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

/// One edited output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub run: String,
    pub branch: u32,
    pub clip_i: f64,
    /// 1 when the classifier argmax matches the target, else 0.
    pub emo_a: f64,
    pub emo_s: f64,
    /// 1 when counted as shifted, else 0.
    pub shifted: f64,
}

/// One group of outputs sharing a source image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub source_hash: String,
    pub outputs: usize,
    pub sem_d: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub esr_rule: String,
    pub samples: Vec<SampleMetrics>,
    pub sets: Vec<SetMetrics>,
    pub sample_count: usize,
    pub set_count: usize,
    /// Outputs skipped because their target is out of domain.
    pub excluded: usize,
    pub clip_i: Option<f64>,
    pub emo_a: Option<f64>,
    pub emo_s: Option<f64>,
    pub esr: Option<f64>,
    pub lpips: Option<f64>,
    pub sem_d: Option<f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl MetricReport {
    /// Aggregates are plain means of the per-sample and per-set values.
    pub fn from_parts(samples: Vec<SampleMetrics>, sets: Vec<SetMetrics>, excluded: usize) -> Self {
        let lpips = if sets.iter().all(|s| s.lpips.is_some()) {
            mean(sets.iter().filter_map(|s| s.lpips))
        } else {
            None
        };
        Self {
            esr_rule: ESR_RULE.into(),
            clip_i: mean(samples.iter().map(|s| s.clip_i)),
            emo_a: mean(samples.iter().map(|s| s.emo_a)),
            emo_s: mean(samples.iter().map(|s| s.emo_s)),
            esr: mean(samples.iter().map(|s| s.shifted)),
            sem_d: mean(sets.iter().map(|s| s.sem_d)),
            lpips,
            sample_count: samples.len(),
            set_count: sets.len(),
            samples,
            sets,
            excluded,
        }
    }

    /// Aligned plain-text table: CLIP-I, Emo-A, Emo-S, ESR, then LPIPS, Sem-D.
    pub fn render_table(&self) -> String {
        let f = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let mut out = String::new();
        let _ = writeln!(out, "ESR rule: {}", self.esr_rule);
        let _ = writeln!(
            out,
            "{:<24} {:>6} {:>8} {:>8} {:>8} {:>8}",
            "sample", "branch", "CLIP-I", "Emo-A", "Emo-S", "ESR"
        );
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{:<24} {:>6} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                s.run, s.branch, s.clip_i, s.emo_a, s.emo_s, s.shifted
            );
        }
        let _ = writeln!(
            out,
            "{:<24} {:>6} {:>8} {:>8} {:>8} {:>8}",
            format!("mean (n={})", self.sample_count),
            "",
            f(self.clip_i),
            f(self.emo_a),
            f(self.emo_s),
            f(self.esr)
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<24} {:>7} {:>8} {:>8}", "source", "outputs", "LPIPS", "Sem-D");
        for s in &self.sets {
            let _ = writeln!(
                out,
                "{:<24} {:>7} {:>8} {:>8.4}",
                &s.source_hash[..s.source_hash.len().min(12)],
                s.outputs,
                f(s.lpips),
                s.sem_d
            );
        }
        let _ = writeln!(
            out,
            "{:<24} {:>7} {:>8} {:>8}",
            format!("mean (n={})", self.set_count),
            "",
            f(self.lpips),
            f(self.sem_d)
        );
        if self.excluded > 0 {
            let _ = writeln!(out, "excluded out-of-domain outputs: {}", self.excluded);
        }
        out
    }
}

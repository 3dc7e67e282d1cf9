//! Confidence similarity of new classes to the pretrained classes: the mean,
//! over a class's images, of the highest pretrained-class softmax probability.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureSet, Manifest, PRETRAINED_CLASSES};
use crate::error::{invalid, Result};

/// Histogram bin count for per-image top-1 confidence.
pub const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSimilarity {
    pub class: String,
    pub similarity_pct: f64,
    pub nearest_pretrained_class: usize,
    /// Counts of per-image top-1 confidence in `HISTOGRAM_BINS` equal bins over `[0, 1]`.
    pub confidence_histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub measure: String,
    pub classes: Vec<ClassSimilarity>,
    pub species: BTreeMap<String, f64>,
}

impl SimilarityReport {
    pub fn class(&self, name: &str) -> Option<&ClassSimilarity> {
        self.classes.iter().find(|c| c.class == name)
    }

    /// Mean similarity of the named classes, if all are present.
    pub fn mean_of(&self, classes: &[String]) -> Option<f64> {
        let vals: Option<Vec<f64>> = classes.iter().map(|c| self.class(c).map(|s| s.similarity_pct)).collect();
        let vals = vals?;
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

fn top1(row: &[f32]) -> (f64, usize) {
    let mut arg = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[arg] {
            arg = j;
        }
    }
    let max = row[arg] as f64;
    let sum: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
    (1.0 / sum, arg)
}

/// `(similarity_pct, nearest_class, histogram)` over the logits of one class's images.
pub fn class_similarity_detail(logits: &FeatureSet, ids: &[usize]) -> Result<(f64, usize, Vec<usize>)> {
    if logits.dim != PRETRAINED_CLASSES {
        return Err(invalid(format!(
            "similarity needs {PRETRAINED_CLASSES}-way logits, got dim {}",
            logits.dim
        )));
    }
    if ids.is_empty() {
        return Err(invalid("similarity needs at least one image"));
    }
    let mut votes = vec![0usize; logits.dim];
    let mut hist = vec![0usize; HISTOGRAM_BINS];
    let mut total = 0.0;
    for &i in ids {
        let (conf, arg) = top1(logits.sample(i, 0));
        total += conf;
        votes[arg] += 1;
        hist[((conf * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)] += 1;
    }
    // Mode of the per-image argmax; ties go to the lowest class index.
    let nearest = votes
        .iter()
        .enumerate()
        .fold(0, |best, (j, &v)| if v > votes[best] { j } else { best });
    Ok((100.0 * total / ids.len() as f64, nearest, hist))
}

/// Similarity over every image of `logits` (which must hold one class).
pub fn class_similarity(logits: &FeatureSet) -> Result<(f64, usize)> {
    let ids: Vec<usize> = (0..logits.n_images).collect();
    class_similarity_detail(logits, &ids).map(|(s, n, _)| (s, n))
}

/// Per-class and per-species similarity for every class of the manifest
/// present in `logits`.
pub fn similarity_report(logits: &FeatureSet, manifest: &Manifest) -> Result<SimilarityReport> {
    let members = logits.class_members();
    let mut classes = Vec::new();
    for (c, ids) in members.iter().enumerate() {
        if ids.is_empty() {
            continue;
        }
        let (similarity_pct, nearest, hist) = class_similarity_detail(logits, ids)?;
        classes.push(ClassSimilarity {
            class: logits.class_names[c].clone(),
            similarity_pct,
            nearest_pretrained_class: nearest,
            confidence_histogram: hist,
        });
    }
    let mut species = BTreeMap::new();
    for sp in &manifest.species {
        let names: Vec<String> = sp.classes.iter().map(|c| c.name.clone()).collect();
        let vals: Vec<f64> = classes
            .iter()
            .filter(|c| names.contains(&c.class))
            .map(|c| c.similarity_pct)
            .collect();
        if !vals.is_empty() {
            species.insert(sp.name.clone(), vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    Ok(SimilarityReport {
        measure: "confidence similarity (mean top-1 softmax probability, %)".into(),
        classes,
        species,
    })
}

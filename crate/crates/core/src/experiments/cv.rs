//! Stratified k-fold selection among candidate training configurations.

use serde::{Deserialize, Serialize};

use crate::data::FeatureSet;
use crate::error::{invalid, Result};
use crate::heads::{train_head, Head, TrainConfig};

/// Per-class contiguous chunks of near-equal size, merged across classes.
/// Within a class the first `n mod k` folds get one extra item.
pub fn stratified_folds(labels: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(invalid("folds must be at least 1"));
    }
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut folds = vec![Vec::new(); k];
    for (c, ids) in by_class.iter().enumerate() {
        if ids.is_empty() {
            continue;
        }
        if ids.len() < k {
            return Err(invalid(format!("{k} folds exceed the {} items of class {c}", ids.len())));
        }
        let (base, extra) = (ids.len() / k, ids.len() % k);
        let mut start = 0;
        for (f, fold) in folds.iter_mut().enumerate() {
            let len = base + usize::from(f < extra);
            fold.extend_from_slice(&ids[start..start + len]);
            start += len;
        }
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub chosen: TrainConfig,
    pub chosen_index: usize,
    /// Mean fold validation accuracy per candidate.
    pub mean_val_accuracy: Vec<f64>,
}

/// Trains a fresh head (from `make_head`) per candidate and fold on the
/// other folds of `pool`, scoring on the held-out fold. Picks the highest
/// mean accuracy; ties go to the lower base learning rate, then the earlier
/// candidate.
pub fn cross_validate<F>(pool: &FeatureSet, folds: usize, candidates: &[TrainConfig], make_head: F) -> Result<CvOutcome>
where
    F: Fn() -> Result<Head>,
{
    if candidates.is_empty() {
        return Err(invalid("cross-validation needs at least one candidate"));
    }
    if candidates.len() == 1 {
        return Ok(CvOutcome {
            chosen: candidates[0].clone(),
            chosen_index: 0,
            mean_val_accuracy: vec![f64::NAN],
        });
    }
    if folds < 2 {
        return Err(invalid("cross-validation needs at least 2 folds"));
    }
    let fold_ids = stratified_folds(&pool.labels, folds)?;
    let mut means = Vec::with_capacity(candidates.len());
    for cfg in candidates {
        let mut total = 0.0;
        for (f, held_out) in fold_ids.iter().enumerate() {
            let rest: Vec<usize> = fold_ids
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, ids)| ids.iter().copied())
                .collect();
            let train = pool.subset(&rest)?;
            let val = pool.subset(held_out)?;
            let mut head = make_head()?;
            total += train_head(&mut head, &train, &val, cfg)?.val_accuracy_pct;
        }
        means.push(total / folds as f64);
    }
    let mut best = 0;
    for i in 1..candidates.len() {
        let better = means[i] > means[best]
            || (means[i] == means[best] && candidates[i].sgd.base_lr < candidates[best].sgd.base_lr);
        if better {
            best = i;
        }
    }
    Ok(CvOutcome {
        chosen: candidates[best].clone(),
        chosen_index: best,
        mean_val_accuracy: means,
    })
}

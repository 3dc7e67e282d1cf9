use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Head, HeadKind, Workspace};
use crate::data::FeatureSet;
use crate::error::{invalid, Error, Result};
use crate::layers::{cross_entropy_sum, DenseMatrix, Rng};
use crate::optim::{EarlyStopConfig, EarlyStopState, SgdConfig};

/// Rows per forward pass when scoring validation or test sets.
const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub sgd: SgdConfig,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// `None` disables early stopping.
    pub early_stop: Option<EarlyStopConfig>,
    pub seed: u64,
    pub threads: usize,
}

impl TrainConfig {
    /// lr 1e-2, no momentum, decay ×0.1 every 7 epochs, 25 epochs.
    pub fn proposed() -> Self {
        Self {
            sgd: SgdConfig {
                base_lr: 1e-2,
                momentum: 0.0,
                weight_decay: 0.0,
                step_size: 7,
                gamma: 0.1,
            },
            max_epochs: 25,
            batch_size: 16,
            early_stop: Some(EarlyStopConfig::default()),
            seed: 0,
            threads: 1,
        }
    }

    /// lr 1e-3, momentum 0.9, decay ×0.1 every 7 epochs, 25 epochs.
    pub fn baseline() -> Self {
        let mut cfg = Self::proposed();
        cfg.sgd.base_lr = 1e-3;
        cfg.sgd.momentum = 0.9;
        cfg
    }

    pub fn default_for(kind: HeadKind) -> Self {
        match kind {
            HeadKind::Proposed => Self::proposed(),
            HeadKind::Baseline => Self::baseline(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        if self.max_epochs == 0 || self.batch_size == 0 || self.threads == 0 {
            return Err(invalid("max_epochs, batch_size and threads must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub kind: HeadKind,
    /// Filled in by [`evaluate`] callers; training alone never sees test data.
    pub test_accuracy_pct: Option<f64>,
    /// Wall-clock seconds spent in the epoch loop.
    pub train_time_s: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub param_count: usize,
    pub threads: usize,
    pub loss_curve: Vec<f64>,
    pub val_loss_curve: Vec<f64>,
    pub lr_trace: Vec<f64>,
    pub train_accuracy_pct: f64,
    pub val_accuracy_pct: f64,
    /// Share of output units dead on the first batch (ReLU-terminated heads).
    pub first_batch_dead_fraction: Option<f64>,
}

impl TrainResult {
    /// Equality ignoring the wall-clock field.
    pub fn same_outcome(&self, other: &TrainResult) -> bool {
        let mut a = self.clone();
        a.train_time_s = other.train_time_s;
        a == *other
    }
}

fn check_set(head: &Head, set: &FeatureSet, what: &str) -> Result<()> {
    if set.n_images == 0 {
        return Err(invalid(format!("{what} set is empty")));
    }
    if set.dim != head.input_dim() {
        return Err(Error::Shape {
            op: "train_head",
            lhs: (set.n_images, set.dim),
            rhs: (head.input_dim(), head.n_classes()),
        });
    }
    if let Some(&l) = set.labels.iter().find(|&&l| l >= head.n_classes()) {
        return Err(invalid(format!(
            "{what} label {l} out of range for {} classes",
            head.n_classes()
        )));
    }
    Ok(())
}

/// Mini-batch SGD with step decay and validation-loss early stopping.
///
/// Each epoch visits the training images in a freshly seeded order, using
/// feature variant `epoch mod V`. On an early stop the parameters of the
/// best validation epoch are restored.
pub fn train_head(head: &mut Head, train: &FeatureSet, val: &FeatureSet, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    check_set(head, train, "training")?;
    check_set(head, val, "validation")?;

    let mut order: Vec<usize> = (0..train.n_images).collect();
    let mut shuffle_rng = Rng::new(cfg.seed).derive(0x5eed);
    let mut ws = Workspace::new();
    let mut eval_ws = Workspace::new();
    let mut labels = Vec::with_capacity(cfg.batch_size);
    let mut stopper = cfg.early_stop.map(EarlyStopState::new);
    let mut best: Option<Vec<(Vec<f32>, Vec<f32>)>> = None;

    let mut loss_curve = Vec::new();
    let mut val_loss_curve = Vec::new();
    let mut lr_trace = Vec::new();
    let mut dead_fraction = None;
    let mut stopped_early = false;
    let mut best_epoch = 0;

    let started = Instant::now();
    for epoch in 0..cfg.max_epochs {
        let lr = cfg.sgd.lr_at(epoch)?;
        lr_trace.push(lr);
        order.shuffle(&mut shuffle_rng);
        let variant = epoch % train.n_variants;

        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            train.gather_into(batch, variant, ws.input_mut());
            labels.clear();
            labels.extend(batch.iter().map(|&i| train.labels[i]));
            let loss = head.train_step_ws(&mut ws, &labels, lr, cfg.sgd.momentum, cfg.threads)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            if epoch == 0 && dead_fraction.is_none() {
                dead_fraction = head.dead_output_fraction(&ws);
                if let Some(f) = dead_fraction.filter(|&f| f > 0.5) {
                    log::warn!(
                        "{:.0}% of output units are inactive on the first batch; their gradients are zero",
                        100.0 * f
                    );
                }
            }
            epoch_loss += loss as f64 * batch.len() as f64;
        }
        loss_curve.push(epoch_loss / train.n_images as f64);

        let val_loss = mean_loss(head, val, &mut eval_ws, cfg.threads)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        val_loss_curve.push(val_loss);

        if let Some(state) = stopper.as_mut() {
            let (improved, stop) = state.check(val_loss)?;
            if improved {
                best_epoch = epoch;
                let snap = best.get_or_insert_with(Vec::new);
                snap.resize_with(head.layers().len(), Default::default);
                for (s, p) in snap.iter_mut().zip(head.layers()) {
                    s.0.clear();
                    s.0.extend_from_slice(p.weights.as_slice());
                    s.1.clone_from(&p.bias);
                }
            }
            if stop {
                if let Some(snap) = &best {
                    for (p, (w, b)) in head.layers_mut().iter_mut().zip(snap) {
                        p.weights.as_mut_slice().copy_from_slice(w);
                        p.bias.copy_from_slice(b);
                    }
                }
                stopped_early = true;
                break;
            }
        } else {
            best_epoch = epoch;
        }
    }
    let train_time_s = started.elapsed().as_secs_f64();

    let epochs_run = loss_curve.len();
    Ok(TrainResult {
        kind: head.kind(),
        test_accuracy_pct: None,
        train_time_s,
        epochs_run,
        best_epoch,
        stopped_early,
        param_count: head.count_params(),
        threads: cfg.threads,
        loss_curve,
        val_loss_curve,
        lr_trace,
        train_accuracy_pct: accuracy(head, train, &mut eval_ws, cfg.threads)?,
        val_accuracy_pct: accuracy(head, val, &mut eval_ws, cfg.threads)?,
        first_batch_dead_fraction: dead_fraction,
    })
}

/// Runs `f(batch_outputs, batch_labels)` over `set` in evaluation batches
/// using variant 0.
fn for_eval_batches(
    head: &Head,
    set: &FeatureSet,
    ws: &mut Workspace,
    threads: usize,
    mut f: impl FnMut(&DenseMatrix, &[usize]),
) -> Result<()> {
    let ids: Vec<usize> = (0..set.n_images).collect();
    for chunk in ids.chunks(EVAL_BATCH) {
        set.gather_into(chunk, 0, ws.input_mut());
        head.forward_ws(ws, threads)?;
        f(ws.outputs(), &set.labels[chunk[0]..chunk[0] + chunk.len()]);
    }
    Ok(())
}

fn mean_loss(head: &Head, set: &FeatureSet, ws: &mut Workspace, threads: usize) -> Result<f64> {
    let mut total = 0.0;
    for_eval_batches(head, set, ws, threads, |out, labels| total += cross_entropy_sum(out, labels))?;
    Ok(total / set.n_images as f64)
}

/// Index of the largest score; ties go to the lowest index.
pub(crate) fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn accuracy(head: &Head, set: &FeatureSet, ws: &mut Workspace, threads: usize) -> Result<f64> {
    let mut correct = 0usize;
    for_eval_batches(head, set, ws, threads, |out, labels| {
        correct += labels
            .iter()
            .enumerate()
            .filter(|&(i, &l)| argmax(out.row(i)) == l)
            .count();
    })?;
    Ok(100.0 * correct as f64 / set.n_images as f64)
}

/// Test accuracy in percent: share of images whose highest score (post-ReLU
/// for the proposed head) is the true class.
pub fn evaluate(head: &Head, test: &FeatureSet) -> Result<f64> {
    check_set(head, test, "test")?;
    accuracy(head, test, &mut Workspace::new(), 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_features, PRETRAINED_CLASSES};
    use crate::heads::{build_baseline_head, build_proposed_head};
    use crate::layers::{init_uniform, AffineParams};

    fn split_in_two(fs: &FeatureSet) -> (FeatureSet, FeatureSet) {
        let (a, b): (Vec<usize>, Vec<usize>) = (0..fs.n_images).partition(|i| i % 3 != 0);
        (fs.subset(&a).unwrap(), fs.subset(&b).unwrap())
    }

    fn heads(dim: usize, c: usize, seed: u64) -> (Head, Head) {
        let mut rng = Rng::new(seed);
        let cls = init_uniform(dim, PRETRAINED_CLASSES, &mut rng).unwrap();
        let p = build_proposed_head(cls, c, &mut rng).unwrap();
        let pen = init_uniform(dim, 64, &mut rng).unwrap();
        let b = build_baseline_head(Some(pen), dim, c, &mut rng).unwrap();
        (p, b)
    }

    #[test]
    fn separable_set_is_fit_by_both_heads() {
        // The proposed head's output ReLU can leave a class unit dead on its own
        // samples from the first step onwards; such runs plateau at (C-1)/C.
        let mut fitted = 0;
        for seed in 0..6 {
            let fs = synth_features(3, 60, 64, 10.0, seed).unwrap();
            let (train, val) = split_in_two(&fs);
            let (mut p, mut b) = heads(64, 3, seed + 100);
            let rp = train_head(&mut p, &train, &val, &TrainConfig::proposed()).unwrap();
            let rb = train_head(&mut b, &train, &val, &TrainConfig::baseline()).unwrap();
            assert!(rb.train_accuracy_pct >= 99.0, "{rb:?}");
            for r in [&rp, &rb] {
                assert!(r.epochs_run <= 25);
                assert_eq!(r.loss_curve.len(), r.epochs_run);
                assert_eq!(r.val_loss_curve.len(), r.epochs_run);
            }
            if rp.train_accuracy_pct >= 99.0 {
                fitted += 1;
                continue;
            }
            let scores = p.forward(&train.gather(0)).unwrap();
            let dead: Vec<usize> = (0..3)
                .filter(|&c| {
                    train
                        .labels
                        .iter()
                        .enumerate()
                        .filter(|&(_, &l)| l == c)
                        .all(|(i, _)| scores.get(i, c) <= 0.0)
                })
                .collect();
            assert_eq!(dead.len(), 1, "seed {seed}: {rp:?}");
            assert!((rp.train_accuracy_pct - 200.0 / 3.0).abs() < 1e-9, "{rp:?}");
        }
        assert!(fitted >= 3, "only {fitted} of 6 proposed runs fit");
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let fs = synth_features(3, 30, 16, 3.0, 4).unwrap();
        let (train, val) = split_in_two(&fs);
        let run = || {
            let (mut p, _) = heads(16, 3, 9);
            let r = train_head(&mut p, &train, &val, &TrainConfig::proposed()).unwrap();
            (r, p)
        };
        let (r1, h1) = run();
        let (r2, h2) = run();
        assert!(r1.same_outcome(&r2));
        assert_eq!(h1, h2);
    }

    #[test]
    fn lr_trace_follows_step_decay() {
        let fs = synth_features(2, 20, 8, 0.0, 4).unwrap();
        let (train, val) = split_in_two(&fs);
        let (mut p, _) = heads(8, 2, 1);
        let cfg = TrainConfig {
            early_stop: None,
            max_epochs: 14,
            ..TrainConfig::proposed()
        };
        let r = train_head(&mut p, &train, &val, &cfg).unwrap();
        assert_eq!(r.epochs_run, 14);
        for (e, lr) in r.lr_trace.iter().enumerate() {
            let want = if e < 7 { 1e-2 } else { 1e-2 * 0.1 };
            assert!((lr - want).abs() < 1e-15, "epoch {e}: {lr}");
        }
    }

    #[test]
    fn one_epoch_reduces_training_loss() {
        let fs = synth_features(3, 60, 32, 10.0, 8).unwrap();
        let (train, val) = split_in_two(&fs);
        for kind in [HeadKind::Proposed, HeadKind::Baseline] {
            let (p, b) = heads(32, 3, 3);
            let mut head = if kind == HeadKind::Proposed { p } else { b };
            let x = DenseMatrix::new(train.n_images, train.dim, train.data.clone()).unwrap();
            let before = head.clone().loss_and_grad(&x, &train.labels).unwrap();
            let cfg = TrainConfig { max_epochs: 1, ..TrainConfig::default_for(kind) };
            train_head(&mut head, &train, &val, &cfg).unwrap();
            let after = head.clone().loss_and_grad(&x, &train.labels).unwrap();
            assert!(after < before, "{kind}: {before} -> {after}");
        }
    }

    #[test]
    fn does_not_mutate_inputs() {
        let fs = synth_features(2, 20, 8, 2.0, 4).unwrap();
        let (train, val) = split_in_two(&fs);
        let (t0, v0) = (train.clone(), val.clone());
        let (mut p, _) = heads(8, 2, 1);
        train_head(&mut p, &train, &val, &TrainConfig::proposed()).unwrap();
        assert_eq!((train, val), (t0, v0));
    }

    #[test]
    fn rejects_empty_and_mismatched_sets() {
        let fs = synth_features(2, 10, 8, 2.0, 4).unwrap();
        let empty = fs.subset(&[]).unwrap();
        let (mut p, _) = heads(8, 2, 1);
        assert!(matches!(
            train_head(&mut p, &empty, &fs, &TrainConfig::proposed()),
            Err(Error::Validation(_))
        ));
        let (mut wrong, _) = heads(4, 2, 1);
        assert!(train_head(&mut wrong, &fs, &fs, &TrainConfig::proposed()).is_err());
        assert!(evaluate(&p, &empty).is_err());
    }

    #[test]
    fn divergence_reports_epoch() {
        let fs = synth_features(2, 20, 8, 50.0, 4).unwrap();
        let (train, val) = split_in_two(&fs);
        let (_, mut b) = heads(8, 2, 1);
        let mut cfg = TrainConfig::baseline();
        cfg.sgd.base_lr = 1e30;
        assert!(matches!(train_head(&mut b, &train, &val, &cfg), Err(Error::Diverged { epoch: 0 })));
    }

    fn one_hot_head(c: usize) -> Head {
        // Baseline head with identity weights: scores equal the inputs.
        let mut rng = Rng::new(0);
        let mut h = build_baseline_head(None, c, c, &mut rng).unwrap();
        h.layers_mut()[0] = AffineParams::new(DenseMatrix::identity(c), vec![0.0; c]).unwrap();
        h
    }

    #[test]
    fn evaluate_extremes() {
        let labels = vec![0, 1, 2, 1];
        let data: Vec<f32> = labels
            .iter()
            .flat_map(|&l| (0..3).map(move |j| if j == l { 1.0 } else { 0.0 }))
            .collect();
        let names: Vec<String> = (0..3).map(|c| c.to_string()).collect();
        let fs = FeatureSet::new("t", 4, 1, 3, data, labels, names).unwrap();
        assert_eq!(evaluate(&one_hot_head(3), &fs).unwrap(), 100.0);

        let flipped = FeatureSet::new(
            "f",
            2,
            1,
            2,
            vec![0.0, 1.0, 1.0, 0.0],
            vec![0, 1],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        assert_eq!(evaluate(&one_hot_head(2), &flipped).unwrap(), 0.0);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn untrained_head_is_near_chance() {
        let fs = synth_features(5, 200, 16, 0.0, 12).unwrap();
        let mut rng = Rng::new(77);
        let h = build_baseline_head(None, 16, 5, &mut rng).unwrap();
        let acc = evaluate(&h, &fs).unwrap();
        assert!((14.0..=26.0).contains(&acc), "{acc}");
    }
}

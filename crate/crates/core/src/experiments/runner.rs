use super::config::ExperimentConfig;
use super::cv::cross_validate;
use super::report::{ExperimentReport, ReportRow};
use crate::data::{
    compose_experiment, make_splits, names, ExperimentKind, FeatureSet, FeatureStore, Manifest, Split, SplitSpec,
};
use crate::error::{Error, Result};
use crate::heads::{build_baseline_head, build_proposed_head, evaluate, train_head, Head, HeadKind, TrainResult};
use crate::layers::{AffineParams, Rng};
use crate::similarity::similarity_report;

/// Everything an experiment reads from an export: the two feature taps,
/// optional logits, and the pretrained layers.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub manifest: Manifest,
    /// Input of the baseline head (fc6 output for VGG19, pooled features for ResNet18).
    pub baseline_in: FeatureSet,
    /// Input of the proposed head (input of the pretrained classification layer).
    pub cls_in: FeatureSet,
    pub logits: Option<FeatureSet>,
    pub fc_cls: AffineParams,
    pub fc_pen: Option<AffineParams>,
}

impl ExperimentData {
    pub fn from_store(store: &FeatureStore) -> Result<Self> {
        let cls_in = store.feature_set(names::CLS_IN)?;
        let baseline_in = match store.container.get(names::BASELINE_IN) {
            Some(_) => store.feature_set(names::BASELINE_IN)?,
            None => cls_in.clone(),
        };
        let logits = match store.container.get(names::LOGITS) {
            Some(_) => Some(store.feature_set(names::LOGITS)?),
            None => None,
        };
        let fc_cls = store
            .pretrained_classifier()?
            .ok_or_else(|| Error::Validation("feature file has no fc_cls weights".into()))?;
        let data = Self {
            manifest: store.manifest.clone(),
            baseline_in,
            cls_in,
            logits,
            fc_cls,
            fc_pen: store.pretrained_penultimate()?,
        };
        data.validate()?;
        Ok(data)
    }

    fn validate(&self) -> Result<()> {
        for other in [Some(&self.baseline_in), self.logits.as_ref()].into_iter().flatten() {
            if other.labels != self.cls_in.labels {
                return Err(Error::Validation(format!(
                    "tensor {} is not aligned with {}",
                    other.name, self.cls_in.name
                )));
            }
        }
        Ok(())
    }
}

struct Cell<'a> {
    kind: &'a ExperimentKind,
    classes: Vec<String>,
    f: f64,
}

#[derive(Default)]
struct Runs {
    results: Vec<TrainResult>,
}

impl Runs {
    fn mean(&self, get: impl Fn(&TrainResult) -> f64) -> Option<f64> {
        (!self.results.is_empty()).then(|| self.results.iter().map(&get).sum::<f64>() / self.results.len() as f64)
    }

    /// Sample standard deviation; zero for a single run.
    fn sd(&self, get: impl Fn(&TrainResult) -> f64) -> Option<f64> {
        let m = self.mean(&get)?;
        let n = self.results.len();
        if n < 2 {
            return Some(0.0);
        }
        let ss: f64 = self.results.iter().map(|r| (get(r) - m).powi(2)).sum();
        Some((ss / (n - 1) as f64).sqrt())
    }
}

fn ta(r: &TrainResult) -> f64 {
    r.test_accuracy_pct.unwrap_or(f64::NAN)
}

/// Trains every head of every grid cell and averages repeats.
///
/// Grid cells are `kind × f`; each repeat re-splits with `split.seed + r`
/// and re-initialises with `seed + r`.
pub fn run_experiment(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut notes = Vec::new();
    if data.fc_pen.is_none() && cfg.approach.heads().contains(&HeadKind::Baseline) {
        notes.push(format!(
            "{}: no wide pretrained FC layer, baseline trains only the replaced classifier",
            cfg.backbone.name()
        ));
    }
    let similarity = match &data.logits {
        Some(l) => Some(similarity_report(l, &data.manifest)?),
        None => None,
    };

    let mut cells = Vec::new();
    for kind in &cfg.kind {
        let selection = compose_experiment(kind, &data.manifest, cfg.seed)?;
        class_image_ids(data, &selection.classes)?;
        for &f in &cfg.split.f {
            SplitSpec::new(f, cfg.split.j, cfg.split.seed).counts()?;
            cells.push(Cell {
                kind,
                classes: selection.classes.clone(),
                f,
            });
        }
    }

    let run_cell = |cell: &Cell| -> Result<ReportRow> {
        let mut row = run_cell(cfg, data, cell)?;
        row.similarity_pct = similarity.as_ref().and_then(|s| s.mean_of(&cell.classes));
        Ok(row)
    };
    let rows = if cfg.parallel_cells {
        std::thread::scope(|s| {
            let handles: Vec<_> = cells.iter().map(|c| s.spawn(|| run_cell(c))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("experiment cell panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        cells.iter().map(run_cell).collect::<Result<Vec<_>>>()?
    };

    Ok(ExperimentReport {
        rows,
        seed: cfg.seed,
        threads: cfg.threads,
        notes,
    })
}

/// A fresh head of `kind` over the pretrained layers in `data`.
pub fn build_head(kind: HeadKind, data: &ExperimentData, n_classes: usize, rng: &mut Rng) -> Result<Head> {
    match kind {
        HeadKind::Proposed => build_proposed_head(data.fc_cls.clone(), n_classes, rng),
        HeadKind::Baseline => build_baseline_head(data.fc_pen.clone(), data.baseline_in.dim, n_classes, rng),
    }
}

/// Image ids of each selected class, in selection order.
pub fn class_image_ids(data: &ExperimentData, classes: &[String]) -> Result<Vec<(String, Vec<usize>)>> {
    let members = data.cls_in.class_members();
    let mut out = Vec::with_capacity(classes.len());
    let mut missing = Vec::new();
    for c in classes {
        match data.cls_in.class_index(c).map(|i| &members[i]) {
            Some(ids) if !ids.is_empty() => out.push((c.clone(), ids.clone())),
            _ => missing.push(c.clone()),
        }
    }
    if missing.is_empty() {
        Ok(out)
    } else {
        Err(Error::MissingClasses(missing))
    }
}

/// Train, validation and test sets of one split as seen by a head of `kind`,
/// relabelled to `0..classes.len()`. Validation and test keep only the
/// evaluation view.
pub fn head_sets(
    data: &ExperimentData,
    kind: HeadKind,
    classes: &[String],
    split: &Split,
) -> Result<(FeatureSet, FeatureSet, FeatureSet)> {
    let source = match kind {
        HeadKind::Proposed => &data.cls_in,
        HeadKind::Baseline => &data.baseline_in,
    };
    Ok((
        source.select_classes(&split.train_ids(), classes, false)?,
        source.select_classes(&split.val_ids(), classes, true)?,
        source.select_classes(&split.test_ids(), classes, true)?,
    ))
}

fn run_cell(cfg: &ExperimentConfig, data: &ExperimentData, cell: &Cell) -> Result<ReportRow> {
    let class_ids = class_image_ids(data, &cell.classes)?;
    let n_classes = cell.classes.len();
    let heads = cfg.approach.heads();
    let mut runs: Vec<Runs> = heads.iter().map(|_| Runs::default()).collect();
    let mut params = vec![0usize; heads.len()];
    let mut train_per_class = 0;

    for r in 0..cfg.repeats as u64 {
        let spec = SplitSpec::new(cell.f, cfg.split.j, cfg.split.seed.wrapping_add(r));
        train_per_class = spec.counts()?.0;
        let split = make_splits(&spec, &class_ids)?;
        let seed = cfg.seed.wrapping_add(r);

        for (h, &kind) in heads.iter().enumerate() {
            let (train, val, test) = head_sets(data, kind, &cell.classes, &split)?;
            let init_stream = match kind {
                HeadKind::Proposed => 1,
                HeadKind::Baseline => 2,
            };
            let make = || build_head(kind, data, n_classes, &mut Rng::new(seed).derive(init_stream));

            let mut train_cfg = cfg.train_config(kind, seed);
            if !cfg.candidates.is_empty() && cfg.folds > 1 {
                let candidates: Vec<_> = cfg
                    .candidates
                    .iter()
                    .map(|o| {
                        let mut c = o.apply(train_cfg.clone());
                        c.seed = seed;
                        c
                    })
                    .collect();
                let source = match kind {
                    HeadKind::Proposed => &data.cls_in,
                    HeadKind::Baseline => &data.baseline_in,
                };
                let pool_ids: Vec<usize> = split.train_ids().into_iter().chain(split.val_ids()).collect();
                let pool = source.select_classes(&pool_ids, &cell.classes, false)?;
                train_cfg = cross_validate(&pool, cfg.folds, &candidates, make)?.chosen;
            }

            let mut head = make()?;
            let mut result = train_head(&mut head, &train, &val, &train_cfg)?;
            result.test_accuracy_pct = Some(evaluate(&head, &test)?);
            params[h] = result.param_count;
            runs[h].results.push(result);
        }
    }

    let pick = |kind: HeadKind| heads.iter().position(|&k| k == kind);
    let (b, p) = (pick(HeadKind::Baseline), pick(HeadKind::Proposed));
    let stat = |i: Option<usize>, f: &dyn Fn(&Runs) -> Option<f64>| i.and_then(|i| f(&runs[i]));
    let mut row = ReportRow {
        label: cell.kind.to_string(),
        mixed: matches!(cell.kind, ExperimentKind::BType { .. }),
        backbone: cfg.backbone.name().into(),
        n_classes,
        f: cell.f,
        train_per_class,
        ta_baseline: stat(b, &|r| r.mean(ta)),
        ta_proposed: stat(p, &|r| r.mean(ta)),
        ta_baseline_sd: stat(b, &|r| r.sd(ta)),
        ta_proposed_sd: stat(p, &|r| r.sd(ta)),
        gain_pp: None,
        gain_rel_pct: None,
        tt_baseline_s: stat(b, &|r| r.mean(|x| x.train_time_s)),
        tt_proposed_s: stat(p, &|r| r.mean(|x| x.train_time_s)),
        tt_reduction_pct: None,
        tt_speedup: None,
        epochs_baseline: stat(b, &|r| r.mean(|x| x.epochs_run as f64)),
        epochs_proposed: stat(p, &|r| r.mean(|x| x.epochs_run as f64)),
        params_baseline: b.map(|i| params[i]),
        params_proposed: p.map(|i| params[i]),
        similarity_pct: None,
        repeats: cfg.repeats,
        threads: cfg.threads,
    };
    row.derive_comparisons();
    Ok(row)
}

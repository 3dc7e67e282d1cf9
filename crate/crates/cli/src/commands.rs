use std::fmt::Write as _;
use std::path::Path;

use log::info;
use serde::Serialize;
use tlhead_core::data::{
    compose_experiment, make_splits, names, synth_store, ExperimentClasses, Split, SplitSpec, SynthSpec,
};
use tlhead_core::experiments::{
    build_head, class_image_ids, emit_tables, head_sets, run_experiment, ExperimentConfig, ExperimentData,
    ExperimentReport, TableFormat, TrainOverrides,
};
use tlhead_core::similarity::similarity_report;
use tlhead_core::{evaluate, train_head, Error, FeatureStore, Head, HeadKind, Rng, TrainConfig};

use crate::{Cli, Command, DataArgs, SplitArgs, TrainArgs};

type Result<T> = std::result::Result<T, Error>;

pub fn run(cli: Cli) -> Result<String> {
    let seed = cli.seed.unwrap_or(0);
    let threads = cli.threads.unwrap_or(1);
    if threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    let format = cli.format;
    match cli.command {
        Command::Synth {
            out,
            backbone,
            per_class,
            separation,
            dim,
        } => {
            let mut spec = SynthSpec::paper_layout(backbone, per_class, separation, seed);
            spec.dim = dim;
            let store = synth_store(&spec)?;
            store.save(&out)?;
            let n = store.manifest.class_names().len();
            Ok(format!(
                "wrote {} ({n} classes, {} images)\n",
                out.display(),
                store.manifest.image_ids.len()
            ))
        }
        Command::Split { data, split, out } => {
            let (exp, classes) = load(&data, seed)?;
            let split = split_of(&exp, &classes, &split, seed)?;
            if let Some(path) = out {
                write_json(&path, &split)?;
            }
            render_split(&split, format)
        }
        Command::Train {
            data,
            split,
            head,
            overrides,
            out,
        } => {
            let (exp, classes) = load(&data, seed)?;
            let split = split_of(&exp, &classes, &split, seed)?;
            let cfg = train_config(head, &overrides, seed, threads);
            cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
            let (train, val, test) = head_sets(&exp, head, &classes.classes, &split)?;
            let stream = match head {
                HeadKind::Proposed => 1,
                HeadKind::Baseline => 2,
            };
            let mut model = build_head(head, &exp, classes.classes.len(), &mut Rng::new(seed).derive(stream))?;
            info!("training {head} head on {} images", train.n_images);
            let mut result = train_head(&mut model, &train, &val, &cfg)?;
            result.test_accuracy_pct = Some(evaluate(&model, &test)?);
            if let Some(path) = out {
                model.save(&path)?;
            }
            match format {
                TableFormat::Json => json(&result),
                TableFormat::Csv => {
                    let mut s = String::from("epoch,lr,train_loss,val_loss\n");
                    for (e, ((lr, l), v)) in result
                        .lr_trace
                        .iter()
                        .zip(&result.loss_curve)
                        .zip(&result.val_loss_curve)
                        .enumerate()
                    {
                        writeln!(s, "{e},{lr},{l},{v}").unwrap();
                    }
                    Ok(s)
                }
                TableFormat::Text => {
                    let mut s = String::new();
                    writeln!(s, "head            {}", result.kind).unwrap();
                    writeln!(s, "classes         {}", classes.classes.join(", ")).unwrap();
                    writeln!(s, "parameters      {}", result.param_count).unwrap();
                    writeln!(
                        s,
                        "epochs          {} (best {}{})",
                        result.epochs_run,
                        result.best_epoch,
                        if result.stopped_early { ", stopped early" } else { "" }
                    )
                    .unwrap();
                    writeln!(s, "train time      {:.3} s", result.train_time_s).unwrap();
                    writeln!(s, "train accuracy  {:.2} %", result.train_accuracy_pct).unwrap();
                    writeln!(s, "val accuracy    {:.2} %", result.val_accuracy_pct).unwrap();
                    writeln!(s, "test accuracy   {:.2} %", result.test_accuracy_pct.unwrap_or(f64::NAN)).unwrap();
                    Ok(s)
                }
            }
        }
        Command::Eval { data, model, split } => {
            let (exp, classes) = load(&data, seed)?;
            let head = Head::load(&model)?;
            if head.n_classes() != classes.classes.len() {
                return Err(Error::Config(format!(
                    "model has {} outputs but {} classes are selected",
                    head.n_classes(),
                    classes.classes.len()
                )));
            }
            let split = match split {
                Some(path) => {
                    let bytes = std::fs::read(path)?;
                    let split: Split = serde_json::from_slice(&bytes).map_err(|e| Error::Config(e.to_string()))?;
                    if split.class_names() != classes.classes {
                        return Err(Error::Config("split classes differ from the selected classes".into()));
                    }
                    split
                }
                None => everything_as_test(&exp, &classes)?,
            };
            let (_, _, test) = head_sets(&exp, head.kind(), &classes.classes, &split)?;
            let acc = evaluate(&head, &test)?;
            match format {
                TableFormat::Json => json(&serde_json::json!({
                    "kind": head.kind(),
                    "images": test.n_images,
                    "test_accuracy_pct": acc,
                })),
                TableFormat::Csv => Ok(format!("kind,images,test_accuracy_pct\n{},{},{acc}\n", head.kind(), test.n_images)),
                TableFormat::Text => Ok(format!("{} head: {acc:.2} % on {} images\n", head.kind(), test.n_images)),
            }
        }
        Command::Similarity { features } => {
            let store = FeatureStore::load(&features)?;
            let logits = store.feature_set(names::LOGITS)?;
            let report = similarity_report(&logits, &store.manifest)?;
            match format {
                TableFormat::Json => json(&report),
                TableFormat::Csv => {
                    let mut s = String::from("class,species,similarity_pct,nearest_pretrained_class\n");
                    for c in &report.classes {
                        let sp = store.manifest.species_of(&c.class).unwrap_or("");
                        writeln!(s, "{},{sp},{},{}", c.class, c.similarity_pct, c.nearest_pretrained_class).unwrap();
                    }
                    Ok(s)
                }
                TableFormat::Text => {
                    let mut s = format!("{}\n\n{:<20} {:<10} {:>8} {:>8}\n", report.measure, "class", "species", "sim %", "nearest");
                    for c in &report.classes {
                        let sp = store.manifest.species_of(&c.class).unwrap_or("-");
                        writeln!(
                            s,
                            "{:<20} {:<10} {:>8.2} {:>8}",
                            c.class, sp, c.similarity_pct, c.nearest_pretrained_class
                        )
                        .unwrap();
                    }
                    s.push('\n');
                    for (sp, v) in &report.species {
                        writeln!(s, "{sp:<31} {v:>8.2}").unwrap();
                    }
                    Ok(s)
                }
            }
        }
        Command::Experiment { config, features, out } => {
            let mut cfg = ExperimentConfig::read(&config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
                cfg.split.seed = s;
            }
            if let Some(t) = cli.threads {
                cfg.threads = t;
            }
            let store = FeatureStore::load(&features)?;
            let data = ExperimentData::from_store(&store)?;
            let report = run_experiment(&cfg, &data)?;
            if let Some(path) = out {
                report.write(&path)?;
            }
            emit_tables(&report, format)
        }
        Command::Report { input } => emit_tables(&ExperimentReport::read(&input)?, format),
    }
}

fn load(args: &DataArgs, seed: u64) -> Result<(ExperimentData, ExperimentClasses)> {
    let kind = args.kind()?;
    let store = FeatureStore::load(&args.features)?;
    let data = ExperimentData::from_store(&store)?;
    let classes = compose_experiment(&kind, &data.manifest, seed)?;
    Ok((data, classes))
}

fn split_of(data: &ExperimentData, classes: &ExperimentClasses, args: &SplitArgs, seed: u64) -> Result<Split> {
    let spec = SplitSpec::new(args.f, args.j, seed);
    spec.counts().map_err(|e| Error::Config(e.to_string()))?;
    make_splits(&spec, &class_image_ids(data, &classes.classes)?)
}

fn everything_as_test(data: &ExperimentData, classes: &ExperimentClasses) -> Result<Split> {
    let ids = class_image_ids(data, &classes.classes)?;
    Ok(Split {
        classes: ids
            .into_iter()
            .map(|(class, test)| tlhead_core::data::ClassSplit {
                class,
                train: Vec::new(),
                val: Vec::new(),
                test,
            })
            .collect(),
    })
}

fn train_config(kind: HeadKind, args: &TrainArgs, seed: u64, threads: usize) -> TrainConfig {
    let overrides = TrainOverrides {
        base_lr: args.lr,
        momentum: args.momentum,
        max_epochs: args.epochs,
        batch_size: args.batch_size,
        early_stop: args.no_early_stop.then_some(false),
        patience: args.patience,
        ..TrainOverrides::default()
    };
    let mut cfg = overrides.apply(TrainConfig::default_for(kind));
    cfg.seed = seed;
    cfg.threads = threads;
    cfg
}

fn render_split(split: &Split, format: TableFormat) -> Result<String> {
    match format {
        TableFormat::Json => json(split),
        TableFormat::Csv => {
            let mut s = String::from("class,train,val,test\n");
            for c in &split.classes {
                writeln!(s, "{},{},{},{}", c.class, c.train.len(), c.val.len(), c.test.len()).unwrap();
            }
            Ok(s)
        }
        TableFormat::Text => {
            let mut s = format!("{:<20} {:>6} {:>6} {:>6}\n", "class", "train", "val", "test");
            for c in &split.classes {
                writeln!(s, "{:<20} {:>6} {:>6} {:>6}", c.class, c.train.len(), c.val.len(), c.test.len()).unwrap();
            }
            Ok(s)
        }
    }
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Validation(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, json(value)?)?;
    Ok(())
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use hagxai::attention::{read_attention_maps, AttentionMap};
use hagxai::hag::{cross_validate, CrossValidation, Evaluation, HagOptions, HagParams, ObjectNorm, TrainConfig, TrainSample};
use hagxai::Task;
use rayon::prelude::*;
use serde::Serialize;

use super::{load_bundles, required};
use crate::{parse_task, write_file, write_json, Context, Failure};

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub bundles: Option<PathBuf>,
    /// Attention map directory written by `attention`.
    #[arg(long)]
    pub attention: Option<PathBuf>,
    #[arg(long, value_parser = parse_task)]
    pub task: Option<Task>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub folds: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Held-out bundles scored by every fold's parameters.
    #[arg(long)]
    pub test_bundles: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct FoldSummary {
    fold: usize,
    train_images: usize,
    validation_images: usize,
    epochs_run: usize,
    best_epoch: Option<usize>,
    stopped_early: bool,
    initial_validation_loss: Option<f64>,
    validation: Evaluation,
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<Evaluation>,
    constant_saliency_images: Vec<String>,
}

#[derive(Debug, Serialize)]
struct Summary {
    task: Task,
    folds: usize,
    seed: u64,
    images: usize,
    selected_fold: usize,
    mean_validation: Evaluation,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_test: Option<Evaluation>,
    per_fold: Vec<FoldSummary>,
}

fn samples(
    bundles_dir: &Path,
    maps: &BTreeMap<String, AttentionMap>,
    task: Task,
    options: HagOptions,
) -> Result<Vec<TrainSample>, Failure> {
    let bundles = load_bundles(bundles_dir)?;
    let missing: Vec<&str> = bundles
        .iter()
        .filter(|(_, _, b)| !maps.contains_key(&b.image_id))
        .map(|(_, _, b)| b.image_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Failure::Data(anyhow::anyhow!(
            "no attention map for: {}",
            missing.join(", ")
        )));
    }
    bundles
        .par_iter()
        .map(|(_, _, b)| TrainSample::new(b, &maps[&b.image_id], task, options))
        .collect::<Result<_, _>>()
        .map_err(Failure::data)
}

fn train_config(ctx: &Context, task: Task, folds: usize, max_epochs: Option<usize>) -> TrainConfig {
    let t = &ctx.config.train;
    let mut c = TrainConfig::for_task(task);
    c.folds = folds;
    c.seed = ctx.seed;
    c.batch_size = t.batch_size.unwrap_or(c.batch_size);
    c.max_epochs = max_epochs.or(t.max_epochs).unwrap_or(c.max_epochs);
    c.lr_init = t.lr_init.unwrap_or(c.lr_init);
    c.lr_final = t.lr_final.unwrap_or(c.lr_final);
    c.lr_decay_epochs = t.lr_decay_epochs.unwrap_or(c.lr_decay_epochs);
    if let Some(p) = t.early_stop_patience {
        c.early_stop_patience = (p > 0).then_some(p);
    }
    c.options.smoothing = t.smoothing.unwrap_or(true);
    c.options.learn_activations = t.learn_activations.unwrap_or(true);
    if t.area_norm == Some(false) {
        c.options.normalization = ObjectNorm::None;
    }
    c
}

pub fn run(ctx: &mut Context, args: TrainArgs) -> Result<(), Failure> {
    let cfg = &ctx.config;
    let bundles_dir = required(args.bundles, &cfg.paths.bundles, "bundles")?;
    let attention_dir = required(args.attention, &cfg.paths.attention, "attention")?;
    let task = ctx.task(args.task);
    let folds = args.folds.map(|f| f as usize).or(cfg.train.folds).unwrap_or(5);
    if folds < 2 {
        return Err(Failure::Usage(format!("--folds must be at least 2, got {folds}")));
    }
    let config = train_config(ctx, task, folds, args.max_epochs);
    if config.batch_size == 0 {
        return Err(Failure::Usage("batch_size must be at least 1".into()));
    }

    let maps: BTreeMap<String, AttentionMap> = read_attention_maps(&attention_dir)
        .map_err(Failure::data)?
        .into_iter()
        .map(|m| (m.image_id.clone(), m))
        .collect();
    let dataset = samples(&bundles_dir, &maps, task, config.options)?;
    let test = match &args.test_bundles {
        Some(dir) => Some(samples(dir, &maps, task, config.options)?),
        None => None,
    };
    let cv = cross_validate(&dataset, &config, test.as_deref()).map_err(Failure::data)?;
    write_outputs(ctx, task, &config, dataset.len(), &cv)?;

    let c = &mut ctx.config;
    c.task = Some(task);
    c.paths.bundles = Some(bundles_dir);
    c.paths.attention = Some(attention_dir);
    c.train.folds = Some(folds);
    c.train.batch_size = Some(config.batch_size);
    c.train.max_epochs = Some(config.max_epochs);
    c.train.lr_init = Some(config.lr_init);
    c.train.lr_final = Some(config.lr_final);
    c.train.lr_decay_epochs = Some(config.lr_decay_epochs);
    c.train.early_stop_patience = Some(config.early_stop_patience.unwrap_or(0));
    c.train.smoothing = Some(config.options.smoothing);
    c.train.learn_activations = Some(config.options.learn_activations);
    c.train.area_norm = Some(config.options.normalization == ObjectNorm::Area);
    ctx.finish()
}

fn write_outputs(
    ctx: &Context,
    task: Task,
    config: &TrainConfig,
    images: usize,
    cv: &CrossValidation,
) -> Result<(), Failure> {
    let init = HagParams::initial(task);
    let mut selected = 0;
    for f in &cv.folds {
        let params = init.with_vector(f.params).to_file(task, Some(config.seed));
        write_json(&ctx.out.join(format!("params_fold{}.json", f.fold)), &params)?;
        write_file(
            &ctx.out.join(format!("loss_fold{}.csv", f.fold)),
            f.record.to_csv().as_bytes(),
        )?;
        if f.validation.loss < cv.folds[selected].validation.loss {
            selected = f.fold;
        }
    }
    let best = init
        .with_vector(cv.folds[selected].params)
        .to_file(task, Some(config.seed));
    write_json(&ctx.out.join("params.json"), &best)?;
    let summary = Summary {
        task,
        folds: config.folds,
        seed: config.seed,
        images,
        selected_fold: selected,
        mean_validation: cv.mean_validation.clone(),
        mean_test: cv.mean_test.clone(),
        per_fold: cv
            .folds
            .iter()
            .map(|f| FoldSummary {
                fold: f.fold,
                train_images: f.train_indices.len(),
                validation_images: f.validation_indices.len(),
                epochs_run: f.record.epochs.len(),
                best_epoch: f.record.best_epoch,
                stopped_early: f.record.stopped_early,
                initial_validation_loss: f.record.initial_val_loss,
                validation: f.validation.clone(),
                test: f.test.clone(),
                constant_saliency_images: f.record.flagged_samples.clone(),
            })
            .collect(),
    };
    write_json(&ctx.out.join("summary.json"), &summary)
}

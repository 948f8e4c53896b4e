use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use hagxai::attention::read_attention_maps;
use hagxai::bridge::client::{ScoreContext, ScoreReference, ScorerClient, ScorerConfig};
use hagxai::bridge::npy::read_map;
use hagxai::metrics::{
    auc, curves_csv, curves_svg, load_condition_labels, pcc, perturbation_curve, results_csv,
    rmse, stratified_eval, summarize, welch_t_test, Curve, CurveError, Direction, ImageResult,
    MethodSummary, PerturbationConfig, TTest,
};
use hagxai::{ExplanationBundle, Map2D, Method, Task};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::load_bundles;
use crate::{parse_method, parse_task, write_file, write_json, Context, Failure};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Saliency directory from `explain`; repeat to compare methods.
    #[arg(long)]
    pub saliency: Vec<PathBuf>,
    /// Method of maps that carry no metadata (single directory only).
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    #[arg(long)]
    pub attention: Option<PathBuf>,
    /// Model host base URL; enables deletion and insertion curves.
    #[arg(long)]
    pub scorer: Option<String>,
    /// PNG images named `<image_id>.png`, needed with --scorer.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Bundle archives giving boxes and score references, needed with --scorer.
    #[arg(long)]
    pub bundles: Option<PathBuf>,
    /// CSV image_id,occlusion,degradation for the condition table.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, value_parser = parse_task)]
    pub task: Option<Task>,
}

#[derive(Deserialize)]
struct MethodTag {
    method: Method,
}

struct Saliency {
    image_id: String,
    method: Method,
    map: Map2D,
}

fn read_saliency_dir(dir: &Path, fallback: Option<Method>) -> Result<Vec<Saliency>, Failure> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Failure::Data(anyhow::anyhow!("cannot read {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "npy"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::Data(anyhow::anyhow!("no .npy maps in {}", dir.display())));
    }
    paths
        .into_iter()
        .map(|path| {
            let image_id = path.file_stem().unwrap().to_string_lossy().into_owned();
            let meta = path.with_extension("json");
            let method = match std::fs::read_to_string(&meta) {
                Ok(text) => serde_json::from_str::<MethodTag>(&text)
                    .map_err(|e| Failure::Data(anyhow::anyhow!("{}: {e}", meta.display())))?
                    .method,
                Err(_) => fallback.ok_or_else(|| {
                    Failure::Usage(format!(
                        "{} has no metadata; pass --method",
                        path.display()
                    ))
                })?,
            };
            let map = read_map(&path).map_err(Failure::data)?;
            Ok(Saliency {
                image_id,
                method,
                map,
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct Comparison {
    measure: &'static str,
    a: Method,
    b: Method,
    test: TTest,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    summary: Vec<MethodSummary>,
    comparisons: Vec<Comparison>,
    images: &'a [ImageResult],
}

fn comparisons(results: &[ImageResult]) -> Vec<Comparison> {
    let methods: Vec<Method> = summarize(results).iter().map(|s| s.method).collect();
    let measures: [(&'static str, fn(&ImageResult) -> Option<f64>); 4] = [
        ("pcc", |r| r.pcc),
        ("rmse", |r| r.rmse),
        ("d_auc", |r| r.d_auc),
        ("i_auc", |r| r.i_auc),
    ];
    let mut out = Vec::new();
    for (i, &a) in methods.iter().enumerate() {
        for &b in &methods[i + 1..] {
            for (name, get) in measures {
                let values = |m: Method| -> Vec<f64> {
                    results.iter().filter(|r| r.method == m).filter_map(get).collect()
                };
                if let Ok(test) = welch_t_test(&values(a), &values(b)) {
                    out.push(Comparison {
                        measure: name,
                        a,
                        b,
                        test,
                    });
                }
            }
        }
    }
    out
}

struct Faithfulness {
    client: ScorerClient,
    images: PathBuf,
    bundles: BTreeMap<String, ExplanationBundle>,
    perturbation: PerturbationConfig,
    task: Task,
    seed: u64,
    threshold: Option<f64>,
}

enum CurveFailure {
    Data(anyhow::Error),
    Remote(anyhow::Error, Vec<Curve>),
}

impl Faithfulness {
    fn curves(&self, s: &Saliency) -> Result<(Curve, Curve), CurveFailure> {
        let data = |e: anyhow::Error| CurveFailure::Data(e);
        let bundle = self
            .bundles
            .get(&s.image_id)
            .ok_or_else(|| data(anyhow::anyhow!("no bundle for image {}", s.image_id)))?;
        let path = self.images.join(format!("{}.png", s.image_id));
        let image = image::open(&path)
            .map_err(|e| data(anyhow::anyhow!("cannot read {}: {e}", path.display())))?
            .to_rgb8();
        let boxes: Vec<_> = bundle.objects.iter().map(|o| o.bbox).collect();
        let scorer = self.client.bind(ScoreContext {
            task: self.task,
            reference: ScoreReference::from_bundle(bundle, self.task),
            seed: self.seed,
            threshold: self.threshold,
        });
        let mut done = Vec::new();
        for direction in [Direction::Deletion, Direction::Insertion] {
            match perturbation_curve(&image, &s.map, &boxes, &scorer, &self.perturbation, direction) {
                Ok(c) => done.push(c),
                Err(CurveError::Aborted { partial, source }) => {
                    done.push(partial);
                    return Err(CurveFailure::Remote(
                        anyhow::anyhow!("image {}: {source}", s.image_id),
                        done,
                    ));
                }
                Err(e @ CurveError::ScoreCount { .. }) => {
                    return Err(CurveFailure::Remote(anyhow::anyhow!("image {}: {e}", s.image_id), done))
                }
                Err(e) => return Err(data(anyhow::anyhow!("image {}: {e}", s.image_id))),
            }
        }
        let insertion = done.pop().unwrap();
        let deletion = done.pop().unwrap();
        Ok((deletion, insertion))
    }
}

fn curve_label(s: &Saliency) -> String {
    format!("{}:{}", s.method, s.image_id)
}

pub fn run(ctx: &mut Context, args: EvalArgs) -> Result<(), Failure> {
    let cfg = ctx.config.clone();
    let saliency_dirs = if !args.saliency.is_empty() {
        args.saliency
    } else {
        cfg.paths
            .saliency
            .clone()
            .ok_or_else(|| Failure::Usage("--saliency is required".into()))?
    };
    if args.method.is_some() && saliency_dirs.len() > 1 {
        return Err(Failure::Usage("--method applies to a single --saliency directory".into()));
    }
    let attention_dir = args.attention.or(cfg.paths.attention.clone());
    let endpoint = args.scorer.or(cfg.scorer.endpoint.clone());
    let labels_path = args.labels.or(cfg.paths.labels.clone());
    let task = ctx.task(args.task);
    if attention_dir.is_none() && endpoint.is_none() {
        return Err(Failure::Usage("nothing to evaluate: pass --attention and/or --scorer".into()));
    }

    let mut saliency = Vec::new();
    for dir in &saliency_dirs {
        saliency.extend(read_saliency_dir(dir, args.method)?);
    }

    let attention: BTreeMap<String, Map2D> = match &attention_dir {
        Some(dir) => read_attention_maps(dir)
            .map_err(Failure::data)?
            .into_iter()
            .map(|m| (m.image_id, m.map))
            .collect(),
        None => BTreeMap::new(),
    };

    let perturbation = cfg.perturbation.unwrap_or(PerturbationConfig {
        seed: ctx.seed,
        ..PerturbationConfig::default()
    });
    let faith = match &endpoint {
        Some(url) => {
            let images = args
                .images
                .or(cfg.paths.images.clone())
                .ok_or_else(|| Failure::Usage("--scorer needs --images".into()))?;
            let bundles_dir = args
                .bundles
                .or(cfg.paths.bundles.clone())
                .ok_or_else(|| Failure::Usage("--scorer needs --bundles".into()))?;
            let bundles = load_bundles(&bundles_dir)?
                .into_iter()
                .map(|(_, _, b)| (b.image_id.clone(), b))
                .collect();
            let mut sc = ScorerConfig::new(url);
            sc.model_id = cfg.scorer.model_id.clone();
            sc.timeout_ms = cfg.scorer.timeout_ms.unwrap_or(sc.timeout_ms);
            sc.max_batch = cfg.scorer.max_batch.unwrap_or(sc.max_batch);
            sc.retries = cfg.scorer.retries.unwrap_or(sc.retries);
            ctx.config.paths.images = Some(images.clone());
            ctx.config.paths.bundles = Some(bundles_dir);
            ctx.config.scorer.timeout_ms = Some(sc.timeout_ms);
            ctx.config.scorer.max_batch = Some(sc.max_batch);
            ctx.config.scorer.retries = Some(sc.retries);
            Some(Faithfulness {
                client: ScorerClient::new(sc),
                images,
                bundles,
                perturbation,
                task,
                seed: ctx.seed,
                threshold: cfg.scorer.threshold,
            })
        }
        None => None,
    };

    let outcomes: Vec<(ImageResult, Option<Result<(Curve, Curve), CurveFailure>>)> = saliency
        .par_iter()
        .map(|s| {
            let (mut pcc_v, mut rmse_v) = (None, None);
            match attention.get(&s.image_id) {
                Some(t) if t.shape() == s.map.shape() => {
                    pcc_v = pcc(&s.map, t).ok();
                    if pcc_v.is_none() {
                        log::warn!("{} {}: PCC undefined for a constant map", s.method, s.image_id);
                    }
                    rmse_v = rmse(&s.map, t).ok();
                }
                Some(t) => log::warn!(
                    "{}: saliency {:?} and attention {:?} differ in shape",
                    s.image_id,
                    s.map.shape(),
                    t.shape()
                ),
                None if attention_dir.is_some() => {
                    log::warn!("no attention map for {}", s.image_id)
                }
                None => {}
            }
            let curves = faith.as_ref().map(|f| f.curves(s));
            let (d_auc, i_auc) = match &curves {
                Some(Ok((d, i))) => (auc(d).ok(), auc(i).ok()),
                _ => (None, None),
            };
            let result = ImageResult {
                image_id: s.image_id.clone(),
                method: s.method,
                pcc: pcc_v,
                rmse: rmse_v,
                d_auc,
                i_auc,
            };
            (result, curves)
        })
        .collect();

    let mut results = Vec::with_capacity(outcomes.len());
    let mut curves: Vec<(String, Curve)> = Vec::new();
    let mut failure = None;
    for ((result, c), s) in outcomes.into_iter().zip(&saliency) {
        results.push(result);
        match c {
            Some(Ok((d, i))) => {
                curves.push((curve_label(s), d));
                curves.push((curve_label(s), i));
            }
            Some(Err(CurveFailure::Remote(e, partial))) => {
                curves.extend(partial.into_iter().map(|c| (curve_label(s), c)));
                failure.get_or_insert(Failure::Remote(e));
            }
            Some(Err(CurveFailure::Data(e))) => {
                failure.get_or_insert(Failure::Data(e));
            }
            None => {}
        }
    }

    let out = &ctx.out;
    write_file(&out.join("metrics.csv"), results_csv(&results).as_bytes())?;
    write_json(
        &out.join("metrics.json"),
        &Report {
            summary: summarize(&results),
            comparisons: comparisons(&results),
            images: &results,
        },
    )?;
    if faith.is_some() {
        write_file(&out.join("curves.csv"), curves_csv(&curves).as_bytes())?;
        let mut by_image: BTreeMap<&str, Vec<(String, Curve)>> = BTreeMap::new();
        for (label, c) in &curves {
            let image = label.split_once(':').map_or(label.as_str(), |(_, id)| id);
            by_image.entry(image).or_default().push((label.clone(), c.clone()));
        }
        for (image, cs) in &by_image {
            write_file(
                &out.join("curves").join(format!("{image}.svg")),
                curves_svg(image, cs).as_bytes(),
            )?;
        }
    }
    if let Some(path) = &labels_path {
        let labels = load_condition_labels(path).map_err(Failure::data)?;
        let table = stratified_eval(&results, &labels).map_err(Failure::data)?;
        write_file(&out.join("conditions.csv"), table.to_csv().as_bytes())?;
        write_json(&out.join("conditions.json"), &table)?;
    }

    let c = &mut ctx.config;
    c.task = Some(task);
    c.paths.saliency = Some(saliency_dirs);
    c.paths.attention = attention_dir;
    c.paths.labels = labels_path;
    c.scorer.endpoint = endpoint;
    if faith.is_some() {
        c.perturbation = Some(perturbation);
    }
    ctx.finish()?;
    match failure {
        Some(f) => Err(f),
        None => Ok(()),
    }
}

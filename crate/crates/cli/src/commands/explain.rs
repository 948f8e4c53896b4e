use std::path::{Path, PathBuf};

use clap::Args;
use hagxai::bridge::npy::write_map;
use hagxai::cam::{explain_with, SaliencyMap};
use hagxai::hag::{hag_forward, HagOptions, HagParams, ObjectNorm, ParamsFile};
use hagxai::{Method, Task};
use rayon::prelude::*;
use serde::Serialize;

use super::{load_bundles, required};
use crate::render::{heatmap, png_bytes, COLORMAP};
use crate::{parse_method, parse_task, write_file, write_json, Context, Failure};

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// One of gc, gcpp, fgc, fgcpp, hag; repeat for several.
    #[arg(long = "method", value_parser = parse_method)]
    pub methods: Vec<Method>,
    /// Directory of bundle archives, or a single archive.
    #[arg(long)]
    pub bundles: Option<PathBuf>,
    /// Trained parameter JSON; required for hag.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, value_parser = parse_task)]
    pub task: Option<Task>,
    /// HAG without either Gaussian kernel.
    #[arg(long)]
    pub delta_kernels: bool,
    /// HAG with per-object max-min instead of area normalisation.
    #[arg(long)]
    pub maxmin_norm: bool,
}

#[derive(Debug, Serialize)]
struct ObjectMeta {
    object_id: u32,
    branch_id: u32,
    class_label: String,
    score: f64,
    bbox: [f64; 4],
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    image_id: &'a str,
    method: Method,
    task: Task,
    layer_name: &'a str,
    model_id: &'a str,
    height: usize,
    width: usize,
    objects: Vec<ObjectMeta>,
    colormap: &'static str,
    normalization: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    params: Option<ParamsFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hag_options: Option<HagOptions>,
}

const NORMALIZATION_NOTE: &str =
    "npy holds the raw object sum; png is max-min normalised to [0, 1] before colouring";

fn load_params(path: &Path) -> Result<ParamsFile, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read params {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::Data(anyhow::anyhow!("invalid params {}: {e}", path.display())))
}

pub fn run(ctx: &mut Context, args: ExplainArgs) -> Result<(), Failure> {
    let cfg = &ctx.config;
    let methods = if !args.methods.is_empty() {
        args.methods
    } else {
        cfg.methods
            .clone()
            .ok_or_else(|| Failure::Usage("--method is required".into()))?
    };
    let bundles_dir = required(args.bundles, &cfg.paths.bundles, "bundles")?;
    let delta = args.delta_kernels || cfg.explain.delta_kernels.unwrap_or(false);
    let maxmin = args.maxmin_norm || cfg.explain.maxmin_norm.unwrap_or(false);
    let params_path = args.params.or_else(|| cfg.paths.params.clone());

    let hag = if methods.contains(&Method::Hag) {
        let path = params_path
            .clone()
            .ok_or_else(|| Failure::Usage("--method hag needs --params".into()))?;
        let file = load_params(&path)?;
        Some(file)
    } else {
        None
    };
    let task = match (args.task.or(cfg.task), &hag) {
        (Some(t), Some(file)) if t != file.task => {
            return Err(Failure::Usage(format!(
                "--task {t} but the parameters were trained for {}",
                file.task
            )))
        }
        (Some(t), _) => t,
        (None, Some(file)) => file.task,
        (None, None) => Task::Detection,
    };
    let hag = match hag {
        Some(file) => {
            let params = file.to_params().map_err(Failure::data)?;
            let mut options = HagOptions::for_task(task);
            options.smoothing = !delta;
            if maxmin {
                options.normalization = ObjectNorm::MaxMin;
            }
            Some((file, params, options))
        }
        None => None,
    };

    let bundles = load_bundles(&bundles_dir)?;
    for &method in &methods {
        let maps: Vec<SaliencyMap> = bundles
            .par_iter()
            .map(|(_, _, b)| compute(method, b, task, hag.as_ref().map(|h| (&h.1, &h.2))))
            .collect::<Result<_, _>>()?;
        let dir = ctx.out.join(method.code());
        std::fs::create_dir_all(&dir)
            .map_err(|e| Failure::Data(anyhow::anyhow!("cannot create {}: {e}", dir.display())))?;
        for ((_, manifest, bundle), map) in bundles.iter().zip(&maps) {
            let file = |ext: &str| dir.join(format!("{}.{ext}", bundle.image_id));
            write_map(&file("npy"), &map.map).map_err(Failure::data)?;
            write_file(&file("png"), &png_bytes(&heatmap(&map.display_map())))?;
            let meta = Metadata {
                image_id: &bundle.image_id,
                method,
                task,
                layer_name: &manifest.layer_name,
                model_id: &manifest.model_id,
                height: bundle.image_h,
                width: bundle.image_w,
                objects: bundle
                    .objects_in_order()
                    .into_iter()
                    .map(|o| ObjectMeta {
                        object_id: o.object_id,
                        branch_id: bundle.branches[o.branch_index].branch_id,
                        class_label: o.class_label.clone(),
                        score: o.score,
                        bbox: [o.bbox.x0, o.bbox.y0, o.bbox.x1, o.bbox.y1],
                    })
                    .collect(),
                colormap: COLORMAP,
                normalization: NORMALIZATION_NOTE,
                params: (method == Method::Hag).then(|| hag.as_ref().unwrap().0.clone()),
                hag_options: (method == Method::Hag).then(|| hag.as_ref().unwrap().2),
            };
            write_json(&file("json"), &meta)?;
        }
        log::info!("{method}: wrote {} maps to {}", maps.len(), dir.display());
    }

    let c = &mut ctx.config;
    c.task = Some(task);
    c.methods = Some(methods);
    c.paths.bundles = Some(bundles_dir);
    c.paths.params = params_path;
    c.explain.delta_kernels = Some(delta);
    c.explain.maxmin_norm = Some(maxmin);
    ctx.finish()
}

fn compute(
    method: Method,
    bundle: &hagxai::ExplanationBundle,
    task: Task,
    hag: Option<(&HagParams, &HagOptions)>,
) -> Result<SaliencyMap, Failure> {
    match method {
        Method::Hag => {
            let (params, options) = hag.expect("hag parameters loaded");
            hag_forward(bundle, params, task, options).map_err(Failure::data)
        }
        m => explain_with(m, bundle).map_err(Failure::data),
    }
}

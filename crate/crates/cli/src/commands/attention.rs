use std::path::PathBuf;

use clap::Args;
use hagxai::attention::{
    build_attention_map, group_by_image, load_fixations, write_attention_maps, AttentionMap,
    FixationWeighting,
};
use hagxai::Task;
use rayon::prelude::*;

use super::required;
use crate::{parse_task, Context, Failure};

#[derive(Debug, Args)]
pub struct AttentionArgs {
    /// CSV with header image_id,participant_id,x,y,duration_ms.
    pub fixations: Option<PathBuf>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    /// Gaussian standard deviation in pixels (default: 30 for detection,
    /// 21 for classification).
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, value_parser = parse_task)]
    pub task: Option<Task>,
    /// Weight each fixation by its duration.
    #[arg(long)]
    pub weight_by_duration: bool,
}

pub fn default_sigma(task: Task) -> f64 {
    match task {
        Task::Detection => 30.0,
        Task::Classification => 21.0,
    }
}

pub fn run(ctx: &mut Context, args: AttentionArgs) -> Result<(), Failure> {
    let cfg = &ctx.config;
    let fixations = required(args.fixations, &cfg.paths.fixations, "fixations")?;
    let height = required(args.height, &cfg.attention.height, "height")?;
    let width = required(args.width, &cfg.attention.width, "width")?;
    let task = ctx.task(args.task);
    let sigma = args
        .sigma
        .or(cfg.attention.sigma)
        .unwrap_or_else(|| default_sigma(task));
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Failure::Usage(format!("--sigma must be positive, got {sigma}")));
    }
    if height == 0 || width == 0 {
        return Err(Failure::Usage("--height and --width must be positive".into()));
    }
    let by_duration = args.weight_by_duration || cfg.attention.weight_by_duration.unwrap_or(false);
    let weighting = if by_duration {
        FixationWeighting::Duration
    } else {
        FixationWeighting::Count
    };

    let records = load_fixations(&fixations).map_err(Failure::data)?;
    let groups: Vec<_> = group_by_image(records).into_iter().collect();
    let maps: Vec<AttentionMap> = groups
        .par_iter()
        .map(|(id, recs)| build_attention_map(id, recs, height, width, sigma, weighting))
        .collect::<Result<_, _>>()
        .map_err(Failure::data)?;
    write_attention_maps(&ctx.out, &maps).map_err(Failure::data)?;
    log::info!("wrote {} attention maps to {}", maps.len(), ctx.out.display());

    let c = &mut ctx.config;
    c.task = Some(task);
    c.paths.fixations = Some(fixations);
    c.attention.height = Some(height);
    c.attention.width = Some(width);
    c.attention.sigma = Some(sigma);
    c.attention.weight_by_duration = Some(by_duration);
    ctx.finish()
}

use std::path::PathBuf;

use clap::Subcommand;
use hagxai::bridge::archive::{list_bundles, read_archive};

use crate::{Context, Failure};

#[derive(Debug, Subcommand)]
pub enum BundleCommand {
    /// Check every archive under a directory; exits 2 if any is invalid.
    Validate { dir: PathBuf },
}

pub fn run(_ctx: &mut Context, command: BundleCommand) -> Result<(), Failure> {
    let BundleCommand::Validate { dir } = command;
    let dirs = list_bundles(&dir).map_err(Failure::data)?;
    if dirs.is_empty() {
        return Err(Failure::Data(anyhow::anyhow!("no bundle archives under {}", dir.display())));
    }
    let mut bad = 0;
    for d in &dirs {
        match read_archive(d) {
            Ok((b, m)) => println!(
                "ok {} image={} {}x{} branches={} objects={} layer={}",
                d.display(),
                b.image_id,
                b.image_h,
                b.image_w,
                b.branches.len(),
                b.objects.len(),
                m.layer_name
            ),
            Err(e) => {
                bad += 1;
                println!("invalid {}: {e}", d.display());
            }
        }
    }
    if bad > 0 {
        return Err(Failure::Data(anyhow::anyhow!("{bad} of {} archives invalid", dirs.len())));
    }
    Ok(())
}

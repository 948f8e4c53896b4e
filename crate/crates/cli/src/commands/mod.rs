pub mod attention;
pub mod bundle;
pub mod eval;
pub mod explain;
pub mod train;

use std::path::{Path, PathBuf};

use crate::Failure;

/// Flag value, else config value, else a usage error naming the flag.
pub fn required<T: Clone>(flag: Option<T>, config: &Option<T>, name: &str) -> Result<T, Failure> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| Failure::Usage(format!("--{name} is required")))
}

pub fn load_bundles(dir: &Path) -> Result<Vec<(PathBuf, hagxai::bridge::archive::Manifest, hagxai::ExplanationBundle)>, Failure> {
    let dirs = hagxai::bridge::archive::list_bundles(dir).map_err(Failure::data)?;
    if dirs.is_empty() {
        return Err(Failure::Data(anyhow::anyhow!(
            "no bundle archives under {}",
            dir.display()
        )));
    }
    dirs.into_iter()
        .map(|d| {
            let (bundle, manifest) = hagxai::bridge::archive::read_archive(&d).map_err(Failure::data)?;
            Ok((d, manifest, bundle))
        })
        .collect()
}

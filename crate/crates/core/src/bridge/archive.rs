//! Bundle archives: a directory holding `manifest.json`, one `act_b{i}.npy`
//! per branch and one `grad_o{object_id}.npy` per object.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::npy::{self, NpyError};
use crate::bundle::{BBox, BranchTensors, BundleError, ExplanationBundle, ObjectSlot};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: invalid manifest: {message}", path.display())]
    Manifest { path: PathBuf, message: String },
    #[error(transparent)]
    Npy(#[from] NpyError),
    #[error("{}: manifest declares shape {declared:?} but the file holds {actual:?}", path.display())]
    Shape {
        path: PathBuf,
        declared: [usize; 3],
        actual: [usize; 3],
    },
    #[error(transparent)]
    Bundle(#[from] BundleError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchEntry {
    pub branch_id: u32,
    /// `[height, width, channels]`.
    pub shape: [usize; 3],
    /// Present only when it differs from the manifest's `layer_name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub object_id: u32,
    pub branch_index: usize,
    pub score: f64,
    /// `[x0, y0, x1, y1]` in image pixels.
    pub bbox: [f64; 4],
    pub class_label: String,
}

/// `manifest.json`. Unknown keys written by newer exporters are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub image_id: String,
    pub image_h: usize,
    pub image_w: usize,
    pub layer_name: String,
    pub branches: Vec<BranchEntry>,
    pub objects: Vec<ObjectEntry>,
    #[serde(default)]
    pub model_id: String,
    #[serde(default)]
    pub exporter_version: String,
}

/// Provenance recorded alongside the tensors.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ArchiveInfo {
    pub model_id: String,
    pub exporter_version: String,
}

pub fn activation_file(branch_index: usize) -> String {
    format!("act_b{branch_index}.npy")
}

pub fn gradient_file(object_id: u32) -> String {
    format!("grad_o{object_id}.npy")
}

impl Manifest {
    pub fn for_bundle(bundle: &ExplanationBundle, info: &ArchiveInfo) -> Self {
        let layer_name = bundle
            .branches
            .first()
            .map(|b| b.layer_name.clone())
            .unwrap_or_default();
        Manifest {
            image_id: bundle.image_id.clone(),
            image_h: bundle.image_h,
            image_w: bundle.image_w,
            branches: bundle
                .branches
                .iter()
                .map(|b| {
                    let (h, w, c) = b.activations.shape();
                    BranchEntry {
                        branch_id: b.branch_id,
                        shape: [h, w, c],
                        layer_name: (b.layer_name != layer_name).then(|| b.layer_name.clone()),
                    }
                })
                .collect(),
            objects: bundle
                .objects
                .iter()
                .map(|o| ObjectEntry {
                    object_id: o.object_id,
                    branch_index: o.branch_index,
                    score: o.score,
                    bbox: [o.bbox.x0, o.bbox.y0, o.bbox.x1, o.bbox.y1],
                    class_label: o.class_label.clone(),
                })
                .collect(),
            layer_name,
            model_id: info.model_id.clone(),
            exporter_version: info.exporter_version.clone(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArchiveError + '_ {
    move |source| ArchiveError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes a validated bundle; identical inputs give identical bytes.
pub fn write_bundle_with(
    bundle: &ExplanationBundle,
    dir: &Path,
    info: &ArchiveInfo,
) -> Result<(), ArchiveError> {
    bundle.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = Manifest::for_bundle(bundle, info);
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("serialisable manifest");
    fs::write(&path, json + "\n").map_err(io_err(&path))?;
    for (i, b) in bundle.branches.iter().enumerate() {
        npy::write_stack(&dir.join(activation_file(i)), &b.activations)?;
    }
    for o in &bundle.objects {
        npy::write_stack(&dir.join(gradient_file(o.object_id)), &o.gradients)?;
    }
    Ok(())
}

pub fn write_bundle(bundle: &ExplanationBundle, dir: &Path) -> Result<(), ArchiveError> {
    write_bundle_with(bundle, dir, &ArchiveInfo::default())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, ArchiveError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| ArchiveError::Manifest {
        path,
        message: e.to_string(),
    })
}

fn read_checked(path: &Path, declared: [usize; 3]) -> Result<crate::tensor::Stack3D, ArchiveError> {
    let stack = npy::read_stack(path)?;
    let (h, w, c) = stack.shape();
    if [h, w, c] != declared {
        return Err(ArchiveError::Shape {
            path: path.to_path_buf(),
            declared,
            actual: [h, w, c],
        });
    }
    Ok(stack)
}

/// Reads and validates an archive, returning the manifest as well.
pub fn read_archive(dir: &Path) -> Result<(ExplanationBundle, Manifest), ArchiveError> {
    let manifest = read_manifest(dir)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut branches = Vec::with_capacity(manifest.branches.len());
    for (i, entry) in manifest.branches.iter().enumerate() {
        branches.push(BranchTensors {
            branch_id: entry.branch_id,
            layer_name: entry
                .layer_name
                .clone()
                .unwrap_or_else(|| manifest.layer_name.clone()),
            activations: read_checked(&dir.join(activation_file(i)), entry.shape)?,
        });
    }
    let mut objects = Vec::with_capacity(manifest.objects.len());
    for entry in &manifest.objects {
        let branch = manifest
            .branches
            .get(entry.branch_index)
            .ok_or_else(|| ArchiveError::Manifest {
                path: manifest_path.clone(),
                message: format!(
                    "object {} references branch {} of {}",
                    entry.object_id,
                    entry.branch_index,
                    manifest.branches.len()
                ),
            })?;
        let [x0, y0, x1, y1] = entry.bbox;
        objects.push(ObjectSlot {
            object_id: entry.object_id,
            branch_index: entry.branch_index,
            gradients: read_checked(&dir.join(gradient_file(entry.object_id)), branch.shape)?,
            score: entry.score,
            bbox: BBox::new(x0, y0, x1, y1),
            class_label: entry.class_label.clone(),
        });
    }
    let bundle = ExplanationBundle {
        image_id: manifest.image_id.clone(),
        image_h: manifest.image_h,
        image_w: manifest.image_w,
        branches,
        objects,
    };
    bundle.validate()?;
    Ok((bundle, manifest))
}

pub fn read_bundle(dir: &Path) -> Result<ExplanationBundle, ArchiveError> {
    read_archive(dir).map(|(b, _)| b)
}

/// Archive directories directly under `root` (those holding a manifest),
/// sorted by name.
pub fn list_bundles(root: &Path) -> Result<Vec<PathBuf>, ArchiveError> {
    let mut out = Vec::new();
    if root.join(MANIFEST_FILE).is_file() {
        out.push(root.to_path_buf());
        return Ok(out);
    }
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let path = entry.map_err(io_err(root))?.path();
        if path.join(MANIFEST_FILE).is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

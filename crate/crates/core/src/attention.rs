//! Human attention maps built from pooled eye fixations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridge::npy::{self, NpyError};
use crate::tensor::{max_min_normalize, Map2D};

#[derive(Debug, Error)]
pub enum AttentionError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("fixation file line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("fixation file line {line}, column {column}: {message}")]
    Field {
        line: u64,
        column: &'static str,
        message: String,
    },
    #[error("fixation on line {line} at ({x}, {y}) lies outside the {width}x{height} image {image_id}")]
    OutOfBounds {
        line: u64,
        image_id: String,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("sigma must be positive and finite, got {0}")]
    Sigma(f64),
    #[error("image size must be at least 1x1")]
    EmptyImage,
    #[error("duration weighting needs duration_ms on line {line}")]
    MissingDuration { line: u64 },
    #[error(transparent)]
    Npy(#[from] NpyError),
    #[error("attention index {}: {message}", path.display())]
    Index { path: PathBuf, message: String },
}

/// One fixation in model-input pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FixationRecord {
    pub image_id: String,
    pub participant_id: String,
    pub x: f64,
    pub y: f64,
    pub duration_ms: Option<f64>,
    /// Line in the source file, 0 for records built in memory.
    pub line: u64,
}

impl FixationRecord {
    pub fn new(image_id: &str, participant_id: &str, x: f64, y: f64) -> Self {
        Self {
            image_id: image_id.into(),
            participant_id: participant_id.into(),
            x,
            y,
            duration_ms: None,
            line: 0,
        }
    }
}

const COLUMNS: [&str; 5] = ["image_id", "participant_id", "x", "y", "duration_ms"];

/// Reads a fixation CSV with header `image_id,participant_id,x,y,duration_ms`.
///
/// Coordinates must be finite and non-negative; the upper bound depends on
/// the image and is checked by [`validate_bounds`].
pub fn load_fixations(path: &Path) -> Result<Vec<FixationRecord>, AttentionError> {
    let text = fs::read_to_string(path).map_err(|source| AttentionError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_fixations(&text)
}

pub fn parse_fixations(text: &str) -> Result<Vec<FixationRecord>, AttentionError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| AttentionError::Csv {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut index = [usize::MAX; 5];
    for (slot, name) in index.iter_mut().zip(COLUMNS) {
        if let Some(pos) = headers.iter().position(|h| h == name) {
            *slot = pos;
        } else if name != "duration_ms" {
            return Err(AttentionError::Field {
                line: 1,
                column: name,
                message: "missing column in header".into(),
            });
        }
    }

    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| AttentionError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let text_field = |k: usize| row.get(index[k]).unwrap_or("");
        let number = |k: usize| -> Result<f64, AttentionError> {
            let raw = text_field(k);
            let value: f64 = raw.parse().map_err(|_| AttentionError::Field {
                line,
                column: COLUMNS[k],
                message: format!("{raw:?} is not a number"),
            })?;
            if !value.is_finite() {
                return Err(AttentionError::Field {
                    line,
                    column: COLUMNS[k],
                    message: format!("{raw:?} is not finite"),
                });
            }
            Ok(value)
        };
        let image_id = text_field(0);
        if image_id.is_empty() {
            return Err(AttentionError::Field {
                line,
                column: "image_id",
                message: "empty image id".into(),
            });
        }
        let (x, y) = (number(2)?, number(3)?);
        for (k, v) in [(2, x), (3, y)] {
            if v < 0.0 {
                return Err(AttentionError::Field {
                    line,
                    column: COLUMNS[k],
                    message: format!("negative coordinate {v}"),
                });
            }
        }
        let duration_ms = if index[4] == usize::MAX || text_field(4).is_empty() {
            None
        } else {
            Some(number(4)?)
        };
        out.push(FixationRecord {
            image_id: image_id.to_string(),
            participant_id: text_field(1).to_string(),
            x,
            y,
            duration_ms,
            line,
        });
    }
    Ok(out)
}

/// Checks `0 <= x < width` and `0 <= y < height` for every record.
pub fn validate_bounds(
    records: &[FixationRecord],
    height: usize,
    width: usize,
) -> Result<(), AttentionError> {
    for r in records {
        let inside = r.x >= 0.0 && r.y >= 0.0 && r.x < width as f64 && r.y < height as f64;
        if !inside {
            return Err(AttentionError::OutOfBounds {
                line: r.line,
                image_id: r.image_id.clone(),
                x: r.x,
                y: r.y,
                width,
                height,
            });
        }
    }
    Ok(())
}

/// Groups records by image id, keeping file order within each image.
pub fn group_by_image(records: Vec<FixationRecord>) -> BTreeMap<String, Vec<FixationRecord>> {
    let mut groups: BTreeMap<String, Vec<FixationRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.image_id.clone()).or_default().push(r);
    }
    groups
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixationWeighting {
    /// Every fixation is a unit impulse.
    #[default]
    Count,
    /// Impulses are weighted by fixation duration.
    Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub image_id: String,
    pub map: Map2D,
    pub sigma_px: f64,
}

/// Gaussian-smoothed fixation density, max-min normalised to `[0, 1]`.
///
/// Each fixation lands on the pixel containing it and spreads as
/// `exp(-r^2 / (2 sigma^2))` over a square window of half-width
/// `floor(3 sigma)`. An empty record list yields an all-zero map.
pub fn build_attention_map(
    image_id: &str,
    records: &[FixationRecord],
    height: usize,
    width: usize,
    sigma_px: f64,
    weighting: FixationWeighting,
) -> Result<AttentionMap, AttentionError> {
    if !(sigma_px > 0.0 && sigma_px.is_finite()) {
        return Err(AttentionError::Sigma(sigma_px));
    }
    if height == 0 || width == 0 {
        return Err(AttentionError::EmptyImage);
    }
    validate_bounds(records, height, width)?;

    let radius = (3.0 * sigma_px).floor() as usize;
    let profile: Vec<f64> = (0..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma_px * sigma_px)).exp())
        .collect();
    let mut density = vec![0.0f64; height * width];
    for r in records {
        let weight = match weighting {
            FixationWeighting::Count => 1.0,
            FixationWeighting::Duration => r
                .duration_ms
                .ok_or(AttentionError::MissingDuration { line: r.line })?,
        };
        let (row, col) = (r.y.floor() as usize, r.x.floor() as usize);
        let rows = row.saturating_sub(radius)..(row + radius + 1).min(height);
        for i in rows {
            let wy = profile[i.abs_diff(row)];
            let cols = col.saturating_sub(radius)..(col + radius + 1).min(width);
            for j in cols {
                density[i * width + j] += weight * wy * profile[j.abs_diff(col)];
            }
        }
    }
    let density = Map2D::new(height, width, density).expect("finite density");
    Ok(AttentionMap {
        image_id: image_id.to_string(),
        map: max_min_normalize(&density).cast(),
        sigma_px,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub h: usize,
    pub w: usize,
    pub sigma_px: f64,
}

pub const INDEX_FILE: &str = "index.json";

/// Writes `<image_id>.npy` per map plus `index.json`.
pub fn write_attention_maps(dir: &Path, maps: &[AttentionMap]) -> Result<(), AttentionError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| AttentionError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut index = BTreeMap::new();
    for m in maps {
        npy::write_map(&dir.join(format!("{}.npy", m.image_id)), &m.map)?;
        index.insert(
            m.image_id.clone(),
            IndexEntry {
                h: m.map.height(),
                w: m.map.width(),
                sigma_px: m.sigma_px,
            },
        );
    }
    let path = dir.join(INDEX_FILE);
    let json = serde_json::to_string_pretty(&index).expect("serialisable index");
    fs::write(&path, json + "\n").map_err(io(&path))
}

/// Reads every map listed in `index.json`, in image id order.
pub fn read_attention_maps(dir: &Path) -> Result<Vec<AttentionMap>, AttentionError> {
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|source| AttentionError::Io {
        path: path.clone(),
        source,
    })?;
    let index: BTreeMap<String, IndexEntry> =
        serde_json::from_str(&text).map_err(|e| AttentionError::Index {
            path: path.clone(),
            message: e.to_string(),
        })?;
    index
        .into_iter()
        .map(|(image_id, entry)| {
            let map = npy::read_map(&dir.join(format!("{image_id}.npy")))?;
            if map.shape() != (entry.h, entry.w) {
                return Err(AttentionError::Index {
                    path: path.clone(),
                    message: format!(
                        "{image_id} is listed as {}x{} but stored as {}x{}",
                        entry.h,
                        entry.w,
                        map.height(),
                        map.width()
                    ),
                });
            }
            Ok(AttentionMap {
                image_id,
                map,
                sigma_px: entry.sigma_px,
            })
        })
        .collect()
}

//! File and wire formats shared with the model host.

pub mod archive;
pub mod client;
pub mod npy;

pub use archive::{read_bundle, write_bundle, ArchiveError, ArchiveInfo, Manifest};
pub use client::{ClientError, ScoreContext, ScoreReference, ScorerClient, ScorerConfig};

//! Synthetic H/Z → ττ event generator and the on-disk dataset format.

mod dataset;
mod features;
mod fourvec;
mod generator;

use std::path::PathBuf;

use thiserror::Error;

pub use dataset::{
    event_rng, generate_dataset, generate_events, load_dataset, save_dataset, split_ranges, Dataset, DatasetMeta,
    EventView, Split, DATASET_VERSION, FLOATS_PER_EVENT,
};
pub use features::{denormalize_pt, normalize_event, normalize_pt, NormalizedEvent};
pub use fourvec::{invariant_mass, wrap_phi, FourVector, LorentzVector};
pub use generator::{
    sample_event, DecayModes, Event, GeneratorConfig, TauCandidate, TruthTau, IMAGE_PIXELS, IMAGE_SIDE, TAU_MASS,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unphysical four-vector: {0}")]
    Unphysical(String),
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("negative transverse momentum {0}")]
    NegativePt(f64),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed metadata: {detail}")]
    Metadata { path: PathBuf, detail: String },
    #[error("{path}: format version {found} is not supported (expected {expected})")]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: truncated payload ({got} bytes, expected {expected})")]
    TruncatedPayload { path: PathBuf, got: usize, expected: usize },
    #[error("{path}: header declares {declared} events but payload holds {actual} bytes")]
    CountMismatch { path: PathBuf, declared: usize, actual: usize },
    #[error("{path}: checksum mismatch")]
    ChecksumMismatch { path: PathBuf },
}

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::generator::{sample_event, Event, GeneratorConfig, IMAGE_PIXELS};
use super::DataError;

pub const DATASET_VERSION: u32 = 1;
/// Two candidates of 4 + 3·256 floats, two truths of 3, one label.
pub const FLOATS_PER_EVENT: usize = 2 * (4 + 3 * IMAGE_PIXELS) + 2 * 3 + 1;

const CANDIDATE_FLOATS: usize = 4 + 3 * IMAGE_PIXELS;
const TRUTH_OFFSET: usize = 2 * CANDIDATE_FLOATS;
const LABEL_OFFSET: usize = TRUTH_OFFSET + 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub n_events: usize,
    pub seed: u64,
    pub config: GeneratorConfig,
    /// Row ranges of `events.bin`; rows are stored grouped by split.
    pub splits: SplitRanges,
    /// Hex SHA-256 of `events.bin`.
    pub checksum: String,
}

/// A dataset held in memory as the flat float payload of `events.bin`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    data: Vec<f32>,
}

/// Borrowed view of one stored event row.
#[derive(Debug, Clone, Copy)]
pub struct EventView<'a> {
    row: &'a [f32],
}

impl<'a> EventView<'a> {
    fn candidate(&self, k: usize) -> &'a [f32] {
        assert!(k < 2, "candidate index {k} out of range");
        &self.row[k * CANDIDATE_FLOATS..(k + 1) * CANDIDATE_FLOATS]
    }

    /// `(pt, eta, phi, m)` of candidate `k` in physical units.
    pub fn jet(&self, k: usize) -> &'a [f32] {
        &self.candidate(k)[..4]
    }

    /// Channel 0 tracker, 1 EM, 2 hadronic; 256 η-major pixels.
    pub fn image(&self, k: usize, channel: usize) -> &'a [f32] {
        assert!(channel < 3, "image channel {channel} out of range");
        let start = 4 + channel * IMAGE_PIXELS;
        &self.candidate(k)[start..start + IMAGE_PIXELS]
    }

    /// `(pt, eta, phi)` of the true tau `k`.
    pub fn truth(&self, k: usize) -> &'a [f32] {
        assert!(k < 2, "truth index {k} out of range");
        &self.row[TRUTH_OFFSET + 3 * k..TRUTH_OFFSET + 3 * k + 3]
    }

    pub fn label(&self) -> f32 {
        self.row[LABEL_OFFSET]
    }

    pub fn raw(&self) -> &'a [f32] {
        self.row
    }
}

/// Counter-based generator for event `index`: depends only on `(seed, index)`.
pub fn event_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn event_label(index: usize) -> u8 {
    (index % 2 == 0) as u8
}

fn encode_event(ev: &Event, out: &mut Vec<f32>) {
    for tau in &ev.taus {
        out.extend([tau.jet.pt, tau.jet.eta, tau.jet.phi, tau.jet.m].map(|v| v as f32));
        for image in &tau.images {
            out.extend_from_slice(image);
        }
    }
    for tau in &ev.taus {
        out.extend([tau.truth.pt, tau.truth.eta, tau.truth.phi].map(|v| v as f32));
    }
    out.push(ev.label as f32);
}

/// Generates events `0..n` in index order. Labels alternate so both classes
/// are exactly balanced.
pub fn generate_events(cfg: &GeneratorConfig) -> Result<Vec<Event>, DataError> {
    cfg.validate()?;
    (0..cfg.n_events)
        .map(|i| sample_event(&mut event_rng(cfg.seed, i as u64), cfg, event_label(i)))
        .collect()
}

fn split_hash(seed: u64, index: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((index as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Split sizes for `n` events: train and validation are rounded shares,
/// test takes the remainder.
pub fn split_ranges(n: usize, fractions: [f64; 3]) -> SplitRanges {
    let n_train = (((n as f64) * fractions[0]).round() as usize).min(n);
    let n_val = (((n as f64) * fractions[1]).round() as usize).min(n - n_train);
    SplitRanges {
        train: 0..n_train,
        val: n_train..n_train + n_val,
        test: n_train + n_val..n,
    }
}

fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn to_bytes(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

impl Dataset {
    /// Generates the dataset in memory. Events are assigned to splits by
    /// ranking a hash of `(seed, index)`; stored rows are grouped by split.
    pub fn generate(cfg: &GeneratorConfig) -> Result<Self, DataError> {
        let events = generate_events(cfg)?;
        let mut order: Vec<usize> = (0..events.len()).collect();
        order.sort_by_key(|&i| (split_hash(cfg.seed, i), i));
        let mut data = Vec::with_capacity(events.len() * FLOATS_PER_EVENT);
        for &i in &order {
            encode_event(&events[i], &mut data);
        }
        let meta = DatasetMeta {
            format_version: DATASET_VERSION,
            n_events: events.len(),
            seed: cfg.seed,
            config: cfg.clone(),
            splits: split_ranges(events.len(), cfg.split_fractions),
            checksum: checksum(&to_bytes(&data)),
        };
        Ok(Self { meta, data })
    }

    pub fn len(&self) -> usize {
        self.meta.n_events
    }

    pub fn is_empty(&self) -> bool {
        self.meta.n_events == 0
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn event(&self, row: usize) -> EventView<'_> {
        EventView {
            row: &self.data[row * FLOATS_PER_EVENT..(row + 1) * FLOATS_PER_EVENT],
        }
    }

    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.meta.splits.train.clone(),
            Split::Val => self.meta.splits.val.clone(),
            Split::Test => self.meta.splits.test.clone(),
        }
    }

    /// Row indices of a split.
    pub fn rows(&self, split: Split) -> Vec<usize> {
        self.range(split).collect()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("meta.json"), dir.join("events.bin"))
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (meta_path, bin_path) = paths(dir);
    let meta = serde_json::to_string_pretty(&dataset.meta).map_err(|e| DataError::Metadata {
        path: meta_path.clone(),
        detail: e.to_string(),
    })?;
    fs::write(&bin_path, to_bytes(&dataset.data)).map_err(io_err(&bin_path))?;
    fs::write(&meta_path, meta + "\n").map_err(io_err(&meta_path))?;
    Ok(())
}

pub fn generate_dataset(cfg: &GeneratorConfig, dir: &Path) -> Result<Dataset, DataError> {
    let dataset = Dataset::generate(cfg)?;
    save_dataset(&dataset, dir)?;
    Ok(dataset)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let (meta_path, bin_path) = paths(dir);
    let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| DataError::Metadata {
        path: meta_path.clone(),
        detail: e.to_string(),
    })?;
    let found = value.get("format_version").and_then(|v| v.as_u64()).ok_or_else(|| DataError::Metadata {
        path: meta_path.clone(),
        detail: "missing format_version".into(),
    })?;
    if found != DATASET_VERSION as u64 {
        return Err(DataError::VersionMismatch {
            path: meta_path,
            found: found as u32,
            expected: DATASET_VERSION,
        });
    }
    let meta: DatasetMeta = serde_json::from_value(value).map_err(|e| DataError::Metadata {
        path: meta_path.clone(),
        detail: e.to_string(),
    })?;
    let bytes = fs::read(&bin_path).map_err(io_err(&bin_path))?;
    let expected = meta.n_events * FLOATS_PER_EVENT * 4;
    if bytes.len() < expected && bytes.len() % (FLOATS_PER_EVENT * 4) != 0 {
        return Err(DataError::TruncatedPayload {
            path: bin_path,
            got: bytes.len(),
            expected,
        });
    }
    if bytes.len() != expected {
        return Err(DataError::CountMismatch {
            path: bin_path,
            declared: meta.n_events,
            actual: bytes.len(),
        });
    }
    let splits = &meta.splits;
    if splits.train.start != 0
        || splits.train.end != splits.val.start
        || splits.val.end != splits.test.start
        || splits.test.end != meta.n_events
    {
        return Err(DataError::Metadata {
            path: meta_path,
            detail: "split ranges do not tile the events".into(),
        });
    }
    if checksum(&bytes) != meta.checksum {
        return Err(DataError::ChecksumMismatch { path: bin_path });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect();
    Ok(Dataset { meta, data })
}

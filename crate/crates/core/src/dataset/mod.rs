//! Samples, manifests, train/validation/test partitioning and a synthetic
//! two-class corpus.

mod split;
mod synthetic;

pub use split::{partition_dataset, DatasetSplit, PoolSizes, TEST_SHARE, VALIDATION_SHARE};
pub use synthetic::{generate_synthetic, generate_synthetic_with, render_sample, SyntheticParams, MANIFEST_NAME};

use std::cell::Cell;
use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::imaging::ImageError;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("labelled fraction {0} outside (0, 1]")]
    BadFraction(f64),
    #[error("sample {0} lands in a labelled pool but has no label")]
    MissingLabel(String),
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("manifest line {line}: {detail}")]
    MalformedRow { line: usize, detail: String },
    #[error("sample {id:?} references missing file {path}")]
    MissingFile { id: String, path: PathBuf },
    #[error("synthetic corpus size must be even and positive, got {0}")]
    OddCount(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Binary class; COVID is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Healthy = 0,
    Covid = 1,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Healthy),
            1 => Some(Label::Covid),
            _ => None,
        }
    }
}

/// Counts label dereferences on the current thread, so a code path can be
/// shown never to look at labels.
pub mod audit {
    use super::Cell;

    thread_local! {
        static LABEL_READS: Cell<u64> = const { Cell::new(0) };
    }

    pub(crate) fn record() {
        LABEL_READS.with(|c| c.set(c.get() + 1));
    }

    pub fn label_reads() -> u64 {
        LABEL_READS.with(Cell::get)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub image_path: PathBuf,
    label: Option<Label>,
}

impl Sample {
    pub fn new(id: impl Into<String>, image_path: impl Into<PathBuf>, label: Option<Label>) -> Self {
        Self {
            id: id.into(),
            image_path: image_path.into(),
            label,
        }
    }

    /// The sample's label. Every call is counted by [`audit`].
    pub fn label(&self) -> Option<Label> {
        audit::record();
        self.label
    }

    /// Same sample with the label stripped.
    pub fn unlabelled(&self) -> Self {
        Self {
            id: self.id.clone(),
            image_path: self.image_path.clone(),
            label: None,
        }
    }
}

/// Preprocessed images paired with their labels.
#[derive(Debug, Clone, Default)]
pub struct LabelledImages {
    pub images: Vec<Tensor>,
    pub labels: Vec<Label>,
}

impl LabelledImages {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.labels.iter().map(|l| l.as_f64()).collect()
    }
}

const MANIFEST_HEADER: [&str; 3] = ["id", "path", "label"];

/// Reads an `id,path,label` manifest. Relative paths are resolved against the
/// manifest's directory and must exist.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<Sample>, DatasetError> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != MANIFEST_HEADER {
        return Err(DatasetError::MalformedRow {
            line: 1,
            detail: format!("header must be id,path,label, got {}", header.join(",")),
        });
    }
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| DatasetError::MalformedRow {
            line,
            detail: e.to_string(),
        })?;
        if record.len() != 3 {
            return Err(DatasetError::MalformedRow {
                line,
                detail: format!("expected 3 fields, got {}", record.len()),
            });
        }
        let id = record[0].to_owned();
        if id.is_empty() {
            return Err(DatasetError::MalformedRow {
                line,
                detail: "empty id".into(),
            });
        }
        let label = match &record[2] {
            "" => None,
            "0" => Some(Label::Healthy),
            "1" => Some(Label::Covid),
            other => {
                return Err(DatasetError::MalformedRow {
                    line,
                    detail: format!("label must be 0, 1 or empty, got {other:?}"),
                })
            }
        };
        if !seen.insert(id.clone()) {
            return Err(DatasetError::DuplicateId(id));
        }
        let image_path = base.join(&record[1]);
        if !image_path.is_file() {
            return Err(DatasetError::MissingFile { id, path: image_path });
        }
        samples.push(Sample { id, image_path, label });
    }
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(samples)
}

/// Writes samples sorted by id. Paths under the manifest's directory are
/// stored relative to it.
pub fn save_manifest(samples: &[Sample], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut seen = HashSet::new();
    for s in samples {
        if !seen.insert(s.id.as_str()) {
            return Err(DatasetError::DuplicateId(s.id.clone()));
        }
    }
    let mut sorted: Vec<&Sample> = samples.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    writer.write_record(MANIFEST_HEADER)?;
    for s in sorted {
        let stored = s.image_path.strip_prefix(base).unwrap_or(&s.image_path);
        let label = s.label.map(|l| l.as_u8().to_string()).unwrap_or_default();
        writer.write_record([s.id.as_str(), &stored.to_string_lossy(), &label])?;
    }
    let bytes = writer.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    fs::write(path, bytes)?;
    Ok(())
}

//! Dataset manifests: a CSV listing (`path,label,split,source`) resolved
//! against the manifest's own directory and validated up front — every
//! referenced file must exist, paths must be unique across splits, and any
//! split that appears must contain both classes.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One dataset row: an image path (absolute after loading), its class
/// label (1 = tileable), the split it belongs to, and a free-form source
/// tag recording where the image came from.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: u8,
    pub split: Split,
    pub source: String,
}

impl ManifestEntry {
    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// A validated dataset listing plus the directory its paths resolve
/// against.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Entries belonging to one split, in manifest order.
    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    /// `(positives, negatives)` within a split.
    pub fn class_counts(&self, split: Split) -> (usize, usize) {
        let mut pos = 0;
        let mut neg = 0;
        for e in self.entries.iter().filter(|e| e.split == split) {
            if e.is_positive() {
                pos += 1;
            } else {
                neg += 1;
            }
        }
        (pos, neg)
    }
}

/// Loads and validates a CSV manifest. Relative paths are resolved against
/// the manifest's directory; rows are numbered from 1 (excluding the
/// header) in error messages.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, TrainError> {
    let path = path.as_ref();
    let root = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| TrainError::Manifest(format!("cannot open {}: {e}", path.display())))?;

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record =
            record.map_err(|e| TrainError::Manifest(format!("row {row}: malformed CSV: {e}")))?;
        if record.len() < 4 {
            return Err(TrainError::Manifest(format!(
                "row {row}: expected 4 columns (path,label,split,source), got {}",
                record.len()
            )));
        }
        let rel = record[0].trim();
        if rel.is_empty() {
            return Err(TrainError::Manifest(format!("row {row}: empty path")));
        }
        let label = match record[1].trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(TrainError::Manifest(format!(
                    "row {row}: label must be 0 or 1, got {other:?}"
                )))
            }
        };
        let split = Split::parse(record[2].trim()).ok_or_else(|| {
            TrainError::Manifest(format!(
                "row {row}: split must be train/val/test, got {:?}",
                record[2].trim()
            ))
        })?;
        let resolved = if Path::new(rel).is_absolute() {
            PathBuf::from(rel)
        } else {
            root.join(rel)
        };
        if !seen.insert(resolved.clone()) {
            return Err(TrainError::Manifest(format!(
                "row {row}: duplicate path {}",
                resolved.display()
            )));
        }
        if !resolved.is_file() {
            return Err(TrainError::Manifest(format!(
                "row {row}: missing image file {}",
                resolved.display()
            )));
        }
        entries.push(ManifestEntry {
            path: resolved,
            label,
            split,
            source: record[3].trim().to_string(),
        });
    }

    if entries.is_empty() {
        return Err(TrainError::Manifest("manifest has no entries".into()));
    }
    let manifest = DatasetManifest { root, entries };
    for split in [Split::Train, Split::Val, Split::Test] {
        let (pos, neg) = manifest.class_counts(split);
        if pos + neg > 0 && (pos == 0 || neg == 0) {
            return Err(TrainError::Manifest(format!(
                "split {split} needs at least one positive and one negative, got {pos}/{neg}"
            )));
        }
    }
    for split in [Split::Train, Split::Val, Split::Test] {
        let (pos, neg) = manifest.class_counts(split);
        if pos + neg > 0 {
            log::info!("manifest split {split}: {pos} positive / {neg} negative");
        }
    }
    Ok(manifest)
}

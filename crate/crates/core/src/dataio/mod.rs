//! On-disk formats: `.cmap` confidence rasters, binary PGM frames, the JSON
//! cohort manifest and patient-wise fold splits.

mod cmap;
mod cohort;
mod folds;
mod manifest;
mod pgm;

pub use cmap::{decode_cmap, encode_cmap, load_cmap, read_cmap, save_cmap, write_cmap, CMAP_HEADER_LEN, CMAP_MAGIC, CMAP_VERSION};
pub use cohort::{video_refs, CohortData, VideoData, VideoRef};
pub use folds::{split_folds, FoldSplit};
pub use manifest::{CohortManifest, DayRecord, PatientRecord, PlantedDay, PlantedLinkRecord, VideoRecord, View};
pub use pgm::{decode_pgm, encode_pgm, load_pgm, read_pgm, save_pgm, write_pgm, GrayImage};

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::label::LabelError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: &'static str, found: Vec<u8> },
    #[error("unsupported format version {0}")]
    VersionMismatch(u8),
    #[error("value out of range: {0} > 100")]
    ValueOutOfRange(u8),
    #[error("truncated stream: {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("unsupported channel count {0} (expected 6)")]
    ChannelCount(u32),
    #[error("not a binary greyscale image (magic {0:?})")]
    NotGreyscale(String),
    #[error("unsupported bit depth: maxval {0}")]
    UnsupportedDepth(u32),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("invalid dimensions {0}x{1}")]
    BadDimensions(usize, usize),
    #[error("too few patients: have {have}, need at least {need}")]
    TooFewPatients { have: usize, need: usize },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("label: {0}")]
    Label(#[from] LabelError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

pub(crate) fn file_err(path: &std::path::Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::File { path: path.to_path_buf(), source }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`, so
/// readers never see a partially written file.
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;

    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(std::path::Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", unique_suffix()));
    {
        let mut f = std::fs::File::create(&tmp).map_err(file_err(&tmp))?;
        f.write_all(bytes).map_err(file_err(&tmp))?;
        f.sync_all().map_err(file_err(&tmp))?;
    }
    std::fs::rename(&tmp, path).map_err(file_err(path))?;
    Ok(())
}

fn unique_suffix() -> String {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    format!("{}-{}", std::process::id(), COUNTER.fetch_add(1, Ordering::Relaxed))
}

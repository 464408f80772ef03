//! Model, dataset and report files.

mod dataset;
mod model;
mod reports;

use std::io::Write;
use std::path::Path;

pub use dataset::{
    decode_embeddings, encode_embeddings, load_dataset, read_manifest, save_dataset, ManifestRow, EMBEDDING_MAGIC,
};
pub use model::{
    checksum, decode_model, encode_model, load_model, load_preprocessing, save_model, save_preprocessing, MODEL_MAGIC, MODEL_VERSION,
    PREPROCESSING_MAGIC,
};
pub use reports::{metrics_csv, predictions_csv, roc_csv, triage_csv, write_report};

use crate::error::{Error, Result};

/// Write to a temporary file beside `path`, then rename over it.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

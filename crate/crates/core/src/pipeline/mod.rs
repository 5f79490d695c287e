//! Optimization loop, the three training procedures, model selection and
//! checkpoint I/O.

mod checkpoint;
mod optim;
mod train;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, LayerParams, Seeds,
    CHECKPOINT_VERSION,
};
pub use optim::{sgd_step, OptimizerConfig, OptimizerState};
pub use train::{
    objective_value, select_best, train_erm, train_fdr, train_tfs, ObjectiveValue, Phase,
    RunRecord, StitchPlacement, TrainOutcome, TrainSettings, DIVERGENCE_LIMIT,
};

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes one JSON object per line.
pub fn write_records(records: &[RunRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| Error::Serde(e.to_string()))?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Serde(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

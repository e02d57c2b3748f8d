use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::train::{
    adapt, predict_volume, train_source, train_supervised_target, IterationLog, Trained,
    ValidationPoint,
};
use super::ProtocolConfig;
use crate::data::{build_split, Dataset, LabelMap, Protocol, ProtocolSplit};
use crate::error::{Error, Result};
use crate::network::Checkpoint;

/// Provenance of one protocol run on one test subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub protocol: Protocol,
    pub split: ProtocolSplit,
    pub seed: u64,
    pub config: ProtocolConfig,
    /// Iterations of the source model this run started from.
    pub base_iterations: u64,
    /// The run's own training phase (the source phase for no-adaptation).
    pub history: Vec<IterationLog>,
    pub validation: Vec<ValidationPoint>,
    pub selected_iteration: u64,
    /// Where the final checkpoint was written, if it was.
    pub checkpoint: Option<String>,
    pub prediction_checksum: String,
    pub wall_clock_seconds: f64,
}

impl RunRecord {
    /// The record with timing zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> RunRecord {
        RunRecord {
            wall_clock_seconds: 0.0,
            ..self.clone()
        }
    }
}

/// SHA-256 of a mask's bytes, hex encoded. Reads the mask once.
pub fn mask_checksum(mask: &LabelMap) -> String {
    let mut h = Sha256::new();
    for d in mask.dims() {
        h.update((d as u64).to_le_bytes());
    }
    h.update(mask.read());
    hex::encode(h.finalize())
}

/// Train the source model, then run `protocol` for `test_subject`.
pub fn run_protocol(
    protocol: Protocol,
    source: &Dataset,
    target: &Dataset,
    test_subject: &str,
    cfg: &ProtocolConfig,
    seed: u64,
) -> Result<(LabelMap, RunRecord, Checkpoint)> {
    let base = train_source(source, &cfg.model, &cfg.optim, cfg.axis, seed)?;
    run_protocol_with_base(protocol, &base, source, target, test_subject, cfg, seed)
}

/// Run `protocol` for `test_subject`, starting from an already trained source model.
pub fn run_protocol_with_base(
    protocol: Protocol,
    base: &Trained,
    source: &Dataset,
    target: &Dataset,
    test_subject: &str,
    cfg: &ProtocolConfig,
    seed: u64,
) -> Result<(LabelMap, RunRecord, Checkpoint)> {
    cfg.validate()?;
    let start = Instant::now();
    let split = build_split(target, protocol, test_subject, seed)?;
    let trained = match protocol {
        Protocol::NoAdaptation => base.clone(),
        Protocol::Supervised => {
            train_supervised_target(&base.checkpoint, target, &split, cfg, seed)?
        }
        _ => adapt(&base.checkpoint, source, target, &split, cfg, seed)?,
    };
    let subject = target.get(test_subject).ok_or_else(|| {
        Error::Parameter(format!("test subject {test_subject} not in target dataset"))
    })?;
    let net = trained.checkpoint.unet()?;
    let prediction = predict_volume(&net, &subject.volume, cfg.threshold, cfg.axis)?;
    let record = RunRecord {
        protocol,
        split,
        seed,
        config: cfg.clone(),
        base_iterations: if protocol == Protocol::NoAdaptation {
            0
        } else {
            base.checkpoint.iteration
        },
        history: trained.history,
        validation: trained.validation,
        selected_iteration: trained.selected_iteration,
        checkpoint: None,
        prediction_checksum: mask_checksum(&prediction),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((prediction, record, trained.checkpoint))
}

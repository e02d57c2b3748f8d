//! The scaled synthetic comparison: no adaptation vs one-shot vs test-time
//! adaptation over several seeds and every target subject.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::SynthConfig;
use crate::data::{make_synthetic_domains, Protocol};
use crate::error::Result;
use crate::evaluation::dice;
use crate::network::{DiscriminatorConfig, ModelConfig};
use crate::protocols::{run_protocol_with_base, train_source, OptimConfig, ProtocolConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeskExperiment {
    pub synth: SynthConfig,
    pub training: ProtocolConfig,
    pub seeds: Vec<u64>,
    /// Compared on Dice.
    pub protocols: Vec<Protocol>,
    /// UDA protocols run once (first seed, first subject) only to check label isolation.
    pub leakage_only: Vec<Protocol>,
}

impl Default for DeskExperiment {
    /// 8 source and 5 target subjects of 32×32×8, three-level U-Net, 2,000 iterations, batch 8.
    fn default() -> Self {
        Self {
            synth: SynthConfig {
                image_size: 32,
                ..SynthConfig::default()
            },
            training: ProtocolConfig {
                model: ModelConfig::reduced(3, vec![8, 16, 32]),
                discriminator: DiscriminatorConfig {
                    conv_channels: vec![16, 32, 64, 64],
                    fc_hidden: vec![64, 32],
                    ..DiscriminatorConfig::default()
                },
                optim: OptimConfig {
                    iterations: 2_000,
                    batch_size: 8,
                    ..OptimConfig::default()
                },
                ..ProtocolConfig::default()
            },
            seeds: vec![0, 1, 2],
            protocols: vec![
                Protocol::NoAdaptation,
                Protocol::OneShotUda,
                Protocol::TestTimeUda,
            ],
            leakage_only: vec![Protocol::ClassicUda],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeskCase {
    pub protocol: Protocol,
    pub seed: u64,
    pub subject: String,
    pub dice: f64,
    pub checksum: String,
    /// Reads of the test subject's label made while the run was in progress.
    pub label_reads: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeskResult {
    pub cases: Vec<DeskCase>,
    /// Read counts of every target label after all runs, before evaluation.
    pub reads_before_evaluation: BTreeMap<String, u64>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

impl DeskResult {
    /// Median Dice of `protocol` over seeds and subjects.
    pub fn median_dice(&self, protocol: Protocol) -> Option<f64> {
        let mut v: Vec<f64> = self
            .cases
            .iter()
            .filter(|c| c.protocol == protocol)
            .map(|c| c.dice)
            .collect();
        median(&mut v)
    }

    /// `(protocol, seed, subject) → checksum`.
    pub fn checksums(&self) -> BTreeMap<(String, u64, String), String> {
        self.cases
            .iter()
            .map(|c| {
                (
                    (c.protocol.name().to_owned(), c.seed, c.subject.clone()),
                    c.checksum.clone(),
                )
            })
            .collect()
    }

    pub fn leak_free(&self) -> bool {
        self.reads_before_evaluation.values().all(|&n| n == 0)
            && self.cases.iter().all(|c| c.label_reads == 0)
    }
}

/// Run every (protocol, seed, subject) cell. All predictions are made before
/// any label is read, so the label read counters double as a leakage check.
pub fn run_desk_experiment(
    exp: &DeskExperiment,
    mut progress: impl FnMut(&str),
) -> Result<DeskResult> {
    let s = &exp.synth;
    let (source, target) =
        make_synthetic_domains(s.n_source, s.n_target, &s.shift(), s.image_size, s.depth)?;
    let subjects = target.subject_ids();
    let label = |id: &str| {
        target
            .get(id)
            .and_then(|t| t.label.as_ref())
            .expect("synthetic targets are labelled")
    };
    let mut pending = Vec::new();
    for (k, &seed) in exp.seeds.iter().enumerate() {
        progress(&format!("source model, seed {seed}"));
        let base = train_source(
            &source,
            &exp.training.model,
            &exp.training.optim,
            exp.training.axis,
            seed,
        )?;
        let mut cells: Vec<(Protocol, &str)> = Vec::new();
        for &p in &exp.protocols {
            cells.extend(subjects.iter().map(|id| (p, id.as_str())));
        }
        if k == 0 {
            cells.extend(exp.leakage_only.iter().map(|&p| (p, subjects[0].as_str())));
        }
        for (protocol, id) in cells {
            progress(&format!("{protocol} on {id}, seed {seed}"));
            let before = label(id).read_count();
            let (pred, record, _) =
                run_protocol_with_base(protocol, &base, &source, &target, id, &exp.training, seed)?;
            let label_reads = label(id).read_count() - before;
            pending.push((
                protocol,
                seed,
                id.to_owned(),
                pred,
                record.prediction_checksum,
                label_reads,
            ));
        }
    }
    let reads_before_evaluation = subjects
        .iter()
        .map(|id| (id.clone(), label(id).read_count()))
        .collect();
    let mut cases = Vec::new();
    for (protocol, seed, subject, pred, checksum, label_reads) in pending {
        let d = dice(&pred, label(&subject))?
            .value
            .expect("dice is always defined");
        cases.push(DeskCase {
            protocol,
            seed,
            subject,
            dice: d,
            checksum,
            label_reads,
        });
    }
    Ok(DeskResult {
        cases,
        reads_before_evaluation,
    })
}

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::provenance::{
    json_line, register_file, sha256_hex, write_json, CorpusManifest, Provenance,
};
use crate::data::{load_dataset_dir, save_label, Dataset, Domain, Protocol};
use crate::error::{Error, Result};
use crate::protocols::{run_protocol_with_base, train_source, RunRecord, Trained};

/// Which target subjects to run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Subjects {
    One(String),
    All,
}

pub fn prediction_file(seed: u64) -> String {
    format!("prediction-seed{seed}.nii")
}

pub fn subject_dir(output: &Path, protocol: &str, subject: &str) -> PathBuf {
    output.join(protocol).join(subject)
}

pub(crate) fn load_corpus(cfg: &RunConfig) -> Result<(Dataset, Dataset, CorpusManifest)> {
    let source = load_dataset_dir(&cfg.paths.source, Domain::Source)?;
    let target = load_dataset_dir(&cfg.paths.target, Domain::Target)?;
    let manifest = CorpusManifest::scan(&cfg.paths.source, &cfg.paths.target)?;
    Ok((source, target, manifest))
}

fn min_target_subjects(protocol: Protocol) -> usize {
    match protocol {
        Protocol::NoAdaptation | Protocol::OneShotUda => 1,
        Protocol::ClassicUda => 2,
        Protocol::Supervised | Protocol::TestTimeUda => 3,
    }
}

#[derive(Serialize, Deserialize)]
struct CachedSource {
    key: String,
    trained: Trained,
}

/// Source training depends only on the source data, model, optimiser, axis
/// and seed, so its result is shared by every protocol and subject.
fn source_model(
    cfg: &RunConfig,
    source: &Dataset,
    corpus: &CorpusManifest,
    seed: u64,
) -> Result<Trained> {
    let t = &cfg.training;
    let key = sha256_hex(
        serde_json::to_string(&(&t.model, &t.optim, t.axis, corpus.content_hash(), seed))?
            .as_bytes(),
    );
    let path = cfg
        .paths
        .output
        .join("source_model")
        .join(format!("seed{seed}.json"));
    if let Ok(bytes) = fs::read(&path) {
        if let Ok(cached) = serde_json::from_slice::<CachedSource>(&bytes) {
            if cached.key == key {
                return Ok(cached.trained);
            }
        }
    }
    eprintln!("training source model (seed {seed})");
    let trained = train_source(source, &t.model, &t.optim, t.axis, seed)?;
    fs::create_dir_all(path.parent().expect("has parent"))?;
    fs::write(
        &path,
        serde_json::to_vec(&CachedSource {
            key,
            trained: trained.clone(),
        })?,
    )?;
    Ok(trained)
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    record: RunRecord,
}

/// Keep one line per seed, sorted by seed.
fn upsert_record(path: &Path, provenance: &Provenance, record: &RunRecord) -> Result<()> {
    let mut lines: Vec<(u64, String)> = match fs::read_to_string(path) {
        Ok(text) => text
            .lines()
            .filter_map(|l| {
                let parsed: RecordLine = serde_json::from_str(l).ok()?;
                (parsed.record.seed != record.seed).then(|| (parsed.record.seed, l.to_owned()))
            })
            .collect(),
        Err(_) => Vec::new(),
    };
    lines.push((
        record.seed,
        json_line(
            provenance,
            &RecordLine {
                record: record.clone(),
            },
        )?,
    ));
    lines.sort_by_key(|(s, _)| *s);
    let mut text: String = lines.into_iter().map(|(_, l)| l + "\n").collect();
    if text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub subject: String,
    pub seed: u64,
    pub directory: PathBuf,
    pub record: RunRecord,
}

/// Train/adapt, predict and persist for each requested subject and seed.
///
/// Writes `<out>/<protocol>/<subject>/` containing `prediction-seed<k>.nii`,
/// `checkpoint-seed<k>.json`, `run_record.jsonl` (one line per seed) and
/// `provenance.json`.
pub fn cmd_run(
    cfg: &RunConfig,
    protocol: Protocol,
    subjects: &Subjects,
    seed: Option<u64>,
) -> Result<Vec<RunOutcome>> {
    let (source, target, corpus) = load_corpus(cfg)?;
    let need = min_target_subjects(protocol);
    if target.len() < need {
        return Err(Error::Config(format!(
            "{protocol} needs ≥ {need} target subjects, corpus has {}",
            target.len()
        )));
    }
    let ids = match subjects {
        Subjects::All => target.subject_ids(),
        Subjects::One(id) if target.get(id).is_some() => vec![id.clone()],
        Subjects::One(id) => {
            return Err(Error::Config(format!("unknown target subject {id}")));
        }
    };
    let seeds = seed.map(|s| vec![s]).unwrap_or_else(|| cfg.seeds.clone());
    let provenance = Provenance::new(cfg, &corpus);
    let mut out = Vec::new();
    for &seed in &seeds {
        let base = source_model(cfg, &source, &corpus, seed)?;
        for id in &ids {
            eprintln!("{protocol} on {id} (seed {seed})");
            let (pred, record, checkpoint) =
                run_protocol_with_base(protocol, &base, &source, &target, id, &cfg.training, seed)?;
            let dir = subject_dir(&cfg.paths.output, protocol.name(), id);
            let spacing = target.get(id).expect("checked").volume.spacing();
            let pred_path = save_label(
                &pred,
                spacing,
                &dir,
                Some(prediction_file(seed).trim_end_matches(".nii")),
            )?;
            register_file(&pred_path, &provenance)?;
            write_json(
                &dir.join(format!("checkpoint-seed{seed}.json")),
                &provenance,
                &serde_json::json!({ "checkpoint": checkpoint }),
            )?;
            upsert_record(&dir.join("run_record.jsonl"), &provenance, &record)?;
            out.push(RunOutcome {
                subject: id.clone(),
                seed,
                directory: dir,
                record,
            });
        }
    }
    Ok(out)
}

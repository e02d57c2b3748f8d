use std::fs;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use super::provenance::{register_file, write_json, Provenance};
use super::run::{load_corpus, prediction_file, subject_dir};
use crate::data::{load_label, Protocol};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_case, rank_methods, write_overlays, MetricsReport, RankTable};

#[derive(Clone, Debug, Default)]
pub struct EvaluateOptions {
    /// Where `<method>/<subject>/prediction-seed<k>.nii` live; defaults to the output dir.
    pub predictions: Option<PathBuf>,
    /// Empty means every protocol directory found.
    pub methods: Vec<String>,
    pub seed: Option<u64>,
    pub overlays: bool,
}

#[derive(Clone, Debug)]
pub struct EvaluateOutcome {
    pub report: MetricsReport,
    pub ranks: Option<RankTable>,
    /// Missing predictions and skipped steps.
    pub warnings: Vec<String>,
    pub missing: usize,
    pub directory: PathBuf,
}

fn discover_methods(dir: &Path) -> Vec<String> {
    Protocol::ALL
        .iter()
        .map(|p| p.name().to_owned())
        .filter(|m| dir.join(m).is_dir())
        .collect()
}

/// Score every (method, subject) prediction against the target ground truth
/// and write `<out>/evaluation/{metrics,ranks}.{csv,json}`, plus a
/// `metrics-seed<k>.json` per subject directory.
pub fn cmd_evaluate(cfg: &RunConfig, opts: &EvaluateOptions) -> Result<EvaluateOutcome> {
    let (_, target, corpus) = load_corpus(cfg)?;
    let provenance = Provenance::new(cfg, &corpus);
    let seed = opts.seed.unwrap_or(cfg.seeds[0]);
    let pred_root = opts
        .predictions
        .clone()
        .unwrap_or_else(|| cfg.paths.output.clone());
    let methods = if opts.methods.is_empty() {
        discover_methods(&pred_root)
    } else {
        opts.methods.clone()
    };
    if methods.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no predictions under {}",
            pred_root.display()
        )));
    }
    let out_dir = cfg.paths.output.join("evaluation");
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    let mut missing = 0;
    for method in &methods {
        for subject in target.items() {
            let id = subject.volume.subject_id();
            let path = subject_dir(&pred_root, method, id).join(prediction_file(seed));
            if !path.exists() {
                warnings.push(format!("missing prediction {}", path.display()));
                missing += 1;
                continue;
            }
            let gt = subject.label.as_ref().ok_or_else(|| {
                Error::InsufficientData(format!("target subject {id} has no ground truth"))
            })?;
            let pred = load_label(&path, id)?;
            let row = evaluate_case(
                method,
                id,
                &pred,
                gt,
                subject.volume.spacing(),
                cfg.metrics.connectivity,
            )?;
            write_json(
                &subject_dir(&cfg.paths.output, method, id)
                    .join(format!("metrics-seed{seed}.json")),
                &provenance,
                &row,
            )?;
            if opts.overlays {
                let dir = out_dir.join("overlays").join(method).join(id);
                let files = write_overlays(
                    &subject.volume,
                    &pred,
                    gt,
                    cfg.training.axis,
                    &dir,
                    "slice",
                    cfg.metrics.overlay_scale,
                )?;
                for f in files {
                    register_file(&f, &provenance)?;
                }
            }
            rows.push(row);
        }
    }
    let report = MetricsReport::new(rows);
    fs::create_dir_all(&out_dir)?;
    let csv = out_dir.join("metrics.csv");
    fs::write(&csv, report.to_csv())?;
    register_file(&csv, &provenance)?;
    write_json(&out_dir.join("metrics.json"), &provenance, &report)?;

    let ranks = match rank_methods(&report, cfg.metrics.alpha) {
        Ok(table) => {
            let csv = out_dir.join("ranks.csv");
            fs::write(&csv, table.to_csv())?;
            register_file(&csv, &provenance)?;
            write_json(&out_dir.join("ranks.json"), &provenance, &table)?;
            warnings.extend(table.warnings.iter().cloned());
            Some(table)
        }
        Err(Error::InsufficientData(msg)) => {
            warnings.push(format!("rank table skipped: {msg}"));
            None
        }
        Err(e) => return Err(e),
    };
    Ok(EvaluateOutcome {
        report,
        ranks,
        warnings,
        missing,
        directory: out_dir,
    })
}

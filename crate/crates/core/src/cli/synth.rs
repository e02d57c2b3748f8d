use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, SynthConfig};
use super::provenance::{write_json, CorpusManifest, Provenance};
use crate::data::{make_synthetic_domains, save_label, save_volume, Dataset};
use crate::error::Result;

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    (d, kolmogorov_q((ne + 0.12 + 0.11 / ne) * d))
}

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let term = sign * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// `n` voxel intensities drawn uniformly over all subjects of `dataset`.
pub fn intensity_sample(dataset: &Dataset, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = dataset.items();
    (0..n)
        .map(|_| {
            let v = items[rng.random_range(0..items.len())].volume.voxels();
            v[rng.random_range(0..v.len())]
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityCheck {
    pub samples: usize,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub synth: SynthConfig,
    pub corpus: CorpusManifest,
    /// Source vs target intensity distributions; small p means a visible shift.
    pub intensity_check: IntensityCheck,
}

pub const KS_SAMPLES: usize = 1000;

/// Write the synthetic corpus to `paths.source` / `paths.target` and its
/// manifest to `<output>/corpus_manifest.json`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<(PathBuf, SynthManifest)> {
    let s = &cfg.synth;
    let (source, target) =
        make_synthetic_domains(s.n_source, s.n_target, &s.shift(), s.image_size, s.depth)?;
    for (ds, dir) in [(&source, &cfg.paths.source), (&target, &cfg.paths.target)] {
        std::fs::create_dir_all(dir)?;
        for subject in ds.items() {
            save_volume(&subject.volume, dir)?;
            if let Some(label) = &subject.label {
                save_label(&label.detached(), subject.volume.spacing(), dir, None)?;
            }
        }
    }
    let corpus = CorpusManifest::scan(&cfg.paths.source, &cfg.paths.target)?;
    let (ks_statistic, ks_p_value) = ks_two_sample(
        &intensity_sample(&source, KS_SAMPLES, s.seed),
        &intensity_sample(&target, KS_SAMPLES, s.seed.wrapping_add(1)),
    );
    let manifest = SynthManifest {
        synth: s.clone(),
        corpus: corpus.clone(),
        intensity_check: IntensityCheck {
            samples: KS_SAMPLES,
            ks_statistic,
            ks_p_value,
        },
    };
    let path = cfg.paths.output.join("corpus_manifest.json");
    write_json(&path, &Provenance::new(cfg, &corpus), &manifest)?;
    Ok((path, manifest))
}

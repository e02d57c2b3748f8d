//! Synthetic "brains" with hyperintense lesions, and a controllable intensity shift.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Dims, Domain, LabelMap, Subject, Volume};
use crate::augmentation::{bias_field, bias_terms};
use crate::error::{Error, Result};

/// In-plane and through-plane voxel size of generated volumes, `(depth, height, width)`.
pub const SYNTHETIC_SPACING: [f64; 3] = [3.0, 1.0, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticShiftParams {
    /// Power applied to `[0, 1]` intensities.
    pub gamma: f64,
    /// Polynomial coefficients of a multiplicative `exp(poly)` bias field, see
    /// [`bias_terms`] for the monomial order. Empty means no bias field.
    pub bias_coeffs: Vec<f64>,
    /// Gaussian noise standard deviation as a fraction of the intensity range.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticShiftParams {
    pub fn identity(seed: u64) -> Self {
        Self {
            gamma: 1.0,
            bias_coeffs: Vec::new(),
            noise_sigma: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.25..=4.0).contains(&self.gamma) {
            return Err(Error::Parameter(format!(
                "gamma {} outside [0.25, 4]",
                self.gamma
            )));
        }
        if !(0.0..=0.5).contains(&self.noise_sigma) {
            return Err(Error::Parameter(format!(
                "noise_sigma {} outside [0, 0.5]",
                self.noise_sigma
            )));
        }
        if self.bias_coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Parameter("non-finite bias coefficient".into()));
        }
        let n = self.bias_coeffs.len();
        if n > 0 && !(0..=8).any(|order| bias_terms(order).len() == n) {
            return Err(Error::Parameter(format!(
                "{n} bias coefficients do not form a complete polynomial"
            )));
        }
        Ok(())
    }
}

/// Independent seed for stream `stream`, item `index` (SplitMix64 finaliser).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_SOURCE: u64 = 1;
const STREAM_TARGET: u64 = 2;
const STREAM_NOISE: u64 = 3;

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
}

impl Ellipse {
    /// Squared normalised radius; ≤ 1 inside.
    fn rho2(&self, y: f64, x: f64, shrink: f64) -> f64 {
        let dy = (y - self.cy) / (self.ry * shrink);
        let dx = (x - self.cx) / (self.rx * shrink);
        dy * dy + dx * dx
    }
}

/// One anatomy: `[0, 1]` intensities and the exact lesion mask, `depth × size × size`.
pub fn synthetic_subject(seed: u64, image_size: usize, depth: usize) -> (Vec<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = image_size as f64;
    let centre = (s - 1.0) / 2.0;
    let brain = Ellipse {
        cy: centre + rng.random_range(-0.04..0.04) * s,
        cx: centre + rng.random_range(-0.04..0.04) * s,
        ry: rng.random_range(0.36..0.43) * s,
        rx: rng.random_range(0.29..0.36) * s,
    };
    let offset = rng.random_range(0.06..0.09) * s;
    let ventricles = [-1.0, 1.0].map(|side| Ellipse {
        cy: brain.cy,
        cx: brain.cx + side * offset,
        ry: rng.random_range(0.09..0.13) * s,
        rx: rng.random_range(0.03..0.045) * s,
    });
    let waves: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            [
                rng.random_range(0.02..0.05),
                rng.random_range(0.08..0.35),
                rng.random_range(0.08..0.35),
                rng.random_range(0.0..std::f64::consts::TAU),
            ]
        })
        .collect();
    let zc = (depth as f64 - 1.0) / 2.0;
    let zr = (0.75 * depth as f64).max(1.0);
    // Cross-section of the ellipsoid at slice z, as a fraction of the mid-slice.
    let shrink: Vec<f64> = (0..depth)
        .map(|z| (1.0 - ((z as f64 - zc) / zr).powi(2)).max(0.05).sqrt())
        .collect();

    let n = depth * image_size * image_size;
    let idx = |z: usize, y: usize, x: usize| (z * image_size + y) * image_size + x;
    let mut voxels = vec![0.0; n];
    let mut inside = vec![false; n];
    let texture = Normal::new(0.0, 0.01).expect("valid std");
    for z in 0..depth {
        for y in 0..image_size {
            for x in 0..image_size {
                let (yf, xf) = (y as f64, x as f64);
                let rho2 = brain.rho2(yf, xf, shrink[z]);
                if rho2 > 1.0 {
                    continue;
                }
                let i = idx(z, y, x);
                inside[i] = true;
                let mut v = if rho2 > 0.72 { 0.58 } else { 0.42 };
                // Soft edge so the outline is smooth rather than binary.
                v *= (8.0 * (1.0 - rho2)).min(1.0).max(0.35);
                if ventricles.iter().any(|e| e.rho2(yf, xf, shrink[z]) <= 1.0) {
                    v = 0.12;
                }
                v += waves
                    .iter()
                    .map(|[a, ky, kx, ph]| a * (ky * yf + kx * xf + ph).sin())
                    .sum::<f64>();
                v += texture.sample(&mut rng);
                voxels[i] = v.max(0.0);
            }
        }
    }

    let mut mask = vec![0u8; n];
    let count = rng.random_range(1..=10);
    let scale = (s / 48.0).max(1.0);
    for _ in 0..count {
        let z0 = rng.random_range(0..depth);
        // Rejection-sample an interior, non-ventricular centre voxel.
        let (y0, x0) = loop {
            let y = rng.random_range(0..image_size);
            let x = rng.random_range(0..image_size);
            let (yf, xf) = (y as f64, x as f64);
            if brain.rho2(yf, xf, shrink[z0]) < 0.5
                && ventricles.iter().all(|e| e.rho2(yf, xf, shrink[z0]) > 1.6)
            {
                break (y, x);
            }
        };
        let ry = rng.random_range(1.2..2.6) * scale;
        let rx = rng.random_range(1.2..2.6) * scale;
        let rz = rng.random_range(0.5..1.5);
        let peak = rng.random_range(0.82..0.95);
        let reach = |r: f64| r.ceil() as isize;
        for dz in -reach(rz)..=reach(rz) {
            for dy in -reach(ry)..=reach(ry) {
                for dx in -reach(rx)..=reach(rx) {
                    let (z, y, x) = (z0 as isize + dz, y0 as isize + dy, x0 as isize + dx);
                    if z < 0 || y < 0 || x < 0 {
                        continue;
                    }
                    let (z, y, x) = (z as usize, y as usize, x as usize);
                    if z >= depth || y >= image_size || x >= image_size || !inside[idx(z, y, x)] {
                        continue;
                    }
                    let d2 = (dz as f64 / rz).powi(2)
                        + (dy as f64 / ry).powi(2)
                        + (dx as f64 / rx).powi(2);
                    if d2 <= 1.0 {
                        let i = idx(z, y, x);
                        mask[i] = 1;
                        voxels[i] = voxels[i].max(peak * (1.0 - 0.15 * d2));
                    }
                }
            }
        }
    }
    (min_max(voxels), mask)
}

fn min_max(mut v: Vec<f64>) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range > 0.0 {
        v.iter_mut().for_each(|x| *x = (*x - lo) / range);
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
    }
    v
}

/// Power law, then the in-plane bias field on every slice, then additive
/// Gaussian noise, then min-max rescaling to `[0, 1]`.
pub fn apply_shift(
    voxels: &[f64],
    dims: Dims,
    shift: &SyntheticShiftParams,
    noise_seed: u64,
) -> Vec<f64> {
    let [d, h, w] = dims;
    let mut out: Vec<f64> = voxels
        .iter()
        .map(|v| v.max(0.0).powf(shift.gamma))
        .collect();
    if !shift.bias_coeffs.is_empty() {
        let field = bias_field(&shift.bias_coeffs, h, w);
        for z in 0..d {
            out[z * h * w..(z + 1) * h * w]
                .iter_mut()
                .zip(&field)
                .for_each(|(v, b)| *v *= b);
        }
    }
    if shift.noise_sigma > 0.0 {
        let lo = out.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let noise = Normal::new(0.0, shift.noise_sigma * (hi - lo)).expect("valid std");
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        out.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
    }
    min_max(out)
}

/// Anatomy seed of the `index`-th subject of a domain.
pub(crate) fn anatomy_seed(seed: u64, domain: Domain, index: usize) -> u64 {
    let stream = match domain {
        Domain::Source => STREAM_SOURCE,
        Domain::Target => STREAM_TARGET,
    };
    derive_seed(seed, stream, index as u64)
}

/// Source subjects `src1..`, target subjects `S1..`, both `depth × size × size`.
/// Target volumes carry `shift`; their masks are kept for evaluation.
pub fn make_synthetic_domains(
    n_source: usize,
    n_target: usize,
    shift: &SyntheticShiftParams,
    image_size: usize,
    depth: usize,
) -> Result<(Dataset, Dataset)> {
    shift.validate()?;
    if n_source == 0 || n_target == 0 {
        return Err(Error::Parameter(
            "need at least one subject per domain".into(),
        ));
    }
    if image_size < 32 {
        return Err(Error::Parameter(format!("image_size {image_size} < 32")));
    }
    if depth == 0 {
        return Err(Error::Parameter("depth must be positive".into()));
    }
    let dims = [depth, image_size, image_size];
    let build = |domain: Domain, count: usize| -> Result<Dataset> {
        let items = (0..count)
            .map(|k| {
                let id = match domain {
                    Domain::Source => format!("src{}", k + 1),
                    Domain::Target => format!("S{}", k + 1),
                };
                let (mut voxels, mask) =
                    synthetic_subject(anatomy_seed(shift.seed, domain, k), image_size, depth);
                if domain == Domain::Target {
                    voxels = apply_shift(
                        &voxels,
                        dims,
                        shift,
                        derive_seed(shift.seed, STREAM_NOISE, k as u64),
                    );
                }
                Ok(Subject {
                    volume: Volume::new(voxels, dims, SYNTHETIC_SPACING, id.clone(), domain)?,
                    label: Some(LabelMap::new(mask, dims, id)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(domain, items)
    };
    Ok((
        build(Domain::Source, n_source)?,
        build(Domain::Target, n_target)?,
    ))
}

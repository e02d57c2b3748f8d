use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{max_relative_error, numeric_gradient};

fn random_image(h: usize, w: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()
}

fn as_tensor(v: &[f64]) -> Tensor {
    Tensor::new(&[v.len()], v.to_vec())
}

#[test]
fn collapsed_ranges_sample_identity() {
    let collapsed = AugmentationConfig {
        rotation_deg: Range::new(0.0, 0.0),
        scale: Range::new(1.0, 1.0),
        shear: Range::new(0.0, 0.0),
        translation: Range::new(0.0, 0.0),
        bias_coeff: Range::new(0.0, 0.0),
        kspace_phase: Range::new(0.0, 0.0),
        kspace_max_line_fraction: 0.0,
        ..AugmentationConfig::default()
    };
    collapsed.validate().unwrap();
    let spec = sample_spec(9, &collapsed, 16);
    assert!(spec.is_spatial_identity());
    assert!(spec.bias_coeffs.iter().all(|&c| c == 0.0));
    assert!(spec.kspace.lines.is_empty());
    let img = random_image(16, 16, 1);
    assert_eq!(augment_image(&spec, &img, 16, 16), img);

    let off = sample_spec(9, &AugmentationConfig::identity(), 16);
    assert_eq!(
        off,
        AugmentationSpec {
            seed: 9,
            ..AugmentationSpec::identity()
        }
    );
}

#[test]
fn sampling_is_deterministic_and_within_ranges() {
    let cfg = AugmentationConfig::default();
    assert_eq!(sample_spec(3, &cfg, 32), sample_spec(3, &cfg, 32));
    assert_ne!(sample_spec(3, &cfg, 32), sample_spec(4, &cfg, 32));
    for seed in 0..200 {
        let s = sample_spec(seed, &cfg, 32);
        assert!(cfg.rotation_deg.contains(s.rotation_deg));
        assert!(s.scale.iter().all(|&v| cfg.scale.contains(v)));
        assert!(cfg.shear.contains(s.shear));
        assert!(s.translation.iter().all(|&v| cfg.translation.contains(v)));
        assert_eq!(s.bias_coeffs.len(), 10);
        assert!(s.bias_coeffs.iter().all(|&v| cfg.bias_coeff.contains(v)));
        assert!(s.kspace.lines.len() <= 3);
        assert!(s.kspace.lines.windows(2).all(|w| w[1] == w[0] + 1));
        assert!(s.kspace.lines.iter().all(|&l| l < 32));
    }
}

#[test]
fn monte_carlo_means_near_range_midpoints() {
    let cfg = AugmentationConfig::default();
    let n = 1000;
    let specs: Vec<_> = (0..n).map(|s| sample_spec(s, &cfg, 64)).collect();
    let check = |name: &str, range: Range, values: Vec<f64>| {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let se = (range.hi - range.lo) / 12f64.sqrt() / (values.len() as f64).sqrt();
        assert!(
            (mean - range.midpoint()).abs() < 3.0 * se,
            "{name}: mean {mean} vs midpoint {}",
            range.midpoint()
        );
    };
    check(
        "rotation",
        cfg.rotation_deg,
        specs.iter().map(|s| s.rotation_deg).collect(),
    );
    check(
        "scale_x",
        cfg.scale,
        specs.iter().map(|s| s.scale[0]).collect(),
    );
    check(
        "scale_y",
        cfg.scale,
        specs.iter().map(|s| s.scale[1]).collect(),
    );
    check("shear", cfg.shear, specs.iter().map(|s| s.shear).collect());
    check(
        "translation_x",
        cfg.translation,
        specs.iter().map(|s| s.translation[0]).collect(),
    );
    check(
        "translation_y",
        cfg.translation,
        specs.iter().map(|s| s.translation[1]).collect(),
    );
    check(
        "bias_c00",
        cfg.bias_coeff,
        specs.iter().map(|s| s.bias_coeffs[0]).collect(),
    );
    check(
        "bias_c03",
        cfg.bias_coeff,
        specs.iter().map(|s| s.bias_coeffs[9]).collect(),
    );
    check(
        "kspace_phase",
        cfg.kspace_phase,
        specs
            .iter()
            .filter(|s| !s.kspace.lines.is_empty())
            .map(|s| s.kspace.phase)
            .collect(),
    );
}

#[test]
fn validate_requires_identity_inside_ranges() {
    let bad = AugmentationConfig {
        scale: Range::new(1.05, 1.2),
        ..AugmentationConfig::default()
    };
    assert!(bad.validate().is_err());
    assert!(AugmentationConfig::default().validate().is_ok());
}

#[test]
fn identity_spatial_is_exact() {
    let img = random_image(16, 16, 2);
    let out = apply_spatial(
        &AugmentationSpec::identity(),
        &img,
        16,
        16,
        Interpolation::Bilinear,
    );
    assert_eq!(out, img);
}

/// Direct index shift with zero padding.
fn shift_oracle(img: &[f64], h: usize, w: usize, dx: isize, dy: isize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (sx, sy) = (x - dx, y - dy);
            if sx >= 0 && sy >= 0 && sx < w as isize && sy < h as isize {
                out[(y * w as isize + x) as usize] = img[(sy * w as isize + sx) as usize];
            }
        }
    }
    out
}

#[test]
fn integer_translation_is_an_index_shift() {
    let (h, w) = (12, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img: Vec<f64> = (0..h * w)
        .map(|_| {
            if rng.random_bool(0.1) {
                rng.random_range(0.5..1.0)
            } else {
                0.0
            }
        })
        .collect();
    let spec = AugmentationSpec::translation(2.0 / w as f64, 0.0);
    let out = apply_spatial(&spec, &img, h, w, Interpolation::Bilinear);
    let expected = shift_oracle(&img, h, w, 2, 0);
    for (a, b) in out.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
    let spec = AugmentationSpec::translation(-1.0 / w as f64, 3.0 / h as f64);
    let out = apply_spatial(&spec, &img, h, w, Interpolation::Nearest);
    assert_eq!(out, shift_oracle(&img, h, w, -1, 3));
}

#[test]
fn rotation_round_trip_on_linear_ramp() {
    let (h, w) = (32, 32);
    let ramp = |x: f64, y: f64| 0.3 * x - 0.2 * y + 1.0;
    let img: Vec<f64> = (0..h * w)
        .map(|i| ramp((i % w) as f64, (i / w) as f64))
        .collect();
    let theta = 7.0;
    let once = apply_spatial(
        &AugmentationSpec::rotation(theta),
        &img,
        h,
        w,
        Interpolation::Bilinear,
    );
    let back = apply_spatial(
        &AugmentationSpec::rotation(-theta),
        &once,
        h,
        w,
        Interpolation::Bilinear,
    );

    // interior: pixels whose samples stay well inside the image for both rotations
    let c = (w as f64 - 1.0) / 2.0;
    let interior = |x: usize, y: usize| {
        let (dx, dy) = (x as f64 - c, y as f64 - c);
        (dx * dx + dy * dy).sqrt() < c - 3.0
    };
    let (cos, sin) = (theta.to_radians().cos(), theta.to_radians().sin());
    let mut single_err: f64 = 0.0;
    let mut round_err: f64 = 0.0;
    for y in 0..h {
        for x in 0..w {
            if !interior(x, y) {
                continue;
            }
            // analytic value of the once-rotated ramp at (x, y)
            let (u, v) = (x as f64 - c, y as f64 - c);
            let (sx, sy) = (cos * u + sin * v + c, -sin * u + cos * v + c);
            single_err = single_err.max((once[y * w + x] - ramp(sx, sy)).abs());
            round_err = round_err.max((back[y * w + x] - img[y * w + x]).abs());
        }
    }
    assert!(
        round_err <= 2.0 * single_err + 1e-9,
        "round trip {round_err}, single {single_err}"
    );
    assert!(round_err < 1e-9);
}

#[test]
fn intensity_identity_round_trip() {
    let img = random_image(16, 20, 4);
    let spec = AugmentationSpec {
        bias_coeffs: vec![0.0; 10],
        kspace: KspaceParams {
            lines: vec![],
            phase: 0.0,
        },
        ..AugmentationSpec::identity()
    };
    let out = apply_intensity(&spec, &img, 16, 20);
    assert!(out.iter().zip(&img).all(|(a, b)| (a - b).abs() < 1e-10));
    // explicit FFT round trip with zero phase
    let out = apply_kspace(&[0, 1, 2, 3], 0.0, &img, 16, 20);
    assert!(out.iter().zip(&img).all(|(a, b)| (a - b).abs() < 1e-10));
}

#[test]
fn constant_bias_is_exp_c00() {
    let img = vec![1.0; 64];
    let out = apply_bias(&[0.37], &img, 8, 8);
    assert!(out.iter().all(|v| (v - 0.37f64.exp()).abs() < 1e-12));
}

#[test]
fn bias_field_matches_closed_form_polynomial() {
    // c10 · x + c01 · y at the corners x, y ∈ {-1, 1}
    let field = bias_field(&[0.0, 0.2, -0.3], 5, 5);
    assert!((field[0] - (-0.2f64 + 0.3).exp()).abs() < 1e-12);
    assert!((field[4] - (0.2f64 + 0.3).exp()).abs() < 1e-12);
    assert!((field[24] - (0.2f64 - 0.3).exp()).abs() < 1e-12);
    assert!((field[12] - 1.0).abs() < 1e-12);
}

#[test]
fn global_phase_scales_by_cosine() {
    let (h, w) = (8, 12);
    let img = random_image(h, w, 5);
    let all: Vec<usize> = (0..h).collect();
    let out = apply_kspace(&all, PI, &img, h, w);
    assert!(out.iter().zip(&img).all(|(a, b)| (a + b).abs() < 1e-10));
    let phi = 0.6;
    let out = apply_kspace(&all, phi, &img, h, w);
    assert!(out
        .iter()
        .zip(&img)
        .all(|(a, b)| (a - phi.cos() * b).abs() < 1e-10));
}

#[test]
fn apply_to_prediction_identity_and_translation() {
    let (h, w) = (16, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pred: Vec<f64> = (0..h * w)
        .map(|_| if rng.random_bool(0.2) { 1.0 } else { 0.0 })
        .collect();
    assert_eq!(
        apply_to_prediction(&AugmentationSpec::identity(), &pred, h, w),
        pred
    );
    let spec = AugmentationSpec::translation(0.0, -3.0 / h as f64);
    let out = apply_to_prediction(&spec, &pred, h, w);
    let expected = shift_oracle(&pred, h, w, 0, -3);
    assert!(out
        .iter()
        .zip(&expected)
        .all(|(a, b)| (a - b).abs() < 1e-12));
}

fn sample_full(seed: u64) -> AugmentationSpec {
    let cfg = AugmentationConfig {
        kspace_max_line_fraction: 0.25,
        ..AugmentationConfig::default()
    };
    let mut spec = sample_spec(seed, &cfg, 16);
    if spec.kspace.lines.is_empty() {
        spec.kspace = KspaceParams {
            lines: vec![3, 4, 5],
            phase: 0.5,
        };
    }
    spec
}

#[test]
fn apply_to_prediction_gradient_matches_finite_differences() {
    let (h, w) = (16, 16);
    let spec = sample_full(7);
    // keep away from the clamp boundaries
    let p0: Vec<f64> = random_image(h, w, 8)
        .iter()
        .map(|v| 0.1 + 0.8 * v)
        .collect();
    let weights = random_image(h, w, 9);
    let f = |p: &Tensor| {
        apply_to_prediction(&spec, p.data(), h, w)
            .iter()
            .zip(&weights)
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(&[1, 1, h, w], p0.clone()));
    let y = warp_predictions(&mut g, x, std::slice::from_ref(&spec));
    let y = g.mul_const(y, Tensor::new(&[1, 1, h, w], weights.clone()));
    let s = g.sum(y);
    g.backward(s);
    let analytic = g.grad(x).unwrap().clone().reshape(&[h * w]);
    let numeric = numeric_gradient(f, &as_tensor(&p0), 1e-5);
    assert!(max_relative_error(&analytic, &numeric, 1e-8) < 1e-4);
}

/// Each family's vector-Jacobian product against central differences.
#[test]
fn every_family_is_differentiable() {
    let (h, w) = (16, 16);
    let base = sample_full(10);
    let families = [
        (
            "affine",
            AugmentationSpec {
                bias_coeffs: vec![],
                kspace: KspaceParams::default(),
                ..base.clone()
            },
        ),
        (
            "bias",
            AugmentationSpec {
                bias_coeffs: base.bias_coeffs.clone(),
                ..AugmentationSpec::identity()
            },
        ),
        (
            "kspace",
            AugmentationSpec {
                kspace: base.kspace.clone(),
                ..AugmentationSpec::identity()
            },
        ),
        ("all", base.clone()),
    ];
    let x0 = random_image(h, w, 11);
    let weights = random_image(h, w, 12);
    for (name, spec) in families {
        let f = |x: &Tensor| {
            augment_image(&spec, x.data(), h, w)
                .iter()
                .zip(&weights)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let g_int = apply_intensity_vjp(&spec, &weights, h, w);
        let analytic = apply_spatial_vjp(&spec, &g_int, h, w);
        let numeric = numeric_gradient(f, &as_tensor(&x0), 1e-4);
        let err = max_relative_error(&as_tensor(&analytic), &numeric, 1e-8);
        assert!(err < 1e-3, "{name}: {err}");
    }
}

#[test]
fn augment_batch_applies_per_sample_specs() {
    let a = random_image(8, 8, 13);
    let b = random_image(8, 8, 14);
    let batch = Tensor::new(&[2, 1, 8, 8], [a.clone(), b.clone()].concat());
    let specs = [sample_full(1), AugmentationSpec::identity()];
    let out = augment_batch(&specs, &batch);
    assert_eq!(
        out.plane(0, 0),
        augment_image(&specs[0], &a, 8, 8).as_slice()
    );
    assert_eq!(out.plane(1, 0), b.as_slice());
}

proptest! {
    #[test]
    fn bias_field_is_positive(coeffs in proptest::collection::vec(-5.0f64..5.0, 1..10)) {
        prop_assert!(bias_field(&coeffs, 9, 7).iter().all(|&b| b > 0.0));
    }

    #[test]
    fn nearest_warp_keeps_masks_binary(seed in 0u64..10_000) {
        let spec = sample_spec(seed, &AugmentationConfig::default(), 16);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<f64> = (0..256).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
        let out = apply_spatial(&spec, &mask, 16, 16, Interpolation::Nearest);
        prop_assert!(out.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn identity_spec_is_fixed_point(seed in 0u64..1000) {
        let img = random_image(12, 16, seed);
        let out = augment_image(&AugmentationSpec::identity(), &img, 12, 16);
        prop_assert!(out.iter().zip(&img).all(|(a, b)| (a - b).abs() < 1e-10));
    }
}

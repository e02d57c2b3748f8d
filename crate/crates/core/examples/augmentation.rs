//! Sample an augmentation, apply it to a slice and warp a prediction to match.

use ttuda::augmentation::{apply_to_prediction, augment_image, sample_spec, AugmentationConfig};
use ttuda::data::{extract_slices, synthetic_subject, Axis, Domain, Volume, SYNTHETIC_SPACING};

fn main() -> ttuda::Result<()> {
    let (voxels, mask) = synthetic_subject(3, 32, 4);
    let volume = Volume::new(
        voxels,
        [4, 32, 32],
        SYNTHETIC_SPACING,
        "demo",
        Domain::Target,
    )?;
    let slice = &extract_slices(&volume, Axis::Axial)[2];
    let (h, w) = (slice.height, slice.width);

    let cfg = AugmentationConfig::default();
    for seed in 0..4 {
        let spec = sample_spec(seed, &cfg, h);
        let aug = augment_image(&spec, &slice.data, h, w);
        let m: Vec<f64> = mask[2 * h * w..3 * h * w]
            .iter()
            .map(|&v| f64::from(v))
            .collect();
        let warped = apply_to_prediction(&spec, &m, h, w);
        println!(
            "seed {seed}: rot {:+.1}° scale {:.2}/{:.2} bias terms {} k-space lines {} | mean {:.3} -> {:.3}, mask area {:.1} -> {:.1}",
            spec.rotation_deg,
            spec.scale[0],
            spec.scale[1],
            spec.bias_coeffs.len(),
            spec.kspace.lines.len(),
            slice.data.iter().sum::<f64>() / (h * w) as f64,
            aug.iter().sum::<f64>() / (h * w) as f64,
            m.iter().sum::<f64>(),
            warped.iter().sum::<f64>(),
        );
    }
    Ok(())
}

//! Generate a shifted source/target corpus, write it as NIfTI and read it back.

use ttuda::data::{
    load_dataset_dir, make_synthetic_domains, save_label, save_volume, Domain, SyntheticShiftParams,
};

fn main() -> ttuda::Result<()> {
    let shift = SyntheticShiftParams {
        gamma: 1.8,
        bias_coeffs: vec![0.0, 0.3, -0.25],
        noise_sigma: 0.05,
        seed: 7,
    };
    let (source, target) = make_synthetic_domains(3, 3, &shift, 48, 6)?;
    let dir = std::env::temp_dir().join("ttuda-synthetic-corpus");
    for (ds, sub) in [(&source, "source"), (&target, "target")] {
        for s in ds.items() {
            save_volume(&s.volume, &dir.join(sub))?;
            if let Some(l) = &s.label {
                save_label(&l.detached(), s.volume.spacing(), &dir.join(sub), None)?;
            }
        }
    }
    let back = load_dataset_dir(&dir.join("target"), Domain::Target)?;
    for s in back.items() {
        let v = s.volume.voxels();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let lesion = s
            .label
            .as_ref()
            .map(|l| l.read().iter().filter(|&&x| x == 1).count());
        println!(
            "{} dims {:?} spacing {:?} mean {:.3} lesion voxels {:?}",
            s.volume.subject_id(),
            s.volume.dims(),
            s.volume.spacing(),
            mean,
            lesion
        );
    }
    println!("written to {}", dir.display());
    Ok(())
}

//! Train a small U-Net on labelled source volumes and segment a target volume.

use ttuda::data::{make_synthetic_domains, SyntheticShiftParams};
use ttuda::evaluation::dice;
use ttuda::network::ModelConfig;
use ttuda::protocols::{predict_volume, train_source, OptimConfig, ProtocolConfig};

fn main() -> ttuda::Result<()> {
    let iterations = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(200);
    let shift = SyntheticShiftParams::identity(0);
    let (source, target) = make_synthetic_domains(4, 2, &shift, 32, 4)?;
    let cfg = ProtocolConfig {
        model: ModelConfig::reduced(3, vec![8, 16, 32]),
        optim: OptimConfig {
            iterations,
            batch_size: 8,
            ..OptimConfig::default()
        },
        ..ProtocolConfig::default()
    };
    let trained = train_source(&source, &cfg.model, &cfg.optim, cfg.axis, 0)?;
    for log in trained
        .history
        .iter()
        .step_by((iterations as usize / 10).max(1))
    {
        println!(
            "iteration {:4}: dice loss {:.4}",
            log.iteration, log.losses.l_sup
        );
    }
    let net = trained.checkpoint.unet()?;
    for s in target.items() {
        let pred = predict_volume(&net, &s.volume, cfg.threshold, cfg.axis)?;
        let d = dice(&pred, s.label.as_ref().expect("synthetic"))?;
        println!(
            "{}: dice {:.3}",
            s.volume.subject_id(),
            d.value.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

//! Switch off one adaptation term at a time on a single target subject.
//!
//! `cargo run --release --example ablation -- 2000 S4`
//!
//! Reports Dice, predicted and true lesion volume, and the mean losses over
//! the last 100 iterations for: no adaptation, the full objective,
//! adversarial only (α = 0), consistency only (reversal strength 0).

use ttuda::cli::DeskExperiment;
use ttuda::data::{make_synthetic_domains, Protocol};
use ttuda::evaluation::dice;
use ttuda::protocols::{run_protocol_with_base, train_source};

fn main() -> ttuda::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().and_then(|a| a.parse().ok()).unwrap_or(300);
    let subject = args.next().unwrap_or_else(|| "S4".into());
    let mut exp = DeskExperiment::default();
    exp.training.optim.iterations = iterations;
    let s = &exp.synth;
    let (source, target) =
        make_synthetic_domains(s.n_source, s.n_target, &s.shift(), s.image_size, s.depth)?;
    let base = train_source(
        &source,
        &exp.training.model,
        &exp.training.optim,
        exp.training.axis,
        0,
    )?;

    let variants = [
        ("no adaptation", Protocol::NoAdaptation, 1.0, 1.0),
        ("full", Protocol::OneShotUda, 1.0, 1.0),
        ("adversarial only", Protocol::OneShotUda, 0.0, 1.0),
        ("consistency only", Protocol::OneShotUda, 1.0, 0.0),
    ];
    let mut runs = Vec::new();
    for (name, protocol, alpha, reversal) in variants {
        let mut cfg = exp.training.clone();
        cfg.optim.alpha_pc = alpha;
        cfg.discriminator.grl_lambda = reversal;
        let (pred, record, _) =
            run_protocol_with_base(protocol, &base, &source, &target, &subject, &cfg, 0)?;
        let tail = &record.history[record.history.len().saturating_sub(100)..];
        let mean = |f: fn(&ttuda::losses::LossBundle) -> f64| {
            tail.iter().map(|l| f(&l.losses)).sum::<f64>() / tail.len().max(1) as f64
        };
        let losses = (mean(|l| l.l_sup), mean(|l| l.l_pc), mean(|l| l.l_adv));
        runs.push((name, pred, losses));
    }

    let gt = target
        .get(&subject)
        .and_then(|t| t.label.as_ref())
        .expect("unknown subject");
    let truth: usize = gt.read().iter().map(|&v| usize::from(v)).sum();
    for (name, pred, (sup, pc, adv)) in &runs {
        let volume: usize = pred.read().iter().map(|&v| usize::from(v)).sum();
        println!(
            "{name:>17}: dice {:.4}, lesion voxels {volume} (true {truth}) | last-100 l_sup {sup:.3} l_pc {pc:.3} l_adv {adv:.3}",
            dice(pred, gt)?.value.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

//! The synthetic comparison of no adaptation, one-shot and test-time
//! adaptation. The default settings take over an hour on one core; pass a
//! smaller iteration count and seed count to try it quickly:
//!
//! `cargo run --release --example desk_experiment -- 200 1`

use ttuda::cli::{run_desk_experiment, DeskExperiment};

fn main() -> ttuda::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut exp = DeskExperiment::default();
    if let Some(it) = args.next().and_then(|a| a.parse().ok()) {
        exp.training.optim.iterations = it;
    }
    if let Some(n) = args.next().and_then(|a| a.parse::<u64>().ok()) {
        exp.seeds = (0..n).collect();
    }
    let result = run_desk_experiment(&exp, |msg| eprintln!("{msg}"))?;
    for c in &result.cases {
        println!(
            "{:>14} seed {} {}: dice {:.4}",
            c.protocol.name(),
            c.seed,
            c.subject,
            c.dice
        );
    }
    for &p in &exp.protocols {
        println!(
            "median {:>14}: {:.4}",
            p.name(),
            result.median_dice(p).unwrap_or(f64::NAN)
        );
    }
    println!("labels untouched until evaluation: {}", result.leak_free());
    Ok(())
}

//! Adapt a source model to one unlabeled target subject and compare with the
//! unadapted model. The label is only read after all three runs finish.
//!
//! `cargo run --release --example test_time_adaptation -- 2000 S2`

use ttuda::cli::DeskExperiment;
use ttuda::data::{make_synthetic_domains, Protocol};
use ttuda::evaluation::dice;
use ttuda::protocols::{run_protocol_with_base, train_source};

fn main() -> ttuda::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().and_then(|a| a.parse().ok()).unwrap_or(300);
    let subject = args.next().unwrap_or_else(|| "S2".into());
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

    let mut runs = Vec::new();
    for protocol in [
        Protocol::NoAdaptation,
        Protocol::OneShotUda,
        Protocol::TestTimeUda,
    ] {
        let (pred, record, _) = run_protocol_with_base(
            protocol,
            &base,
            &source,
            &target,
            &subject,
            &exp.training,
            0,
        )?;
        let last = record.history.last().map(|l| l.losses);
        println!(
            "{:>14}: unlabeled pool {:?}, final losses {:?}",
            protocol.name(),
            record.split.unlabeled_pool,
            last
        );
        runs.push((protocol, pred));
    }

    let gt = target
        .get(&subject)
        .and_then(|t| t.label.as_ref())
        .expect("unknown subject");
    assert_eq!(gt.read_count(), 0, "no run touched the test label");
    for (protocol, pred) in &runs {
        println!(
            "{:>14}: dice {:.4}",
            protocol.name(),
            dice(pred, gt)?.value.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

//! Gradient reversal in front of the domain discriminator: forward is the
//! identity, backward flips and scales the gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ttuda::autograd::Graph;
use ttuda::network::{grad_reverse, Discriminator, DiscriminatorConfig, Mode};
use ttuda::protocols::grl_lambda;
use ttuda::Tensor;

fn main() -> ttuda::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = DiscriminatorConfig {
        input_channels: 6,
        input_size: (16, 16),
        conv_channels: vec![8, 8, 16, 16],
        fc_hidden: vec![16],
        ..DiscriminatorConfig::default()
    };
    let mut disc = Discriminator::new(cfg, &mut rng)?;
    let features = Tensor::from_fn(&[4, 6, 16, 16], |i| ((i * 37 % 101) as f64 / 101.0) - 0.5);

    for lambda in [0.0, 0.5, 1.0] {
        let mut g = Graph::new();
        let x = g.leaf(features.clone());
        let r = grad_reverse(&mut g, x, lambda);
        let p = disc.params().bind_frozen(&mut g);
        let logits = disc.forward(&mut g, &p, r, Mode::Eval)?;
        let loss = g.sum(logits);
        g.backward(loss);
        let norm: f64 = g
            .grad(x)
            .map(|t| t.data().iter().map(|v| v * v).sum::<f64>().sqrt())
            .unwrap_or(0.0);
        println!("λ = {lambda:.1}: |∂loss/∂features| = {norm:.6}");
    }
    println!("ramp over 2000 iterations:");
    for it in [0, 100, 250, 500, 1000, 1999] {
        println!("  iteration {it:4}: λ = {:.4}", grl_lambda(it, 2000, 0.25));
    }
    Ok(())
}

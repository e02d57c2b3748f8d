//! The three training losses on small hand-made inputs.

use ttuda::losses::{
    adversarial_loss, combine, paired_consistency_loss, soft_dice_loss, DICE_EPSILON,
};
use ttuda::Tensor;

fn main() -> ttuda::Result<()> {
    let n = 16;
    let half = Tensor::new(&[n], vec![0.5; n]);
    let ones = Tensor::new(&[n], vec![1.0; n]);
    println!(
        "dice(0.5 vs all ones)       = {:.6}",
        soft_dice_loss(&half, &ones, DICE_EPSILON)?
    );
    println!(
        "consistency(0.5, 0.5)       = {:.6}",
        paired_consistency_loss(&half, &half)?
    );
    println!(
        "consistency(ones, ones)     = {:.6}",
        paired_consistency_loss(&ones, &ones)?
    );
    println!(
        "bce(logit 0)                = {:.6}",
        adversarial_loss(&[0.0], &[1.0])?
    );
    println!(
        "bce(logit -1e4, label 1)    = {:.1}",
        adversarial_loss(&[-1e4], &[1.0])?
    );
    let b = combine(0.5, 0.2, 0.7, 1.0);
    println!("total of (0.5, 0.2, 0.7)    = {:.1}", b.total);
    Ok(())
}

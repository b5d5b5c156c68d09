use crate::autograd::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Smoothing constant added to numerator and denominator.
pub const DICE_EPS: f64 = 1.0;

/// Soft Dice loss for one `(H, W, K)` image, averaged over the `K` classes:
/// `mean_k 1 − (2·Σ p·g + ε) / (Σ p + Σ g + ε)`.
pub fn dice_loss(tape: &mut Tape, probs: Var, gt: Var) -> Result<Var> {
    if tape.shape(probs) != tape.shape(gt) || tape.shape(probs).len() != 3 {
        return shape_err(format!(
            "dice loss needs matching (H, W, K) tensors, got {:?} and {:?}",
            tape.shape(probs),
            tape.shape(gt)
        ));
    }
    let pg = tape.mul(probs, gt)?;
    let inter = tape.channel_sum(pg);
    let sp = tape.channel_sum(probs);
    let sg = tape.channel_sum(gt);
    let num = tape.scale(inter, 2.0);
    let num = tape.add_scalar(num, DICE_EPS);
    let den = tape.add(sp, sg)?;
    let den = tape.add_scalar(den, DICE_EPS);
    let ratio = tape.div(num, den)?;
    let m = tape.mean(ratio);
    let neg = tape.scale(m, -1.0);
    Ok(tape.add_scalar(neg, 1.0))
}

pub fn dice_loss_value(probs: &Tensor, gt: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.leaf(probs.clone());
    let g = tape.leaf(gt.clone());
    let l = dice_loss(&mut tape, p, g)?;
    Ok(tape.value(l).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn special_cases() {
        let mut gt = Tensor::zeros(&[4, 4, 2]);
        gt.data_mut()[0] = 1.0;
        gt.data_mut()[7] = 1.0;
        assert_eq!(dice_loss_value(&gt, &gt).unwrap(), 0.0);

        let z = Tensor::zeros(&[4, 4, 1]);
        assert_eq!(dice_loss_value(&z, &z).unwrap(), 0.0);

        let mut p = Tensor::zeros(&[4, 4, 1]);
        p.data_mut()[5] = 1.0;
        assert_eq!(dice_loss_value(&p, &z).unwrap(), 0.5);
    }

    #[test]
    fn shape_mismatch() {
        assert!(dice_loss_value(&Tensor::zeros(&[2, 2, 1]), &Tensor::zeros(&[2, 2, 2])).is_err());
    }

    #[test]
    fn bounded_for_soft_predictions() {
        let p = Tensor::full(&[3, 3, 2], 0.3);
        let mut g = Tensor::zeros(&[3, 3, 2]);
        g.data_mut()[2] = 1.0;
        let l = dice_loss_value(&p, &g).unwrap();
        assert!(l > 0.0 && l < 1.0);
    }
}

//! Training objectives on tape variables. Pre-training terms `L_c` and `L_r` are
//! maximized (both are `<= 0`); `L_pre`, `L_mse`, `L_ce` and `L_app` are minimized.

use slscom_autograd::{Tensor, Var};

use crate::error::{Error, Result};

pub const CE_FLOOR: f64 = 1e-12;

fn same_shape(a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != 2 || a != b {
        return Err(Error::BatchMismatch(a.to_vec(), b.to_vec()));
    }
    Ok(())
}

/// In-batch InfoNCE with inner-product similarity: mean over `i` of
/// `log softmax_j(a_i . b_j)` at `j = i`.
pub fn infonce_loss<'t>(anchors: Var<'t>, positives: Var<'t>) -> Result<Var<'t>> {
    same_shape(&anchors.shape(), &positives.shape())?;
    Ok(anchors.infonce(positives))
}

/// `-(1/N) sum_i |x_i - x_r,i|^2`.
pub fn reconstruction_loss<'t>(x: Var<'t>, x_r: Var<'t>) -> Result<Var<'t>> {
    same_shape(&x.shape(), &x_r.shape())?;
    Ok(x.mean_row_sq_dist(x_r).scale(-1.0))
}

/// `L_pre = -(lambda L_r + L_c)`.
pub fn pretrain_loss<'t>(contrastive: Var<'t>, reconstruction: Var<'t>, lambda: f64) -> Var<'t> {
    reconstruction.scale(lambda).add(contrastive).scale(-1.0)
}

/// `(1/N) sum_i |x_i - x_hat_i|^2` (per-sample squared norm, averaged over the batch).
pub fn mse_loss<'t>(x: Var<'t>, x_hat: Var<'t>) -> Result<Var<'t>> {
    same_shape(&x.shape(), &x_hat.shape())?;
    Ok(x.mean_row_sq_dist(x_hat))
}

/// `-(1/N) sum_i t_i . log max(y_i, 1e-12)` on probability rows.
pub fn ce_loss<'t>(probs: Var<'t>, targets: &Tensor) -> Result<Var<'t>> {
    same_shape(&probs.shape(), targets.shape())?;
    Ok(probs.cross_entropy(targets, CE_FLOOR))
}

/// `L_app = L_mse + mu L_ce`.
pub fn app_loss<'t>(mse: Var<'t>, ce: Var<'t>, mu: f64) -> Var<'t> {
    mse.add(ce.scale(mu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use slscom_autograd::Tape;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor {
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn infonce_reference_cases() {
        let tape = Tape::new();
        let one = tape.constant(t(&[1, 2], vec![0.6, 0.8]));
        assert_eq!(infonce_loss(one, one).unwrap().item(), 0.0);
        let e = tape.constant(t(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let v = infonce_loss(e, e).unwrap().item();
        assert!((v - (1.0 - (1.0 + 1f64.exp()).ln())).abs() < 1e-12);
        let same = tape.constant(Tensor::full(&[4, 3], 0.5));
        assert!((infonce_loss(same, same).unwrap().item() + 4f64.ln()).abs() < 1e-12);
        let bad = tape.constant(Tensor::zeros(&[3, 3]));
        assert!(matches!(infonce_loss(same, bad), Err(Error::BatchMismatch(..))));
    }

    #[test]
    fn reconstruction_and_mse_cases() {
        let tape = Tape::new();
        let x = tape.constant(t(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]));
        let y = tape.constant(t(&[1, 4], vec![0.0, 1.0, 2.0, 3.0]));
        assert_eq!(reconstruction_loss(x, x).unwrap().item(), 0.0);
        assert_eq!(reconstruction_loss(x, y).unwrap().item(), -4.0);
        let a = tape.constant(t(&[2, 2], vec![1.0, 1.0, 2.0, 1.0]));
        let b = tape.constant(t(&[2, 2], vec![0.0, -0.414_213_562_373_095_1, 0.0, 0.0]));
        // per-sample squared norms: 1 + 1.414..^2 = 3, 4 + 1 = 5
        assert!((mse_loss(a, b).unwrap().item() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn combined_objectives() {
        let tape = Tape::new();
        let s = |v| tape.constant(Tensor::scalar(v));
        assert!((pretrain_loss(s(-0.5), s(-2.0), 0.15).item() - 0.8).abs() < 1e-12);
        assert_eq!(pretrain_loss(s(-0.5), s(-2.0), 0.0).item(), 0.5);
        assert_eq!(pretrain_loss(s(0.0), s(0.0), 0.15).item(), 0.0);
        assert!((app_loss(s(0.4), s(2.0), 1.0).item() - 2.4).abs() < 1e-12);
        assert!((app_loss(s(0.4), s(2.0), 0.5).item() - 1.4).abs() < 1e-12);
        assert_eq!(app_loss(s(0.0), s(0.0), 1.0).item(), 0.0);
    }

    #[test]
    fn cross_entropy_cases() {
        let tape = Tape::new();
        let onehot = t(&[2, 3], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let exact = tape.constant(onehot.clone());
        assert_eq!(ce_loss(exact, &onehot).unwrap().item(), 0.0);
        let uniform = tape.constant(Tensor::full(&[1, 10], 0.1));
        let mut tgt = Tensor::zeros(&[1, 10]);
        tgt.data_mut()[4] = 1.0;
        assert!((ce_loss(uniform, &tgt).unwrap().item() - 10f64.ln()).abs() < 1e-12);
    }
}

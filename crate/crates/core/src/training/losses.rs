//! Loss functions with analytic gradients.
//!
//! Each loss has a checked entry point that validates its preconditions and
//! a `*_forward_backward` core that evaluates the loss and its gradient on
//! arbitrary inputs (used by the training loop and by gradient checks).

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::model::check_unit_rows;
use crate::weights::{squared_distance, ParameterSet};

#[derive(Debug, Clone)]
pub struct ContrastiveGrad {
    pub loss: f64,
    pub d_images: Array2<f64>,
    pub d_texts: Array2<f64>,
    /// Derivative with respect to the (linear) logit scale multiplier.
    pub d_scale: f64,
}

#[derive(Debug, Clone)]
pub struct LinearGrad {
    pub loss: f64,
    pub d_features: Array2<f64>,
    pub d_weights: Array2<f64>,
}

fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Symmetric cross-entropy over the `N x N` scaled similarity matrix with
/// matching pairs on the diagonal. Rows must be unit-normalized.
pub fn contrastive_loss(images: ArrayView2<f64>, texts: ArrayView2<f64>, logit_scale: f64) -> Result<f64> {
    if images.nrows() < 2 {
        return Err(Error::BatchSize {
            min: 2,
            got: images.nrows(),
        });
    }
    if images.dim() != texts.dim() {
        return Err(Error::Data(format!(
            "image batch {:?} and text batch {:?} differ in shape",
            images.dim(),
            texts.dim()
        )));
    }
    if !(logit_scale.is_finite() && logit_scale >= 0.0) {
        return Err(Error::Range(format!("logit scale must be nonnegative, got {logit_scale}")));
    }
    check_unit_rows(images, "image embedding")?;
    check_unit_rows(texts, "text embedding")?;
    Ok(contrastive_forward_backward(images, texts, logit_scale).loss)
}

pub fn contrastive_forward_backward(images: ArrayView2<f64>, texts: ArrayView2<f64>, scale: f64) -> ContrastiveGrad {
    let n = images.nrows();
    let sims = images.dot(&texts.t());
    let logits = &sims * scale;
    let log_p_rows = log_softmax_rows(&logits);
    let log_p_cols = log_softmax_rows(&logits.t().to_owned()).reversed_axes();
    let diag_rows: f64 = (0..n).map(|i| log_p_rows[[i, i]]).sum();
    let diag_cols: f64 = (0..n).map(|i| log_p_cols[[i, i]]).sum();
    let loss = -(diag_rows + diag_cols) / (2.0 * n as f64);

    // d loss / d logits = ((softmax_rows - I) + (softmax_cols - I)) / 2N
    let mut d_logits = log_p_rows.mapv(f64::exp) + log_p_cols.mapv(f64::exp);
    for i in 0..n {
        d_logits[[i, i]] -= 2.0;
    }
    d_logits /= 2.0 * n as f64;

    let d_scale = (&d_logits * &sims).sum();
    let d_sims = d_logits * scale;
    ContrastiveGrad {
        loss,
        d_images: d_sims.dot(&texts),
        d_texts: d_sims.t().dot(&images),
        d_scale,
    }
}

/// Mean softmax cross-entropy of `features . weights^T` against `labels`.
pub fn lp_loss(features: ArrayView2<f64>, labels: &[usize], weights: ArrayView2<f64>) -> Result<f64> {
    check_linear_inputs(features, labels, weights)?;
    Ok(lp_forward_backward(features, labels, weights).loss)
}

fn check_linear_inputs(features: ArrayView2<f64>, labels: &[usize], weights: ArrayView2<f64>) -> Result<()> {
    if features.nrows() == 0 {
        return Err(Error::BatchSize { min: 1, got: 0 });
    }
    if features.nrows() != labels.len() {
        return Err(Error::Data(format!(
            "{} feature rows but {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if features.ncols() != weights.ncols() {
        return Err(Error::Data(format!(
            "feature width {} differs from classifier width {}",
            features.ncols(),
            weights.ncols()
        )));
    }
    let classes = weights.nrows();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Label { label, classes });
    }
    Ok(())
}

pub fn lp_forward_backward(features: ArrayView2<f64>, labels: &[usize], weights: ArrayView2<f64>) -> LinearGrad {
    let n = features.nrows() as f64;
    let logits = features.dot(&weights.t());
    let log_p = log_softmax_rows(&logits);
    let loss = -labels
        .iter()
        .enumerate()
        .map(|(i, &y)| log_p[[i, y]])
        .sum::<f64>()
        / n;
    let mut d_logits = log_p.mapv(f64::exp);
    for (i, &y) in labels.iter().enumerate() {
        d_logits[[i, y]] -= 1.0;
    }
    d_logits /= n;
    LinearGrad {
        loss,
        d_features: d_logits.dot(&weights),
        d_weights: d_logits.t().dot(&features),
    }
}

/// Cross-entropy term plus `lambda * |theta - theta0|^2`.
pub fn fft_loss(
    features: ArrayView2<f64>,
    labels: &[usize],
    weights: ArrayView2<f64>,
    theta: &ParameterSet,
    theta0: &ParameterSet,
    lambda: f64,
) -> Result<f64> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Range(format!("lambda must be nonnegative, got {lambda}")));
    }
    let penalty = squared_distance(theta, theta0)?;
    Ok(lp_loss(features, labels, weights)? + lambda * penalty)
}

#[derive(Debug, Clone)]
pub struct AnchoredGrad {
    pub loss: f64,
    pub d_features: Array2<f64>,
    pub d_weights: Array2<f64>,
    pub d_theta: Array1<f64>,
}

/// Flat-vector form of [`fft_loss`], for gradient checks.
pub fn fft_forward_backward(
    features: ArrayView2<f64>,
    labels: &[usize],
    weights: ArrayView2<f64>,
    theta: &Array1<f64>,
    theta0: &Array1<f64>,
    lambda: f64,
) -> AnchoredGrad {
    let ce = lp_forward_backward(features, labels, weights);
    let diff = theta - theta0;
    AnchoredGrad {
        loss: ce.loss + lambda * diff.dot(&diff),
        d_features: ce.d_features,
        d_weights: ce.d_weights,
        d_theta: diff * (2.0 * lambda),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::Tensor;
    use ndarray::{array, Axis};
    use std::f64::consts::LN_2;

    #[test]
    fn contrastive_uniform_logits_give_ln_n() {
        let e = array![[1.0, 0.0], [0.0, 1.0]];
        let loss = contrastive_loss(e.view(), e.view(), 0.0).unwrap();
        assert!((loss - LN_2).abs() < 1e-15);
    }

    #[test]
    fn contrastive_large_scale_goes_to_zero() {
        let e = array![[1.0, 0.0], [0.0, 1.0]];
        let loss = contrastive_loss(e.view(), e.view(), 100.0).unwrap();
        assert!(loss < 1e-40);
    }

    #[test]
    fn contrastive_is_permutation_invariant() {
        let a = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.6, 0.8, 0.0]];
        let b = array![[0.8, 0.6, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let perm = [2usize, 0, 1];
        let pa = a.select(Axis(0), &perm);
        let pb = b.select(Axis(0), &perm);
        let l1 = contrastive_loss(a.view(), b.view(), 3.0).unwrap();
        let l2 = contrastive_loss(pa.view(), pb.view(), 3.0).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn contrastive_preconditions() {
        let one = array![[1.0, 0.0]];
        assert!(matches!(contrastive_loss(one.view(), one.view(), 1.0), Err(Error::BatchSize { .. })));
        let raw = array![[2.0, 0.0], [0.0, 1.0]];
        assert!(matches!(contrastive_loss(raw.view(), raw.view(), 1.0), Err(Error::Normalization(_))));
    }

    #[test]
    fn lp_hand_values() {
        let f = array![[0.0, 0.0]];
        let w = array![[1.0, 2.0], [3.0, 4.0]];
        assert!((lp_loss(f.view(), &[1], w.view()).unwrap() - LN_2).abs() < 1e-15);
        let f = array![[1.0]];
        let w = array![[60.0], [-60.0]];
        assert!(lp_loss(f.view(), &[0], w.view()).unwrap() < 1e-40);
        assert!(matches!(lp_loss(f.view(), &[2], w.view()), Err(Error::Label { label: 2, classes: 2 })));
    }

    #[test]
    fn lp_shift_invariance() {
        // adding c to every logit: append a constant feature with equal weights
        let f = array![[0.3, -0.2, 1.0], [1.1, 0.4, 1.0]];
        let w = array![[0.5, 0.1, 0.0], [-0.3, 0.9, 0.0], [0.2, 0.2, 0.0]];
        let mut shifted = w.clone();
        shifted.column_mut(2).fill(7.5);
        let a = lp_loss(f.view(), &[0, 2], w.view()).unwrap();
        let b = lp_loss(f.view(), &[0, 2], shifted.view()).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn fft_penalty_terms() {
        let f = array![[0.2, 0.7]];
        let w = array![[1.0, 0.0], [0.0, 1.0]];
        let ce = lp_loss(f.view(), &[1], w.view()).unwrap();
        let theta = ParameterSet::from_entries([("p", Tensor::scalar(3.0))]).unwrap();
        let theta0 = ParameterSet::from_entries([("p", Tensor::scalar(1.0))]).unwrap();
        assert_eq!(fft_loss(f.view(), &[1], w.view(), &theta, &theta0, 0.0).unwrap(), ce);
        assert_eq!(fft_loss(f.view(), &[1], w.view(), &theta, &theta, 0.3).unwrap(), ce);
        let with_gap = fft_loss(f.view(), &[1], w.view(), &theta, &theta0, 0.5).unwrap();
        assert!((with_gap - ce - 2.0).abs() < 1e-12);
        let other = ParameterSet::from_entries([("q", Tensor::scalar(1.0))]).unwrap();
        assert!(matches!(
            fft_loss(f.view(), &[1], w.view(), &theta, &other, 0.5),
            Err(Error::Alignment { .. })
        ));
    }
}

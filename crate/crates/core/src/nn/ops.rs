//! Pointwise activations and the pixel-wise softmax.

use crate::tensor::{ProbMap, Tensor};

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Gradient through ReLU given the pre-activation values.
pub fn relu_backward(pre_activation: &Tensor, upstream: &Tensor) -> Tensor {
    debug_assert_eq!(pre_activation.shape(), upstream.shape());
    let mut out = upstream.clone();
    for (g, &z) in out.data_mut().iter_mut().zip(pre_activation.data()) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
    out
}

/// Per-pixel softmax over the last axis of `[H, W, K]` logits, computed with
/// max-subtraction so large logits do not overflow.
pub fn softmax_pixelwise(logits: &Tensor) -> ProbMap {
    let k = *logits.shape().last().expect("rank >= 1");
    let mut out = logits.clone();
    for px in out.data_mut().chunks_exact_mut(k) {
        let max = px.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in px.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in px.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Gradient through the pixel-wise softmax: given `S = softmax(z)` and
/// `dL/dS`, returns `dL/dz` with `dz_k = S_k * (dS_k - sum_c dS_c * S_c)`.
pub fn softmax_backward(probs: &ProbMap, upstream: &Tensor) -> Tensor {
    debug_assert_eq!(probs.shape(), upstream.shape());
    let k = *probs.shape().last().expect("rank >= 1");
    let mut out = upstream.clone();
    for (dz, s) in out.data_mut().chunks_exact_mut(k).zip(probs.data().chunks_exact(k)) {
        let dot: f64 = dz.iter().zip(s).map(|(d, p)| d * p).sum();
        for (d, &p) in dz.iter_mut().zip(s) {
            *d = p * (*d - dot);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_equal_logits_is_uniform() {
        let logits = Tensor::full(&[2, 2, 4], 3.7);
        let probs = softmax_pixelwise(&logits);
        for &p in probs.data() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let logits = Tensor::from_vec(&[1, 1, 3], vec![0.3, -1.2, 2.5]).unwrap();
        let mut shifted = logits.clone();
        for v in shifted.data_mut() {
            *v += 123.456;
        }
        let a = softmax_pixelwise(&logits);
        let b = softmax_pixelwise(&shifted);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_closed_form_quarter_three_quarters() {
        let logits = Tensor::from_vec(&[1, 1, 2], vec![0.0, 3.0_f64.ln()]).unwrap();
        let probs = softmax_pixelwise(&logits);
        assert!((probs.data()[0] - 0.25).abs() < 1e-12);
        assert!((probs.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = Tensor::from_vec(
            &[2, 1, 3],
            vec![100.0, -50.0, 3.0, -1e8, 1e8, 0.0],
        )
        .unwrap();
        let probs = softmax_pixelwise(&logits);
        for px in probs.data().chunks_exact(3) {
            let sum: f64 = px.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(px.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn relu_backward_masks_nonpositive() {
        let z = Tensor::from_vec(&[1, 1, 4], vec![-1.0, 0.0, 0.5, 2.0]).unwrap();
        let g = Tensor::full(&[1, 1, 4], 3.0);
        let dz = relu_backward(&z, &g);
        assert_eq!(dz.data(), &[0.0, 0.0, 3.0, 3.0]);
    }
}

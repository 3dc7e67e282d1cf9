//! Dense kernels and the differentiable primitives of a classifier head:
//! affine maps, ReLU, and softmax cross-entropy, each with a hand-derived
//! backward pass.

mod matrix;
mod rng;

pub use matrix::DenseMatrix;
pub use rng::{stable_hash, Rng};

pub(crate) use matrix::{column_sums, gemm_bias, gemm_nt, gemm_tn, gemm_tn_apply};

use crate::error::{invalid, Error, Result};

/// Weights `[fan_in × fan_out]` and bias of a fully-connected layer, with
/// gradient and momentum buffers of identical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineParams {
    pub weights: DenseMatrix,
    pub bias: Vec<f32>,
    pub grad_weights: DenseMatrix,
    pub grad_bias: Vec<f32>,
    pub velocity_weights: DenseMatrix,
    pub velocity_bias: Vec<f32>,
}

impl AffineParams {
    pub fn new(weights: DenseMatrix, bias: Vec<f32>) -> Result<Self> {
        let (fan_in, fan_out) = weights.shape();
        if bias.len() != fan_out {
            return Err(Error::Shape {
                op: "affine_params",
                lhs: (fan_in, fan_out),
                rhs: (1, bias.len()),
            });
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(invalid("bias entries must be finite"));
        }
        Ok(Self {
            grad_weights: DenseMatrix::zeros(fan_in, fan_out),
            grad_bias: vec![0.0; fan_out],
            velocity_weights: DenseMatrix::zeros(fan_in, fan_out),
            velocity_bias: vec![0.0; fan_out],
            weights,
            bias,
        })
    }

    #[inline]
    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }

    /// Number of trainable scalars (weights plus biases).
    pub fn param_count(&self) -> usize {
        self.fan_in() * self.fan_out() + self.fan_out()
    }

    pub fn zero_grad(&mut self) {
        self.grad_weights.fill(0.0);
        self.grad_bias.fill(0.0);
    }
}

/// Which inputs of a ReLU were strictly positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReluMask {
    rows: usize,
    cols: usize,
    active: Vec<bool>,
}

impl ReluMask {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.active
    }

    /// Fraction of columns that are inactive for every row.
    pub fn dead_column_fraction(&self) -> f64 {
        if self.cols == 0 {
            return 0.0;
        }
        let dead = (0..self.cols)
            .filter(|&j| (0..self.rows).all(|i| !self.active[i * self.cols + j]))
            .count();
        dead as f64 / self.cols as f64
    }
}

fn check_affine_input(op: &'static str, x: &DenseMatrix, p: &AffineParams) -> Result<()> {
    if x.cols() != p.fan_in() {
        return Err(Error::Shape {
            op,
            lhs: x.shape(),
            rhs: p.weights.shape(),
        });
    }
    Ok(())
}

/// `out[i,j] = Σ_k x[i,k]·W[k,j] + b[j]`.
pub fn affine_forward(x: &DenseMatrix, p: &AffineParams) -> Result<DenseMatrix> {
    let mut out = DenseMatrix::zeros(0, 0);
    affine_forward_into(x, p, &mut out, 1)?;
    Ok(out)
}

pub fn affine_forward_into(
    x: &DenseMatrix,
    p: &AffineParams,
    out: &mut DenseMatrix,
    threads: usize,
) -> Result<()> {
    check_affine_input("affine_forward", x, p)?;
    gemm_bias(x, &p.weights, &p.bias, out, threads);
    Ok(())
}

/// Writes `grad_weights = xᵀ·dOut` and `grad_bias = Σ_rows dOut`, and returns
/// `dX = dOut·Wᵀ`.
pub fn affine_backward(
    x: &DenseMatrix,
    p: &mut AffineParams,
    d_out: &DenseMatrix,
) -> Result<DenseMatrix> {
    affine_backward_params(x, p, d_out, 1)?;
    let mut dx = DenseMatrix::zeros(0, 0);
    gemm_nt(d_out, &p.weights, &mut dx, 1);
    Ok(dx)
}

/// Parameter gradients only, for layers whose input needs no gradient.
pub fn affine_backward_params(
    x: &DenseMatrix,
    p: &mut AffineParams,
    d_out: &DenseMatrix,
    threads: usize,
) -> Result<()> {
    check_affine_input("affine_backward", x, p)?;
    if d_out.rows() != x.rows() || d_out.cols() != p.fan_out() {
        return Err(Error::Shape {
            op: "affine_backward",
            lhs: d_out.shape(),
            rhs: (x.rows(), p.fan_out()),
        });
    }
    gemm_tn(x, d_out, &mut p.grad_weights, threads);
    column_sums(d_out, &mut p.grad_bias);
    Ok(())
}

pub fn relu_forward(x: &DenseMatrix) -> (DenseMatrix, ReluMask) {
    let mut out = x.clone();
    let mask = relu_in_place(&mut out);
    (out, mask)
}

pub(crate) fn relu_in_place(x: &mut DenseMatrix) -> ReluMask {
    let (rows, cols) = x.shape();
    let active = x
        .as_mut_slice()
        .iter_mut()
        .map(|v| {
            let on = *v > 0.0;
            if !on {
                *v = 0.0;
            }
            on
        })
        .collect();
    ReluMask { rows, cols, active }
}

pub fn relu_backward(d_out: &DenseMatrix, mask: &ReluMask) -> Result<DenseMatrix> {
    let mut dx = d_out.clone();
    relu_backward_in_place(&mut dx, mask)?;
    Ok(dx)
}

pub(crate) fn relu_backward_in_place(d: &mut DenseMatrix, mask: &ReluMask) -> Result<()> {
    if d.shape() != mask.shape() {
        return Err(Error::Shape {
            op: "relu_backward",
            lhs: d.shape(),
            rhs: mask.shape(),
        });
    }
    for (g, &on) in d.as_mut_slice().iter_mut().zip(&mask.active) {
        if !on {
            *g = 0.0;
        }
    }
    Ok(())
}

/// Mean softmax cross-entropy over the batch and its gradient
/// `(softmax − onehot)/B`. Rows are max-shifted before exponentiation.
pub fn softmax_cross_entropy(logits: &DenseMatrix, labels: &[usize]) -> Result<(f32, DenseMatrix)> {
    let mut grad = DenseMatrix::zeros(0, 0);
    let loss = softmax_cross_entropy_into(logits, labels, &mut grad)?;
    Ok((loss, grad))
}

pub(crate) fn softmax_cross_entropy_into(
    logits: &DenseMatrix,
    labels: &[usize],
    grad: &mut DenseMatrix,
) -> Result<f32> {
    let (b, c) = logits.shape();
    if b == 0 {
        return Err(invalid("softmax_cross_entropy needs a non-empty batch"));
    }
    if labels.len() != b {
        return Err(Error::Shape {
            op: "softmax_cross_entropy",
            lhs: (b, c),
            rhs: (labels.len(), 1),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(invalid(format!("label {bad} out of range for {c} classes")));
    }
    grad.resize(b, c);
    let inv_b = 1.0 / b as f64;
    let mut total = 0.0f64;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let sum: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
        let log_sum = sum.ln();
        total += log_sum - (row[label] as f64 - max);
        let g = grad.row_mut(i);
        for (j, (gj, &v)) in g.iter_mut().zip(row).enumerate() {
            let p = (v as f64 - max - log_sum).exp();
            let t = if j == label { 1.0 } else { 0.0 };
            *gj = ((p - t) * inv_b) as f32;
        }
    }
    Ok((total * inv_b) as f32)
}

/// Row-wise softmax loss without the gradient, for validation passes.
pub(crate) fn cross_entropy_sum(logits: &DenseMatrix, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let row = logits.row(i);
            let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
            let sum: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
            sum.ln() - (row[label] as f64 - max)
        })
        .sum()
}

/// Weights and biases drawn i.i.d. from `U(−√k, √k)` with `k = 1/fan_in`.
pub fn init_uniform(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<AffineParams> {
    if fan_in == 0 {
        return Err(invalid("init_uniform: fan_in must be at least 1"));
    }
    if fan_out == 0 {
        return Err(invalid("init_uniform: fan_out must be at least 1"));
    }
    let bound = (1.0 / fan_in as f64).sqrt();
    let mut draw = || ((2.0 * rng.unit() - 1.0) * bound) as f32;
    let weights: Vec<f32> = (0..fan_in * fan_out).map(|_| draw()).collect();
    let bias: Vec<f32> = (0..fan_out).map(|_| draw()).collect();
    AffineParams::new(DenseMatrix::new(fan_in, fan_out, weights)?, bias)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(w: &[&[f32]], b: &[f32]) -> AffineParams {
        AffineParams::new(DenseMatrix::from_rows(w).unwrap(), b.to_vec()).unwrap()
    }

    #[test]
    fn affine_identity() {
        let x = DenseMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let p = AffineParams::new(DenseMatrix::identity(2), vec![0.0, 0.0]).unwrap();
        assert_eq!(affine_forward(&x, &p).unwrap(), x);
    }

    #[test]
    fn affine_hand_case() {
        let x = DenseMatrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let p = params(&[&[1.0, 2.0], &[3.0, 4.0]], &[1.0, 1.0]);
        assert_eq!(affine_forward(&x, &p).unwrap().as_slice(), &[5.0, 7.0]);
    }

    #[test]
    fn affine_zero_input_gives_bias_rows() {
        let x = DenseMatrix::zeros(3, 4);
        let mut rng = Rng::new(1);
        let mut p = init_uniform(4, 2, &mut rng).unwrap();
        p.bias = vec![5.0, 5.0];
        let out = affine_forward(&x, &p).unwrap();
        for i in 0..3 {
            assert_eq!(out.row(i), &[5.0, 5.0]);
        }
    }

    #[test]
    fn affine_shape_errors_carry_both_shapes() {
        let x = DenseMatrix::zeros(2, 3);
        let p = params(&[&[1.0], &[1.0]], &[0.0]);
        match affine_forward(&x, &p) {
            Err(Error::Shape { lhs, rhs, .. }) => {
                assert_eq!(lhs, (2, 3));
                assert_eq!(rhs, (2, 1));
            }
            other => panic!("expected shape error, got {other:?}"),
        }
        let mut p = params(&[&[1.0], &[1.0], &[1.0]], &[0.0]);
        let bad = DenseMatrix::zeros(2, 2);
        assert!(matches!(affine_backward(&x, &mut p, &bad), Err(Error::Shape { .. })));
    }

    #[test]
    fn affine_backward_zero_upstream() {
        let x = DenseMatrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]).unwrap();
        let mut p = params(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]], &[0.0; 3]);
        let dx = affine_backward(&x, &mut p, &DenseMatrix::zeros(2, 3)).unwrap();
        assert!(p.grad_weights.as_slice().iter().all(|&g| g == 0.0));
        assert!(p.grad_bias.iter().all(|&g| g == 0.0));
        assert!(dx.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn affine_backward_hand_case() {
        let x = DenseMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let mut p = params(&[&[1.0, 2.0], &[3.0, 4.0]], &[0.0, 0.0]);
        let d = DenseMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let dx = affine_backward(&x, &mut p, &d).unwrap();
        assert_eq!(p.grad_weights.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.grad_bias, vec![1.0, 0.0]);
        // dX = dOut·Wᵀ = [1·1 + 0·2, 1·3 + 0·4]
        assert_eq!(dx.as_slice(), &[1.0, 3.0]);
    }

    #[test]
    fn relu_cases() {
        let x = DenseMatrix::from_rows(&[[-2.0, 0.0, 3.0]]).unwrap();
        let (y, mask) = relu_forward(&x);
        assert_eq!(y.as_slice(), &[0.0, 0.0, 3.0]);
        assert_eq!(mask.as_slice(), &[false, false, true]);
        let ones = DenseMatrix::from_rows(&[[1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(relu_backward(&ones, &mask).unwrap().as_slice(), &[0.0, 0.0, 1.0]);

        let neg = DenseMatrix::from_rows(&[[-1.0, -0.5], [-3.0, -1e-9]]).unwrap();
        let (y, mask) = relu_forward(&neg);
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
        assert!(mask.as_slice().iter().all(|&m| !m));
        assert_eq!(mask.dead_column_fraction(), 1.0);

        let pos = DenseMatrix::from_rows(&[[1.0, 0.5], [3.0, 1e-9]]).unwrap();
        let (y, mask) = relu_forward(&pos);
        assert_eq!(y, pos);
        let d = DenseMatrix::from_rows(&[[0.1, 0.2], [0.3, 0.4]]).unwrap();
        assert_eq!(relu_backward(&d, &mask).unwrap(), d);
        assert!(relu_backward(&ones, &mask).is_err());
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let logits = DenseMatrix::zeros(1, 5);
        let (loss, grad) = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!((loss as f64 - 5f64.ln()).abs() < 1e-6);
        assert!(grad.row(0).iter().sum::<f32>().abs() < 1e-6);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let logits = DenseMatrix::from_rows(&[[1000.0, 0.0]]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss.abs() < 1e-6);
        assert!(grad.is_finite());
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let logits = DenseMatrix::zeros(2, 3);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[0, 3]),
            Err(Error::Validation(_))
        ));
        assert!(softmax_cross_entropy(&DenseMatrix::zeros(0, 3), &[]).is_err());
    }

    #[test]
    fn init_bounds() {
        let mut rng = Rng::new(11);
        let p = init_uniform(1000, 50, &mut rng).unwrap();
        let bound = (1.0f32 / 1000.0).sqrt();
        assert!((bound - 0.031_622_8).abs() < 1e-7);
        assert!(p.weights.as_slice().iter().chain(&p.bias).all(|v| v.abs() <= bound));
        let p = init_uniform(1, 100, &mut rng).unwrap();
        assert!(p.weights.as_slice().iter().chain(&p.bias).all(|v| v.abs() <= 1.0));
        assert!(p.velocity_weights.as_slice().iter().all(|&v| v == 0.0));
        assert!(init_uniform(0, 3, &mut rng).is_err());
    }

    #[test]
    fn init_moments() {
        // 4096 × 245 weights + 245 biases ≈ 10⁶ draws.
        let mut rng = Rng::new(5);
        let p = init_uniform(4096, 245, &mut rng).unwrap();
        let vals: Vec<f64> = p
            .weights
            .as_slice()
            .iter()
            .chain(&p.bias)
            .map(|&v| v as f64)
            .collect();
        assert!(vals.len() >= 1_000_000);
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let bound = (1.0f64 / 4096.0).sqrt();
        let want = (2.0 * bound).powi(2) / 12.0;
        assert!(mean.abs() < 1e-3);
        assert!((var - want).abs() / want < 0.05, "var {var} want {want}");
    }

    #[test]
    fn init_is_reproducible() {
        let a = init_uniform(20, 7, &mut Rng::new(9)).unwrap();
        let b = init_uniform(20, 7, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
    }
}

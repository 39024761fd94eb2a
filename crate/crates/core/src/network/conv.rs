use serde::{Deserialize, Serialize};

use crate::tensor::{Matrix, Real};

/// One convolution channel: `filters` filters spanning `window` consecutive
/// embedding columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvChannel<T> {
    pub window: usize,
    /// `F × (d·k)`; column `j·d + r` multiplies embedding row `r` of the
    /// `j`-th word in the window.
    pub weight: Matrix<T>,
    /// `F × 1`
    pub bias: Matrix<T>,
}

impl<T: Real> ConvChannel<T> {
    pub fn zeros(window: usize, filters: usize, dim: usize) -> Self {
        Self {
            window,
            weight: Matrix::zeros(filters, dim * window),
            bias: Matrix::zeros(filters, 1),
        }
    }

    pub fn filters(&self) -> usize {
        self.weight.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols() / self.window
    }
}

/// Per-filter activations, `F × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub values: Matrix<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn width(&self) -> usize {
        self.values.cols()
    }
}

#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    /// Flattened window vector per computed position.
    pub inputs: Vec<Vec<T>>,
    /// Pre-activations, `F × valid`.
    pub pre: Matrix<T>,
}

/// Valid 1D convolution with ReLU. Panics if `m < k`.
pub fn conv1d_forward<T: Real>(e: &Matrix<T>, ch: &ConvChannel<T>) -> FeatureMap<T> {
    assert!(e.cols() >= ch.window, "sequence shorter than convolution window");
    let valid = e.cols() - ch.window + 1;
    conv1d_forward_masked(e, ch, valid).0
}

/// Computes the first `valid` window positions; the remaining columns of the
/// map are left at zero.
pub fn conv1d_forward_masked<T: Real>(e: &Matrix<T>, ch: &ConvChannel<T>, valid: usize) -> (FeatureMap<T>, ConvCache<T>) {
    let (d, m) = e.shape();
    let k = ch.window;
    assert!(m >= k, "sequence shorter than convolution window");
    assert_eq!(ch.input_dim(), d, "embedding dimension mismatch");
    let width = m - k + 1;
    assert!(valid <= width);
    let f = ch.filters();

    let mut values = Matrix::zeros(f, width);
    let mut pre = Matrix::zeros(f, valid);
    let mut inputs = Vec::with_capacity(valid);
    let mut z = vec![T::zero(); f];
    for i in 0..valid {
        let mut x = Vec::with_capacity(d * k);
        for j in 0..k {
            x.extend((0..d).map(|r| e.get(r, i + j)));
        }
        ch.weight.matvec(&x, &mut z);
        for (fi, zf) in z.iter().enumerate() {
            let a = *zf + ch.bias.get(fi, 0);
            pre.set(fi, i, a);
            values.set(fi, i, if a > T::zero() { a } else { T::zero() });
        }
        inputs.push(x);
    }
    (FeatureMap { values }, ConvCache { inputs, pre })
}

/// Accumulates parameter gradients into `grad` and input gradients into
/// `d_e` (`d × m`). ReLU's derivative at 0 is taken as 0.
pub fn conv1d_backward<T: Real>(
    ch: &ConvChannel<T>,
    cache: &ConvCache<T>,
    d_out: &Matrix<T>,
    grad: &mut ConvChannel<T>,
    d_e: &mut Matrix<T>,
) {
    let f = ch.filters();
    let d = d_e.rows();
    let k = ch.window;
    let mut d_pre = vec![T::zero(); f];
    let mut d_x = vec![T::zero(); d * k];
    for (i, x) in cache.inputs.iter().enumerate() {
        let mut any = false;
        for (fi, dp) in d_pre.iter_mut().enumerate() {
            *dp = if cache.pre.get(fi, i) > T::zero() {
                d_out.get(fi, i)
            } else {
                T::zero()
            };
            any |= *dp != T::zero();
        }
        if !any {
            continue;
        }
        grad.weight.add_outer(&d_pre, x);
        for (fi, &dp) in d_pre.iter().enumerate() {
            let b = grad.bias.get(fi, 0);
            grad.bias.set(fi, 0, b + dp);
        }
        d_x.iter_mut().for_each(|v| *v = T::zero());
        ch.weight.matvec_t_acc(&d_pre, &mut d_x);
        for j in 0..k {
            for r in 0..d {
                let cur = d_e.get(r, i + j);
                d_e.set(r, i + j, cur + d_x[j * d + r]);
            }
        }
    }
}

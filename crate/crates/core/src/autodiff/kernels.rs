//! Slice-level forward and adjoint kernels shared by the tape operations.
//!
//! Time-axis convolutions are cross-correlations with "same" zero padding:
//! `(P - 1) / 2` samples on the left and the remainder on the right, so even
//! kernel lengths put the extra padding sample on the right.

use crate::tensor::Scalar;

#[inline]
pub fn same_padding(kernel_len: usize) -> (usize, usize) {
    let left = (kernel_len - 1) / 2;
    (left, kernel_len - 1 - left)
}

/// Range of output indices `t` for which `t + p - left` lands inside `[0, n)`.
#[inline]
fn valid_range(n: usize, p: usize, left: usize) -> Option<(usize, usize)> {
    let lo = left.saturating_sub(p);
    let hi = (n + left).saturating_sub(p).min(n);
    (lo < hi).then_some((lo, hi))
}

/// `out[t] += sum_p kernel[p] * x[t + p - left]`.
pub fn correlate_same_acc<T: Scalar>(x: &[T], kernel: &[T], out: &mut [T]) {
    let n = x.len();
    let (left, _) = same_padding(kernel.len());
    for (p, &w) in kernel.iter().enumerate() {
        if w == T::zero() {
            continue;
        }
        if let Some((lo, hi)) = valid_range(n, p, left) {
            let src = &x[lo + p - left..hi + p - left];
            for (o, &s) in out[lo..hi].iter_mut().zip(src) {
                *o = *o + w * s;
            }
        }
    }
}

/// Adjoint of [`correlate_same_acc`] with respect to `x`.
pub fn correlate_same_grad_input<T: Scalar>(grad_out: &[T], kernel: &[T], grad_x: &mut [T]) {
    let n = grad_out.len();
    let (left, _) = same_padding(kernel.len());
    for (p, &w) in kernel.iter().enumerate() {
        if let Some((lo, hi)) = valid_range(n, p, left) {
            let dst = &mut grad_x[lo + p - left..hi + p - left];
            for (d, &g) in dst.iter_mut().zip(&grad_out[lo..hi]) {
                *d = *d + w * g;
            }
        }
    }
}

/// Inner product with eight independent partial sums.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..8 {
            lanes[i] = lanes[i] + x[i] * y[i];
        }
    }
    let mut acc = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        acc = acc + x * y;
    }
    lanes.iter().fold(acc, |s, &l| s + l)
}

/// Adjoint of [`correlate_same_acc`] with respect to the kernel.
pub fn correlate_same_grad_kernel<T: Scalar>(grad_out: &[T], x: &[T], grad_k: &mut [T]) {
    let n = x.len();
    let (left, _) = same_padding(grad_k.len());
    for (p, gk) in grad_k.iter_mut().enumerate() {
        if let Some((lo, hi)) = valid_range(n, p, left) {
            *gk = *gk + dot(&grad_out[lo..hi], &x[lo + p - left..hi + p - left]);
        }
    }
}

#[inline]
pub fn elu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp() - T::one()
    }
}

/// Numerically stable `log(1 + e^z)`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

//! Plain loop kernels shared by forward and backward passes.

use crate::tensor::Scalar;

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += aip * bj;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn gemm_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            c[i * n + j] += dot(a_row, b_row);
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub fn gemm_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &api) in a_row.iter().enumerate() {
            if api == T::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += api * bj;
            }
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = T::zero();
    for i in chunks * 4..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Output length of a 1-D sliding window, or `None` when no window fits.
pub fn window_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Unfolds `x[t×cin]` into `cols[t_out × (kernel·cin)]`, zero outside the input.
pub fn im2col<T: Scalar>(
    x: &[T],
    t: usize,
    cin: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    t_out: usize,
) -> Vec<T> {
    let width = kernel * cin;
    let mut cols = vec![T::zero(); t_out * width];
    for o in 0..t_out {
        for k in 0..kernel {
            let src = (o * stride + k) as isize - padding as isize;
            if src < 0 || src as usize >= t {
                continue;
            }
            let src = src as usize;
            cols[o * width + k * cin..o * width + (k + 1) * cin]
                .copy_from_slice(&x[src * cin..(src + 1) * cin]);
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
#[allow(clippy::too_many_arguments)]
pub fn col2im<T: Scalar>(
    cols: &[T],
    dx: &mut [T],
    t: usize,
    cin: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    t_out: usize,
) {
    let width = kernel * cin;
    for o in 0..t_out {
        for k in 0..kernel {
            let src = (o * stride + k) as isize - padding as isize;
            if src < 0 || src as usize >= t {
                continue;
            }
            let src = src as usize;
            let from = &cols[o * width + k * cin..o * width + (k + 1) * cin];
            for (d, &g) in dx[src * cin..(src + 1) * cin].iter_mut().zip(from) {
                *d += g;
            }
        }
    }
}

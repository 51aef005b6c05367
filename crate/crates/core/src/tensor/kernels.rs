//! Inner numeric kernels shared by forward and backward op implementations.
//!
//! Loop orders are fixed so results are bit-reproducible run to run.

use super::Scalar;

/// C[m,n] += A[m,k] * B[k,n]
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                c_row[j] += av * b_row[j];
            }
        }
    }
}

/// C[m,n] += A[m,k] * B[n,k]^T — inner dimension contiguous in both.
pub fn matmul_nt_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::ZERO;
            for kk in 0..k {
                acc += a_row[kk] * b_row[kk];
            }
            c_row[j] += acc;
        }
    }
}

/// C[m,n] += A[k,m]^T * B[k,n]
pub fn matmul_tn_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for kk in 0..k {
        let a_row = &a[kk * m..(kk + 1) * m];
        let b_row = &b[kk * n..(kk + 1) * n];
        for i in 0..m {
            let av = a_row[i];
            let c_row = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                c_row[j] += av * b_row[j];
            }
        }
    }
}

/// Output spatial size of a 2-D convolution along one axis.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Lowers `[c,h,w]` into patch rows `[oh*ow, c*kh*kw]` with zero padding.
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Vec<T> {
    let oh = conv_out_size(h, kh, stride, pad);
    let ow = conv_out_size(w, kw, stride, pad);
    let q = c * kh * kw;
    let mut cols = vec![T::ZERO; oh * ow * q];
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut cols[(oy * ow + ox) * q..(oy * ow + ox + 1) * q];
            let base_y = (oy * stride) as isize - pad as isize;
            let base_x = (ox * stride) as isize - pad as isize;
            for ci in 0..c {
                for ky in 0..kh {
                    let iy = base_y + ky as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = base_x + kx as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        row[(ci * kh + ky) * kw + kx] =
                            x[(ci * h + iy as usize) * w + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds patch-row gradients back onto the input layout.
#[allow(clippy::too_many_arguments)]
pub fn col2im_acc<T: Scalar>(
    dcols: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dx: &mut [T],
) {
    let oh = conv_out_size(h, kh, stride, pad);
    let ow = conv_out_size(w, kw, stride, pad);
    let q = c * kh * kw;
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &dcols[(oy * ow + ox) * q..(oy * ow + ox + 1) * q];
            let base_y = (oy * stride) as isize - pad as isize;
            let base_x = (ox * stride) as isize - pad as isize;
            for ci in 0..c {
                for ky in 0..kh {
                    let iy = base_y + ky as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = base_x + kx as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dx[(ci * h + iy as usize) * w + ix as usize] +=
                            row[(ci * kh + ky) * kw + kx];
                    }
                }
            }
        }
    }
}

/// Shape produced by broadcasting `a` against `b` with trailing alignment,
/// or `None` if they are incompatible.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da == db {
            out[i] = da;
        } else if da == 1 {
            out[i] = db;
        } else if db == 1 {
            out[i] = da;
        } else {
            return None;
        }
    }
    Some(out)
}

/// Row-major strides, with stride 0 on axes that broadcast (size 1 vs out).
pub fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 && out_shape[offset + i] != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Applies `f(a_elem, b_elem)` over the broadcast iteration space.
pub fn broadcast_zip<T: Scalar>(
    a: &[T],
    a_shape: &[usize],
    b: &[T],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    let n: usize = out_shape.iter().product();
    // Fast path: identical shapes.
    if a_shape == out_shape && b_shape == out_shape {
        return a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect();
    }
    let sa = broadcast_strides(a_shape, out_shape);
    let sb = broadcast_strides(b_shape, out_shape);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut ia = 0usize;
    let mut ib = 0usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(f(a[ia], b[ib]));
        // Odometer increment.
        for axis in (0..rank).rev() {
            idx[axis] += 1;
            ia += sa[axis];
            ib += sb[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            idx[axis] = 0;
            ia -= sa[axis] * out_shape[axis];
            ib -= sb[axis] * out_shape[axis];
        }
    }
    out
}

/// Sum-reduces a gradient on `out_shape` back to `shape` (the broadcast
/// adjoint). Returns data in `shape`'s layout.
pub fn reduce_to_shape<T: Scalar>(grad: &[T], out_shape: &[usize], shape: &[usize]) -> Vec<T> {
    if shape == out_shape {
        return grad.to_vec();
    }
    let strides = broadcast_strides(shape, out_shape);
    let n: usize = out_shape.iter().product();
    let mut out = vec![T::ZERO; shape.iter().product()];
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut target = 0usize;
    for &g in grad.iter().take(n) {
        out[target] += g;
        for axis in (0..rank).rev() {
            idx[axis] += 1;
            target += strides[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            idx[axis] = 0;
            target -= strides[axis] * out_shape[axis];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[3, 1, 2], &[4, 2]), Some(vec![3, 4, 2]));
        assert_eq!(broadcast_shape(&[2], &[3]), None);
        assert_eq!(broadcast_shape(&[1], &[5, 5]), Some(vec![5, 5]));
    }

    #[test]
    fn reduce_is_adjoint_of_broadcast() {
        // <broadcast(a), g> == <a, reduce(g)> for random data.
        let a = [1.5f64, -2.0, 0.25];
        let a_shape = [3usize, 1];
        let out_shape = [3usize, 4];
        let g: Vec<f64> = (0..12).map(|i| (i as f64) * 0.3 - 1.0).collect();
        let broadcast = broadcast_zip(&a, &a_shape, &vec![0.0; 12], &out_shape, &out_shape, |x, _| x);
        let lhs: f64 = broadcast.iter().zip(g.iter()).map(|(x, y)| x * y).sum();
        let reduced = reduce_to_shape(&g, &out_shape, &a_shape);
        let rhs: f64 = a.iter().zip(reduced.iter()).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn matmul_variants_agree() {
        let m = 3;
        let k = 4;
        let n = 2;
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.7 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| i as f64 * 0.3 + 0.1).collect();
        let mut c0 = vec![0.0; m * n];
        matmul_acc(&a, &b, &mut c0, m, k, n);
        // Same product via NT with b transposed.
        let mut bt = vec![0.0; n * k];
        for i in 0..k {
            for j in 0..n {
                bt[j * k + i] = b[i * n + j];
            }
        }
        let mut c1 = vec![0.0; m * n];
        matmul_nt_acc(&a, &bt, &mut c1, m, k, n);
        // Same product via TN with a transposed.
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for j in 0..k {
                at[j * m + i] = a[i * k + j];
            }
        }
        let mut c2 = vec![0.0; m * n];
        matmul_tn_acc(&at, &b, &mut c2, m, k, n);
        for i in 0..m * n {
            assert!((c0[i] - c1[i]).abs() < 1e-12);
            assert!((c0[i] - c2[i]).abs() < 1e-12);
        }
    }
}

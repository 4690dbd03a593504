//! Raw array kernels behind the tape operations.
//!
//! These are plain functions over flat slices so the same code serves both
//! the recorded (differentiable) path and the value-only forward paths used
//! during evaluation and action selection. All layouts are row-major; images
//! are `[batch, channels, height, width]`.

use crate::scalar::Scalar;

/// Output spatial size of a valid (no padding) convolution.
#[inline]
pub fn conv_out_size(input: usize, kernel: usize, stride: usize) -> usize {
    (input - kernel) / stride + 1
}

/// Output spatial size of a stride-`s` transposed convolution.
#[inline]
pub fn convt_out_size(input: usize, kernel: usize, stride: usize) -> usize {
    (input - 1) * stride + kernel
}

/// y[n,co,i,j] = b[co] + sum_{ci,ki,kj} x[n,ci,i*s+ki,j*s+kj] * w[co,ci,ki,kj]
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    b: &[T],
    batch: usize,
    cin: usize,
    h: usize,
    wdt: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> Vec<T> {
    let ho = conv_out_size(h, kh, stride);
    let wo = conv_out_size(wdt, kw, stride);
    let mut y = vec![T::zero(); batch * cout * ho * wo];
    for n in 0..batch {
        for co in 0..cout {
            let ybase = (n * cout + co) * ho * wo;
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        let xbase = (n * cin + ci) * h * wdt;
                        let wbase = ((co * cin + ci) * kh) * kw;
                        for ki in 0..kh {
                            let xrow = xbase + (i * stride + ki) * wdt + j * stride;
                            let wrow = wbase + ki * kw;
                            for kj in 0..kw {
                                acc += x[xrow + kj] * w[wrow + kj];
                            }
                        }
                    }
                    y[ybase + i * wo + j] = acc;
                }
            }
        }
    }
    y
}

/// Gradients of [`conv2d_forward`] with respect to input, weight, and bias.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    w: &[T],
    batch: usize,
    cin: usize,
    h: usize,
    wdt: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let ho = conv_out_size(h, kh, stride);
    let wo = conv_out_size(wdt, kw, stride);
    let mut dx = vec![T::zero(); batch * cin * h * wdt];
    let mut dw = vec![T::zero(); cout * cin * kh * kw];
    let mut db = vec![T::zero(); cout];
    for n in 0..batch {
        for co in 0..cout {
            let ybase = (n * cout + co) * ho * wo;
            for i in 0..ho {
                for j in 0..wo {
                    let g = dy[ybase + i * wo + j];
                    if g == T::zero() {
                        continue;
                    }
                    db[co] += g;
                    for ci in 0..cin {
                        let xbase = (n * cin + ci) * h * wdt;
                        let wbase = ((co * cin + ci) * kh) * kw;
                        for ki in 0..kh {
                            let xrow = xbase + (i * stride + ki) * wdt + j * stride;
                            let wrow = wbase + ki * kw;
                            for kj in 0..kw {
                                dx[xrow + kj] += g * w[wrow + kj];
                                dw[wrow + kj] += g * x[xrow + kj];
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// y[n,co,i*s+ki,j*s+kj] += x[n,ci,i,j] * w[ci,co,ki,kj]; y starts at b[co].
#[allow(clippy::too_many_arguments)]
pub fn convt2d_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    b: &[T],
    batch: usize,
    cin: usize,
    h: usize,
    wdt: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> Vec<T> {
    let ho = convt_out_size(h, kh, stride);
    let wo = convt_out_size(wdt, kw, stride);
    let mut y = vec![T::zero(); batch * cout * ho * wo];
    for n in 0..batch {
        for co in 0..cout {
            let ybase = (n * cout + co) * ho * wo;
            for v in &mut y[ybase..ybase + ho * wo] {
                *v = b[co];
            }
        }
        for ci in 0..cin {
            let xbase = (n * cin + ci) * h * wdt;
            for co in 0..cout {
                let ybase = (n * cout + co) * ho * wo;
                let wbase = ((ci * cout + co) * kh) * kw;
                for i in 0..h {
                    for j in 0..wdt {
                        let xv = x[xbase + i * wdt + j];
                        if xv == T::zero() {
                            continue;
                        }
                        for ki in 0..kh {
                            let yrow = ybase + (i * stride + ki) * wo + j * stride;
                            let wrow = wbase + ki * kw;
                            for kj in 0..kw {
                                y[yrow + kj] += xv * w[wrow + kj];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Gradients of [`convt2d_forward`].
#[allow(clippy::too_many_arguments)]
pub fn convt2d_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    w: &[T],
    batch: usize,
    cin: usize,
    h: usize,
    wdt: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let ho = convt_out_size(h, kh, stride);
    let wo = convt_out_size(wdt, kw, stride);
    let mut dx = vec![T::zero(); batch * cin * h * wdt];
    let mut dw = vec![T::zero(); cin * cout * kh * kw];
    let mut db = vec![T::zero(); cout];
    for n in 0..batch {
        for co in 0..cout {
            let ybase = (n * cout + co) * ho * wo;
            for v in &dy[ybase..ybase + ho * wo] {
                db[co] += *v;
            }
        }
        for ci in 0..cin {
            let xbase = (n * cin + ci) * h * wdt;
            for co in 0..cout {
                let ybase = (n * cout + co) * ho * wo;
                let wbase = ((ci * cout + co) * kh) * kw;
                for i in 0..h {
                    for j in 0..wdt {
                        let xv = x[xbase + i * wdt + j];
                        let mut acc = T::zero();
                        for ki in 0..kh {
                            let yrow = ybase + (i * stride + ki) * wo + j * stride;
                            let wrow = wbase + ki * kw;
                            for kj in 0..kw {
                                let g = dy[yrow + kj];
                                acc += g * w[wrow + kj];
                                dw[wrow + kj] += g * xv;
                            }
                        }
                        dx[xbase + i * wdt + j] += acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// c[m,n] = sum_k a[m,k] * b[k,n]
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = p * n;
            let crow = i * n;
            for j in 0..n {
                c[crow + j] += av * b[brow + j];
            }
        }
    }
    c
}

/// y = x * w + b for x `[batch, in]`, w `[in, out]`, b `[out]`.
pub fn dense_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    b: &[T],
    batch: usize,
    nin: usize,
    nout: usize,
) -> Vec<T> {
    let mut y = matmul(x, w, batch, nin, nout);
    for row in y.chunks_mut(nout) {
        for (v, bias) in row.iter_mut().zip(b) {
            *v += *bias;
        }
    }
    y
}

/// Row-wise softmax over the last dimension, max-shifted for stability.
pub fn softmax_rows<T: Scalar>(x: &[T], cols: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for (yr, xr) in y.chunks_mut(cols).zip(x.chunks(cols)) {
        let max = xr.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for (yv, xv) in yr.iter_mut().zip(xr) {
            *yv = (*xv - max).exp();
            sum += *yv;
        }
        for yv in yr.iter_mut() {
            *yv /= sum;
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_shapes_follow_valid_arithmetic() {
        assert_eq!(conv_out_size(24, 4, 2), 11);
        assert_eq!(conv_out_size(11, 3, 2), 5);
        assert_eq!(convt_out_size(5, 3, 2), 11);
        assert_eq!(convt_out_size(11, 4, 2), 24);
    }

    #[test]
    fn conv_matches_hand_computation() {
        // 1x1x3x3 input, one 2x2 filter, stride 1.
        let x: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let w = vec![1.0, 0.0, 0.0, 1.0]; // picks x[i,j] + x[i+1,j+1]
        let y = conv2d_forward(&x, &w, &[0.5], 1, 1, 3, 3, 1, 2, 2, 1);
        assert_eq!(y, vec![1.0 + 5.0 + 0.5, 2.0 + 6.0 + 0.5, 4.0 + 8.0 + 0.5, 5.0 + 9.0 + 0.5]);
    }

    #[test]
    fn convt_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convt(y)> when convt uses the same kernel
        // transposed in its channel layout. Checked on random-ish data.
        let x: Vec<f64> = (0..16).map(|v| (v as f64) * 0.37 - 2.0).collect(); // 1x1x4x4
        let w: Vec<f64> = (0..4).map(|v| (v as f64) * 0.11 + 0.3).collect(); // 1x1x2x2
        let y = conv2d_forward(&x, &w, &[0.0], 1, 1, 4, 4, 1, 2, 2, 2); // 1x1x2x2
        let g: Vec<f64> = (0..4).map(|v| (v as f64) * 0.5 - 1.0).collect();
        let xt = convt2d_forward(&g, &w, &[0.0], 1, 1, 2, 2, 1, 2, 2, 2); // back to 4x4
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&xt).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let y = softmax_rows(&[0.0f64; 4], 4);
        for v in y {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_small() {
        let a = vec![1.0, 2.0, 3.0, 4.0]; // 2x2
        let b = vec![5.0, 6.0, 7.0, 8.0];
        let c = matmul(&a, &b, 2, 2, 2);
        assert_eq!(c, vec![19.0, 22.0, 43.0, 50.0]);
    }
}

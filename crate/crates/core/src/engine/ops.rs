//! Forward and backward kernels over NHWC slices.

use super::scalar::{matmul, Mat};
use super::Scalar;

/// Geometry of a 2-D sliding-window op over an NHWC batch.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Window {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub oh: usize,
    pub ow: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl Window {
    pub fn out_rows(&self) -> usize {
        self.n * self.oh * self.ow
    }

    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.c
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1
            && self.kw == 1
            && self.sh == 1
            && self.sw == 1
            && self.pad_top == 0
            && self.pad_left == 0
    }

    /// Input row/col for an output position and kernel offset, if inside the image.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.sh + ky) as isize - self.pad_top as isize;
        let ix = (ox * self.sw + kx) as isize - self.pad_left as isize;
        if iy < 0 || ix < 0 || iy >= self.h as isize || ix >= self.w as isize {
            None
        } else {
            Some((iy as usize, ix as usize))
        }
    }
}

pub(crate) fn im2col<T: Scalar>(x: &[T], g: &Window) -> Vec<T> {
    if g.is_pointwise() {
        return x.to_vec();
    }
    let k = g.patch_len();
    let mut cols = vec![T::zero(); g.out_rows() * k];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = ((n * g.oh + oy) * g.ow + ox) * k;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        if let Some((iy, ix)) = g.source(oy, ox, ky, kx) {
                            let src = ((n * g.h + iy) * g.w + ix) * g.c;
                            let dst = row + (ky * g.kw + kx) * g.c;
                            cols[dst..dst + g.c].copy_from_slice(&x[src..src + g.c]);
                        }
                    }
                }
            }
        }
    }
    cols
}

pub(crate) fn col2im<T: Scalar>(dcols: &[T], g: &Window) -> Vec<T> {
    if g.is_pointwise() {
        return dcols.to_vec();
    }
    let k = g.patch_len();
    let mut dx = vec![T::zero(); g.n * g.h * g.w * g.c];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = ((n * g.oh + oy) * g.ow + ox) * k;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        if let Some((iy, ix)) = g.source(oy, ox, ky, kx) {
                            let dst = ((n * g.h + iy) * g.w + ix) * g.c;
                            let src = row + (ky * g.kw + kx) * g.c;
                            for (d, s) in dx[dst..dst + g.c].iter_mut().zip(&dcols[src..src + g.c])
                            {
                                *d += *s;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// `out = relu?(cols · w + b)` with cols `rows x k` and w `k x cout`.
pub(crate) fn linear_forward<T: Scalar>(
    cols: &[T],
    rows: usize,
    k: usize,
    weight: &[T],
    bias: &[T],
    cout: usize,
    relu: bool,
) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * cout);
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    matmul(
        Mat::new(cols, rows, k),
        Mat::new(weight, k, cout),
        T::one(),
        &mut out,
    );
    if relu {
        for v in &mut out {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
    }
    out
}

pub(crate) struct LinearGrads<T> {
    pub dcols: Vec<T>,
    pub dweight: Vec<T>,
    pub dbias: Vec<T>,
}

pub(crate) fn linear_backward<T: Scalar>(
    dout: &[T],
    out: &[T],
    cols: &[T],
    rows: usize,
    k: usize,
    weight: &[T],
    cout: usize,
    relu: bool,
) -> LinearGrads<T> {
    let dz: Vec<T> = if relu {
        dout.iter()
            .zip(out)
            .map(|(&d, &o)| if o > T::zero() { d } else { T::zero() })
            .collect()
    } else {
        dout.to_vec()
    };
    let mut dweight = vec![T::zero(); k * cout];
    matmul(
        Mat::new(cols, rows, k).t(),
        Mat::new(&dz, rows, cout),
        T::zero(),
        &mut dweight,
    );
    let mut dbias = vec![T::zero(); cout];
    for row in dz.chunks_exact(cout) {
        for (b, d) in dbias.iter_mut().zip(row) {
            *b += *d;
        }
    }
    let mut dcols = vec![T::zero(); rows * k];
    matmul(
        Mat::new(&dz, rows, cout),
        Mat::new(weight, k, cout).t(),
        T::zero(),
        &mut dcols,
    );
    LinearGrads {
        dcols,
        dweight,
        dbias,
    }
}

/// Max or average pooling without padding. Returns the output and, for max
/// pooling, the flat input index that won each output element.
pub(crate) fn pool_forward<T: Scalar>(x: &[T], g: &Window, max: bool) -> (Vec<T>, Vec<u32>) {
    let mut out = vec![T::zero(); g.out_rows() * g.c];
    let mut argmax = if max {
        vec![0u32; out.len()]
    } else {
        Vec::new()
    };
    let area = T::from_usize(g.kh * g.kw).expect("small");
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o = ((n * g.oh + oy) * g.ow + ox) * g.c;
                for ch in 0..g.c {
                    let mut best = T::neg_infinity();
                    let mut best_i = 0usize;
                    let mut acc = T::zero();
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            let (iy, ix) = g.source(oy, ox, ky, kx).expect("valid window");
                            let i = ((n * g.h + iy) * g.w + ix) * g.c + ch;
                            let v = x[i];
                            if max {
                                if v > best {
                                    best = v;
                                    best_i = i;
                                }
                            } else {
                                acc += v;
                            }
                        }
                    }
                    if max {
                        out[o + ch] = best;
                        argmax[o + ch] = best_i as u32;
                    } else {
                        out[o + ch] = acc / area;
                    }
                }
            }
        }
    }
    (out, argmax)
}

pub(crate) fn pool_backward<T: Scalar>(dout: &[T], g: &Window, argmax: &[u32]) -> Vec<T> {
    let mut dx = vec![T::zero(); g.n * g.h * g.w * g.c];
    if !argmax.is_empty() {
        for (d, &i) in dout.iter().zip(argmax) {
            dx[i as usize] += *d;
        }
        return dx;
    }
    let area = T::from_usize(g.kh * g.kw).expect("small");
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o = ((n * g.oh + oy) * g.ow + ox) * g.c;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let (iy, ix) = g.source(oy, ox, ky, kx).expect("valid window");
                        let i = ((n * g.h + iy) * g.w + ix) * g.c;
                        for ch in 0..g.c {
                            dx[i + ch] += dout[o + ch] / area;
                        }
                    }
                }
            }
        }
    }
    dx
}

pub(crate) struct BnForward<T> {
    pub y: Vec<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Per-channel normalization over all non-channel axes.
///
/// With `running = Some((mean, var))` the given statistics are used (eval
/// mode); otherwise batch statistics are computed (train mode).
pub(crate) fn batchnorm_forward<T: Scalar>(
    x: &[T],
    c: usize,
    gamma: &[T],
    beta: &[T],
    eps: T,
    running: Option<(&[T], &[T])>,
) -> BnForward<T> {
    let m = x.len() / c;
    let (mean, var) = match running {
        Some((rm, rv)) => (rm.to_vec(), rv.to_vec()),
        None => {
            let mut mean = vec![T::zero(); c];
            for row in x.chunks_exact(c) {
                for (a, v) in mean.iter_mut().zip(row) {
                    *a += *v;
                }
            }
            let mf = T::from_usize(m).expect("count");
            for a in &mut mean {
                *a /= mf;
            }
            let mut var = vec![T::zero(); c];
            for row in x.chunks_exact(c) {
                for ((a, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                    let d = *v - *mu;
                    *a += d * d;
                }
            }
            for a in &mut var {
                *a /= mf;
            }
            (mean, var)
        }
    };
    let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
    let mut xhat = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    for row in x.chunks_exact(c) {
        for ch in 0..c {
            let xh = (row[ch] - mean[ch]) * inv_std[ch];
            xhat.push(xh);
            y.push(gamma[ch] * xh + beta[ch]);
        }
    }
    BnForward {
        y,
        xhat,
        inv_std,
        mean,
        var,
    }
}

/// Returns (dx, dgamma, dbeta). `train` selects batch-statistics gradients.
pub(crate) fn batchnorm_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    c: usize,
    train: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let m = dy.len() / c;
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (drow, xrow) in dy.chunks_exact(c).zip(xhat.chunks_exact(c)) {
        for ch in 0..c {
            dbeta[ch] += drow[ch];
            dgamma[ch] += drow[ch] * xrow[ch];
        }
    }
    let mut dx = Vec::with_capacity(dy.len());
    if train {
        let mf = T::from_usize(m).expect("count");
        for (drow, xrow) in dy.chunks_exact(c).zip(xhat.chunks_exact(c)) {
            for ch in 0..c {
                let v = gamma[ch] * inv_std[ch] / mf
                    * (mf * drow[ch] - dbeta[ch] - xrow[ch] * dgamma[ch]);
                dx.push(v);
            }
        }
    } else {
        for drow in dy.chunks_exact(c) {
            for ch in 0..c {
                dx.push(drow[ch] * gamma[ch] * inv_std[ch]);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Channel-axis concatenation of NHWC tensors sharing (n, h, w).
pub(crate) fn concat_channels<T: Scalar>(parts: &[(&[T], usize)], positions: usize) -> Vec<T> {
    let total: usize = parts.iter().map(|(_, c)| c).sum();
    let mut out = Vec::with_capacity(positions * total);
    for p in 0..positions {
        for (data, c) in parts {
            out.extend_from_slice(&data[p * c..(p + 1) * c]);
        }
    }
    out
}

pub(crate) fn split_channels<T: Scalar>(
    d: &[T],
    widths: &[usize],
    positions: usize,
) -> Vec<Vec<T>> {
    let total: usize = widths.iter().sum();
    let mut parts: Vec<Vec<T>> = widths
        .iter()
        .map(|c| Vec::with_capacity(positions * c))
        .collect();
    for p in 0..positions {
        let mut off = p * total;
        for (part, c) in parts.iter_mut().zip(widths) {
            part.extend_from_slice(&d[off..off + c]);
            off += c;
        }
    }
    parts
}

/// Mean softmax cross-entropy over rows and its gradient w.r.t. the logits.
pub(crate) fn softmax_cross_entropy<T: Scalar>(
    logits: &[T],
    labels: &[u32],
    classes: usize,
) -> (T, Vec<T>) {
    let n = labels.len();
    let nf = T::from_usize(n).expect("count");
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &label) in logits.chunks_exact(classes).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|v| (*v - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += log_sum - row[label as usize];
        for (j, v) in row.iter().enumerate() {
            let p = (*v - log_sum).exp();
            let target = if j == label as usize {
                T::one()
            } else {
                T::zero()
            };
            grad.push((p - target) / nf);
        }
    }
    (loss / nf, grad)
}

pub fn softmax<T: Scalar>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|v| (*v - max).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / sum));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(h: usize, w: usize, c: usize, k: usize, s: usize, pad: usize) -> Window {
        Window {
            n: 1,
            h,
            w,
            c,
            oh: (h + 2 * pad - k) / s + 1,
            ow: (w + 2 * pad - k) / s + 1,
            kh: k,
            kw: k,
            sh: s,
            sw: s,
            pad_top: pad,
            pad_left: pad,
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = geom(5, 4, 2, 3, 2, 1);
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let cols = im2col(&x, &g);
        let y: Vec<f64> = (0..cols.len()).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let back = col2im(&y, &g);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn max_pool_picks_window_maxima() {
        let g = geom(4, 4, 1, 2, 2, 0);
        let x: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let (out, arg) = pool_forward(&x, &g, true);
        assert_eq!(out, vec![5.0, 7.0, 13.0, 15.0]);
        assert_eq!(arg, vec![5, 7, 13, 15]);
        let (avg, _) = pool_forward(&x, &g, false);
        assert_eq!(avg, vec![2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_loss_nonnegative() {
        let logits = vec![1.0f32, 2.0, 3.0, -5.0, 0.0, 5.0];
        let p = softmax(&logits, 3);
        for row in p.chunks(3) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
        let (loss, grad) = softmax_cross_entropy(&logits, &[2, 0], 3);
        assert!(loss >= 0.0);
        assert!(grad.iter().map(|g| g.abs()).sum::<f32>() > 0.0);
    }
}

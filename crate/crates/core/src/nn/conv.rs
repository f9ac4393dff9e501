//! 2-D convolution via im2col and a dense matrix product.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Rows of the unfolded matrix: `in_channels · kernel²`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn out_pixels(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// A 1×1, stride-1, unpadded convolution needs no unfolding.
    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds one `C×H×W` sample into a `(C·k·k) × (OH·OW)` matrix, zero padded.
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let l = oh * ow;
    debug_assert_eq!(cols.len(), g.patch_len() * l);
    let mut row = 0;
    for c in 0..g.in_channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let dst = &mut cols[row * l..(row + 1) * l];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.height as isize {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.width as isize { T::zero() } else { src[ix as usize] };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into `dx`.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, dx: &mut [T]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let l = oh * ow;
    let mut row = 0;
    for c in 0..g.in_channels {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let src = &cols[row * l..(row + 1) * l];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Forward convolution of a batch. `weight` is `[out, in, k, k]`.
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    g: &ConvGeometry,
    weight: &[T],
    bias: &[T],
    out_channels: usize,
) -> Vec<T> {
    let (p, l) = (g.patch_len(), g.out_pixels());
    let in_len = g.in_channels * g.height * g.width;
    let mut out = vec![T::zero(); batch * out_channels * l];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); p * l] };
    for n in 0..batch {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let rhs: &[T] = if g.is_pointwise() {
            xn
        } else {
            im2col(xn, g, &mut cols);
            &cols
        };
        let yn = &mut out[n * out_channels * l..(n + 1) * out_channels * l];
        T::gemm(out_channels, p, l, weight, false, rhs, false, yn, false);
        for (o, row) in yn.chunks_exact_mut(l).enumerate() {
            let b = bias[o];
            row.iter_mut().for_each(|v| *v += b);
        }
    }
    out
}

/// Accumulates weight and bias gradients and, when `dx` is given, the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    batch: usize,
    g: &ConvGeometry,
    weight: &[T],
    out_channels: usize,
    dy: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
    mut dx: Option<&mut [T]>,
) {
    let (p, l) = (g.patch_len(), g.out_pixels());
    let in_len = g.in_channels * g.height * g.width;
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); p * l] };
    let mut dcols = vec![T::zero(); p * l];
    for n in 0..batch {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let dyn_ = &dy[n * out_channels * l..(n + 1) * out_channels * l];
        let unfolded: &[T] = if g.is_pointwise() {
            xn
        } else {
            im2col(xn, g, &mut cols);
            &cols
        };
        T::gemm(out_channels, l, p, dyn_, false, unfolded, true, dweight, true);
        for (o, row) in dyn_.chunks_exact(l).enumerate() {
            dbias[o] += row.iter().copied().sum::<T>();
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxn = &mut dx[n * in_len..(n + 1) * in_len];
            if g.is_pointwise() {
                T::gemm(p, out_channels, l, weight, true, dyn_, false, dxn, true);
            } else {
                T::gemm(p, out_channels, l, weight, true, dyn_, false, &mut dcols, false);
                col2im(&dcols, g, dxn);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution.
    fn naive(x: &[f64], g: &ConvGeometry, w: &[f64], b: &[f64], oc: usize) -> Vec<f64> {
        let (oh, ow) = (g.out_height(), g.out_width());
        let mut out = vec![0.0; oc * oh * ow];
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = b[o];
                    for c in 0..g.in_channels {
                        for ki in 0..g.kernel {
                            for kj in 0..g.kernel {
                                let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < g.height && (ix as usize) < g.width {
                                    s += w[((o * g.in_channels + c) * g.kernel + ki) * g.kernel + kj]
                                        * x[(c * g.height + iy as usize) * g.width + ix as usize];
                                }
                            }
                        }
                    }
                    out[(o * oh + oy) * ow + ox] = s;
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_for_several_geometries() {
        for (k, s, p, h, w) in [(3, 1, 1, 5, 6), (4, 2, 1, 8, 7), (1, 1, 0, 3, 3), (4, 1, 1, 6, 6)] {
            let g = ConvGeometry { in_channels: 2, height: h, width: w, kernel: k, stride: s, pad: p };
            let x: Vec<f64> = (0..2 * h * w).map(|i| (i as f64 * 0.7).sin()).collect();
            let wt: Vec<f64> = (0..3 * 2 * k * k).map(|i| (i as f64 * 0.3).cos()).collect();
            let b = vec![0.1, -0.2, 0.3];
            let got = conv2d_forward(&x, 1, &g, &wt, &b, 3);
            let want = naive(&x, &g, &wt, &b, 3);
            assert_eq!(got.len(), want.len());
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "k={k} s={s}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = ConvGeometry { in_channels: 2, height: 5, width: 4, kernel: 3, stride: 2, pad: 1 };
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 1.3).sin()).collect();
        let c: Vec<f64> = (0..g.patch_len() * g.out_pixels()).map(|i| (i as f64 * 0.9).cos()).collect();
        let mut cols = vec![0.0; c.len()];
        im2col(&x, &g, &mut cols);
        let mut back = vec![0.0; 40];
        col2im(&c, &g, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}

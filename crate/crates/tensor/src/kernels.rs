//! Convolution kernels on raw per-image slices. Convolution is
//! cross-correlation (no kernel flip), matching the deep-learning convention.

use crate::error::{Result, TensorError};
use crate::real::{gemm, Real};

/// Geometry of one 2-D convolution over a single `[C, H, W]` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

fn out_extent(op: &'static str, extent: usize, kernel: usize, pad: usize, stride: usize) -> Result<usize> {
    if stride == 0 {
        return Err(TensorError::InvalidArgument {
            op,
            detail: "stride must be at least 1".into(),
        });
    }
    let padded = extent + 2 * pad;
    if padded < kernel || (padded - kernel) % stride != 0 {
        return Err(TensorError::NonIntegerExtent {
            op,
            extent,
            kernel,
            padding: pad,
            stride,
        });
    }
    Ok((padded - kernel) / stride + 1)
}

impl ConvGeom {
    /// Forward convolution geometry: `H' = (H + 2p - kh) / stride + 1`.
    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        c_in: usize,
        h: usize,
        w: usize,
        c_out: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let ho = out_extent("conv2d", h, kh, pad, stride)?;
        let wo = out_extent("conv2d", w, kw, pad, stride)?;
        Ok(ConvGeom {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        })
    }

    /// Geometry of the convolution whose adjoint is a transposed convolution
    /// from `[c_in, h, w]` to `[c_out, (h-1)*stride - 2p + kh, ...]`.
    /// The returned geometry maps the (large) output back to the input.
    #[allow(clippy::too_many_arguments)]
    pub fn transposed(
        c_in: usize,
        h: usize,
        w: usize,
        c_out: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 || h == 0 || w == 0 {
            return Err(TensorError::InvalidArgument {
                op: "conv_transpose2d",
                detail: format!("stride {stride} and extents {h}x{w} must be positive"),
            });
        }
        let full_h = (h - 1) * stride + kh;
        let full_w = (w - 1) * stride + kw;
        if full_h < 2 * pad + 1 || full_w < 2 * pad + 1 {
            return Err(TensorError::NonIntegerExtent {
                op: "conv_transpose2d",
                extent: h.min(w),
                kernel: kh,
                padding: pad,
                stride,
            });
        }
        let (big_h, big_w) = (full_h - 2 * pad, full_w - 2 * pad);
        Ok(ConvGeom {
            c_in: c_out,
            h: big_h,
            w: big_w,
            c_out: c_in,
            kh,
            kw,
            stride,
            pad,
            ho: h,
            wo: w,
        })
    }

    pub fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.ho * self.wo
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfolds `x` (`[C, H, W]`) into `cols` (`[C*kh*kw, Ho*Wo]`).
pub fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let np = g.out_pixels();
    debug_assert_eq!(x.len(), g.in_len());
    debug_assert_eq!(cols.len(), g.patch_len() * np);
    let pad = g.pad as isize;
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * np..(row + 1) * np];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back, accumulating into `x`.
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let np = g.out_pixels();
    debug_assert_eq!(x.len(), g.in_len());
    debug_assert_eq!(cols.len(), g.patch_len() * np);
    let pad = g.pad as isize;
    for c in 0..g.c_in {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * np..(row + 1) * np];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let line = &src[oy * g.wo..(oy + 1) * g.wo];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

/// `out = W * im2col(x)`; `weight` is `[c_out, c_in, kh, kw]`.
pub fn conv_forward_image<T: Real>(x: &[T], weight: &[T], g: &ConvGeom, out: &mut [T]) {
    let mut cols = vec![T::zero(); g.patch_len() * g.out_pixels()];
    im2col(x, g, &mut cols);
    gemm(
        false,
        false,
        g.c_out,
        g.out_pixels(),
        g.patch_len(),
        T::one(),
        weight,
        &cols,
        T::zero(),
        out,
    );
}

/// Gradients of one image's convolution: returns `(d_weight, d_x)`; either
/// may be skipped.
pub fn conv_backward_image<T: Real>(
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    g: &ConvGeom,
    want_weight: bool,
    want_input: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let np = g.out_pixels();
    let pl = g.patch_len();
    let dw = want_weight.then(|| {
        let mut cols = vec![T::zero(); pl * np];
        im2col(x, g, &mut cols);
        let mut dw = vec![T::zero(); g.c_out * pl];
        gemm(false, true, g.c_out, pl, np, T::one(), grad_out, &cols, T::zero(), &mut dw);
        dw
    });
    let dx = want_input.then(|| {
        let mut dcols = vec![T::zero(); pl * np];
        gemm(true, false, pl, np, g.c_out, T::one(), weight, grad_out, T::zero(), &mut dcols);
        let mut dx = vec![T::zero(); g.in_len()];
        col2im(&dcols, g, &mut dx);
        dx
    });
    (dw, dx)
}

/// Transposed convolution of one image. `weight` is `[c_in_t, c_out_t, kh, kw]`
/// where `c_in_t = g.c_out` and `c_out_t = g.c_in` (see [`ConvGeom::transposed`]).
pub fn tconv_forward_image<T: Real>(x: &[T], weight: &[T], g: &ConvGeom, out: &mut [T]) {
    let np = g.out_pixels();
    let pl = g.patch_len();
    let mut cols = vec![T::zero(); pl * np];
    gemm(true, false, pl, np, g.c_out, T::one(), weight, x, T::zero(), &mut cols);
    out.fill(T::zero());
    col2im(&cols, g, out);
}

pub fn tconv_backward_image<T: Real>(
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    g: &ConvGeom,
    want_weight: bool,
    want_input: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let np = g.out_pixels();
    let pl = g.patch_len();
    let mut dcols = vec![T::zero(); pl * np];
    im2col(grad_out, g, &mut dcols);
    let dw = want_weight.then(|| {
        let mut dw = vec![T::zero(); g.c_out * pl];
        gemm(false, true, g.c_out, pl, np, T::one(), x, &dcols, T::zero(), &mut dw);
        dw
    });
    let dx = want_input.then(|| {
        let mut dx = vec![T::zero(); g.c_out * np];
        gemm(false, false, g.c_out, np, pl, T::one(), weight, &dcols, T::zero(), &mut dx);
        dx
    });
    (dw, dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_conv(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut out = vec![0.0; g.out_len()];
        for f in 0..g.c_out {
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let mut s = 0.0;
                    for c in 0..g.c_in {
                        for ki in 0..g.kh {
                            for kj in 0..g.kw {
                                let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                s += x[(c * g.h + iy as usize) * g.w + ix as usize]
                                    * w[((f * g.c_in + c) * g.kh + ki) * g.kw + kj];
                            }
                        }
                    }
                    out[(f * g.ho + oy) * g.wo + ox] = s;
                }
            }
        }
        out
    }

    #[test]
    fn gemm_conv_matches_direct_summation() {
        let g = ConvGeom::conv(2, 7, 9, 3, 3, 3, 2, 1).unwrap();
        let x: Vec<f64> = (0..g.in_len()).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let w: Vec<f64> = (0..g.c_out * g.patch_len()).map(|i| ((i * 13) % 7) as f64 * 0.25).collect();
        let mut out = vec![0.0; g.out_len()];
        conv_forward_image(&x, &w, &g, &mut out);
        let direct = direct_conv(&x, &w, &g);
        assert!(out.iter().zip(&direct).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn output_extent_arithmetic() {
        let g = ConvGeom::conv(1, 64, 64, 1, 4, 4, 2, 1).unwrap();
        assert_eq!((g.ho, g.wo), (32, 32));
        assert!(matches!(
            ConvGeom::conv(1, 6, 6, 1, 3, 3, 2, 0),
            Err(TensorError::NonIntegerExtent { extent: 6, .. })
        ));
        let t = ConvGeom::transposed(4, 8, 8, 2, 4, 4, 2, 1).unwrap();
        assert_eq!((t.h, t.w, t.c_in, t.c_out, t.ho), (16, 16, 2, 4, 8));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = ConvGeom::conv(2, 5, 5, 1, 3, 3, 2, 1).unwrap();
        let x: Vec<f64> = (0..g.in_len()).map(|i| (i as f64 * 0.3).sin()).collect();
        let c: Vec<f64> = (0..g.patch_len() * g.out_pixels()).map(|i| (i as f64 * 0.7).cos()).collect();
        let mut cols = vec![0.0; c.len()];
        im2col(&x, &g, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&c, &g, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}

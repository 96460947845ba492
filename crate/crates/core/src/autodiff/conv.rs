//! 2-D cross-correlation via im2col and GEMM.

use super::tensor::{Shape, Tensor};
use crate::error::{shape_err, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(x: Shape, weight: Shape, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 {
            return shape_err("conv stride must be >= 1");
        }
        if weight.c != x.c {
            return shape_err(format!(
                "conv expects {} input channels, got {}",
                weight.c, x.c
            ));
        }
        if weight.h != weight.w {
            return shape_err("conv kernel must be square");
        }
        let k = weight.h;
        if x.h + 2 * pad < k || x.w + 2 * pad < k {
            return shape_err(format!("conv kernel {k} larger than padded input {x}"));
        }
        Ok(Self {
            cin: x.c,
            h: x.h,
            w: x.w,
            k,
            stride,
            pad,
            oh: (x.h + 2 * pad - k) / stride + 1,
            ow: (x.w + 2 * pad - k) / stride + 1,
        })
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Output columns `ox` whose input column `ox * stride + kx - pad` is inside the image.
    fn valid_range(&self, kx: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kx as isize - self.pad as isize;
        // ox * s + off >= 0  and  ox * s + off <= len - 1
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi_num = len as isize - 1 - off;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let lo = lo.max(0) as usize;
        let hi = (hi + 1).clamp(0, out_len as isize) as usize;
        (lo.min(hi), hi)
    }
}

/// Target size of one im2col block, in elements; keeps the block in L2.
const BLOCK_ELEMS: usize = 1 << 17;

/// Output rows per im2col block.
fn block_rows(g: &ConvGeom) -> usize {
    (BLOCK_ELEMS / (g.rows() * g.ow).max(1)).clamp(1, g.oh)
}

/// Columns for output rows `oy0..oy1`: `rows x ((oy1 - oy0) * ow)`.
fn im2col<T: Real>(x: &[T], g: &ConvGeom, oy0: usize, oy1: usize, col: &mut [T]) {
    let (k, p) = (g.k, (oy1 - oy0) * g.ow);
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                let (xlo, xhi) = g.valid_range(kx, g.w, g.ow);
                let base = kx as isize - g.pad as isize;
                for oy in oy0..oy1 {
                    let out = &mut dst[(oy - oy0) * g.ow..(oy - oy0 + 1) * g.ow];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out[..xlo].fill(T::zero());
                    out[xhi..].fill(T::zero());
                    if g.stride == 1 {
                        let start = (xlo as isize + base) as usize;
                        out[xlo..xhi].copy_from_slice(&src[start..start + (xhi - xlo)]);
                    } else {
                        for (ox, o) in out.iter_mut().enumerate().take(xhi).skip(xlo) {
                            *o = src[(ox as isize * g.stride as isize + base) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds the block back into `x`.
fn col2im<T: Real>(col: &[T], g: &ConvGeom, oy0: usize, oy1: usize, x: &mut [T]) {
    let (k, p) = (g.k, (oy1 - oy0) * g.ow);
    for ci in 0..g.cin {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * p..(row + 1) * p];
                let (xlo, xhi) = g.valid_range(kx, g.w, g.ow);
                let base = kx as isize - g.pad as isize;
                for oy in oy0..oy1 {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let s = &src[(oy - oy0) * g.ow..(oy - oy0 + 1) * g.ow];
                    if g.stride == 1 {
                        let start = (xlo as isize + base) as usize;
                        for (d, v) in dst[start..start + (xhi - xlo)].iter_mut().zip(&s[xlo..xhi]) {
                            *d += *v;
                        }
                    } else {
                        for ox in xlo..xhi {
                            dst[(ox as isize * g.stride as isize + base) as usize] += s[ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = weight.shape();
    let g = ConvGeom::new(xs, ws, stride, pad)?;
    if let Some(b) = bias {
        if b.len() != ws.n {
            return shape_err(format!("conv bias has {} entries for {} outputs", b.len(), ws.n));
        }
    }
    let cout = ws.n;
    let (rows, cols) = (g.rows(), g.cols());
    let out_shape = Shape::new(xs.n, cout, g.oh, g.ow);
    let mut out = Tensor::zeros(out_shape);
    let block = block_rows(&g);
    let mut col = vec![T::zero(); rows * block * g.ow];
    for n in 0..xs.n {
        let xn = &x.data()[n * xs.sample()..(n + 1) * xs.sample()];
        let on = &mut out.data_mut()[n * out_shape.sample()..(n + 1) * out_shape.sample()];
        if let Some(b) = bias {
            for (co, chunk) in on.chunks_mut(cols).enumerate() {
                chunk.fill(b.data()[co]);
            }
        }
        for oy0 in (0..g.oh).step_by(block) {
            let oy1 = (oy0 + block).min(g.oh);
            let cc = (oy1 - oy0) * g.ow;
            im2col(xn, &g, oy0, oy1, &mut col);
            T::gemm(
                cout,
                rows,
                cc,
                T::one(),
                weight.data(),
                rows as isize,
                1,
                &col[..rows * cc],
                cc as isize,
                1,
                if bias.is_some() { T::one() } else { T::zero() },
                &mut on[oy0 * g.ow..],
                cols as isize,
                1,
            );
        }
    }
    Ok(out)
}

/// Accumulates gradients for whichever of input, weight and bias are requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &[T],
    stride: usize,
    pad: usize,
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
    mut gb: Option<&mut [T]>,
) {
    let xs = x.shape();
    let ws = weight.shape();
    let g = ConvGeom::new(xs, ws, stride, pad).expect("validated in forward");
    let cout = ws.n;
    let (rows, cols) = (g.rows(), g.cols());
    let out_sample = cout * cols;
    let block = block_rows(&g);
    let mut col = vec![T::zero(); rows * block * g.ow];
    let mut dcol = vec![T::zero(); rows * block * g.ow];
    for n in 0..xs.n {
        let go = &grad_out[n * out_sample..(n + 1) * out_sample];
        if let Some(gb) = gb.as_deref_mut() {
            for (co, chunk) in go.chunks(cols).enumerate() {
                gb[co] += chunk.iter().copied().sum::<T>();
            }
        }
        for oy0 in (0..g.oh).step_by(block) {
            let oy1 = (oy0 + block).min(g.oh);
            let cc = (oy1 - oy0) * g.ow;
            let go_block = &go[oy0 * g.ow..];
            if let Some(gw) = gw.as_deref_mut() {
                let xn = &x.data()[n * xs.sample()..(n + 1) * xs.sample()];
                im2col(xn, &g, oy0, oy1, &mut col);
                // dW (cout x rows) += dOut (cout x cc) * col^T (cc x rows)
                T::gemm(
                    cout,
                    cc,
                    rows,
                    T::one(),
                    go_block,
                    cols as isize,
                    1,
                    &col[..rows * cc],
                    1,
                    cc as isize,
                    T::one(),
                    gw,
                    rows as isize,
                    1,
                );
            }
            if let Some(gx) = gx.as_deref_mut() {
                // dcol (rows x cc) = W^T (rows x cout) * dOut (cout x cc)
                T::gemm(
                    rows,
                    cout,
                    cc,
                    T::one(),
                    weight.data(),
                    1,
                    rows as isize,
                    go_block,
                    cols as isize,
                    1,
                    T::zero(),
                    &mut dcol[..rows * cc],
                    cc as isize,
                    1,
                );
                col2im(&dcol, &g, oy0, oy1, &mut gx[n * xs.sample()..(n + 1) * xs.sample()]);
            }
        }
    }
}

//! Separable resampling with precomputed taps.
//!
//! Sample centers follow the half-pixel convention: output pixel `i` maps to
//! source coordinate `(i + 0.5) * in / out - 0.5`. Source indices outside the
//! image are clamped to the border. No antialiasing prefilter is applied when
//! shrinking.

use super::ImageTensor;
use crate::real::Real;

/// Keys cubic convolution parameter.
pub const KEYS_A: f64 = -0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Interpolation {
    Bicubic,
    Bilinear,
}

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn keys_weight(x: f64) -> f64 {
    let a = KEYS_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

type Taps = [(u32, f64); 4];

/// One-dimensional tap table mapping `len_in` samples to `len_out`.
#[derive(Clone, Debug)]
struct AxisKernel {
    len_in: usize,
    taps: Vec<Taps>,
}

impl AxisKernel {
    fn new(method: Interpolation, len_in: usize, len_out: usize) -> Self {
        assert!(len_in > 0 && len_out > 0, "resample axes must be non-empty");
        let scale = len_in as f64 / len_out as f64;
        let last = (len_in - 1) as i64;
        let clamp = |i: i64| i.clamp(0, last) as u32;
        let taps = (0..len_out)
            .map(|i| {
                let src = (i as f64 + 0.5) * scale - 0.5;
                match method {
                    Interpolation::Bicubic => {
                        let base = src.floor();
                        let t = src - base;
                        let b = base as i64;
                        [
                            (clamp(b - 1), keys_weight(t + 1.0)),
                            (clamp(b), keys_weight(t)),
                            (clamp(b + 1), keys_weight(1.0 - t)),
                            (clamp(b + 2), keys_weight(2.0 - t)),
                        ]
                    }
                    Interpolation::Bilinear => {
                        let src = src.max(0.0);
                        let base = src.floor();
                        let t = src - base;
                        let b = base as i64;
                        [
                            (clamp(b), 1.0 - t),
                            (clamp(b + 1), t),
                            (0, 0.0),
                            (0, 0.0),
                        ]
                    }
                }
            })
            .collect();
        Self { len_in, taps }
    }

    fn len_out(&self) -> usize {
        self.taps.len()
    }
}

/// Plane resampler from `(in_h, in_w)` to `(out_h, out_w)`.
///
/// `apply` is linear in its input; `apply_adjoint` is its exact transpose and
/// is what the autodiff resize node uses for the backward pass.
#[derive(Clone, Debug)]
pub struct Resampler {
    method: Interpolation,
    rows: AxisKernel,
    cols: AxisKernel,
}

impl Resampler {
    pub fn new(method: Interpolation, input: (usize, usize), output: (usize, usize)) -> Self {
        Self {
            method,
            rows: AxisKernel::new(method, input.0, output.0),
            cols: AxisKernel::new(method, input.1, output.1),
        }
    }

    pub fn method(&self) -> Interpolation {
        self.method
    }

    pub fn input_dims(&self) -> (usize, usize) {
        (self.rows.len_in, self.cols.len_in)
    }

    pub fn output_dims(&self) -> (usize, usize) {
        (self.rows.len_out(), self.cols.len_out())
    }

    /// Resamples one plane; `dst` is overwritten.
    pub fn apply<T: Real>(&self, src: &[T], dst: &mut [T]) {
        let (ih, iw) = self.input_dims();
        let (oh, ow) = self.output_dims();
        debug_assert_eq!(src.len(), ih * iw);
        debug_assert_eq!(dst.len(), oh * ow);
        let col_w: Vec<[(usize, T); 4]> = self
            .cols
            .taps
            .iter()
            .map(|t| t.map(|(i, w)| (i as usize, T::lit(w))))
            .collect();
        let mut tmp = vec![T::zero(); ih * ow];
        for y in 0..ih {
            let row = &src[y * iw..(y + 1) * iw];
            for (x, taps) in col_w.iter().enumerate() {
                let mut acc = T::zero();
                for &(i, w) in taps {
                    acc += w * row[i];
                }
                tmp[y * ow + x] = acc;
            }
        }
        for (y, taps) in self.rows.taps.iter().enumerate() {
            let out = &mut dst[y * ow..(y + 1) * ow];
            out.fill(T::zero());
            for &(i, w) in taps {
                if w == 0.0 {
                    continue;
                }
                let w = T::lit(w);
                let src_row = &tmp[i as usize * ow..(i as usize + 1) * ow];
                for (o, &s) in out.iter_mut().zip(src_row) {
                    *o += w * s;
                }
            }
        }
    }

    /// Accumulates the transpose of `apply` applied to `grad_out` into `grad_in`.
    pub fn apply_adjoint<T: Real>(&self, grad_out: &[T], grad_in: &mut [T]) {
        let (ih, iw) = self.input_dims();
        let (oh, ow) = self.output_dims();
        debug_assert_eq!(grad_out.len(), oh * ow);
        debug_assert_eq!(grad_in.len(), ih * iw);
        let mut tmp = vec![T::zero(); ih * ow];
        for (y, taps) in self.rows.taps.iter().enumerate() {
            let g = &grad_out[y * ow..(y + 1) * ow];
            for &(i, w) in taps {
                if w == 0.0 {
                    continue;
                }
                let w = T::lit(w);
                let t = &mut tmp[i as usize * ow..(i as usize + 1) * ow];
                for (t, &g) in t.iter_mut().zip(g) {
                    *t += w * g;
                }
            }
        }
        for y in 0..ih {
            let t = &tmp[y * ow..(y + 1) * ow];
            let gi = &mut grad_in[y * iw..(y + 1) * iw];
            for (x, taps) in self.cols.taps.iter().enumerate() {
                for &(i, w) in taps {
                    gi[i as usize] += T::lit(w) * t[x];
                }
            }
        }
    }
}

fn resize(img: &ImageTensor, method: Interpolation, out_h: usize, out_w: usize) -> ImageTensor {
    assert!(out_h >= 1 && out_w >= 1, "output dims must be positive");
    let r = Resampler::new(method, (img.height(), img.width()), (out_h, out_w));
    let mut out = ImageTensor::zeros(img.channels(), out_h, out_w);
    for c in 0..img.channels() {
        r.apply(img.plane(c), out.plane_mut(c));
    }
    out
}

/// Per-channel Keys bicubic resize (`a = -0.5`, border clamp).
pub fn bicubic_resize(img: &ImageTensor, out_h: usize, out_w: usize) -> ImageTensor {
    resize(img, Interpolation::Bicubic, out_h, out_w)
}

pub fn bilinear_resize(img: &ImageTensor, out_h: usize, out_w: usize) -> ImageTensor {
    resize(img, Interpolation::Bilinear, out_h, out_w)
}

//! Box filter, guided filter and fast guided filter on plain images.
//!
//! The plane kernels here are shared with the autodiff graph so the
//! differentiable versions agree with these bit-for-bit in the same precision.

use crate::error::{shape_err, Error, Result};
use crate::image::{ImageTensor, Interpolation, Resampler};
use crate::real::Real;

/// Guided-filter configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterParams {
    /// Window radius in low-resolution pixels.
    pub radius: usize,
    /// Regularizer on the local variance.
    pub eps: f64,
    /// Ratio between the high-resolution guide and the low-resolution inputs.
    pub subsample: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            radius: 2,
            eps: 1e-4,
            subsample: 1,
        }
    }
}

impl FilterParams {
    pub fn new(radius: usize, eps: f64, subsample: usize) -> Result<Self> {
        let p = Self {
            radius,
            eps,
            subsample,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0) || !self.eps.is_finite() || self.subsample == 0 {
            return Err(Error::InvalidArgument(format!(
                "filter params need eps >= 0 and subsample >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

fn integral(src: &[f64], h: usize, w: usize) -> Vec<f64> {
    let stride = w + 1;
    let mut sat = vec![0.0f64; (h + 1) * stride];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += src[y * w + x];
            sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + row;
        }
    }
    sat
}

/// Window sums (not means) via a summed-area table; `count` receives the
/// clipped window size when provided.
fn window_sums(src: &[f64], h: usize, w: usize, r: usize, mut out: impl FnMut(usize, f64, f64)) {
    let sat = integral(src, h, w);
    let stride = w + 1;
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r + 1).min(w);
            let s = sat[y1 * stride + x1] - sat[y0 * stride + x1] - sat[y1 * stride + x0]
                + sat[y0 * stride + x0];
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            out(y * w + x, s, n);
        }
    }
}

/// Mean over the `(2r+1)^2` window clipped to the plane. O(h*w) for any `r`;
/// sums are accumulated in `f64` regardless of `T`.
pub fn box_plane<T: Real>(src: &[T], h: usize, w: usize, r: usize, dst: &mut [T]) {
    debug_assert_eq!(src.len(), h * w);
    if r == 0 {
        dst.copy_from_slice(src);
        return;
    }
    let wide: Vec<f64> = src.iter().map(|v| v.to_f64().unwrap()).collect();
    window_sums(&wide, h, w, r, |i, s, n| dst[i] = T::lit(s / n));
}

/// Accumulates the transpose of [`box_plane`] applied to `grad` into `dst`.
///
/// The clipped-window mean is `D^-1 S` with `S` symmetric, so the adjoint is
/// the window sum of `grad / count`.
pub fn box_plane_adjoint<T: Real>(grad: &[T], h: usize, w: usize, r: usize, dst: &mut [T]) {
    if r == 0 {
        for (d, g) in dst.iter_mut().zip(grad) {
            *d += *g;
        }
        return;
    }
    let mut scaled = vec![0.0f64; h * w];
    for y in 0..h {
        let ny = ((y + r + 1).min(h) - y.saturating_sub(r)) as f64;
        for x in 0..w {
            let nx = ((x + r + 1).min(w) - x.saturating_sub(r)) as f64;
            scaled[y * w + x] = grad[y * w + x].to_f64().unwrap() / (ny * nx);
        }
    }
    window_sums(&scaled, h, w, r, |i, s, _| dst[i] += T::lit(s));
}

/// Normalized box filter applied to every channel.
pub fn box_filter(img: &ImageTensor, r: usize) -> ImageTensor {
    let mut out = img.clone();
    let (h, w) = (img.height(), img.width());
    for c in 0..img.channels() {
        box_plane(img.plane(c), h, w, r, out.plane_mut(c));
    }
    out
}

/// Box-smoothed local linear coefficients `(mean_a, mean_b)` of one plane pair.
pub fn coefficients_plane<T: Real>(
    guide: &[T],
    input: &[T],
    (h, w): (usize, usize),
    r: usize,
    eps: T,
) -> (Vec<T>, Vec<T>) {
    let n = h * w;
    let mut mean_i = vec![T::zero(); n];
    let mut mean_p = vec![T::zero(); n];
    let mut corr = vec![T::zero(); n];
    let mut sq = vec![T::zero(); n];
    box_plane(guide, h, w, r, &mut mean_i);
    box_plane(input, h, w, r, &mut mean_p);
    let ip: Vec<T> = guide.iter().zip(input).map(|(&a, &b)| a * b).collect();
    let ii: Vec<T> = guide.iter().map(|&a| a * a).collect();
    box_plane(&ip, h, w, r, &mut corr);
    box_plane(&ii, h, w, r, &mut sq);
    let mut a = vec![T::zero(); n];
    let mut b = vec![T::zero(); n];
    for k in 0..n {
        let var = sq[k] - mean_i[k] * mean_i[k];
        let cov = corr[k] - mean_i[k] * mean_p[k];
        a[k] = cov / (var + eps);
        b[k] = mean_p[k] - a[k] * mean_i[k];
    }
    let mut mean_a = vec![T::zero(); n];
    let mut mean_b = vec![T::zero(); n];
    box_plane(&a, h, w, r, &mut mean_a);
    box_plane(&b, h, w, r, &mut mean_b);
    (mean_a, mean_b)
}

/// Per-plane fast guided filter. `guide_lo`/`input_lo` are `h x w`,
/// `guide_hi` matches `out`; `up` maps the low-resolution grid onto it.
#[allow(clippy::too_many_arguments)]
pub fn fgf_plane<T: Real>(
    guide_lo: &[T],
    input_lo: &[T],
    dims: (usize, usize),
    guide_hi: &[T],
    up: &Resampler,
    r: usize,
    eps: T,
    out: &mut [T],
) {
    let (mean_a, mean_b) = coefficients_plane(guide_lo, input_lo, dims, r, eps);
    let big = out.len();
    let mut up_a = vec![T::zero(); big];
    let mut up_b = vec![T::zero(); big];
    up.apply(&mean_a, &mut up_a);
    up.apply(&mean_b, &mut up_b);
    for k in 0..big {
        out[k] = up_a[k] * guide_hi[k] + up_b[k];
    }
}

fn guide_channel(guide_channels: usize, input_channels: usize) -> Result<impl Fn(usize) -> usize> {
    if guide_channels != 1 && guide_channels != input_channels {
        return shape_err(format!(
            "guide has {guide_channels} channels; expected 1 or {input_channels}"
        ));
    }
    Ok(move |c: usize| if guide_channels == 1 { 0 } else { c })
}

fn to_wide(p: &[f32]) -> Vec<f64> {
    p.iter().map(|&v| v as f64).collect()
}

/// Fast guided filter: coefficients fitted on `guide_lo`/`input_lo`, box-smoothed,
/// bilinearly upsampled and applied to `guide_hi`.
///
/// A single-channel guide is shared by every input channel; otherwise channel
/// `i` of the guide steers channel `i` of the input. Arithmetic runs in `f64`.
pub fn fast_guided_filter(
    guide_lo: &ImageTensor,
    input_lo: &ImageTensor,
    guide_hi: &ImageTensor,
    params: &FilterParams,
) -> Result<ImageTensor> {
    params.validate()?;
    let (h, w) = (input_lo.height(), input_lo.width());
    if (guide_lo.height(), guide_lo.width()) != (h, w) {
        return shape_err("guide_lo and input_lo must share spatial dims");
    }
    if guide_hi.channels() != guide_lo.channels() {
        return shape_err("guide_lo and guide_hi must have the same channel count");
    }
    let s = params.subsample;
    let (big_h, big_w) = (guide_hi.height(), guide_hi.width());
    if big_h != h * s || big_w != w * s {
        return shape_err(format!(
            "guide_hi {big_h}x{big_w} is not {s}x the low-resolution {h}x{w}"
        ));
    }
    let pick = guide_channel(guide_lo.channels(), input_lo.channels())?;
    let up = Resampler::new(Interpolation::Bilinear, (h, w), (big_h, big_w));
    let mut out = ImageTensor::zeros(input_lo.channels(), big_h, big_w);
    let mut plane = vec![0.0f64; big_h * big_w];
    for c in 0..input_lo.channels() {
        let g = pick(c);
        fgf_plane(
            &to_wide(guide_lo.plane(g)),
            &to_wide(input_lo.plane(c)),
            (h, w),
            &to_wide(guide_hi.plane(g)),
            &up,
            params.radius,
            params.eps,
            &mut plane,
        );
        for (o, v) in out.plane_mut(c).iter_mut().zip(&plane) {
            *o = *v as f32;
        }
    }
    Ok(out)
}

/// Full-resolution guided filter; the `subsample = 1` case of
/// [`fast_guided_filter`].
pub fn guided_filter(
    guide: &ImageTensor,
    input: &ImageTensor,
    r: usize,
    eps: f64,
) -> Result<ImageTensor> {
    if (guide.height(), guide.width()) != (input.height(), input.width()) {
        return shape_err("guide and input must share spatial dims");
    }
    fast_guided_filter(guide, input, guide, &FilterParams::new(r, eps, 1)?)
}

//! Classical detail-injection pansharpening: IHS, Brovey, HPF and SFIM.
//!
//! All four upsample the multispectral input bicubically and histogram-match
//! PAN (gain and offset) to the synthetic intensity before injecting detail.

use crate::error::{shape_err, Error, Result};
use crate::guided::box_plane;
use crate::image::{bicubic_resize, ImageTensor};

const GUARD: f64 = 1e-6;
// Spread below which an image counts as flat (f32 resampling noise sits well under it).
const FLAT: f64 = 1e-6;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BaselineParams {
    /// Low-pass box radius for HPF/SFIM; `2 * sus` when unset.
    pub hpf_radius: Option<usize>,
    /// Per-band intensity weights; uniform when unset.
    pub intensity_weights: Option<Vec<f64>>,
}

impl BaselineParams {
    fn weights(&self, bands: usize) -> Result<Vec<f64>> {
        match &self.intensity_weights {
            None => Ok(vec![1.0 / bands as f64; bands]),
            Some(w) => {
                let sum: f64 = w.iter().sum();
                if w.len() != bands || w.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidArgument(format!(
                        "intensity weights must be {bands} non-negative values summing to 1"
                    )));
                }
                Ok(w.clone())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    Bicubic,
    Ihs,
    Brovey,
    Hpf,
    Sfim,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [Baseline::Brovey, Baseline::Ihs, Baseline::Hpf, Baseline::Sfim];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Bicubic => "bicubic",
            Baseline::Ihs => "ihs",
            Baseline::Brovey => "brovey",
            Baseline::Hpf => "hpf",
            Baseline::Sfim => "sfim",
        }
    }

    pub fn run(
        self,
        pan: &ImageTensor,
        lrms: &ImageTensor,
        sus: usize,
        params: &BaselineParams,
    ) -> Result<ImageTensor> {
        match self {
            Baseline::Bicubic => {
                check(pan, lrms, sus)?;
                Ok(bicubic_resize(lrms, pan.height(), pan.width()))
            }
            Baseline::Ihs => ihs(pan, lrms, sus, params),
            Baseline::Brovey => brovey(pan, lrms, sus, params),
            Baseline::Hpf => hpf(pan, lrms, sus, params),
            Baseline::Sfim => sfim(pan, lrms, sus, params),
        }
    }
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bicubic" => Ok(Baseline::Bicubic),
            "ihs" => Ok(Baseline::Ihs),
            "brovey" => Ok(Baseline::Brovey),
            "hpf" => Ok(Baseline::Hpf),
            "sfim" => Ok(Baseline::Sfim),
            other => Err(Error::InvalidArgument(format!("unknown baseline `{other}`"))),
        }
    }
}

fn check(pan: &ImageTensor, lrms: &ImageTensor, sus: usize) -> Result<()> {
    if pan.channels() != 1 {
        return shape_err("pan must be single-channel");
    }
    if sus == 0 || pan.height() != lrms.height() * sus || pan.width() != lrms.width() * sus {
        return shape_err(format!(
            "pan {}x{} is not {sus}x the lrms {}x{}",
            pan.height(),
            pan.width(),
            lrms.height(),
            lrms.width()
        ));
    }
    Ok(())
}

struct Prepared {
    ms_up: ImageTensor,
    intensity: Vec<f64>,
    pan: Vec<f64>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Gain/offset matching of `pan` to the target's mean and standard deviation.
/// A flat target only receives the offset, so PAN detail is never erased.
fn histogram_match(pan: &[f64], target: &[f64]) -> Vec<f64> {
    let (mp, sp) = mean_std(pan);
    let (mt, st) = mean_std(target);
    let gain = if sp > FLAT && st > FLAT { st / sp } else { 1.0 };
    pan.iter().map(|v| (v - mp) * gain + mt).collect()
}

fn prepare(
    pan: &ImageTensor,
    lrms: &ImageTensor,
    sus: usize,
    params: &BaselineParams,
) -> Result<Prepared> {
    check(pan, lrms, sus)?;
    let weights = params.weights(lrms.channels())?;
    let ms_up = bicubic_resize(lrms, pan.height(), pan.width());
    let n = pan.plane_len();
    let mut intensity = vec![0.0f64; n];
    for (c, w) in weights.iter().enumerate() {
        for (i, v) in ms_up.plane(c).iter().enumerate() {
            intensity[i] += w * *v as f64;
        }
    }
    let raw: Vec<f64> = pan.plane(0).iter().map(|&v| v as f64).collect();
    let pan = histogram_match(&raw, &intensity);
    Ok(Prepared {
        ms_up,
        intensity,
        pan,
    })
}

fn inject(ms_up: &ImageTensor, f: impl Fn(f64, usize) -> f64) -> ImageTensor {
    let mut out = ms_up.clone();
    for c in 0..out.channels() {
        for (i, v) in out.plane_mut(c).iter_mut().enumerate() {
            *v = f(*v as f64, i) as f32;
        }
    }
    out
}

fn lowpass(pan: &[f64], like: &ImageTensor, radius: usize) -> Vec<f64> {
    let mut out = vec![0.0; pan.len()];
    box_plane(pan, like.height(), like.width(), radius, &mut out);
    out
}

/// `out_c = MS_c + (P - I)`.
pub fn ihs(pan: &ImageTensor, lrms: &ImageTensor, sus: usize, params: &BaselineParams) -> Result<ImageTensor> {
    let p = prepare(pan, lrms, sus, params)?;
    Ok(inject(&p.ms_up, |ms, i| ms + (p.pan[i] - p.intensity[i])))
}

/// `out_c = MS_c * P / I`.
pub fn brovey(pan: &ImageTensor, lrms: &ImageTensor, sus: usize, params: &BaselineParams) -> Result<ImageTensor> {
    let p = prepare(pan, lrms, sus, params)?;
    Ok(inject(&p.ms_up, |ms, i| ms * p.pan[i] / p.intensity[i].max(GUARD)))
}

/// `out_c = MS_c + (P - box(P))`.
pub fn hpf(pan: &ImageTensor, lrms: &ImageTensor, sus: usize, params: &BaselineParams) -> Result<ImageTensor> {
    let p = prepare(pan, lrms, sus, params)?;
    let lp = lowpass(&p.pan, pan, params.hpf_radius.unwrap_or(2 * sus));
    Ok(inject(&p.ms_up, |ms, i| ms + (p.pan[i] - lp[i])))
}

/// `out_c = MS_c * P / box(P)`.
pub fn sfim(pan: &ImageTensor, lrms: &ImageTensor, sus: usize, params: &BaselineParams) -> Result<ImageTensor> {
    let p = prepare(pan, lrms, sus, params)?;
    let lp = lowpass(&p.pan, pan, params.hpf_radius.unwrap_or(2 * sus));
    Ok(inject(&p.ms_up, |ms, i| ms * p.pan[i] / lp[i].max(GUARD)))
}

//! Full-reference fusion quality metrics: PSNR, CC, SAM and ERGAS.

use std::fmt;

use log::warn;

use crate::error::{shape_err, Result};
use crate::image::ImageTensor;

/// PSNR reported for a perfect reconstruction.
pub const PSNR_CAP: f64 = 100.0;

fn check(pred: &ImageTensor, reference: &ImageTensor) -> Result<()> {
    if !pred.same_dims(reference) {
        return shape_err(format!(
            "prediction {:?} and reference {:?} differ in shape",
            pred.dims(),
            reference.dims()
        ));
    }
    Ok(())
}

/// Global PSNR over all bands with peak value 1.
pub fn psnr(pred: &ImageTensor, reference: &ImageTensor) -> Result<f64> {
    check(pred, reference)?;
    let n = pred.data().len() as f64;
    let mse = pred
        .data()
        .iter()
        .zip(reference.data())
        .map(|(&p, &r)| {
            let d = p as f64 - r as f64;
            d * d
        })
        .sum::<f64>()
        / n;
    if mse <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Pearson correlation per band, averaged over bands.
pub fn cc(pred: &ImageTensor, reference: &ImageTensor) -> Result<f64> {
    check(pred, reference)?;
    let mut total = 0.0;
    for c in 0..pred.channels() {
        let (p, r) = (pred.plane(c), reference.plane(c));
        let n = p.len() as f64;
        let mp = p.iter().map(|&v| v as f64).sum::<f64>() / n;
        let mr = r.iter().map(|&v| v as f64).sum::<f64>() / n;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (&a, &b) in p.iter().zip(r) {
            let (da, db) = (a as f64 - mp, b as f64 - mr);
            sxy += da * db;
            sxx += da * da;
            syy += db * db;
        }
        total += if sxx > 0.0 && syy > 0.0 {
            sxy / (sxx * syy).sqrt()
        } else {
            let identical = p == r;
            warn!("cc: band {c} has zero variance; scoring {}", if identical { 1 } else { 0 });
            if identical {
                1.0
            } else {
                0.0
            }
        };
    }
    Ok(total / pred.channels() as f64)
}

/// Mean spectral angle in radians over pixels with non-degenerate spectra.
pub fn sam(pred: &ImageTensor, reference: &ImageTensor) -> Result<f64> {
    check(pred, reference)?;
    let (c, n) = (pred.channels(), pred.plane_len());
    let (mut total, mut counted) = (0.0, 0usize);
    for i in 0..n {
        let (mut dot, mut pp, mut rr) = (0.0, 0.0, 0.0);
        for ch in 0..c {
            let p = pred.data()[ch * n + i] as f64;
            let r = reference.data()[ch * n + i] as f64;
            dot += p * r;
            pp += p * p;
            rr += r * r;
        }
        let (np, nr) = (pp.sqrt(), rr.sqrt());
        if np < 1e-8 || nr < 1e-8 {
            continue;
        }
        total += (dot / (np * nr)).clamp(-1.0, 1.0).acos();
        counted += 1;
    }
    Ok(if counted == 0 { 0.0 } else { total / counted as f64 })
}

/// ERGAS with resolution factor `1/sus`.
pub fn ergas(pred: &ImageTensor, reference: &ImageTensor, sus: usize) -> Result<f64> {
    check(pred, reference)?;
    let (mut acc, mut bands) = (0.0, 0usize);
    for c in 0..pred.channels() {
        let (p, r) = (pred.plane(c), reference.plane(c));
        let n = p.len() as f64;
        let mean = r.iter().map(|&v| v as f64).sum::<f64>() / n;
        if mean.abs() < 1e-8 {
            warn!("ergas: band {c} has near-zero mean; skipped");
            continue;
        }
        let mse = p
            .iter()
            .zip(r)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>()
            / n;
        acc += mse / (mean * mean);
        bands += 1;
    }
    if bands == 0 {
        return Ok(0.0);
    }
    Ok(100.0 / sus as f64 * (acc / bands as f64).sqrt())
}

/// The four metrics for one image.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub psnr: f64,
    pub cc: f64,
    pub sam: f64,
    pub ergas: f64,
}

impl MetricsReport {
    pub fn compute(pred: &ImageTensor, reference: &ImageTensor, sus: usize) -> Result<Self> {
        Ok(Self {
            psnr: psnr(pred, reference)?,
            cc: cc(pred, reference)?,
            sam: sam(pred, reference)?,
            ergas: ergas(pred, reference, sus)?,
        })
    }

    pub fn mean(reports: &[MetricsReport]) -> MetricsReport {
        let n = reports.len().max(1) as f64;
        let sum = reports.iter().fold(MetricsReport::default(), |a, r| MetricsReport {
            psnr: a.psnr + r.psnr,
            cc: a.cc + r.cc,
            sam: a.sam + r.sam,
            ergas: a.ergas + r.ergas,
        });
        MetricsReport {
            psnr: sum.psnr / n,
            cc: sum.cc / n,
            sam: sum.sam / n,
            ergas: sum.ergas / n,
        }
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "psnr {:.4} cc {:.5} sam {:.5} ergas {:.4}",
            self.psnr, self.cc, self.sam, self.ergas
        )
    }
}

/// Named per-image reports plus their mean.
#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub images: Vec<(String, MetricsReport)>,
}

impl EvalReport {
    pub fn push(&mut self, name: impl Into<String>, report: MetricsReport) {
        self.images.push((name.into(), report));
    }

    pub fn mean(&self) -> MetricsReport {
        let all: Vec<_> = self.images.iter().map(|(_, r)| *r).collect();
        MetricsReport::mean(&all)
    }

    /// One `<name> psnr <v> cc <v> sam <v> ergas <v>` line per image and a
    /// final `mean` line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, r) in &self.images {
            out.push_str(&format!("{name} {r}\n"));
        }
        out.push_str(&format!("mean {}\n", self.mean()));
        out
    }

    /// Flat `key = value` variant.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let mut emit = |prefix: &str, r: &MetricsReport| {
            out.push_str(&format!("{prefix}.psnr = {}\n", r.psnr));
            out.push_str(&format!("{prefix}.cc = {}\n", r.cc));
            out.push_str(&format!("{prefix}.sam = {}\n", r.sam));
            out.push_str(&format!("{prefix}.ergas = {}\n", r.ergas));
        };
        for (name, r) in &self.images {
            emit(name, r);
        }
        emit("mean", &self.mean());
        out
    }
}

//! Reduced-resolution (Wald protocol) sample preparation and patch tiling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{bicubic_resize, ImageTensor};
use crate::error::{shape_err, Error, Result};

/// Describes how a dataset is cut out of full scenes.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    /// Spatial up-scaling ratio between PAN and multispectral resolution.
    pub sus: usize,
    pub bands: usize,
    /// (train, val, test) sample counts.
    pub split: (usize, usize, usize),
    /// Side of a low-resolution multispectral patch.
    pub patch: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            sus: 4,
            bands: 4,
            split: (350, 50, 100),
            patch: 32,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn pan_patch(&self) -> usize {
        self.patch * self.sus
    }

    pub fn validate(&self) -> Result<()> {
        if self.sus < 1 || self.patch == 0 || self.bands == 0 {
            return Err(Error::InvalidArgument(format!(
                "dataset spec needs sus >= 1, patch >= 1, bands >= 1 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// A training unit: degraded PAN, degraded multispectral, and the original
/// multispectral image as ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct WaldTriple {
    /// `1 x H x W`, PAN decimated to the reference resolution.
    pub pan: ImageTensor,
    /// `C x H/sus x W/sus`.
    pub lrms: ImageTensor,
    /// `C x H x W`.
    pub reference: ImageTensor,
}

impl WaldTriple {
    pub fn sus(&self) -> usize {
        self.reference.height() / self.lrms.height().max(1)
    }
}

/// Degrades an (ms, pan) pair by `sus` so that the original ms becomes the
/// reference for its own reconstruction.
pub fn wald_degrade(ms: &ImageTensor, pan: &ImageTensor, sus: usize) -> Result<WaldTriple> {
    if sus == 0 {
        return Err(Error::InvalidArgument("sus must be >= 1".into()));
    }
    if pan.channels() != 1 {
        return shape_err(format!("pan must have 1 channel, has {}", pan.channels()));
    }
    if pan.height() != ms.height() * sus || pan.width() != ms.width() * sus {
        return shape_err(format!(
            "pan {}x{} is not {sus}x the ms size {}x{}",
            pan.height(),
            pan.width(),
            ms.height(),
            ms.width()
        ));
    }
    if ms.height() % sus != 0 || ms.width() % sus != 0 {
        return shape_err(format!(
            "ms {}x{} is not divisible by sus {sus}",
            ms.height(),
            ms.width()
        ));
    }
    let (h, w) = (ms.height(), ms.width());
    Ok(WaldTriple {
        pan: bicubic_resize(pan, h, w),
        lrms: bicubic_resize(ms, h / sus, w / sus),
        reference: ms.clone(),
    })
}

/// A patch cut from a triple, with its origin in low-resolution pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub origin: (usize, usize),
    pub triple: WaldTriple,
}

/// Tiles a triple into non-overlapping patches on a grid.
///
/// The grid offset inside the leftover margin is drawn from `spec.seed`, so
/// coordinates depend only on (seed, dims, spec).
pub fn crop_patches(triple: &WaldTriple, spec: &DatasetSpec) -> Result<Vec<Patch>> {
    spec.validate()?;
    let sus = spec.sus;
    let (h, w) = (triple.lrms.height(), triple.lrms.width());
    if triple.reference.height() != h * sus
        || triple.reference.width() != w * sus
        || triple.pan.height() != h * sus
        || triple.pan.width() != w * sus
    {
        return shape_err("triple dimensions do not match the spec's sus ratio");
    }
    let p = spec.patch;
    if h < p || w < p {
        return Err(Error::Empty(format!(
            "lrms {h}x{w} is smaller than one {p}x{p} patch"
        )));
    }
    let (ny, nx) = (h / p, w / p);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ ((h as u64) << 32 | w as u64));
    let oy = rng.gen_range(0..=h - ny * p);
    let ox = rng.gen_range(0..=w - nx * p);
    let hp = p * sus;
    let mut out = Vec::with_capacity(ny * nx);
    for j in 0..ny {
        for i in 0..nx {
            let (y, x) = (oy + j * p, ox + i * p);
            out.push(Patch {
                origin: (y, x),
                triple: WaldTriple {
                    pan: triple.pan.crop(y * sus, x * sus, hp, hp)?,
                    lrms: triple.lrms.crop(y, x, p, p)?,
                    reference: triple.reference.crop(y * sus, x * sus, hp, hp)?,
                },
            });
        }
    }
    Ok(out)
}

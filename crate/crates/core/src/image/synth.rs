//! Synthetic multispectral/PAN scene pairs standing in for satellite imagery.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{bicubic_resize, ImageTensor};
use crate::error::{Error, Result};

enum Shape {
    Rect { y0: f32, x0: f32, y1: f32, x1: f32 },
    Ellipse { cy: f32, cx: f32, ry: f32, rx: f32 },
}

impl Shape {
    fn contains(&self, y: f32, x: f32) -> bool {
        match *self {
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
            Shape::Ellipse { cy, cx, ry, rx } => {
                let dy = (y - cy) / ry;
                let dx = (x - cx) / rx;
                dy * dy + dx * dx <= 1.0
            }
        }
    }
}

/// Generates `(ms, pan)` with `pan` at `height x width` and `ms` at
/// `height/sus x width/sus`.
///
/// A latent scene is rendered at PAN resolution: per band, a smooth field
/// (coarse noise bicubic-upsampled) plus a dense clutter of small
/// rectangles and ellipses, one to two multispectral pixels across, shared
/// by all bands with nearly equal per-band amplitudes. PAN is the band
/// average of the latent scene and ms its bicubic downsampling, so most of
/// the detail lost in ms is recoverable from PAN.
pub fn synth_scene(
    seed: u64,
    bands: usize,
    height: usize,
    width: usize,
    sus: usize,
) -> Result<(ImageTensor, ImageTensor)> {
    if bands == 0 || sus == 0 || height == 0 || width == 0 {
        return Err(Error::InvalidArgument(
            "synth_scene needs bands, sus, height, width >= 1".into(),
        ));
    }
    if height % sus != 0 || width % sus != 0 {
        return Err(Error::InvalidArgument(format!(
            "scene {height}x{width} not divisible by sus {sus}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // smooth background
    let (gh, gw) = ((height / 24).max(3), (width / 24).max(3));
    let mut latent = ImageTensor::zeros(bands, height, width);
    let bgv = 0.08;
    for c in 0..bands {
        let base: f32 = rng.gen_range(0.3..0.5);
        let coarse = ImageTensor::from_fn(1, gh, gw, |_, _, _| base + rng.gen_range(-bgv..bgv));
        let smooth = bicubic_resize(&coarse, height, width);
        latent.plane_mut(c).copy_from_slice(smooth.plane(0));
    }

    // shared clutter, one to two pixels across at multispectral scale
    let density = 8.0;
    let n_shapes = ((height * width) as f32 / (density * (sus * sus) as f32)).ceil() as usize;
    let (hf, wf) = (height as f32, width as f32);
    let unit = sus as f32;
    let (smin, smax) = (1.0f32, 2.0f32);
    let (amin, amax) = (0.06f32, 0.3f32);
    for _ in 0..n_shapes {
        let shape = if rng.gen_bool(0.5) {
            let (sh, sw) = (rng.gen_range(smin..smax) * unit, rng.gen_range(smin..smax) * unit);
            let (y0, x0) = (rng.gen_range(-sh..hf), rng.gen_range(-sw..wf));
            Shape::Rect {
                y0,
                x0,
                y1: y0 + sh,
                x1: x0 + sw,
            }
        } else {
            Shape::Ellipse {
                cy: rng.gen_range(0.0..hf),
                cx: rng.gen_range(0.0..wf),
                ry: rng.gen_range(smin * 0.5..smax * 0.5) * unit,
                rx: rng.gen_range(smin * 0.5..smax * 0.5) * unit,
            }
        };
        let strength: f32 = rng.gen_range(amin..amax) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let amps: Vec<f32> = (0..bands)
            .map(|_| strength * rng.gen_range(0.85..1.15))
            .collect();
        for y in 0..height {
            for x in 0..width {
                if shape.contains(y as f32 + 0.5, x as f32 + 0.5) {
                    for (c, a) in amps.iter().enumerate() {
                        let v = latent.get(c, y, x) + a;
                        latent.set(c, y, x, v);
                    }
                }
            }
        }
    }
    let latent = latent.map(|v| v.clamp(0.0, 1.0));

    let pan = ImageTensor::from_fn(1, height, width, |_, y, x| {
        (0..bands).map(|c| latent.get(c, y, x)).sum::<f32>() / bands as f32
    });

    let ms = bicubic_resize(&latent, height / sus, width / sus).map(|v| v.clamp(0.0, 1.0));
    Ok((ms, pan))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let a = synth_scene(42, 4, 64, 48, 2).unwrap();
        let b = synth_scene(42, 4, 64, 48, 2).unwrap();
        assert_eq!(a, b);
        let (ms, pan) = a;
        assert_eq!(ms.dims(), (4, 32, 24));
        assert_eq!(pan.dims(), (1, 64, 48));
        for v in ms.data().iter().chain(pan.data()) {
            assert!(v.is_finite() && (0.0..=1.0).contains(v));
        }
        let c = synth_scene(43, 4, 64, 48, 2).unwrap();
        assert_ne!(c.0, ms);
    }

    #[test]
    fn rejects_indivisible() {
        assert!(synth_scene(0, 3, 30, 32, 4).is_err());
    }
}

//! FIMG (lossless float container) and 8-bit binary PGM/PPM I/O.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::ImageTensor;
use crate::error::{Error, Result};

const FIMG_MAGIC: &[u8; 4] = b"FIMG";
const FIMG_VERSION: u32 = 1;

/// Loads FIMG, or binary PGM (P5) / PPM (P6) with values scaled by `1/255`.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let bytes = fs::read(path.as_ref())?;
    if bytes.starts_with(FIMG_MAGIC) {
        read_fimg(&mut bytes.as_slice())
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        read_pnm(&bytes)
    } else {
        Err(Error::Format(format!(
            "{}: unrecognized magic (expected FIMG, P5 or P6)",
            path.as_ref().display()
        )))
    }
}

/// Writes FIMG unless the extension is `.pgm`/`.ppm`, in which case an 8-bit
/// netpbm file is written (lossy, clipped to `[0, 1]`).
pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    let mut out = Vec::with_capacity(20 + img.data().len() * 4);
    match ext.as_deref() {
        Some("pgm") | Some("ppm") => write_pnm(img, &mut out)?,
        _ => write_fimg(img, &mut out)?,
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_fimg<W: Write>(img: &ImageTensor, w: &mut W) -> Result<()> {
    let (c, h, wd) = img.dims();
    w.write_all(FIMG_MAGIC)?;
    for v in [FIMG_VERSION, c as u32, h as u32, wd as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut payload = Vec::with_capacity(img.data().len() * 4);
    for v in img.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_fimg<R: Read>(r: &mut R) -> Result<ImageTensor> {
    let mut header = [0u8; 20];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format("FIMG header shorter than 20 bytes".into()))?;
    if &header[..4] != FIMG_MAGIC {
        return Err(Error::Format("bad FIMG magic".into()));
    }
    let field = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = field(0);
    if version != FIMG_VERSION {
        return Err(Error::Format(format!("unsupported FIMG version {version}")));
    }
    let (c, h, w) = (field(1) as usize, field(2) as usize, field(3) as usize);
    if c == 0 {
        return Err(Error::Format("FIMG declares zero channels".into()));
    }
    let expected = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::Format("FIMG dimensions overflow".into()))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != expected * 4 {
        return Err(Error::Truncated {
            expected,
            found: payload.len() / 4,
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    ImageTensor::new(c, h, w, data)
}

/// Parses binary P5/P6 with maxval 255.
pub fn read_pnm(bytes: &[u8]) -> Result<ImageTensor> {
    let channels = match &bytes[..2.min(bytes.len())] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(Error::Format("expected P5 or P6 magic".into())),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("malformed netpbm header".into()))?;
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Format(format!("only 8-bit netpbm supported, maxval {maxval}")));
    }
    let expected = channels * width * height;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: raster.len(),
        });
    }
    // netpbm is interleaved; ImageTensor is planar
    let img = ImageTensor::from_fn(channels, height, width, |c, y, x| {
        raster[(y * width + x) * channels + c] as f32 / 255.0
    });
    Ok(img)
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_pnm<W: Write>(img: &ImageTensor, w: &mut W) -> Result<()> {
    let (c, h, wd) = img.dims();
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => {
            return Err(Error::Format(format!(
                "netpbm output needs 1 or 3 channels, got {c}"
            )))
        }
    };
    write!(w, "{magic}\n{wd} {h}\n255\n")?;
    let mut raster = Vec::with_capacity(c * h * wd);
    for y in 0..h {
        for x in 0..wd {
            for ch in 0..c {
                raster.push(to_u8(img.get(ch, y, x)));
            }
        }
    }
    w.write_all(&raster)?;
    Ok(())
}

/// 8-bit PPM preview of the first three bands (a single band is replicated).
pub fn write_ppm_preview(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let rgb = if img.channels() >= 3 {
        img.first_channels(3)?
    } else {
        let band = img.plane(0);
        ImageTensor::from_fn(3, img.height(), img.width(), |_, y, x| {
            band[y * img.width() + x]
        })
    };
    let mut out = Vec::new();
    write_pnm(&rgb, &mut out)?;
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_max_maps_to_one() {
        let mut bytes = b"P5\n# comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0]);
        let img = read_pnm(&bytes).unwrap();
        assert_eq!(img.dims(), (1, 1, 2));
        assert_eq!(img.data(), &[1.0, 0.0]);
    }

    #[test]
    fn ppm_is_deinterleaved() {
        let mut bytes = b"P6 1 1 255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 51]);
        let img = read_pnm(&bytes).unwrap();
        assert_eq!(img.data(), &[1.0, 0.0, 0.2]);
    }

    #[test]
    fn fimg_short_payload_is_truncation() {
        let img = ImageTensor::zeros(2, 4, 4);
        let mut buf = Vec::new();
        write_fimg(&img, &mut buf).unwrap();
        buf.truncate(buf.len() - 4); // 31 floats left
        match read_fimg(&mut buf.as_slice()) {
            Err(Error::Truncated { expected, found }) => {
                assert_eq!((expected, found), (32, 31));
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn fimg_bad_magic() {
        let buf = b"FIMX\x01\0\0\0\x01\0\0\0\x01\0\0\0\x01\0\0\0\0\0\0\0".to_vec();
        assert!(matches!(read_fimg(&mut buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn fimg_header_layout() {
        let img = ImageTensor::filled(1, 1, 2, 0.5);
        let mut buf = Vec::new();
        write_fimg(&img, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"FIMG");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[16..20], &2u32.to_le_bytes());
        assert_eq!(buf.len(), 20 + 8);
        assert_eq!(&buf[20..24], &0.5f32.to_le_bytes());
    }
}

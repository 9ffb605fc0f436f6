//! Image and raw-tensor file I/O.
//!
//! 8-bit PNGs map to floats as v/255 on load and round(clamp(v,0,1)*255) on
//! save. Out-of-range data (noisy images) must not pass through that path;
//! it goes to the `.fimg` float container, which round-trips f32 exactly,
//! or to a 16-bit preview PNG scaled over a fixed [-1, 2] window.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageReader, Luma, Rgb};

use crate::tensor::ImageTensor;
use crate::{Error, Result};

/// Lower edge of the fixed 16-bit preview window.
pub const PREVIEW_LO: f64 = -1.0;
/// Upper edge of the fixed 16-bit preview window.
pub const PREVIEW_HI: f64 = 2.0;

const FIMG_MAGIC: &[u8; 4] = b"FIMG";
const FIMG_VERSION: u32 = 1;

/// Loads an 8-bit PNG as a 1- or 3-channel tensor with values v/255.
/// Grayscale stays single-channel; anything with color becomes RGB
/// (alpha is dropped).
pub fn load_png(path: &Path) -> Result<ImageTensor> {
    let img = ImageReader::open(path)?
        .decode()
        .map_err(Error::Image)?;
    let tensor = match img {
        DynamicImage::ImageLuma8(gray) => {
            let (w, h) = gray.dimensions();
            let data = gray.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
            ImageTensor::from_data(h as usize, w as usize, 1, data)?
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            let data = rgb.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
            ImageTensor::from_data(h as usize, w as usize, 3, data)?
        }
    };
    Ok(tensor)
}

/// Quantizes one float to the 8-bit code used on save: clamp to [0,1] then
/// round half away from zero after scaling by 255.
#[inline]
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Saves a 1- or 3-channel tensor as an 8-bit PNG via [`quantize_u8`].
pub fn save_png(path: &Path, img: &ImageTensor) -> Result<()> {
    let (h, w, c) = img.shape();
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize_u8(v)).collect();
    match c {
        1 => {
            let buf: ImageBuffer<Luma<u8>, _> =
                ImageBuffer::from_raw(w as u32, h as u32, bytes).expect("sized buffer");
            buf.save(path).map_err(Error::Image)?;
        }
        3 => {
            let buf: ImageBuffer<Rgb<u8>, _> =
                ImageBuffer::from_raw(w as u32, h as u32, bytes).expect("sized buffer");
            buf.save(path).map_err(Error::Image)?;
        }
        _ => {
            return Err(Error::invalid(format!(
                "png save supports 1 or 3 channels, got {c}"
            )))
        }
    }
    Ok(())
}

/// Saves a 16-bit PNG with values mapped linearly from the fixed
/// [`PREVIEW_LO`], [`PREVIEW_HI`] window onto [0, 65535]. Values outside the
/// window saturate. Lossy; for inspection only.
pub fn save_png16_preview(path: &Path, img: &ImageTensor) -> Result<()> {
    let (h, w, c) = img.shape();
    let scale = 65535.0 / (PREVIEW_HI - PREVIEW_LO);
    let words: Vec<u16> = img
        .data()
        .iter()
        .map(|&v| (((v - PREVIEW_LO) * scale).round().clamp(0.0, 65535.0)) as u16)
        .collect();
    match c {
        1 => {
            let buf: ImageBuffer<Luma<u16>, _> =
                ImageBuffer::from_raw(w as u32, h as u32, words).expect("sized buffer");
            buf.save(path).map_err(Error::Image)?;
        }
        3 => {
            let buf: ImageBuffer<Rgb<u16>, _> =
                ImageBuffer::from_raw(w as u32, h as u32, words).expect("sized buffer");
            buf.save(path).map_err(Error::Image)?;
        }
        _ => {
            return Err(Error::invalid(format!(
                "png16 save supports 1 or 3 channels, got {c}"
            )))
        }
    }
    Ok(())
}

/// Writes the raw float container: magic, version, dims, then f32
/// little-endian row-major payload. Exact for f32-representable data.
pub fn save_fimg(path: &Path, img: &ImageTensor) -> Result<()> {
    let (h, w, c) = img.shape();
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(FIMG_MAGIC)?;
    out.write_all(&FIMG_VERSION.to_le_bytes())?;
    out.write_all(&(h as u32).to_le_bytes())?;
    out.write_all(&(w as u32).to_le_bytes())?;
    out.write_all(&(c as u32).to_le_bytes())?;
    for &v in img.data() {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads the raw float container written by [`save_fimg`].
pub fn load_fimg(path: &Path) -> Result<ImageTensor> {
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != FIMG_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {magic:?}",
            path.display()
        )));
    }
    let version = read_u32(&mut input)?;
    if version != FIMG_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let h = read_u32(&mut input)? as usize;
    let w = read_u32(&mut input)? as usize;
    let c = read_u32(&mut input)? as usize;
    let n = h
        .checked_mul(w)
        .and_then(|hw| hw.checked_mul(c))
        .ok_or_else(|| Error::Format(format!("{}: dims overflow", path.display())))?;
    let mut payload = vec![0u8; n * 4];
    input.read_exact(&mut payload)?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    ImageTensor::from_data(h, w, c, data)
}

/// Loads either an 8-bit PNG or a `.fimg` container by extension.
pub fn load_auto(path: &Path) -> Result<ImageTensor> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("fimg") => load_fimg(path),
        _ => load_png(path),
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Paths of all `.png` files directly inside `dir`, sorted by file name so
/// corpus indexing is stable across platforms.
pub fn list_pngs(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("png"))
        .collect();
    paths.sort();
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn u8_png_round_trips_exactly() {
        // Every 8-bit code survives v/255 -> clamp/round -> v.
        let data: Vec<f64> = (0..=255).map(|v| v as f64 / 255.0).collect();
        let img = ImageTensor::from_data(16, 16, 1, data).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("codes.png");
        save_png(&path, &img).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn quantize_rounds_half_up_and_clamps() {
        assert_eq!(quantize_u8(-0.25), 0);
        assert_eq!(quantize_u8(1.25), 255);
        assert_eq!(quantize_u8(0.5 / 255.0), 1);
        assert_eq!(quantize_u8(0.49 / 255.0), 0);
        assert_eq!(quantize_u8(1.0), 255);
    }

    #[test]
    fn rgb_png_round_trips() {
        let data: Vec<f64> = (0..4 * 5 * 3).map(|i| (i % 256) as f64 / 255.0).collect();
        let img = ImageTensor::from_data(4, 5, 3, data).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("rgb.png");
        save_png(&path, &img).unwrap();
        assert_eq!(load_png(&path).unwrap(), img);
    }

    #[test]
    fn fimg_round_trips_out_of_range_values() {
        let data = vec![-0.75, 0.0, 0.333_333_343_3, 1.0, 1.9, 0.5, -0.1, 1.2, 0.9];
        let img = ImageTensor::from_data(3, 3, 1, data.clone()).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("raw.fimg");
        save_fimg(&path, &img).unwrap();
        let back = load_fimg(&path).unwrap();
        for (a, b) in back.data().iter().zip(&data) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn fimg_rejects_bad_magic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.fimg");
        std::fs::write(&path, b"NOPE____________").unwrap();
        assert!(matches!(load_fimg(&path), Err(Error::Format(_))));
    }

    #[test]
    fn preview_png_maps_window_ends_to_u16_extremes() {
        let img = ImageTensor::from_data(1, 3, 1, vec![PREVIEW_LO, 0.5, PREVIEW_HI]).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("prev.png");
        save_png16_preview(&path, &img).unwrap();
        let decoded = image::open(&path).unwrap().to_luma16();
        assert_eq!(decoded.get_pixel(0, 0).0[0], 0);
        assert_eq!(decoded.get_pixel(2, 0).0[0], 65535);
        let mid = decoded.get_pixel(1, 0).0[0];
        assert_eq!(mid, 32768); // (0.5 + 1.0) / 3.0 * 65535 rounded
    }

    #[test]
    fn list_pngs_is_sorted_and_filtered() {
        let dir = tempdir().unwrap();
        for name in ["b.png", "a.png", "c.txt", "d.fimg"] {
            std::fs::write(dir.path().join(name), b"x").unwrap();
        }
        let got = list_pngs(dir.path()).unwrap();
        let names: Vec<_> = got
            .iter()
            .map(|p| p.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        assert_eq!(names, vec!["a.png", "b.png"]);
    }
}

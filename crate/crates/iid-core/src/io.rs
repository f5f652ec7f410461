//! Raster persistence: 8/16-bit PNG decode, 16-bit PNG encode, and a raw
//! little-endian float container ("IIDF") for lossless intrinsics.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{linearize, srgb_oetf, LinearImage, Linearization, ScalarField};

/// Magic bytes opening every raw float raster.
pub const IIDF_MAGIC: &[u8; 4] = b"IIDF";

/// Reads an 8- or 16-bit PNG and decodes it into linear RGB under the given
/// transfer curve. Grayscale sources are replicated to three channels and
/// alpha is dropped.
pub fn read_png(path: &Path, mode: Linearization) -> Result<LinearImage> {
    let dynimg = image::open(path).map_err(|e| Error::MalformedRaster {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = dynimg.to_rgb16();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data: Vec<f64> = rgb.as_raw().iter().map(|&v| v as f64 / 65535.0).collect();
    let encoded = LinearImage::from_vec(w, h, data)?;
    Ok(linearize(&encoded, mode))
}

/// Writes a linear image as 16-bit PNG. `Srgb` re-encodes through the
/// inverse transfer curve; `Identity` stores clamped linear values, the
/// convention used by ground-truth intrinsics.
pub fn write_png16(img: &LinearImage, path: &Path, encode: Linearization) -> Result<()> {
    let mut buf: Vec<u16> = Vec::with_capacity(img.data().len());
    for &v in img.data() {
        let e = match encode {
            Linearization::Srgb => srgb_oetf(v.clamp(0.0, 1.0)),
            Linearization::Identity => v.clamp(0.0, 1.0),
        };
        buf.push((e * 65535.0).round() as u16);
    }
    let out: image::ImageBuffer<image::Rgb<u16>, Vec<u16>> =
        image::ImageBuffer::from_raw(img.width() as u32, img.height() as u32, buf)
            .expect("buffer sized from image");
    out.save(path).map_err(|e| Error::MalformedRaster {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Writes a scalar field as 16-bit grayscale PNG, clamping to [0,1].
pub fn write_png16_gray(field: &ScalarField, path: &Path) -> Result<()> {
    let buf: Vec<u16> =
        field.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
    let out: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
        image::ImageBuffer::from_raw(field.width() as u32, field.height() as u32, buf)
            .expect("buffer sized from field");
    out.save(path).map_err(|e| Error::MalformedRaster {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Reads a PNG as a single-channel field (mean of RGB for color sources).
pub fn read_png_gray(path: &Path) -> Result<ScalarField> {
    let img = read_png(path, Linearization::Identity)?;
    let data = img.data().chunks_exact(3).map(|px| (px[0] + px[1] + px[2]) / 3.0).collect();
    ScalarField::from_vec(img.width(), img.height(), data)
}

fn write_iidf_raw(path: &Path, width: u32, height: u32, channels: u32, data: &[f64]) -> Result<()> {
    debug_assert_eq!(data.len(), (width * height * channels) as usize);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    emit(IIDF_MAGIC)?;
    emit(&width.to_le_bytes())?;
    emit(&height.to_le_bytes())?;
    emit(&channels.to_le_bytes())?;
    for &v in data {
        emit(&(v as f32).to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_iidf_raw(path: &Path) -> Result<(u32, u32, u32, Vec<f64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let malformed = |reason: &str| Error::MalformedRaster {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| malformed("missing header"))?;
    if &magic != IIDF_MAGIC {
        return Err(malformed("bad magic"));
    }
    let mut word = [0u8; 4];
    let mut next_u32 = |r: &mut BufReader<File>| -> Result<u32> {
        r.read_exact(&mut word).map_err(|_| malformed("truncated header"))?;
        Ok(u32::from_le_bytes(word))
    };
    let width = next_u32(&mut r)?;
    let height = next_u32(&mut r)?;
    let channels = next_u32(&mut r)?;
    if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
        return Err(malformed("unsupported geometry"));
    }
    let count = (width as usize) * (height as usize) * (channels as usize);
    let mut payload = vec![0u8; count * 4];
    r.read_exact(&mut payload).map_err(|_| malformed("truncated payload"))?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok((width, height, channels, data))
}

/// Stores a linear image losslessly (up to f32) in the raw float container.
pub fn write_iidf(img: &LinearImage, path: &Path) -> Result<()> {
    write_iidf_raw(path, img.width() as u32, img.height() as u32, 3, img.data())
}

pub fn read_iidf(path: &Path) -> Result<LinearImage> {
    let (w, h, c, data) = read_iidf_raw(path)?;
    if c != 3 {
        return Err(Error::MalformedRaster {
            path: path.to_path_buf(),
            reason: format!("expected 3 channels, found {c}"),
        });
    }
    LinearImage::from_vec(w as usize, h as usize, data)
}

pub fn write_iidf_field(field: &ScalarField, path: &Path) -> Result<()> {
    write_iidf_raw(path, field.width() as u32, field.height() as u32, 1, field.data())
}

pub fn read_iidf_field(path: &Path) -> Result<ScalarField> {
    let (w, h, c, data) = read_iidf_raw(path)?;
    if c != 1 {
        return Err(Error::MalformedRaster {
            path: path.to_path_buf(),
            reason: format!("expected 1 channel, found {c}"),
        });
    }
    ScalarField::from_vec(w as usize, h as usize, data)
}

fn has_iidf_ext(path: &Path) -> bool {
    path.extension().map(|e| e.eq_ignore_ascii_case("iidf")).unwrap_or(false)
}

/// Loads a raster by extension: `.iidf` is already linear, anything else is
/// decoded as PNG under `mode`.
pub fn load_raster(path: &Path, mode: Linearization) -> Result<LinearImage> {
    if has_iidf_ext(path) {
        read_iidf(path)
    } else {
        read_png(path, mode)
    }
}

/// Saves a raster by extension: `.iidf` keeps raw floats, anything else is
/// 16-bit PNG under `encode`.
pub fn save_raster(img: &LinearImage, path: &Path, encode: Linearization) -> Result<()> {
    if has_iidf_ext(path) {
        write_iidf(img, path)
    } else {
        write_png16(img, path, encode)
    }
}

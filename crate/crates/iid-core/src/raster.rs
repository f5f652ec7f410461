//! Raster containers and the pixel-level primitives every stage builds on:
//! linearization, separable Gaussian smoothing, and chromaticity features.

use crate::error::{Error, Result};

/// Guard added to the channel sum before dividing, so chromaticity is
/// defined on black pixels.
pub const CHROMA_EPS: f64 = 1e-6;

/// H x W x 3 linear RGB raster, row-major, channel-interleaved.
/// Values are finite and non-negative; they are not bounded above
/// (shading and ratio fields routinely exceed 1).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// H x W single-channel raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Per-pixel feature bundle consumed by the clustering and CRF stages.
#[derive(Debug, Clone)]
pub struct PixelFeatures {
    pub intensity: ScalarField,
    pub chroma_r: ScalarField,
    pub chroma_g: ScalarField,
}

/// Transfer curve applied when decoding rasters into linear RGB.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linearization {
    #[default]
    Srgb,
    Identity,
}

impl LinearImage {
    /// All-zero image. Dimensions must be at least 1x1.
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1, "image dimensions must be >= 1");
        LinearImage { width, height, data: vec![0.0; width * height * 3] }
    }

    /// Wraps interleaved RGB data, validating length and value domain.
    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width < 1 || height < 1 {
            return Err(Error::InvalidParameter("image dimensions must be >= 1".into()));
        }
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch(format!(
                "expected {} samples for {}x{}x3, got {}",
                width * height * 3,
                width,
                height,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "linear image samples must be finite and non-negative".into(),
            ));
        }
        Ok(LinearImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Extracts one channel as a scalar field.
    pub fn channel(&self, c: usize) -> ScalarField {
        assert!(c < 3);
        let data = self.data.chunks_exact(3).map(|px| px[c]).collect();
        ScalarField { width: self.width, height: self.height, data }
    }

    /// Rebuilds an image from three channel planes of equal shape.
    pub fn from_channels(r: &ScalarField, g: &ScalarField, b: &ScalarField) -> Result<Self> {
        if r.shape() != g.shape() || r.shape() != b.shape() {
            return Err(Error::DimensionMismatch("channel planes differ in shape".into()));
        }
        let mut data = Vec::with_capacity(r.data.len() * 3);
        for i in 0..r.data.len() {
            data.push(r.data[i]);
            data.push(g.data[i]);
            data.push(b.data[i]);
        }
        Ok(LinearImage { width: r.width, height: r.height, data })
    }

    pub fn same_shape(&self, other: &LinearImage) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl ScalarField {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1, "field dimensions must be >= 1");
        ScalarField { width, height, data: vec![0.0; width * height] }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width >= 1 && height >= 1, "field dimensions must be >= 1");
        ScalarField { width, height, data: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width < 1 || height < 1 {
            return Err(Error::InvalidParameter("field dimensions must be >= 1".into()));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "expected {} samples for {}x{}, got {}",
                width * height,
                width,
                height,
                data.len()
            )));
        }
        Ok(ScalarField { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// sRGB electro-optical transfer function: encoded [0,1] to linear [0,1].
#[inline]
pub fn srgb_eotf(u: f64) -> f64 {
    if u <= 0.04045 {
        u / 12.92
    } else {
        ((u + 0.055) / 1.055).powf(2.4)
    }
}

/// Inverse of [`srgb_eotf`], used when encoding rasters for storage.
#[inline]
pub fn srgb_oetf(v: f64) -> f64 {
    if v <= 0.0031308 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Decodes an image holding encoded values in [0,1] into linear RGB.
/// `Identity` passes samples through for already-linear sources.
pub fn linearize(encoded: &LinearImage, mode: Linearization) -> LinearImage {
    match mode {
        Linearization::Identity => encoded.clone(),
        Linearization::Srgb => {
            let data = encoded.data.iter().map(|&u| srgb_eotf(u)).collect();
            LinearImage { width: encoded.width, height: encoded.height, data }
        }
    }
}

/// Normalized 1-D Gaussian taps with radius ceil(3 sigma).
fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("blur sigma must be positive, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut taps = Vec::with_capacity((2 * radius + 1) as usize);
    for k in -radius..=radius {
        taps.push((-((k * k) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let total: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= total;
    }
    Ok(taps)
}

fn convolve_axis(src: &[f64], w: usize, h: usize, taps: &[f64], horizontal: bool) -> Vec<f64> {
    let radius = (taps.len() / 2) as i64;
    let mut out = vec![0.0; src.len()];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = 0.0;
            for (ti, t) in taps.iter().enumerate() {
                let o = ti as i64 - radius;
                // Edge handling by replication: clamp the tap coordinate.
                let (sx, sy) = if horizontal {
                    ((x + o).clamp(0, w as i64 - 1), y)
                } else {
                    (x, (y + o).clamp(0, h as i64 - 1))
                };
                acc += t * src[(sy * w as i64 + sx) as usize];
            }
            out[(y * w as i64 + x) as usize] = acc;
        }
    }
    out
}

/// Separable Gaussian blur of a scalar field. Kernel radius is ceil(3 sigma);
/// edges replicate. sigma <= 0 is rejected.
pub fn gaussian_blur_field(field: &ScalarField, sigma: f64) -> Result<ScalarField> {
    let taps = gaussian_kernel(sigma)?;
    let tmp = convolve_axis(&field.data, field.width, field.height, &taps, true);
    let data = convolve_axis(&tmp, field.width, field.height, &taps, false);
    Ok(ScalarField { width: field.width, height: field.height, data })
}

/// Per-channel Gaussian blur of a linear image. Same kernel and edge rules
/// as [`gaussian_blur_field`].
pub fn gaussian_blur(img: &LinearImage, sigma: f64) -> Result<LinearImage> {
    let taps = gaussian_kernel(sigma)?;
    let mut out = img.clone();
    let (w, h) = (img.width, img.height);
    for c in 0..3 {
        let plane: Vec<f64> = img.data.iter().skip(c).step_by(3).cloned().collect();
        let tmp = convolve_axis(&plane, w, h, &taps, true);
        let done = convolve_axis(&tmp, w, h, &taps, false);
        for (i, v) in done.into_iter().enumerate() {
            out.data[i * 3 + c] = v;
        }
    }
    Ok(out)
}

/// Splits an image into intensity and normalized chromaticity planes:
/// intensity = (r+g+b)/3, chroma_r = r/(r+g+b+eps), chroma_g likewise.
pub fn chromaticity(img: &LinearImage) -> PixelFeatures {
    let n = img.n_pixels();
    let mut intensity = Vec::with_capacity(n);
    let mut chroma_r = Vec::with_capacity(n);
    let mut chroma_g = Vec::with_capacity(n);
    for px in img.data.chunks_exact(3) {
        let sum = px[0] + px[1] + px[2];
        intensity.push(sum / 3.0);
        chroma_r.push(px[0] / (sum + CHROMA_EPS));
        chroma_g.push(px[1] / (sum + CHROMA_EPS));
    }
    let (w, h) = (img.width, img.height);
    PixelFeatures {
        intensity: ScalarField { width: w, height: h, data: intensity },
        chroma_r: ScalarField { width: w, height: h, data: chroma_r },
        chroma_g: ScalarField { width: w, height: h, data: chroma_g },
    }
}

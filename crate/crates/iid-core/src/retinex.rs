//! Gradient-domain decomposition: classify log-image gradients as material
//! or shading, optionally widen the material set with ratio evidence, then
//! re-integrate only the material gradients into a reflectance image.

use crate::error::{Error, Result};
use crate::poisson::reconstruct_from_gradients;
use crate::raster::{chromaticity, LinearImage, ScalarField};
use crate::ratios::{ratio_field, significance_mask_from, DEFAULT_SIGNIFICANCE};

/// Floor applied before taking logs of image values.
pub const LOG_CLAMP: f64 = 1e-4;

/// Thresholds and smoothing used by gradient classification.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RetinexParams {
    /// Threshold on the brightness (mean log channel) gradient magnitude.
    pub t_brightness: f64,
    /// Threshold on the chromaticity gradient magnitude.
    pub t_chroma: f64,
    /// Threshold on the fused ratio magnitude for the ratio evidence mask.
    pub ccr_threshold: f64,
    /// Smoothing applied before ratio computation.
    pub sigma: f64,
}

impl Default for RetinexParams {
    fn default() -> Self {
        RetinexParams {
            t_brightness: 0.075,
            t_chroma: 0.075,
            ccr_threshold: DEFAULT_SIGNIFICANCE,
            sigma: 1.0,
        }
    }
}

/// Forward differences of the log image plus the classification planes.
/// `dx[c]` pairs each pixel with its right neighbor (last column zero),
/// `dy[c]` with the one below (last row zero). `log_means` records the
/// per-channel mean of the log image, the gauge for re-integration.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub dx: [ScalarField; 3],
    pub dy: [ScalarField; 3],
    pub brightness_mag_x: ScalarField,
    pub brightness_mag_y: ScalarField,
    pub chroma_mag_x: ScalarField,
    pub chroma_mag_y: ScalarField,
    pub log_means: [f64; 3],
}

impl GradientField {
    pub fn shape(&self) -> (usize, usize) {
        self.dx[0].shape()
    }
}

/// Binary per-axis masks aligned with forward-difference positions.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMask {
    pub x: ScalarField,
    pub y: ScalarField,
}

impl GradientMask {
    pub fn shape(&self) -> (usize, usize) {
        self.x.shape()
    }

    /// Number of marked positions across both axes.
    pub fn count(&self) -> usize {
        self.x.data().iter().chain(self.y.data()).filter(|&&v| v != 0.0).count()
    }

    /// True when every position marked in `other` is marked here too.
    pub fn contains(&self, other: &GradientMask) -> bool {
        self.shape() == other.shape()
            && self
                .x
                .data()
                .iter()
                .zip(other.x.data())
                .chain(self.y.data().iter().zip(other.y.data()))
                .all(|(a, b)| *b == 0.0 || *a != 0.0)
    }
}

/// Log-domain forward differences with brightness and chromaticity
/// classification planes. Values clamp at [`LOG_CLAMP`] before the log.
pub fn log_gradients(img: &LinearImage) -> GradientField {
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    let mut log_planes = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut brightness = vec![0.0; n];
    for (i, px) in img.data().chunks_exact(3).enumerate() {
        let mut sum = 0.0;
        for c in 0..3 {
            let l = px[c].max(LOG_CLAMP).ln();
            log_planes[c][i] = l;
            sum += l;
        }
        brightness[i] = sum / 3.0;
    }
    let log_means =
        [0, 1, 2].map(|c| log_planes[c].iter().sum::<f64>() / n as f64);

    let feats = chromaticity(img);
    let field = |data: Vec<f64>| ScalarField::from_vec(w, h, data).expect("sized from image");
    let mut dx = [ScalarField::new(w, h), ScalarField::new(w, h), ScalarField::new(w, h)];
    let mut dy = dx.clone();
    let mut bx = vec![0.0; n];
    let mut by = vec![0.0; n];
    let mut cx = vec![0.0; n];
    let mut cy = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                for c in 0..3 {
                    dx[c].set(x, y, log_planes[c][i + 1] - log_planes[c][i]);
                }
                bx[i] = (brightness[i + 1] - brightness[i]).abs();
                let dr = feats.chroma_r.data()[i + 1] - feats.chroma_r.data()[i];
                let dg = feats.chroma_g.data()[i + 1] - feats.chroma_g.data()[i];
                cx[i] = (dr * dr + dg * dg).sqrt();
            }
            if y + 1 < h {
                for c in 0..3 {
                    dy[c].set(x, y, log_planes[c][i + w] - log_planes[c][i]);
                }
                by[i] = (brightness[i + w] - brightness[i]).abs();
                let dr = feats.chroma_r.data()[i + w] - feats.chroma_r.data()[i];
                let dg = feats.chroma_g.data()[i + w] - feats.chroma_g.data()[i];
                cy[i] = (dr * dr + dg * dg).sqrt();
            }
        }
    }
    GradientField {
        dx,
        dy,
        brightness_mag_x: field(bx),
        brightness_mag_y: field(by),
        chroma_mag_x: field(cx),
        chroma_mag_y: field(cy),
        log_means,
    }
}

fn threshold_pair(b: &ScalarField, c: &ScalarField, tb: f64, tc: f64) -> ScalarField {
    let data = b
        .data()
        .iter()
        .zip(c.data())
        .map(|(&bv, &cv)| if bv > tb && cv > tc { 1.0 } else { 0.0 })
        .collect();
    ScalarField::from_vec(b.width(), b.height(), data).expect("sized from field")
}

/// Marks a gradient position as material only when the brightness AND the
/// chromaticity both move: pure intensity steps (shading, shadow edges)
/// fail the chroma test, chroma noise below the brightness floor fails the
/// brightness test.
pub fn retinex_classify(grad: &GradientField, params: &RetinexParams) -> GradientMask {
    GradientMask {
        x: threshold_pair(
            &grad.brightness_mag_x,
            &grad.chroma_mag_x,
            params.t_brightness,
            params.t_chroma,
        ),
        y: threshold_pair(
            &grad.brightness_mag_y,
            &grad.chroma_mag_y,
            params.t_brightness,
            params.t_chroma,
        ),
    }
}

/// Ratio evidence mask: positions whose fused cross-ratio magnitude exceeds
/// the threshold, computed per axis so it aligns with gradient positions.
/// Blind to shading by construction, including shadow edges that fool a
/// brightness test.
pub fn ccr_mask(img: &LinearImage, params: &RetinexParams) -> Result<GradientMask> {
    let field = ratio_field(img, params.sigma)?;
    Ok(GradientMask {
        x: significance_mask_from(&field.fused_horizontal(), params.ccr_threshold),
        y: significance_mask_from(&field.fused_vertical(), params.ccr_threshold),
    })
}

/// Pointwise OR of two mask pairs. Shapes must agree.
pub fn fuse_or(a: &GradientMask, b: &GradientMask) -> Result<GradientMask> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "mask shapes {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let or = |p: &ScalarField, q: &ScalarField| {
        let data = p
            .data()
            .iter()
            .zip(q.data())
            .map(|(&u, &v)| if u != 0.0 || v != 0.0 { 1.0 } else { 0.0 })
            .collect();
        ScalarField::from_vec(p.width(), p.height(), data).expect("sized from field")
    };
    Ok(GradientMask { x: or(&a.x, &b.x), y: or(&a.y, &b.y) })
}

/// Log-domain reconstruction from kept gradients.
#[derive(Debug, Clone)]
pub struct LogReconstruction {
    /// Per-channel log reflectance planes.
    pub planes: [ScalarField; 3],
    /// False when any channel hit the iteration cap; the planes then hold
    /// the best iterates found.
    pub converged: bool,
    /// Worst relative residual across channels.
    pub residual: f64,
}

/// Integrates the kept gradients per channel. Dropped positions integrate a
/// zero target, which is what flattens shading away. The gauge pins each
/// plane's mean to the mean of the corresponding log input channel.
pub fn poisson_reconstruct(grad: &GradientField, keep: &GradientMask) -> Result<LogReconstruction> {
    if grad.shape() != keep.shape() {
        return Err(Error::DimensionMismatch(format!(
            "gradient shape {:?} vs mask shape {:?}",
            grad.shape(),
            keep.shape()
        )));
    }
    let (w, h) = grad.shape();
    let masked = |g: &ScalarField, m: &ScalarField| {
        let data = g.data().iter().zip(m.data()).map(|(&gv, &mv)| gv * mv).collect();
        ScalarField::from_vec(w, h, data).expect("sized from field")
    };
    let mut planes = Vec::with_capacity(3);
    let mut converged = true;
    let mut residual = 0.0f64;
    for c in 0..3 {
        let gx = masked(&grad.dx[c], &keep.x);
        let gy = masked(&grad.dy[c], &keep.y);
        let sol = reconstruct_from_gradients(&gx, &gy, grad.log_means[c])?;
        converged &= sol.converged;
        residual = residual.max(sol.residual);
        planes.push(sol.field);
    }
    let planes: [ScalarField; 3] = planes.try_into().expect("three channels");
    Ok(LogReconstruction { planes, converged, residual })
}

/// Full gradient-classification decomposition.
#[derive(Debug, Clone)]
pub struct RetinexDecomposition {
    pub reflectance: LinearImage,
    pub shading: LinearImage,
    /// Keep mask actually used (after optional ratio fusion).
    pub keep: GradientMask,
    /// True when the reconstruction stopped at its iteration cap.
    pub degraded: bool,
    pub residual: f64,
}

/// Classifies gradients, optionally ORs in ratio evidence, re-integrates,
/// and splits the input into reflectance and shading.
pub fn retinex_decompose(
    img: &LinearImage,
    params: &RetinexParams,
    use_ccr: bool,
) -> Result<RetinexDecomposition> {
    let grad = log_gradients(img);
    let mut keep = retinex_classify(&grad, params);
    if use_ccr {
        keep = fuse_or(&keep, &ccr_mask(img, params)?)?;
    }
    let rec = poisson_reconstruct(&grad, &keep)?;
    let mut reflectance = LinearImage::new(img.width(), img.height());
    for i in 0..img.n_pixels() {
        let rgb = [0, 1, 2].map(|c| rec.planes[c].data()[i].exp());
        reflectance.data_mut()[i * 3] = rgb[0];
        reflectance.data_mut()[i * 3 + 1] = rgb[1];
        reflectance.data_mut()[i * 3 + 2] = rgb[2];
    }
    let shading = crate::crf::estimate_shading(img, &reflectance)?;
    Ok(RetinexDecomposition {
        reflectance,
        shading,
        keep,
        degraded: !rec.converged,
        residual: rec.residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_patch(a: [f64; 3], b: [f64; 3]) -> LinearImage {
        let mut img = LinearImage::new(12, 8);
        for y in 0..8 {
            for x in 0..12 {
                img.set_pixel(x, y, if x < 6 { a } else { b });
            }
        }
        img
    }

    #[test]
    fn intensity_step_is_not_material() {
        // Same chromaticity, 3x brightness jump: the chroma test must veto.
        let img = two_patch([0.2, 0.2, 0.2], [0.6, 0.6, 0.6]);
        let grad = log_gradients(&img);
        let mask = retinex_classify(&grad, &RetinexParams::default());
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn hue_and_brightness_step_is_material() {
        let img = two_patch([0.6, 0.3, 0.1], [0.1, 0.2, 0.5]);
        let grad = log_gradients(&img);
        let mask = retinex_classify(&grad, &RetinexParams::default());
        // Exactly the seam column, all rows, x-axis only.
        assert_eq!(mask.count(), 8);
        for y in 0..8 {
            assert_eq!(mask.x.get(5, y), 1.0);
        }
    }

    #[test]
    fn isoluminant_step_needs_ratio_evidence() {
        // Both patches have geometric-mean brightness 0.2, so the
        // brightness test fails; the ratio mask still sees the material
        // change.
        let img = two_patch([0.4, 0.2, 0.1], [0.1, 0.2, 0.4]);
        let grad = log_gradients(&img);
        let params = RetinexParams { sigma: 0.01, ..Default::default() };
        let plain = retinex_classify(&grad, &params);
        assert_eq!(plain.count(), 0);
        let ratio = ccr_mask(&img, &params).unwrap();
        assert!(ratio.count() >= 8);
        let fused = fuse_or(&plain, &ratio).unwrap();
        assert!(fused.contains(&plain) && fused.contains(&ratio));
    }

    #[test]
    fn fuse_or_rejects_shape_mismatch() {
        let a = GradientMask { x: ScalarField::new(4, 4), y: ScalarField::new(4, 4) };
        let b = GradientMask { x: ScalarField::new(5, 4), y: ScalarField::new(5, 4) };
        assert!(fuse_or(&a, &b).is_err());
    }

    #[test]
    fn keep_all_roundtrips_the_log_image() {
        let img = two_patch([0.6, 0.3, 0.1], [0.1, 0.2, 0.5]);
        let grad = log_gradients(&img);
        let keep = GradientMask {
            x: ScalarField::filled(12, 8, 1.0),
            y: ScalarField::filled(12, 8, 1.0),
        };
        let rec = poisson_reconstruct(&grad, &keep).unwrap();
        assert!(rec.converged);
        for (i, px) in img.data().chunks_exact(3).enumerate() {
            for c in 0..3 {
                assert!((rec.planes[c].data()[i] - px[c].ln()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn sharp_mondrian_decomposes_to_itself() {
        let img = two_patch([0.6, 0.3, 0.1], [0.1, 0.2, 0.5]);
        let out = retinex_decompose(&img, &RetinexParams::default(), false).unwrap();
        assert!(!out.degraded);
        for (r, i) in out.reflectance.data().iter().zip(img.data()) {
            assert!((r - i).abs() < 1e-5);
        }
        for s in out.shading.data() {
            assert!((s - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn ratio_evidence_recovers_isoluminant_seams() {
        let img = two_patch([0.4, 0.2, 0.1], [0.1, 0.2, 0.4]);
        let params = RetinexParams { sigma: 0.01, ..Default::default() };
        let plain = retinex_decompose(&img, &params, false).unwrap();
        let assisted = retinex_decompose(&img, &params, true).unwrap();
        let max_dev = |r: &LinearImage| {
            r.data()
                .iter()
                .zip(img.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        // Without the seam the reconstruction flattens the two patches.
        assert!(max_dev(&plain.reflectance) > 0.1);
        assert!(max_dev(&assisted.reflectance) < 1e-4);
        // Reconstruction identity holds for both outputs.
        for (i, px) in img.data().iter().enumerate() {
            if *px > 1e-3 {
                let rs = assisted.reflectance.data()[i] * assisted.shading.data()[i];
                assert!((rs - px).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn shading_ramp_is_flattened() {
        // Smooth per-pixel scaling on one material: every gradient stays
        // below the thresholds, so reflectance comes back flat.
        let mut img = LinearImage::new(16, 4);
        for y in 0..4 {
            for x in 0..16 {
                let s = 0.4 + 0.03 * x as f64;
                img.set_pixel(x, y, [0.5 * s, 0.3 * s, 0.2 * s]);
            }
        }
        let out = retinex_decompose(&img, &RetinexParams::default(), true).unwrap();
        let r0 = out.reflectance.pixel(0, 0);
        for y in 0..4 {
            for x in 0..16 {
                let r = out.reflectance.pixel(x, y);
                for c in 0..3 {
                    assert!((r[c] - r0[c]).abs() < 1e-6 * r0[c].max(1.0));
                }
            }
        }
    }
}

//! Neighbor color ratios. Single per-channel ratios cancel illumination only
//! when scene geometry matches across the pair; cross ratios couple two
//! channels so any per-pixel uniform scaling cancels identically, leaving a
//! pure material-change signal.

use std::collections::HashSet;

use crate::error::Result;
use crate::raster::{gaussian_blur, LinearImage, ScalarField};

/// (m1, m2, m3) ratio triple for one ordered pixel pair.
pub type RatioTriple = [f64; 3];

/// Clamp applied to ratio numerator/denominator products. Keeps ratios
/// finite and positive; chosen below any value a sane 16-bit raster reaches.
pub const RATIO_EPS: f64 = 1e-4;

/// Default threshold on the fused log magnitude above which a pair is
/// treated as a material change.
pub const DEFAULT_SIGNIFICANCE: f64 = 0.02;

/// Ceiling on the distinct-color count (and therefore on adaptive k).
pub const K_MAX: usize = 50;

/// Triple meaning "no material change".
pub const NEUTRAL: RatioTriple = [1.0, 1.0, 1.0];

/// Per-channel ratios of two pixels: (r1/r2, g1/g2, b1/b2).
/// Denominators clamp at [`RATIO_EPS`]. Equal under equal illumination and
/// equal geometry only; a shading step across the pair shifts all three.
pub fn single_ratios(a: [f64; 3], b: [f64; 3]) -> RatioTriple {
    [
        a[0] / b[0].max(RATIO_EPS),
        a[1] / b[1].max(RATIO_EPS),
        a[2] / b[2].max(RATIO_EPS),
    ]
}

/// Cross ratios of two pixels:
///   m1 = (r1 g2)/(r2 g1), m2 = (r1 b2)/(r2 b1), m3 = (g1 b2)/(g2 b1).
/// Any per-pixel uniform scale s_i multiplies numerator and denominator
/// alike, so shading and illumination intensity cancel exactly; a locally
/// constant illuminant color cancels channel-wise. Every channel clamps
/// below at [`RATIO_EPS`] before the products form, which keeps the triple
/// positive and finite. Because both pixels see the same clamp, the
/// reciprocal identity m(a,b) * m(b,a) = 1 survives clamping, and pixels
/// whose channels all clear the clamp cancel scaling exactly.
pub fn cross_ratios(a: [f64; 3], b: [f64; 3]) -> RatioTriple {
    let c = |v: f64| v.max(RATIO_EPS);
    [
        (c(a[0]) * c(b[1])) / (c(b[0]) * c(a[1])),
        (c(a[0]) * c(b[2])) / (c(b[0]) * c(a[2])),
        (c(a[1]) * c(b[2])) / (c(b[1]) * c(a[2])),
    ]
}

/// Collapses a triple to one magnitude: |log m1 + log m2 + log m3| / 3,
/// the log of the geometric mean. Zero for the neutral triple and for
/// internally cancelling triples like (2, 1/2, 1). Components clamp to a
/// tiny floor so degenerate inputs stay finite.
pub fn fuse_geometric_mean(t: RatioTriple) -> f64 {
    let ln = |v: f64| v.max(1e-12).ln();
    (ln(t[0]) + ln(t[1]) + ln(t[2])).abs() / 3.0
}

/// Per-pixel neighbor ratio triples plus the fused significance map.
/// `horizontal[i]` pairs pixel i with its right neighbor (last column
/// neutral); `vertical[i]` with the one below (last row neutral). `fused`
/// is the per-pixel maximum of the two directions' fused magnitudes.
#[derive(Debug, Clone)]
pub struct RatioField {
    width: usize,
    height: usize,
    pub horizontal: Vec<RatioTriple>,
    pub vertical: Vec<RatioTriple>,
    pub fused: ScalarField,
}

impl RatioField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Fused magnitude of the right-neighbor triples only.
    pub fn fused_horizontal(&self) -> ScalarField {
        let data = self.horizontal.iter().map(|&t| fuse_geometric_mean(t)).collect();
        ScalarField::from_vec(self.width, self.height, data).expect("sized from field")
    }

    /// Fused magnitude of the down-neighbor triples only.
    pub fn fused_vertical(&self) -> ScalarField {
        let data = self.vertical.iter().map(|&t| fuse_geometric_mean(t)).collect();
        ScalarField::from_vec(self.width, self.height, data).expect("sized from field")
    }
}

/// Smooths the image (kernel radius ceil(3 sigma)), then takes cross ratios
/// against the right and down neighbors. Rejects sigma <= 0.
pub fn ratio_field(img: &LinearImage, sigma: f64) -> Result<RatioField> {
    let smoothed = gaussian_blur(img, sigma)?;
    let (w, h) = (img.width(), img.height());
    let mut horizontal = vec![NEUTRAL; w * h];
    let mut vertical = vec![NEUTRAL; w * h];
    let mut fused = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let here = smoothed.pixel(x, y);
            if x + 1 < w {
                horizontal[i] = cross_ratios(here, smoothed.pixel(x + 1, y));
            }
            if y + 1 < h {
                vertical[i] = cross_ratios(here, smoothed.pixel(x, y + 1));
            }
            fused[i] = fuse_geometric_mean(horizontal[i]).max(fuse_geometric_mean(vertical[i]));
        }
    }
    Ok(RatioField {
        width: w,
        height: h,
        horizontal,
        vertical,
        fused: ScalarField::from_vec(w, h, fused)?,
    })
}

/// Binary map of pixels whose fused magnitude strictly exceeds `threshold`.
pub fn significance_mask(field: &RatioField, threshold: f64) -> ScalarField {
    significance_mask_from(&field.fused, threshold)
}

/// Thresholds any fused-magnitude plane (strict comparison).
pub fn significance_mask_from(fused: &ScalarField, threshold: f64) -> ScalarField {
    let data = fused
        .data()
        .iter()
        .map(|&v| if v > threshold { 1.0 } else { 0.0 })
        .collect();
    ScalarField::from_vec(fused.width(), fused.height(), data).expect("sized from field")
}

/// Cross-ratio triple of a pixel against its scan neighbor: right neighbor,
/// down neighbor for the last column, neutral for the corner with neither.
/// The same convention feeds the distinct-color count and the clustering
/// ratio features, so both stages see identical triples.
pub fn neighbor_triple(img: &LinearImage, x: usize, y: usize) -> RatioTriple {
    let here = img.pixel(x, y);
    if x + 1 < img.width() {
        cross_ratios(here, img.pixel(x + 1, y))
    } else if y + 1 < img.height() {
        cross_ratios(here, img.pixel(x, y + 1))
    } else {
        NEUTRAL
    }
}

/// [`neighbor_triple`] rounded half-away-from-zero per component.
pub(crate) fn rounded_neighbor_triple(img: &LinearImage, x: usize, y: usize) -> (i64, i64, i64) {
    let t = neighbor_triple(img, x, y);
    (t[0].round() as i64, t[1].round() as i64, t[2].round() as i64)
}

/// Counts distinct rounded neighbor-ratio triples over the raw image; the
/// neutral triple contributes the one base color. Shading and illumination
/// cancel before rounding, so only material changes add counts. Clamped to
/// [2, K_MAX].
pub fn count_distinct_colors(img: &LinearImage) -> usize {
    let mut seen: HashSet<(i64, i64, i64)> = HashSet::new();
    for y in 0..img.height() {
        for x in 0..img.width() {
            seen.insert(rounded_neighbor_triple(img, x, y));
        }
    }
    seen.len().clamp(2, K_MAX)
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn px() -> impl Strategy<Value = [f64; 3]> {
        // Components bounded away from the clamp so identities are exact.
        proptest::array::uniform3(0.05f64..1.0)
    }

    proptest! {
        #[test]
        fn reciprocal_identity_holds(a in px(), b in px()) {
            let fwd = cross_ratios(a, b);
            let bwd = cross_ratios(b, a);
            for c in 0..3 {
                prop_assert!((fwd[c] * bwd[c] - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn per_pixel_scaling_is_invisible(a in px(), b in px(),
                                          s1 in 0.3f64..3.0, s2 in 0.3f64..3.0) {
            let base = cross_ratios(a, b);
            let scaled = cross_ratios(
                [a[0] * s1, a[1] * s1, a[2] * s1],
                [b[0] * s2, b[1] * s2, b[2] * s2],
            );
            for c in 0..3 {
                prop_assert!((base[c] - scaled[c]).abs() < 1e-9 * base[c].max(1.0));
            }
        }

        #[test]
        fn fused_magnitude_is_nonnegative_and_symmetric(a in px(), b in px()) {
            let f = fuse_geometric_mean(cross_ratios(a, b));
            let r = fuse_geometric_mean(cross_ratios(b, a));
            prop_assert!(f >= 0.0);
            prop_assert!((f - r).abs() < 1e-9);
        }
    }
}

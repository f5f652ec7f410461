//! Synthetic scenes with known ground truth: piecewise-constant reflectance,
//! smooth or shadowed shading, optional colored illuminant. The composition
//! is exact multiplication, so generated scenes double as oracles for the
//! reconstruction identity and for ratio invariance.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::{gaussian_blur_field, LinearImage, ScalarField};
use crate::ratios::{count_distinct_colors, cross_ratios};

/// Attempt budget for a full layout + palette draw.
const LAYOUT_ATTEMPTS: usize = 16;
/// Attempt budget for one region's color under its seam constraints.
const COLOR_ATTEMPTS: usize = 300;

/// Shading flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShadingKind {
    /// Sum of random smooth bumps mapped to [0.3, 1.0].
    Smooth,
    /// Cast shadow: elliptical occluder at factor 0.25 with soft penumbra.
    Shadow,
    /// Product of the two.
    Mixed,
}

fn round_triple(t: [f64; 3]) -> (i64, i64, i64) {
    (t[0].round() as i64, t[1].round() as i64, t[2].round() as i64)
}

/// Margin each ratio component must keep from a rounding boundary, so
/// shading and illuminant multiplication (which cancel exactly in real
/// arithmetic but perturb the floats) can never flip the rounded triple.
const ROUND_MARGIN: f64 = 0.02;

fn robustly_rounded(t: [f64; 3]) -> Option<(i64, i64, i64)> {
    for v in t {
        if (v.fract() - 0.5).abs() < ROUND_MARGIN {
            return None;
        }
    }
    Some(round_triple(t))
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
}

fn sample_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    // Log-uniform channels spread the pairwise ratios.
    let (lo, hi) = (0.05f64.ln(), 0.95f64.ln());
    [
        rng.gen_range(lo..hi).exp(),
        rng.gen_range(lo..hi).exp(),
        rng.gen_range(lo..hi).exp(),
    ]
}

fn split_rects(width: usize, height: usize, n: usize, rng: &mut ChaCha8Rng) -> Option<Vec<Rect>> {
    let mut rects = vec![Rect { x: 0, y: 0, w: width, h: height }];
    while rects.len() < n {
        // Split the largest rect that still has room along its longer side.
        let (idx, _) = rects
            .iter()
            .enumerate()
            .filter(|(_, r)| r.w.max(r.h) >= 4)
            .max_by_key(|(_, r)| r.w * r.h)?;
        let r = rects.swap_remove(idx);
        let frac = rng.gen_range(0.35..0.65);
        if r.w >= r.h {
            let cut = ((r.w as f64 * frac) as usize).clamp(2, r.w - 2);
            rects.push(Rect { w: cut, ..r });
            rects.push(Rect { x: r.x + cut, w: r.w - cut, ..r });
        } else {
            let cut = ((r.h as f64 * frac) as usize).clamp(2, r.h - 2);
            rects.push(Rect { h: cut, ..r });
            rects.push(Rect { y: r.y + cut, h: r.h - cut, ..r });
        }
    }
    Some(rects)
}

/// Ordered region pairs the distinct-color counter will actually visit:
/// right neighbor everywhere it exists, down neighbor in the last column.
fn counted_pairs(region: &[u32], width: usize, height: usize) -> Vec<(u32, u32)> {
    let mut pairs = std::collections::HashSet::new();
    for y in 0..height {
        for x in 0..width {
            let r = region[y * width + x];
            let s = if x + 1 < width {
                region[y * width + x + 1]
            } else if y + 1 < height {
                region[(y + 1) * width + x]
            } else {
                continue;
            };
            if s != r {
                pairs.insert((r, s));
            }
        }
    }
    let mut out: Vec<_> = pairs.into_iter().collect();
    out.sort_unstable();
    out
}

/// One full layout + palette draw. Colors are assigned region by region:
/// a candidate is rejected when any cross-ratio triple against an already
/// colored region rounds to neutral (in either order), or when a seam the
/// counter visits would duplicate an existing seam signature.
fn try_mondrian(
    width: usize,
    height: usize,
    n_colors: usize,
    rng: &mut ChaCha8Rng,
) -> Option<LinearImage> {
    let rects = split_rects(width, height, n_colors, rng)?;
    let mut region = vec![0u32; width * height];
    for (ri, rect) in rects.iter().enumerate() {
        for y in rect.y..rect.y + rect.h {
            for x in rect.x..rect.x + rect.w {
                region[y * width + x] = ri as u32;
            }
        }
    }
    let pairs = counted_pairs(&region, width, height);
    let mut colors: Vec<Option<[f64; 3]>> = vec![None; n_colors];
    let mut seam_sigs = std::collections::HashSet::new();
    for r in 0..n_colors {
        'candidates: for _ in 0..COLOR_ATTEMPTS {
            let cand = sample_color(rng);
            let mut new_sigs = Vec::new();
            for (s, other) in colors.iter().enumerate() {
                let Some(other) = other else { continue };
                // Separation must survive rounding in both orders, with a
                // safety margin against boundary-sitting components.
                let Some(fwd) = robustly_rounded(cross_ratios(cand, *other)) else {
                    continue 'candidates;
                };
                let Some(bwd) = robustly_rounded(cross_ratios(*other, cand)) else {
                    continue 'candidates;
                };
                if fwd == (1, 1, 1) || bwd == (1, 1, 1) {
                    continue 'candidates;
                }
                if pairs.binary_search(&(r as u32, s as u32)).is_ok() {
                    new_sigs.push(fwd);
                }
                if pairs.binary_search(&(s as u32, r as u32)).is_ok() {
                    new_sigs.push(bwd);
                }
            }
            new_sigs.sort_unstable();
            let before = new_sigs.len();
            new_sigs.dedup();
            if new_sigs.len() < before
                || new_sigs.iter().any(|sig| seam_sigs.contains(sig))
            {
                continue 'candidates;
            }
            seam_sigs.extend(new_sigs);
            colors[r] = Some(cand);
            break;
        }
        colors[r]?;
    }
    let mut img = LinearImage::new(width, height);
    for (rect, color) in rects.iter().zip(&colors) {
        let color = color.expect("all regions colored above");
        for y in rect.y..rect.y + rect.h {
            for x in rect.x..rect.x + rect.w {
                img.set_pixel(x, y, color);
            }
        }
    }
    // The counter must resolve at least the palette size, so the adaptive
    // cluster count can never undershoot the true color count.
    if count_distinct_colors(&img) >= n_colors { Some(img) } else { None }
}

/// Piecewise-constant reflectance: binary-space splits down to exactly
/// `n_colors` regions, one distinct palette color each. Every color pair
/// separates under rounding and every counted seam carries a unique ratio
/// signature, so the distinct-color count is at least `n_colors`.
pub fn gen_mondrian(
    width: usize,
    height: usize,
    n_colors: usize,
    seed: u64,
) -> Result<LinearImage> {
    if n_colors < 2 {
        return Err(Error::InvalidParameter(format!(
            "a mondrian needs at least 2 colors, got {n_colors}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..LAYOUT_ATTEMPTS {
        if let Some(img) = try_mondrian(width, height, n_colors, &mut rng) {
            return Ok(img);
        }
    }
    Err(Error::Generation(format!(
        "no {n_colors}-color layout with separable seams for {width}x{height} \
         in {LAYOUT_ATTEMPTS} attempts"
    )))
}

fn smooth_field(width: usize, height: usize, rng: &mut ChaCha8Rng) -> ScalarField {
    let n_bumps = rng.gen_range(3..=6);
    let mut data = vec![0.0f64; width * height];
    for _ in 0..n_bumps {
        let cx = rng.gen_range(0.0..width as f64);
        let cy = rng.gen_range(0.0..height as f64);
        let sigma = rng.gen_range(width.min(height) as f64 / 6.0..width.max(height) as f64 / 2.0);
        let amp = rng.gen_range(-1.0..1.0);
        for y in 0..height {
            for x in 0..width {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                data[y * width + x] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    let min = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    for v in &mut data {
        *v = if span < 1e-12 { 1.0 } else { 0.3 + 0.7 * (*v - min) / span };
    }
    ScalarField::from_vec(width, height, data).expect("sized above")
}

fn shadow_field(width: usize, height: usize, rng: &mut ChaCha8Rng) -> ScalarField {
    let cx = rng.gen_range(width as f64 * 0.25..width as f64 * 0.75);
    let cy = rng.gen_range(height as f64 * 0.25..height as f64 * 0.75);
    let rx = rng.gen_range(width as f64 / 6.0..width as f64 / 3.0);
    let ry = rng.gen_range(height as f64 / 6.0..height as f64 / 3.0);
    let mut indicator = ScalarField::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let dx = (x as f64 - cx) / rx;
            let dy = (y as f64 - cy) / ry;
            if dx * dx + dy * dy <= 1.0 {
                indicator.set(x, y, 1.0);
            }
        }
    }
    let soft = gaussian_blur_field(&indicator, 1.5).expect("positive sigma");
    let data = soft.data().iter().map(|&v| 1.0 - 0.75 * v.min(1.0)).collect();
    ScalarField::from_vec(width, height, data).expect("sized above")
}

/// Shading field in (0, 1]; exact range depends on the kind.
pub fn gen_shading(width: usize, height: usize, kind: ShadingKind, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    match kind {
        ShadingKind::Smooth => smooth_field(width, height, &mut rng),
        ShadingKind::Shadow => shadow_field(width, height, &mut rng),
        ShadingKind::Mixed => {
            let a = smooth_field(width, height, &mut rng);
            let b = shadow_field(width, height, &mut rng);
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
            ScalarField::from_vec(width, height, data).expect("same shape")
        }
    }
}

/// image = reflectance * shading * illuminant, channel-wise and exact.
pub fn compose(
    reflectance: &LinearImage,
    shading: &ScalarField,
    illuminant: [f64; 3],
) -> Result<LinearImage> {
    if shading.shape() != (reflectance.width(), reflectance.height()) {
        return Err(Error::DimensionMismatch(format!(
            "shading {:?} vs reflectance {}x{}",
            shading.shape(),
            reflectance.width(),
            reflectance.height()
        )));
    }
    let mut out = LinearImage::new(reflectance.width(), reflectance.height());
    for y in 0..reflectance.height() {
        for x in 0..reflectance.width() {
            let r = reflectance.pixel(x, y);
            let s = shading.get(x, y);
            out.set_pixel(x, y, [r[0] * s * illuminant[0], r[1] * s * illuminant[1], r[2] * s * illuminant[2]]);
        }
    }
    Ok(out)
}

/// A generated scene with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub image: LinearImage,
    pub reflectance: LinearImage,
    pub shading: ScalarField,
    pub illuminant: [f64; 3],
    pub n_colors: usize,
    pub seed: u64,
}

/// Generates reflectance and shading from one seed and composes them.
pub fn gen_scene(
    width: usize,
    height: usize,
    n_colors: usize,
    kind: ShadingKind,
    illuminant: [f64; 3],
    seed: u64,
) -> Result<SyntheticScene> {
    if illuminant.iter().any(|&c| !(c > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "illuminant channels must be positive, got {illuminant:?}"
        )));
    }
    let reflectance = gen_mondrian(width, height, n_colors, seed)?;
    let shading = gen_shading(width, height, kind, seed);
    let image = compose(&reflectance, &shading, illuminant)?;
    Ok(SyntheticScene { image, reflectance, shading, illuminant, n_colors, seed })
}

//! Evaluation: windowed scale-invariant reconstruction error against dense
//! ground truth, weighted disagreement against sparse human judgments, and
//! robust score summaries, plus loaders for the two dataset layouts.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_png;
use crate::raster::{LinearImage, Linearization, ScalarField};

/// Window side for the local-error metric.
pub const LMSE_WINDOW: usize = 20;
/// Stride between window origins.
pub const LMSE_STRIDE: usize = 10;
/// Relative-difference threshold below which two points count as equal.
pub const WHDR_DELTA: f64 = 0.10;

/// Which point a judgment declares darker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Darker {
    A,
    B,
    Equal,
}

/// One human comparison between two normalized image locations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    /// Normalized (x, y) in [0, 1].
    pub point_a: (f64, f64),
    pub point_b: (f64, f64),
    pub darker: Darker,
    pub weight: f64,
}

/// Window origins covering [0, dim): strided, with a final window flush to
/// the end when the strided ones fall short. Dimensions below the window
/// size get a single full-span window.
fn window_starts(dim: usize, win: usize, stride: usize) -> Vec<usize> {
    if dim <= win {
        return vec![0];
    }
    let mut starts = Vec::new();
    let mut s = 0;
    while s + win <= dim {
        starts.push(s);
        s += stride;
    }
    let last = *starts.last().expect("dim > win yields at least one");
    if last + win < dim {
        starts.push(dim - win);
    }
    starts
}

/// Local scale-invariant mean squared error. Each window (20 px, stride
/// 10, final windows flush to the border) gets its own least-squares scale
/// alpha = sum(p*g)/sum(p*p); squared residuals accumulate over windows
/// and are normalized by the windowed ground-truth energy, then averaged
/// over channels. Pixels where `mask` <= 0.5 are ignored.
pub fn lmse(
    pred: &LinearImage,
    gt: &LinearImage,
    mask: Option<&ScalarField>,
) -> Result<f64> {
    if !pred.same_shape(gt) {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let (w, h) = (pred.width(), pred.height());
    if let Some(m) = mask {
        if m.shape() != (w, h) {
            return Err(Error::DimensionMismatch(format!(
                "mask {:?} vs image {:?}",
                m.shape(),
                (w, h)
            )));
        }
    }
    let xs = window_starts(w, LMSE_WINDOW, LMSE_STRIDE);
    let ys = window_starts(h, LMSE_WINDOW, LMSE_STRIDE);
    let mut channel_scores = [0.0f64; 3];
    for (c, score) in channel_scores.iter_mut().enumerate() {
        let mut err_total = 0.0;
        let mut gt_total = 0.0;
        for &y0 in &ys {
            for &x0 in &xs {
                let mut spg = 0.0;
                let mut spp = 0.0;
                let mut sgg = 0.0;
                for y in y0..(y0 + LMSE_WINDOW).min(h) {
                    for x in x0..(x0 + LMSE_WINDOW).min(w) {
                        if let Some(m) = mask {
                            if m.get(x, y) <= 0.5 {
                                continue;
                            }
                        }
                        let p = pred.pixel(x, y)[c];
                        let g = gt.pixel(x, y)[c];
                        spg += p * g;
                        spp += p * p;
                        sgg += g * g;
                    }
                }
                let alpha = if spp > 0.0 { spg / spp } else { 0.0 };
                let mut err = 0.0;
                for y in y0..(y0 + LMSE_WINDOW).min(h) {
                    for x in x0..(x0 + LMSE_WINDOW).min(w) {
                        if let Some(m) = mask {
                            if m.get(x, y) <= 0.5 {
                                continue;
                            }
                        }
                        let d = alpha * pred.pixel(x, y)[c] - gt.pixel(x, y)[c];
                        err += d * d;
                    }
                }
                err_total += err;
                gt_total += sgg;
            }
        }
        *score = if gt_total > 0.0 { err_total / gt_total } else { 0.0 };
    }
    Ok((channel_scores[0] + channel_scores[1] + channel_scores[2]) / 3.0)
}

fn sample_luminance(img: &LinearImage, point: (f64, f64)) -> Result<f64> {
    let (xn, yn) = point;
    if !(0.0..=1.0).contains(&xn) || !(0.0..=1.0).contains(&yn) {
        return Err(Error::InvalidParameter(format!(
            "judgment point ({xn}, {yn}) outside [0,1]^2"
        )));
    }
    let x = (xn * (img.width() - 1) as f64).round() as usize;
    let y = (yn * (img.height() - 1) as f64).round() as usize;
    let p = img.pixel(x, y);
    Ok((p[0] + p[1] + p[2]) / 3.0)
}

/// Weighted human disagreement rate of a reflectance estimate. A point is
/// predicted darker when its mean-channel luminance falls below the
/// other's by more than the relative threshold; disagreeing judgments
/// contribute their weight.
pub fn whdr(reflectance: &LinearImage, judgments: &[Judgment]) -> Result<f64> {
    if judgments.is_empty() {
        return Err(Error::InvalidParameter("no judgments to score".into()));
    }
    let mut weight_total = 0.0;
    let mut weight_wrong = 0.0;
    for j in judgments {
        let la = sample_luminance(reflectance, j.point_a)?;
        let lb = sample_luminance(reflectance, j.point_b)?;
        let r = (la + 1e-10) / (lb + 1e-10);
        let predicted = if r < 1.0 / (1.0 + WHDR_DELTA) {
            Darker::A
        } else if r > 1.0 + WHDR_DELTA {
            Darker::B
        } else {
            Darker::Equal
        };
        weight_total += j.weight;
        if predicted != j.darker {
            weight_wrong += j.weight;
        }
    }
    if weight_total <= 0.0 {
        return Err(Error::InvalidParameter("judgment weights sum to zero".into()));
    }
    Ok(weight_wrong / weight_total)
}

/// Linear-interpolation quantile at fraction `p` of sorted data (the
/// convention that places the sample at index (n-1)*p).
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (n - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Mean, median and trimean of a batch of scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentralTendency {
    pub mean: f64,
    pub median: f64,
    pub trimean: f64,
}

/// Summarizes scores; the trimean is (Q1 + 2*Q2 + Q3) / 4 with
/// interpolated quartiles.
pub fn central_tendency(scores: &[f64]) -> Result<CentralTendency> {
    if scores.is_empty() {
        return Err(Error::InvalidParameter("no scores to summarize".into()));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("scores must be finite".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let q1 = quantile_sorted(&sorted, 0.25);
    let q2 = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    Ok(CentralTendency {
        mean: scores.iter().sum::<f64>() / scores.len() as f64,
        median: q2,
        trimean: (q1 + 2.0 * q2 + q3) / 4.0,
    })
}

/// One dense-ground-truth case: input image, true reflectance and shading,
/// and the valid-pixel mask.
#[derive(Debug, Clone)]
pub struct MitCase {
    pub diffuse: LinearImage,
    pub reflectance: LinearImage,
    pub shading: LinearImage,
    pub mask: ScalarField,
}

/// Loads `dir/{diffuse,reflectance,shading,mask}.png`. The files store
/// linear values already, so no transfer-curve decoding is applied; the
/// mask counts a pixel as valid when its first channel exceeds 0.5.
pub fn load_mit_case(dir: &Path) -> Result<MitCase> {
    let load = |name: &str| read_png(&dir.join(name), Linearization::Identity);
    let diffuse = load("diffuse.png")?;
    let reflectance = load("reflectance.png")?;
    let shading = load("shading.png")?;
    let mask_img = load("mask.png")?;
    for (name, img) in [("reflectance", &reflectance), ("shading", &shading), ("mask", &mask_img)]
    {
        if !diffuse.same_shape(img) {
            return Err(Error::MalformedDocument {
                path: dir.to_path_buf(),
                reason: format!(
                    "{name}.png is {}x{} but diffuse.png is {}x{}",
                    img.width(),
                    img.height(),
                    diffuse.width(),
                    diffuse.height()
                ),
            });
        }
    }
    let mask_data = (0..diffuse.height())
        .flat_map(|y| {
            (0..diffuse.width())
                .map(move |x| (x, y))
        })
        .map(|(x, y)| if mask_img.pixel(x, y)[0] > 0.5 { 1.0 } else { 0.0 })
        .collect();
    let mask = ScalarField::from_vec(diffuse.width(), diffuse.height(), mask_data)?;
    Ok(MitCase { diffuse, reflectance, shading, mask })
}

#[derive(Deserialize)]
struct IiwPoint {
    id: u64,
    x: f64,
    y: f64,
}

#[derive(Deserialize)]
struct IiwComparison {
    point1: u64,
    point2: u64,
    darker: String,
    darker_score: Option<f64>,
}

#[derive(Deserialize)]
struct IiwDocument {
    intrinsic_points: Vec<IiwPoint>,
    intrinsic_comparisons: Vec<IiwComparison>,
}

/// Loads sparse judgments from the interchange layout: a JSON document
/// with `intrinsic_points` (id, normalized x/y) and
/// `intrinsic_comparisons` (point ids, darker in {"1","2","E"}, optional
/// confidence used as weight).
pub fn load_iiw_judgments(path: &Path) -> Result<Vec<Judgment>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: IiwDocument = serde_json::from_str(&text).map_err(|e| Error::MalformedDocument {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let points: HashMap<u64, (f64, f64)> =
        doc.intrinsic_points.iter().map(|p| (p.id, (p.x, p.y))).collect();
    let mut judgments = Vec::with_capacity(doc.intrinsic_comparisons.len());
    for cmp in &doc.intrinsic_comparisons {
        let lookup = |id: u64| {
            points.get(&id).copied().ok_or_else(|| Error::MalformedDocument {
                path: path.to_path_buf(),
                reason: format!("comparison references unknown point {id}"),
            })
        };
        let point_a = lookup(cmp.point1)?;
        let point_b = lookup(cmp.point2)?;
        let darker = match cmp.darker.as_str() {
            "1" => Darker::A,
            "2" => Darker::B,
            "E" => Darker::Equal,
            other => {
                return Err(Error::MalformedDocument {
                    path: path.to_path_buf(),
                    reason: format!("darker must be \"1\", \"2\" or \"E\", got {other:?}"),
                })
            }
        };
        judgments.push(Judgment {
            point_a,
            point_b,
            darker,
            weight: cmp.darker_score.unwrap_or(1.0),
        });
    }
    Ok(judgments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::write_png16;

    fn ramp_image(w: usize, h: usize) -> LinearImage {
        let mut img = LinearImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let v = (x + y * w) as f64 / (w * h) as f64;
                img.set_pixel(x, y, [v, v * 0.5 + 0.1, 0.2]);
            }
        }
        img
    }

    #[test]
    fn window_starts_cover_and_align_to_border() {
        assert_eq!(window_starts(20, 20, 10), vec![0]);
        assert_eq!(window_starts(15, 20, 10), vec![0]);
        assert_eq!(window_starts(25, 20, 10), vec![0, 5]);
        assert_eq!(window_starts(40, 20, 10), vec![0, 10, 20]);
        assert_eq!(window_starts(45, 20, 10), vec![0, 10, 20, 25]);
    }

    #[test]
    fn lmse_forgives_global_scale() {
        let gt = ramp_image(30, 25);
        let mut pred = gt.clone();
        for v in pred.data_mut() {
            *v *= 3.7;
        }
        assert!(lmse(&pred, &gt, None).unwrap() < 1e-20);
    }

    #[test]
    fn lmse_penalizes_structure_differences() {
        let gt = ramp_image(30, 25);
        let flat = LinearImage::from_vec(30, 25, vec![0.5; 30 * 25 * 3]).unwrap();
        assert!(lmse(&flat, &gt, None).unwrap() > 1e-3);
    }

    #[test]
    fn lmse_two_pixel_case_by_hand() {
        // Single window (dims < 20). One channel carries the signal.
        let pred = LinearImage::from_vec(2, 1, vec![1.0, 0.0, 0.0, 2.0, 0.0, 0.0]).unwrap();
        let gt = LinearImage::from_vec(2, 1, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        // alpha = (1 + 2) / (1 + 4) = 0.6; residuals (0.6-1, 1.2-1).
        let err = (0.6f64 - 1.0).powi(2) + (1.2f64 - 1.0).powi(2);
        let expected = (err / 2.0) / 3.0;
        assert!((lmse(&pred, &gt, None).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn lmse_mask_excludes_pixels() {
        let gt = ramp_image(24, 24);
        let mut pred = gt.clone();
        // Corrupt one pixel, then mask it out: error returns to zero.
        pred.set_pixel(5, 5, [9.0, 9.0, 9.0]);
        assert!(lmse(&pred, &gt, None).unwrap() > 1e-6);
        let mut mask_data = vec![1.0; 24 * 24];
        mask_data[5 * 24 + 5] = 0.0;
        let mask = ScalarField::from_vec(24, 24, mask_data).unwrap();
        assert!(lmse(&pred, &gt, Some(&mask)).unwrap() < 1e-20);
    }

    #[test]
    fn whdr_scores_agreements_and_threshold() {
        // 2x1 image: left luminance 0.2, right 0.4.
        let img = LinearImage::from_vec(2, 1, vec![0.2, 0.2, 0.2, 0.4, 0.4, 0.4]).unwrap();
        let a = (0.0, 0.0);
        let b = (1.0, 0.0);
        let j = |darker, weight| Judgment { point_a: a, point_b: b, darker, weight };
        // Ratio 0.5 < 1/1.1: A predicted darker.
        assert_eq!(whdr(&img, &[j(Darker::A, 1.0)]).unwrap(), 0.0);
        assert_eq!(whdr(&img, &[j(Darker::B, 1.0)]).unwrap(), 1.0);
        // Weighted mix: wrong 2 of total 3.
        let score = whdr(&img, &[j(Darker::A, 1.0), j(Darker::Equal, 2.0)]).unwrap();
        assert!((score - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn whdr_treats_near_equal_as_equal() {
        // Ratio 1.05 within the 10% band: Equal predicted.
        let img = LinearImage::from_vec(2, 1, vec![0.42, 0.42, 0.42, 0.4, 0.4, 0.4]).unwrap();
        let j = Judgment {
            point_a: (0.0, 0.0),
            point_b: (1.0, 0.0),
            darker: Darker::Equal,
            weight: 1.0,
        };
        assert_eq!(whdr(&img, &[j]).unwrap(), 0.0);
        assert!(whdr(&img, &[]).is_err());
    }

    #[test]
    fn central_tendency_matches_hand_values() {
        let scores: Vec<f64> = (1..=7).map(|v| v as f64).collect();
        let ct = central_tendency(&scores).unwrap();
        assert_eq!(ct.mean, 4.0);
        assert_eq!(ct.median, 4.0);
        assert_eq!(ct.trimean, 4.0);

        let ct = central_tendency(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        // Interpolated quartiles: 1.75, 2.5, 3.25.
        assert!((ct.trimean - 2.5).abs() < 1e-12);
        assert!((ct.median - 2.5).abs() < 1e-12);

        assert!(central_tendency(&[]).is_err());
        assert!(central_tendency(&[f64::NAN]).is_err());
    }

    #[test]
    fn mit_case_loader_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let img = ramp_image(12, 9);
        for name in ["diffuse.png", "reflectance.png", "shading.png"] {
            write_png16(&img, &dir.path().join(name), Linearization::Identity).unwrap();
        }
        let mut mask = LinearImage::new(12, 9);
        for y in 0..9 {
            for x in 0..12 {
                let v = if x < 6 { 1.0 } else { 0.0 };
                mask.set_pixel(x, y, [v, v, v]);
            }
        }
        write_png16(&mask, &dir.path().join("mask.png"), Linearization::Identity).unwrap();
        let case = load_mit_case(dir.path()).unwrap();
        assert_eq!(case.diffuse.width(), 12);
        let valid: f64 = case.mask.data().iter().sum();
        assert_eq!(valid, 6.0 * 9.0);
        assert!(load_mit_case(&dir.path().join("missing")).is_err());
    }

    #[test]
    fn iiw_loader_parses_the_interchange_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("judgments.json");
        let doc = r#"{
            "intrinsic_points": [
                {"id": 10, "x": 0.25, "y": 0.5},
                {"id": 11, "x": 0.75, "y": 0.5}
            ],
            "intrinsic_comparisons": [
                {"point1": 10, "point2": 11, "darker": "1", "darker_score": 1.5},
                {"point1": 11, "point2": 10, "darker": "E", "darker_score": null}
            ]
        }"#;
        std::fs::write(&path, doc).unwrap();
        let judgments = load_iiw_judgments(&path).unwrap();
        assert_eq!(judgments.len(), 2);
        assert_eq!(judgments[0].darker, Darker::A);
        assert_eq!(judgments[0].weight, 1.5);
        assert_eq!(judgments[0].point_a, (0.25, 0.5));
        assert_eq!(judgments[1].darker, Darker::Equal);
        assert_eq!(judgments[1].weight, 1.0);

        let bad = dir.path().join("bad.json");
        std::fs::write(
            &bad,
            r#"{"intrinsic_points": [], "intrinsic_comparisons": [
                {"point1": 1, "point2": 2, "darker": "1", "darker_score": 1.0}
            ]}"#,
        )
        .unwrap();
        assert!(load_iiw_judgments(&bad).is_err());
    }

    #[test]
    fn judgments_round_trip_through_serde() {
        let j = Judgment {
            point_a: (0.1, 0.2),
            point_b: (0.3, 0.4),
            darker: Darker::B,
            weight: 2.0,
        };
        let text = serde_json::to_string(&j).unwrap();
        let back: Judgment = serde_json::from_str(&text).unwrap();
        assert_eq!(back, j);
        assert!(text.contains("\"b\""));
    }
}

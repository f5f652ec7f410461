//! Dense pairwise refinement of a clustered labeling. Every pixel pair is
//! coupled by a Gaussian kernel over position, intensity, chromaticity and
//! (optionally) fused ratio evidence; unary terms keep the implied shading
//! smooth and inside a plausible log range. Mean-field sweeps relax the
//! labeling; the returned hard labeling never has higher energy than the
//! initialization, otherwise the initialization is returned.

use rayon::prelude::*;

use crate::cluster::{
    adaptive_k, build_features, cluster_colors, consolidate_labels, kmeans, labels_to_reflectance,
    reassign_by_ratio,
};
use crate::config::{KChoice, PipelineConfig};
use crate::error::{Error, Result};
use crate::lattice::PermutohedralLattice;
use crate::raster::{chromaticity, LinearImage, ScalarField};
use crate::ratios::ratio_field;

/// Floor for denominators when dividing image by reflectance (and for the
/// means entering log-shading terms).
pub const SHADING_EPS: f64 = 1e-4;

/// Pairs with squared feature distance above this contribute kernel weight
/// below 1e-13 and are skipped by the direct-summation paths.
pub const KERNEL_CUTOFF_SQ: f64 = 60.0;

/// Inputs up to this many pixels use exact direct summation for messages
/// and energies; larger inputs use the lattice approximation for both, with
/// a scale constant calibrated against exact row sums on a subsample.
pub const EXACT_PAIR_MAX_PIXELS: usize = 4096;

/// Weights, kernel bandwidths and iteration budget for the refinement.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CrfParams {
    pub w_pairwise: f64,
    pub w_smooth: f64,
    pub w_prior: f64,
    /// Position bandwidth in pixels; `None` resolves to 0.1 * max(W, H).
    pub theta_pos: Option<f64>,
    pub theta_intensity: f64,
    pub theta_chroma: f64,
    pub theta_ratio: f64,
    pub iterations: usize,
    /// Allowed band for log shading values, penalized quadratically outside.
    pub shading_log_range: (f64, f64),
}

impl Default for CrfParams {
    fn default() -> Self {
        CrfParams {
            w_pairwise: 1.0,
            w_smooth: 0.5,
            w_prior: 0.1,
            theta_pos: None,
            theta_intensity: 0.1,
            theta_chroma: 0.1,
            theta_ratio: 0.5,
            iterations: 10,
            shading_log_range: (-2.5, 2.5),
        }
    }
}

impl CrfParams {
    pub fn resolved_theta_pos(&self, width: usize, height: usize) -> f64 {
        self.theta_pos.unwrap_or(0.1 * width.max(height) as f64).max(1e-9)
    }
}

/// Row-major n x d table of kernel features, already divided by their
/// bandwidths so the kernel is exp(-|f_i - f_j|^2 / 2).
#[derive(Debug, Clone)]
pub struct PairwiseFeatures {
    width: usize,
    height: usize,
    d: usize,
    data: Vec<f64>,
}

impl PairwiseFeatures {
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

/// Builds kernel features per pixel:
/// (x, y)/theta_pos, intensity/theta_int, (chroma_r, chroma_g)/theta_chroma,
/// and, when a fused ratio map is supplied, exp(-f^2/2)/theta_ratio where f
/// is the fused magnitude. The ratio channel is flat wherever ratios are
/// quiet (including across shading edges) and dips at material seams, so
/// affinity is withdrawn exactly where label changes should be cheap.
pub fn pairwise_features(
    img: &LinearImage,
    fused: Option<&ScalarField>,
    params: &CrfParams,
) -> Result<PairwiseFeatures> {
    let (w, h) = (img.width(), img.height());
    if let Some(f) = fused {
        if f.shape() != (w, h) {
            return Err(Error::DimensionMismatch(format!(
                "fused map {:?} vs image {:?}",
                f.shape(),
                (w, h)
            )));
        }
    }
    let theta_pos = params.resolved_theta_pos(w, h);
    let feats = chromaticity(img);
    let d = if fused.is_some() { 6 } else { 5 };
    let mut data = vec![0.0; w * h * d];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let row = &mut data[i * d..(i + 1) * d];
            row[0] = x as f64 / theta_pos;
            row[1] = y as f64 / theta_pos;
            row[2] = feats.intensity.data()[i] / params.theta_intensity;
            row[3] = feats.chroma_r.data()[i] / params.theta_chroma;
            row[4] = feats.chroma_g.data()[i] / params.theta_chroma;
            if let Some(f) = fused {
                let v = f.data()[i];
                row[5] = (-0.5 * v * v).exp() / params.theta_ratio;
            }
        }
    }
    Ok(PairwiseFeatures { width: w, height: h, d, data })
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let diff = x - y;
        acc += diff * diff;
    }
    acc
}

/// Exact label-compatibility energy: sum over unordered pairs with
/// different labels of exp(-|f_i - f_j|^2 / 2). Direct summation; pairs
/// beyond [`KERNEL_CUTOFF_SQ`] are skipped (weight < 1e-13).
pub fn pairwise_energy(feats: &PairwiseFeatures, labels: &[u32]) -> f64 {
    let n = feats.len();
    assert_eq!(labels.len(), n, "one label per pixel");
    let chunk = 256usize.max(n / 64);
    let n_chunks = n.div_ceil(chunk);
    let partials: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let lo = ci * chunk;
            let hi = (lo + chunk).min(n);
            let mut acc = 0.0;
            for i in lo..hi {
                let fi = feats.row(i);
                let li = labels[i];
                for j in (i + 1)..n {
                    if labels[j] == li {
                        continue;
                    }
                    let d2 = sq_dist(fi, feats.row(j));
                    if d2 <= KERNEL_CUTOFF_SQ {
                        acc += (-0.5 * d2).exp();
                    }
                }
            }
            acc
        })
        .collect();
    partials.iter().sum()
}

fn mean_channel(px: [f64; 3]) -> f64 {
    (px[0] + px[1] + px[2]) / 3.0
}

/// ln of the shading implied at pixel mean `m` by label color mean `c`.
#[inline]
fn log_shading(m: f64, c: f64) -> f64 {
    (m.max(SHADING_EPS) / c.max(SHADING_EPS)).ln()
}

fn validate_labeling(n: usize, labels: &[u32], k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!("{} labels for {n} pixels", labels.len())));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("at least one label color required".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= k) {
        return Err(Error::InvalidParameter(format!("label {bad} out of range for k={k}")));
    }
    Ok(())
}

/// Smoothness of the shading implied by a labeling: sum over 4-neighbor
/// pairs of squared log-shading differences, where shading is the pixel's
/// mean channel over its label color's mean channel, guarded at
/// [`SHADING_EPS`].
pub fn shading_smoothness_energy(
    img: &LinearImage,
    labels: &[u32],
    colors: &[[f64; 3]],
) -> Result<f64> {
    let (w, h) = (img.width(), img.height());
    validate_labeling(w * h, labels, colors.len())?;
    let color_means: Vec<f64> = colors.iter().map(|&c| mean_channel(c)).collect();
    let ls: Vec<f64> = (0..w * h)
        .map(|i| log_shading(mean_channel(img.pixel(i % w, i / w)), color_means[labels[i] as usize]))
        .collect();
    let mut acc = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                let d = ls[i] - ls[i + 1];
                acc += d * d;
            }
            if y + 1 < h {
                let d = ls[i] - ls[i + w];
                acc += d * d;
            }
        }
    }
    Ok(acc)
}

#[inline]
fn hinge(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo - x
    } else if x > hi {
        x - hi
    } else {
        0.0
    }
}

/// Range plausibility of the implied shading: squared hinge distance of
/// each pixel's log shading to `range`.
pub fn shading_prior_energy(
    img: &LinearImage,
    labels: &[u32],
    colors: &[[f64; 3]],
    range: (f64, f64),
) -> Result<f64> {
    let (w, h) = (img.width(), img.height());
    validate_labeling(w * h, labels, colors.len())?;
    let color_means: Vec<f64> = colors.iter().map(|&c| mean_channel(c)).collect();
    let mut acc = 0.0;
    for i in 0..w * h {
        let ls = log_shading(mean_channel(img.pixel(i % w, i / w)), color_means[labels[i] as usize]);
        let hd = hinge(ls, range.0, range.1);
        acc += hd * hd;
    }
    Ok(acc)
}

/// Weighted energy report. `e_total` is the weighted sum of the parts by
/// construction.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EnergyBreakdown {
    pub e_pairwise: f64,
    pub e_smooth: f64,
    pub e_prior: f64,
    pub e_total: f64,
}

impl EnergyBreakdown {
    pub fn new(params: &CrfParams, e_pairwise: f64, e_smooth: f64, e_prior: f64) -> Self {
        EnergyBreakdown {
            e_pairwise,
            e_smooth,
            e_prior,
            e_total: params.w_pairwise * e_pairwise
                + params.w_smooth * e_smooth
                + params.w_prior * e_prior,
        }
    }
}

/// Soft label assignment: row-stochastic n x k matrix (rows sum to 1).
#[derive(Debug, Clone)]
pub struct LabelState {
    pub k: usize,
    q: Vec<f64>,
}

impl LabelState {
    /// One-hot initialization softened to 0.9 + 0.1/k uniform.
    pub fn from_labels(labels: &[u32], k: usize) -> Self {
        let mut q = vec![0.1 / k as f64; labels.len() * k];
        for (i, &l) in labels.iter().enumerate() {
            q[i * k + l as usize] += 0.9;
        }
        LabelState { k, q }
    }

    pub fn len(&self) -> usize {
        self.q.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    #[inline]
    pub fn prob(&self, i: usize, l: usize) -> f64 {
        self.q[i * self.k + l]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.q[i * self.k..(i + 1) * self.k]
    }

    /// Argmax per row; ties take the lowest label index.
    pub fn hard_labels(&self) -> Vec<u32> {
        (0..self.len())
            .map(|i| {
                let row = self.row(i);
                let mut best = 0usize;
                for l in 1..self.k {
                    if row[l] > row[best] {
                        best = l;
                    }
                }
                best as u32
            })
            .collect()
    }

    /// Largest deviation of any row sum from 1.
    pub fn normalization_error(&self) -> f64 {
        (0..self.len())
            .map(|i| (self.row(i).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// How pairwise sums are evaluated for a given input size: exact direct
/// summation, or lattice filtering with a calibrated scale constant.
enum PairwiseEngine {
    Exact,
    Lattice { lattice: PermutohedralLattice, scale: f64, ones_row_sums: Vec<f64> },
}

impl PairwiseEngine {
    fn build(feats: &PairwiseFeatures) -> Self {
        let n = feats.len();
        if n <= EXACT_PAIR_MAX_PIXELS {
            return PairwiseEngine::Exact;
        }
        let lattice = PermutohedralLattice::new(&feats.data, n, feats.d);
        let ones = vec![1.0; n];
        let filtered_ones = lattice.filter(&ones, 1);
        // Calibrate the lattice constant against exact row sums on an
        // evenly strided subsample (row sums include the self weight 1).
        let sample = 256.min(n);
        let stride = n / sample;
        let ratios: Vec<f64> = (0..sample)
            .into_par_iter()
            .map(|s| {
                let i = s * stride;
                let fi = feats.row(i);
                let mut exact = 0.0;
                for j in 0..n {
                    let d2 = sq_dist(fi, feats.row(j));
                    if d2 <= KERNEL_CUTOFF_SQ {
                        exact += (-0.5 * d2).exp();
                    }
                }
                filtered_ones[i] / exact
            })
            .collect();
        let scale = ratios.iter().sum::<f64>() / sample as f64;
        let ones_row_sums = filtered_ones.iter().map(|v| v / scale).collect();
        PairwiseEngine::Lattice { lattice, scale, ones_row_sums }
    }

    /// Messages m[i*k+l] = sum_{j != i} kernel(i,j) q_j(l).
    fn messages(&self, feats: &PairwiseFeatures, state: &LabelState, out: &mut [f64]) {
        let n = feats.len();
        let k = state.k;
        match self {
            PairwiseEngine::Exact => {
                out.par_chunks_mut(k)
                    .enumerate()
                    .for_each(|(i, row)| {
                        row.iter_mut().for_each(|v| *v = 0.0);
                        let fi = feats.row(i);
                        for j in 0..n {
                            if j == i {
                                continue;
                            }
                            let d2 = sq_dist(fi, feats.row(j));
                            if d2 > KERNEL_CUTOFF_SQ {
                                continue;
                            }
                            let kw = (-0.5 * d2).exp();
                            let qr = state.row(j);
                            for l in 0..k {
                                row[l] += kw * qr[l];
                            }
                        }
                    });
            }
            PairwiseEngine::Lattice { lattice, scale, .. } => {
                let filtered = lattice.filter(&state.q, k);
                out.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
                    let qr = state.row(i);
                    for l in 0..k {
                        // Divide out the lattice constant, drop the self term.
                        row[l] = filtered[i * k + l] / scale - qr[l];
                    }
                });
            }
        }
    }

    /// Pairwise Potts energy of a hard labeling under this engine.
    fn energy(&self, feats: &PairwiseFeatures, labels: &[u32], k: usize) -> f64 {
        match self {
            PairwiseEngine::Exact => pairwise_energy(feats, labels),
            PairwiseEngine::Lattice { lattice, scale, ones_row_sums } => {
                let n = feats.len();
                // Indicator channels per label; same-label kernel mass via
                // one lattice pass, complement against the ones pass.
                let mut ind = vec![0.0; n * k];
                for (i, &l) in labels.iter().enumerate() {
                    ind[i * k + l as usize] = 1.0;
                }
                let filtered = lattice.filter(&ind, k);
                let mut all = 0.0;
                let mut same = 0.0;
                for i in 0..n {
                    all += ones_row_sums[i] - 1.0;
                    same += filtered[i * k + labels[i] as usize] / scale - 1.0;
                }
                ((all - same) / 2.0).max(0.0)
            }
        }
    }
}

/// Outcome of the mean-field relaxation.
#[derive(Debug, Clone)]
pub struct MinimizeOutcome {
    /// Soft assignments after the final sweep.
    pub state: LabelState,
    /// Returned hard labeling (the relaxed one, or the initialization when
    /// relaxing did not strictly lower the total energy).
    pub labels: Vec<u32>,
    /// Energy breakdown of the returned labeling.
    pub energy: EnergyBreakdown,
    /// True when the initialization was kept.
    pub reverted: bool,
}

/// Mean-field relaxation of the labeling energy
///   E = w_p * pairwise + w_s * smoothness + w_l * prior.
/// Soft assignments start at the softened one-hot initialization; each
/// sweep recomputes pairwise messages (exact or lattice, by input size)
/// and the expected neighbor log shading from the previous sweep, then
/// renormalizes row-wise. The returned labeling is the relaxed hard
/// labeling only if its energy (under the same engine) is strictly lower
/// than the initialization's; otherwise the initialization is returned.
pub fn minimize(
    img: &LinearImage,
    feats: &PairwiseFeatures,
    init_labels: &[u32],
    colors: &[[f64; 3]],
    params: &CrfParams,
) -> Result<MinimizeOutcome> {
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    if feats.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows for {n} pixels",
            feats.len()
        )));
    }
    let k = colors.len();
    validate_labeling(n, init_labels, k)?;

    let engine = PairwiseEngine::build(feats);
    let breakdown = |labels: &[u32]| -> Result<EnergyBreakdown> {
        let ep = engine.energy(feats, labels, k);
        let es = shading_smoothness_energy(img, labels, colors)?;
        let el = shading_prior_energy(img, labels, colors, params.shading_log_range)?;
        Ok(EnergyBreakdown::new(params, ep, es, el))
    };
    let init_energy = breakdown(init_labels)?;

    // Per pixel/label log shading and prior tables are iteration-invariant.
    let color_means: Vec<f64> = colors.iter().map(|&c| mean_channel(c)).collect();
    let pixel_means: Vec<f64> =
        (0..n).map(|i| mean_channel(img.pixel(i % w, i / w))).collect();
    let mut ls = vec![0.0; n * k];
    let mut prior = vec![0.0; n * k];
    for i in 0..n {
        for l in 0..k {
            let v = log_shading(pixel_means[i], color_means[l]);
            ls[i * k + l] = v;
            let hd = hinge(v, params.shading_log_range.0, params.shading_log_range.1);
            prior[i * k + l] = hd * hd;
        }
    }

    let mut state = LabelState::from_labels(init_labels, k);
    let mut messages = vec![0.0; n * k];
    let mut next_q = vec![0.0; n * k];
    for _ in 0..params.iterations {
        engine.messages(feats, &state, &mut messages);
        // Expected neighbor log shading under the current assignment.
        let expected: Vec<f64> = (0..n)
            .map(|i| {
                let qr = state.row(i);
                (0..k).map(|l| qr[l] * ls[i * k + l]).sum()
            })
            .collect();
        next_q.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
            let x = i % w;
            let y = i / w;
            for (l, slot) in row.iter_mut().enumerate() {
                let mut smooth = 0.0;
                let lsv = ls[i * k + l];
                if x + 1 < w {
                    let d = lsv - expected[i + 1];
                    smooth += d * d;
                }
                if x > 0 {
                    let d = lsv - expected[i - 1];
                    smooth += d * d;
                }
                if y + 1 < h {
                    let d = lsv - expected[i + w];
                    smooth += d * d;
                }
                if y > 0 {
                    let d = lsv - expected[i - w];
                    smooth += d * d;
                }
                // Negative cost: pairwise agreement pulls up, unaries push
                // down. The label-independent kernel row sum is dropped.
                *slot = params.w_pairwise * messages[i * k + l]
                    - params.w_smooth * smooth
                    - params.w_prior * prior[i * k + l];
            }
            let peak = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - peak).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        });
        std::mem::swap(&mut state.q, &mut next_q);
    }

    let relaxed = state.hard_labels();
    let relaxed_energy = breakdown(&relaxed)?;
    if relaxed_energy.e_total < init_energy.e_total {
        Ok(MinimizeOutcome { state, labels: relaxed, energy: relaxed_energy, reverted: false })
    } else {
        Ok(MinimizeOutcome {
            state,
            labels: init_labels.to_vec(),
            energy: init_energy,
            reverted: true,
        })
    }
}

/// Shading implied by a reflectance estimate: S_c = I_c / max(R_c, eps).
pub fn estimate_shading(img: &LinearImage, reflectance: &LinearImage) -> Result<LinearImage> {
    if !img.same_shape(reflectance) {
        return Err(Error::DimensionMismatch(format!(
            "image {}x{} vs reflectance {}x{}",
            img.width(),
            img.height(),
            reflectance.width(),
            reflectance.height()
        )));
    }
    let mut out = LinearImage::new(img.width(), img.height());
    for i in 0..img.data().len() {
        out.data_mut()[i] = img.data()[i] / reflectance.data()[i].max(SHADING_EPS);
    }
    Ok(out)
}

fn box_sums(src: &[f64], w: usize, h: usize, radius: usize) -> Vec<f64> {
    // Integral image; windows clip at the borders.
    let mut integral = vec![0.0f64; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut rowsum = 0.0;
        for x in 0..w {
            rowsum += src[y * w + x];
            integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + rowsum;
        }
    }
    let mut out = vec![0.0f64; w * h];
    let r = radius as i64;
    for y in 0..h as i64 {
        let y0 = (y - r).max(0) as usize;
        let y1 = ((y + r + 1).min(h as i64)) as usize;
        for x in 0..w as i64 {
            let x0 = (x - r).max(0) as usize;
            let x1 = ((x + r + 1).min(w as i64)) as usize;
            out[y as usize * w + x as usize] = integral[y1 * (w + 1) + x1]
                - integral[y0 * (w + 1) + x1]
                - integral[y1 * (w + 1) + x0]
                + integral[y0 * (w + 1) + x0];
        }
    }
    out
}

fn box_counts(w: usize, h: usize, radius: usize) -> Vec<f64> {
    let r = radius as i64;
    let mut out = vec![0.0f64; w * h];
    for y in 0..h as i64 {
        let ny = (y + r + 1).min(h as i64) - (y - r).max(0);
        for x in 0..w as i64 {
            let nx = (x + r + 1).min(w as i64) - (x - r).max(0);
            out[y as usize * w + x as usize] = (nx * ny) as f64;
        }
    }
    out
}

/// Edge-preserving smoothing of `p` steered by `guide` (single channel):
/// local linear model q = a * guide + b fitted per window of the given
/// radius, with `eps` regularizing the slope.
pub fn guided_filter_field(
    p: &ScalarField,
    guide: &ScalarField,
    radius: usize,
    eps: f64,
) -> Result<ScalarField> {
    if p.shape() != guide.shape() {
        return Err(Error::DimensionMismatch(format!(
            "input {:?} vs guide {:?}",
            p.shape(),
            guide.shape()
        )));
    }
    if radius == 0 || !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "guided filter needs radius >= 1 and eps > 0, got r={radius} eps={eps}"
        )));
    }
    let (w, h) = p.shape();
    let n = w * h;
    let counts = box_counts(w, h, radius);
    let mean = |src: &[f64]| -> Vec<f64> {
        box_sums(src, w, h, radius)
            .iter()
            .zip(&counts)
            .map(|(s, c)| s / c)
            .collect()
    };
    let gp: Vec<f64> = (0..n).map(|i| guide.data()[i] * p.data()[i]).collect();
    let gg: Vec<f64> = (0..n).map(|i| guide.data()[i] * guide.data()[i]).collect();
    let mean_g = mean(guide.data());
    let mean_p = mean(p.data());
    let mean_gp = mean(&gp);
    let mean_gg = mean(&gg);
    let mut a = vec![0.0f64; n];
    let mut b = vec![0.0f64; n];
    for i in 0..n {
        let var = mean_gg[i] - mean_g[i] * mean_g[i];
        let cov = mean_gp[i] - mean_g[i] * mean_p[i];
        a[i] = cov / (var + eps);
        b[i] = mean_p[i] - a[i] * mean_g[i];
    }
    let mean_a = mean(&a);
    let mean_b = mean(&b);
    let data: Vec<f64> =
        (0..n).map(|i| mean_a[i] * guide.data()[i] + mean_b[i]).collect();
    ScalarField::from_vec(w, h, data)
}

/// Per-channel guided filtering of an image, clamped to stay non-negative.
pub fn guided_filter(
    img: &LinearImage,
    guide: &LinearImage,
    radius: usize,
    eps: f64,
) -> Result<LinearImage> {
    if !img.same_shape(guide) {
        return Err(Error::DimensionMismatch(format!(
            "input {}x{} vs guide {}x{}",
            img.width(),
            img.height(),
            guide.width(),
            guide.height()
        )));
    }
    let planes: Vec<ScalarField> = (0..3)
        .map(|c| guided_filter_field(&img.channel(c), &guide.channel(c), radius, eps))
        .collect::<Result<_>>()?;
    let mut out = LinearImage::from_channels(&planes[0], &planes[1], &planes[2])?;
    for v in out.data_mut() {
        *v = v.max(0.0);
    }
    Ok(out)
}

/// Full clustering + refinement decomposition.
#[derive(Debug, Clone)]
pub struct CrfDecomposition {
    pub reflectance: LinearImage,
    pub shading: LinearImage,
    pub labels: Vec<u32>,
    pub k: usize,
    pub energy: EnergyBreakdown,
    pub reverted: bool,
}

/// Clusters pixel features, relaxes the labeling under the dense pairwise
/// model, paints reflectance from the final labels and derives shading so
/// that reflectance * shading reproduces the input wherever reflectance is
/// above the guard. The optional guided filter post-processes reflectance
/// before shading is derived, keeping the reconstruction identity intact.
pub fn decompose(img: &LinearImage, config: &PipelineConfig) -> Result<CrfDecomposition> {
    let feats = build_features(img, config.cluster.use_ratio_features, config.cluster.ratio_weight)?;
    let k = match config.cluster.k {
        KChoice::Adaptive => adaptive_k(img),
        KChoice::Fixed(k) => k,
    };
    let model = kmeans(&feats, k, config.cluster.seed)?;
    // With the ratio injection enabled the label set is refined before
    // relaxation: clusters whose mean colors are illumination copies of
    // each other (both ordered cross-ratio triples round to neutral) merge
    // onto one reflectance label, then each pixel is re-matched against the
    // surviving means so dark multi-material clusters dissolve onto their
    // true materials. Shadow and shading splits never reach the CRF. The
    // plain configuration keeps the raw k-means labels.
    let (init_labels, k) = if config.cluster.use_ratio_features {
        let (merged, k) = consolidate_labels(img, &model.labels, k)?;
        reassign_by_ratio(img, &merged, k)?
    } else {
        (model.labels, k)
    };
    let fused = if config.crf_ratio_feature {
        Some(ratio_field(img, config.retinex.sigma)?.fused)
    } else {
        None
    };
    let pfeats = pairwise_features(img, fused.as_ref(), &config.crf)?;
    let colors = cluster_colors(img, &init_labels, k)?;
    let outcome = minimize(img, &pfeats, &init_labels, &colors, &config.crf)?;
    let mut reflectance = labels_to_reflectance(img, &outcome.labels, k)?;
    if config.use_guided_filter {
        reflectance = guided_filter(&reflectance, img, config.guided_radius, config.guided_eps)?;
    }
    let shading = estimate_shading(img, &reflectance)?;
    Ok(CrfDecomposition {
        reflectance,
        shading,
        labels: outcome.labels,
        k,
        energy: outcome.energy,
        reverted: outcome.reverted,
    })
}

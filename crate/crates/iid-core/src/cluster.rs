//! Reflectance candidate extraction: per-pixel color features, optionally
//! augmented with neighbor cross ratios, partitioned by seeded k-means.
//! The ratio features are shading-blind, so the cluster count can follow
//! the material count instead of the shading layout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::{chromaticity, LinearImage};
use crate::ratios::{count_distinct_colors, neighbor_triple};

/// Center movement below which Lloyd iteration stops.
pub const KMEANS_TOLERANCE: f64 = 1e-6;

/// Hard cap on Lloyd iterations.
pub const KMEANS_MAX_ITERS: usize = 300;

/// Default ratio feature weight (the small-scene preset).
pub const DEFAULT_RATIO_WEIGHT: f64 = 0.5;

/// Row-major n x dim feature table tied to an image grid.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    width: usize,
    height: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// k-means outcome: centers in feature space plus one label per pixel.
#[derive(Debug, Clone)]
pub struct ClusterModel {
    pub k: usize,
    pub dim: usize,
    pub centers: Vec<f64>,
    pub labels: Vec<u32>,
    pub iterations: usize,
    pub converged: bool,
}

/// Builds per-pixel features: (intensity, chroma_r, chroma_g), and with
/// `use_ratios` three more entries holding the scan-neighbor cross ratios,
/// each divided by its image-wide maximum and scaled by `ratio_weight`, so
/// ratio entries lie in [0, ratio_weight].
pub fn build_features(
    img: &LinearImage,
    use_ratios: bool,
    ratio_weight: f64,
) -> Result<FeatureMatrix> {
    if use_ratios && !(ratio_weight > 0.0 && ratio_weight.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "ratio weight must be positive, got {ratio_weight}"
        )));
    }
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    let feats = chromaticity(img);
    let dim = if use_ratios { 6 } else { 3 };
    let mut data = vec![0.0; n * dim];
    for i in 0..n {
        data[i * dim] = feats.intensity.data()[i];
        data[i * dim + 1] = feats.chroma_r.data()[i];
        data[i * dim + 2] = feats.chroma_g.data()[i];
    }
    if use_ratios {
        let mut triples = Vec::with_capacity(n);
        let mut maxes = [0.0f64; 3];
        for y in 0..h {
            for x in 0..w {
                let t = neighbor_triple(img, x, y);
                for c in 0..3 {
                    maxes[c] = maxes[c].max(t[c]);
                }
                triples.push(t);
            }
        }
        for (i, t) in triples.iter().enumerate() {
            for c in 0..3 {
                let norm = if maxes[c] > 0.0 { t[c] / maxes[c] } else { 0.0 };
                data[i * dim + 3 + c] = norm * ratio_weight;
            }
        }
    }
    Ok(FeatureMatrix { width: w, height: h, dim, data })
}

/// Cluster count chosen from the data: the distinct rounded neighbor-ratio
/// count of the image. Illumination and shading cancel inside the ratios,
/// so shadows do not inflate k.
pub fn adaptive_k(img: &LinearImage) -> usize {
    count_distinct_colors(img)
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Seeded k-means: careful spread seeding (distance-squared sampling),
/// then Lloyd sweeps until centers move less than [`KMEANS_TOLERANCE`] or
/// [`KMEANS_MAX_ITERS`] is hit. Assignment ties take the lowest center
/// index; clusters that empty out are re-seeded from the point farthest
/// from its own center. Fully deterministic for a fixed seed.
pub fn kmeans(features: &FeatureMatrix, k: usize, seed: u64) -> Result<ClusterModel> {
    let n = features.len();
    let dim = features.dim();
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!(
            "k must be in [1, {n}], got {k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Spread seeding: next center drawn proportional to squared distance
    // from the nearest existing center.
    let mut centers = vec![0.0; k * dim];
    let first = rng.gen_range(0..n);
    centers[..dim].copy_from_slice(features.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(features.row(i), &centers[..dim])).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &v) in d2.iter().enumerate() {
                u -= v;
                if u <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centers[c * dim..(c + 1) * dim].copy_from_slice(features.row(pick));
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(features.row(i), &centers[c * dim..(c + 1) * dim]));
        }
    }

    let mut labels = vec![0u32; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < KMEANS_MAX_ITERS {
        iterations += 1;
        // Assign: nearest center, ties to the lowest index.
        for i in 0..n {
            let row = features.row(i);
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = sq_dist(row, &centers[c * dim..(c + 1) * dim]);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            labels[i] = best as u32;
        }
        // Update means.
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = labels[i] as usize;
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(features.row(i)) {
                *s += v;
            }
        }
        let mut new_centers = centers.clone();
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..dim {
                    new_centers[c * dim + d] = sums[c * dim + d] / counts[c] as f64;
                }
            }
        }
        // Re-seed empty clusters from the farthest assigned point.
        let mut taken: Vec<usize> = Vec::new();
        for c in 0..k {
            if counts[c] == 0 {
                let mut far = 0usize;
                let mut far_d = -1.0;
                for i in 0..n {
                    if taken.contains(&i) {
                        continue;
                    }
                    let own = labels[i] as usize;
                    let d = sq_dist(features.row(i), &new_centers[own * dim..(own + 1) * dim]);
                    if d > far_d {
                        far_d = d;
                        far = i;
                    }
                }
                new_centers[c * dim..(c + 1) * dim].copy_from_slice(features.row(far));
                taken.push(far);
            }
        }
        let movement = (0..k)
            .map(|c| sq_dist(&centers[c * dim..(c + 1) * dim], &new_centers[c * dim..(c + 1) * dim]).sqrt())
            .fold(0.0, f64::max);
        centers = new_centers;
        if movement < KMEANS_TOLERANCE {
            converged = true;
            break;
        }
    }
    // Final assignment against the settled centers.
    for i in 0..n {
        let row = features.row(i);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for c in 0..k {
            let d = sq_dist(row, &centers[c * dim..(c + 1) * dim]);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        labels[i] = best as u32;
    }
    Ok(ClusterModel { k, dim, centers, labels, iterations, converged })
}

/// Paints each pixel with the mean linear RGB of its cluster members.
/// `labels` must carry one entry per pixel with values below `k`.
pub fn labels_to_reflectance(img: &LinearImage, labels: &[u32], k: usize) -> Result<LinearImage> {
    let n = img.n_pixels();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} pixels",
            labels.len(),
            n
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
        return Err(Error::InvalidParameter(format!("label {bad} out of range for k={k}")));
    }
    let mut sums = vec![0.0f64; k * 3];
    let mut counts = vec![0usize; k];
    for (i, px) in img.data().chunks_exact(3).enumerate() {
        let c = labels[i] as usize;
        counts[c] += 1;
        sums[c * 3] += px[0];
        sums[c * 3 + 1] += px[1];
        sums[c * 3 + 2] += px[2];
    }
    let mut colors = vec![[0.0f64; 3]; k];
    for c in 0..k {
        if counts[c] > 0 {
            for ch in 0..3 {
                colors[c][ch] = sums[c * 3 + ch] / counts[c] as f64;
            }
        }
    }
    let mut out = LinearImage::new(img.width(), img.height());
    for i in 0..n {
        let color = colors[labels[i] as usize];
        out.data_mut()[i * 3..i * 3 + 3].copy_from_slice(&color);
    }
    Ok(out)
}

/// Merges clusters whose mean colors are the same reflectance under the
/// ratio test: both ordered cross-ratio triples round to neutral, meaning
/// the two colors differ only by a per-pixel illumination scalar. Shading
/// and shadow splits produced by k-means collapse back onto one label
/// while genuinely distinct materials (non-neutral by construction of the
/// rounding) stay apart. Returns the dense relabeling and the new count.
pub fn consolidate_labels(
    img: &LinearImage,
    labels: &[u32],
    k: usize,
) -> Result<(Vec<u32>, usize)> {
    let colors = cluster_colors(img, labels, k)?;
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l as usize] += 1;
    }

    // Union-find over clusters; empty clusters never join anything.
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let neutral = |a: [f64; 3], b: [f64; 3]| {
        let t = crate::ratios::cross_ratios(a, b);
        t.iter().all(|v| v.round() == 1.0)
    };
    for a in 0..k {
        if counts[a] == 0 {
            continue;
        }
        for b in (a + 1)..k {
            if counts[b] == 0 {
                continue;
            }
            if neutral(colors[a], colors[b]) && neutral(colors[b], colors[a]) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[rb.max(ra)] = rb.min(ra);
                }
            }
        }
    }

    // Dense remap in order of first appearance of each root.
    let mut remap = vec![usize::MAX; k];
    let mut next = 0usize;
    for c in 0..k {
        if counts[c] == 0 {
            continue;
        }
        let root = find(&mut parent, c);
        if remap[root] == usize::MAX {
            remap[root] = next;
            next += 1;
        }
        remap[c] = remap[root];
    }
    let new_labels = labels.iter().map(|&l| remap[l as usize] as u32).collect();
    Ok((new_labels, next.max(1)))
}

/// Pixel-level companion to [`consolidate_labels`]. A k-means cluster that
/// pools dark pixels of several materials has a blended mean color that the
/// cluster-level merge cannot attach anywhere. Each member pixel, though, is
/// still an illumination copy of exactly one material, so every pixel is
/// matched directly against the cluster means: among means whose two ordered
/// cross-ratio triples with the pixel round to neutral, the pixel joins the
/// one closest to exact neutrality. Pixels matching no mean (seam blends)
/// keep their label. Clusters emptied by the moves are dropped and the
/// labeling is re-densified.
pub fn reassign_by_ratio(
    img: &LinearImage,
    labels: &[u32],
    k: usize,
) -> Result<(Vec<u32>, usize)> {
    let colors = cluster_colors(img, labels, k)?;
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l as usize] += 1;
    }
    // Worst component deviation from 1 over both orders; infinite when any
    // component fails the rounding test, so non-copies never win.
    let deviation = |a: [f64; 3], b: [f64; 3]| -> f64 {
        let fwd = crate::ratios::cross_ratios(a, b);
        let bwd = crate::ratios::cross_ratios(b, a);
        let mut worst = 0.0f64;
        for v in fwd.iter().chain(bwd.iter()) {
            if v.round() != 1.0 {
                return f64::INFINITY;
            }
            worst = worst.max((v - 1.0).abs());
        }
        worst
    };
    let mut new_labels: Vec<u32> = Vec::with_capacity(labels.len());
    for (i, px) in img.data().chunks_exact(3).enumerate() {
        let p = [px[0], px[1], px[2]];
        let mut best = labels[i];
        let mut best_dev = f64::INFINITY;
        for (c, color) in colors.iter().enumerate() {
            if counts[c] == 0 {
                continue;
            }
            let d = deviation(p, *color);
            if d < best_dev {
                best_dev = d;
                best = c as u32;
            }
        }
        new_labels.push(best);
    }
    let mut moved = vec![0usize; k];
    for &l in &new_labels {
        moved[l as usize] += 1;
    }
    let mut remap = vec![u32::MAX; k];
    let mut next = 0u32;
    for c in 0..k {
        if moved[c] > 0 {
            remap[c] = next;
            next += 1;
        }
    }
    for l in new_labels.iter_mut() {
        *l = remap[*l as usize];
    }
    Ok((new_labels, (next as usize).max(1)))
}

/// Mean member color per label, used when turning a labeling into unary
/// shading estimates.
pub fn cluster_colors(img: &LinearImage, labels: &[u32], k: usize) -> Result<Vec<[f64; 3]>> {
    let n = img.n_pixels();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} pixels",
            labels.len(),
            n
        )));
    }
    let mut sums = vec![0.0f64; k * 3];
    let mut counts = vec![0usize; k];
    for (i, px) in img.data().chunks_exact(3).enumerate() {
        let c = labels[i] as usize;
        if c >= k {
            return Err(Error::InvalidParameter(format!("label {c} out of range for k={k}")));
        }
        counts[c] += 1;
        for ch in 0..3 {
            sums[c * 3 + ch] += px[ch];
        }
    }
    Ok((0..k)
        .map(|c| {
            if counts[c] > 0 {
                [0, 1, 2].map(|ch| sums[c * 3 + ch] / counts[c] as f64)
            } else {
                [0.0; 3]
            }
        })
        .collect())
}

//! Permutohedral-lattice approximation of dense Gaussian filtering:
//! out_i ~ c * sum_j exp(-|f_i - f_j|^2 / 2) v_j for a global constant c.
//! Splat onto the lattice with barycentric weights, blur with a [1,2,1]/2
//! stencil along each lattice axis, slice back. Used only to accelerate
//! mean-field message passing on large inputs; every reported energy is
//! evaluated by direct summation. Fully deterministic: lattice points are
//! indexed in insertion order and all sweeps run in fixed index order.

use std::collections::HashMap;

pub struct PermutohedralLattice {
    d: usize,
    n: usize,
    /// n * (d+1) lattice point indices per input point.
    offsets: Vec<u32>,
    /// n * (d+1) barycentric weights per input point.
    weights: Vec<f64>,
    /// (d+1) * m * 2 neighbor indices (u32::MAX when absent).
    blur_neighbors: Vec<u32>,
    /// Number of distinct lattice points.
    m: usize,
}

const ABSENT: u32 = u32::MAX;

impl PermutohedralLattice {
    /// Builds the lattice for `n` points with `d`-dimensional features,
    /// row-major in `positions`.
    pub fn new(positions: &[f64], n: usize, d: usize) -> Self {
        assert!(d >= 1 && positions.len() == n * d);
        let dp1 = d + 1;

        // Embedding scale chosen so the lattice blur matches a unit
        // Gaussian in feature space.
        let inv_std_dev = (2.0f64 / 3.0).sqrt() * dp1 as f64;
        let scale_factor: Vec<f64> = (0..d)
            .map(|i| inv_std_dev / (((i + 2) * (i + 1)) as f64).sqrt())
            .collect();

        // canonical[r][rank] offsets for the simplex vertex of remainder r.
        let mut canonical = vec![0i32; dp1 * dp1];
        for r in 0..dp1 {
            for j in 0..=(d - r) {
                canonical[r * dp1 + j] = r as i32;
            }
            for j in (d - r + 1)..dp1 {
                canonical[r * dp1 + j] = r as i32 - dp1 as i32;
            }
        }

        let mut table: HashMap<Vec<i32>, u32> = HashMap::new();
        let mut keys: Vec<i32> = Vec::new();
        let mut offsets = vec![0u32; n * dp1];
        let mut weights = vec![0.0f64; n * dp1];

        let mut elevated = vec![0.0f64; dp1];
        let mut rem0 = vec![0i32; dp1];
        let mut rank = vec![0i32; dp1];
        let mut barycentric = vec![0.0f64; dp1 + 1];
        let mut key = vec![0i32; d];

        for p in 0..n {
            let pos = &positions[p * d..(p + 1) * d];

            // Elevate onto the hyperplane sum(x) = 0.
            let mut sm = 0.0;
            for i in (1..=d).rev() {
                let cf = pos[i - 1] * scale_factor[i - 1];
                elevated[i] = sm - i as f64 * cf;
                sm += cf;
            }
            elevated[0] = sm;

            // Nearest zero-colored lattice point.
            let mut sum = 0i32;
            for i in 0..dp1 {
                let v = elevated[i] / dp1 as f64;
                let up = v.ceil() * dp1 as f64;
                let down = v.floor() * dp1 as f64;
                rem0[i] = if up - elevated[i] < elevated[i] - down {
                    up as i32
                } else {
                    down as i32
                };
                sum += rem0[i];
            }
            sum /= dp1 as i32;

            // Rank of each coordinate's residual.
            rank.iter_mut().for_each(|r| *r = 0);
            for i in 0..d {
                for j in (i + 1)..dp1 {
                    if elevated[i] - (rem0[i] as f64) < elevated[j] - rem0[j] as f64 {
                        rank[i] += 1;
                    } else {
                        rank[j] += 1;
                    }
                }
            }

            // Walk back inside the canonical simplex if rounding left it.
            for i in 0..dp1 {
                rank[i] += sum;
                if rank[i] < 0 {
                    rank[i] += dp1 as i32;
                    rem0[i] += dp1 as i32;
                } else if rank[i] > d as i32 {
                    rank[i] -= dp1 as i32;
                    rem0[i] -= dp1 as i32;
                }
            }

            // Barycentric coordinates from the sorted residuals.
            barycentric.iter_mut().for_each(|b| *b = 0.0);
            for i in 0..dp1 {
                let delta = (elevated[i] - rem0[i] as f64) / dp1 as f64;
                barycentric[(d as i32 - rank[i]) as usize] += delta;
                barycentric[(d as i32 + 1 - rank[i]) as usize] -= delta;
            }
            barycentric[0] += 1.0 + barycentric[dp1];

            // Splat bookkeeping for each simplex vertex.
            for r in 0..dp1 {
                for i in 0..d {
                    key[i] = rem0[i] + canonical[r * dp1 + rank[i] as usize];
                }
                let next = (keys.len() / d) as u32;
                let idx = *table.entry(key.clone()).or_insert_with(|| {
                    keys.extend_from_slice(&key);
                    next
                });
                offsets[p * dp1 + r] = idx;
                weights[p * dp1 + r] = barycentric[r];
            }
        }

        let m = keys.len() / d;
        // Precompute blur neighbors along every lattice axis.
        let mut blur_neighbors = vec![ABSENT; dp1 * m * 2];
        let mut n1 = vec![0i32; d];
        let mut n2 = vec![0i32; d];
        for axis in 0..dp1 {
            for i in 0..m {
                let k0 = &keys[i * d..(i + 1) * d];
                for t in 0..d {
                    n1[t] = k0[t] - 1;
                    n2[t] = k0[t] + 1;
                }
                if axis < d {
                    n1[axis] = k0[axis] + d as i32;
                    n2[axis] = k0[axis] - d as i32;
                }
                if let Some(&j) = table.get(n1.as_slice()) {
                    blur_neighbors[(axis * m + i) * 2] = j;
                }
                if let Some(&j) = table.get(n2.as_slice()) {
                    blur_neighbors[(axis * m + i) * 2 + 1] = j;
                }
            }
        }

        PermutohedralLattice { d, n, offsets, weights, blur_neighbors, m }
    }

    pub fn lattice_points(&self) -> usize {
        self.m
    }

    /// Filters `vd` interleaved value channels (length n * vd).
    pub fn filter(&self, values: &[f64], vd: usize) -> Vec<f64> {
        assert_eq!(values.len(), self.n * vd);
        let dp1 = self.d + 1;

        // Splat.
        let mut cur = vec![0.0f64; self.m * vd];
        for p in 0..self.n {
            for r in 0..dp1 {
                let o = self.offsets[p * dp1 + r] as usize;
                let w = self.weights[p * dp1 + r];
                for c in 0..vd {
                    cur[o * vd + c] += w * values[p * vd + c];
                }
            }
        }

        // Blur along each axis with a [0.5, 1, 0.5] stencil.
        let mut next = vec![0.0f64; self.m * vd];
        for axis in 0..dp1 {
            for i in 0..self.m {
                let j1 = self.blur_neighbors[(axis * self.m + i) * 2];
                let j2 = self.blur_neighbors[(axis * self.m + i) * 2 + 1];
                for c in 0..vd {
                    let mut v = cur[i * vd + c];
                    if j1 != ABSENT {
                        v += 0.5 * cur[j1 as usize * vd + c];
                    }
                    if j2 != ABSENT {
                        v += 0.5 * cur[j2 as usize * vd + c];
                    }
                    next[i * vd + c] = v;
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }

        // Slice.
        let alpha = 1.0 / (1.0 + (2.0f64).powi(-(self.d as i32)));
        let mut out = vec![0.0f64; self.n * vd];
        for p in 0..self.n {
            for r in 0..dp1 {
                let o = self.offsets[p * dp1 + r] as usize;
                let w = self.weights[p * dp1 + r];
                for c in 0..vd {
                    out[p * vd + c] += alpha * w * cur[o * vd + c];
                }
            }
        }
        out
    }
}

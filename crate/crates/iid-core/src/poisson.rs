//! Least-squares integration of a target gradient field. Solves
//! min_L sum over grid edges of (forward_diff(L) - g)^2 via conjugate
//! gradients on the normal equations (a 4-neighbor graph Laplacian).
//! The constant mode is the null space; iterates stay mean-zero and the
//! caller's gauge fixes the level afterwards.

use crate::error::{Error, Result};
use crate::raster::ScalarField;

/// Relative residual at which the solve counts as converged.
pub const CG_TOLERANCE: f64 = 1e-8;

/// Result of one scalar reconstruction. When the iteration cap
/// (10 * sqrt(pixels)) is hit first, `converged` is false and `field`
/// holds the lowest-residual iterate seen.
#[derive(Debug, Clone)]
pub struct PoissonSolution {
    pub field: ScalarField,
    pub converged: bool,
    pub residual: f64,
    pub iterations: usize,
}

fn laplacian_apply(x: &[f64], w: usize, h: usize, out: &mut [f64]) {
    for yy in 0..h {
        for xx in 0..w {
            let i = yy * w + xx;
            let mut acc = 0.0;
            let mut deg = 0.0;
            if xx + 1 < w {
                acc += x[i + 1];
                deg += 1.0;
            }
            if xx > 0 {
                acc += x[i - 1];
                deg += 1.0;
            }
            if yy + 1 < h {
                acc += x[i + w];
                deg += 1.0;
            }
            if yy > 0 {
                acc += x[i - w];
                deg += 1.0;
            }
            out[i] = deg * x[i] - acc;
        }
    }
}

/// Integrates target forward differences `gx`, `gy` (right and down, last
/// column/row entries ignored) into a field whose mean equals `gauge_mean`.
pub fn reconstruct_from_gradients(
    gx: &ScalarField,
    gy: &ScalarField,
    gauge_mean: f64,
) -> Result<PoissonSolution> {
    if gx.shape() != gy.shape() {
        return Err(Error::DimensionMismatch(format!(
            "gradient planes {:?} vs {:?}",
            gx.shape(),
            gy.shape()
        )));
    }
    let (w, h) = gx.shape();
    let n = w * h;

    // b = A^T g: per node, incoming edge targets minus outgoing ones.
    let mut b = vec![0.0; n];
    for yy in 0..h {
        for xx in 0..w {
            let i = yy * w + xx;
            let mut v = 0.0;
            if xx + 1 < w {
                v -= gx.data()[i];
            }
            if xx > 0 {
                v += gx.data()[i - 1];
            }
            if yy + 1 < h {
                v -= gy.data()[i];
            }
            if yy > 0 {
                v += gy.data()[i - w];
            }
            b[i] = v;
        }
    }
    // Project out the constant mode so the singular system stays consistent
    // under floating point.
    let b_mean = b.iter().sum::<f64>() / n as f64;
    for v in &mut b {
        *v -= b_mean;
    }

    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut field = ScalarField::filled(w, h, gauge_mean);
    if b_norm == 0.0 {
        return Ok(PoissonSolution { field, converged: true, residual: 0.0, iterations: 0 });
    }

    let cap = (10.0 * (n as f64).sqrt()).ceil() as usize;
    let tol = CG_TOLERANCE * b_norm;

    let mut x = vec![0.0; n];
    let mut r = b.clone();
    let mut p = b;
    let mut ap = vec![0.0; n];
    let mut rs: f64 = r.iter().map(|v| v * v).sum();
    let mut best = x.clone();
    let mut best_res = rs.sqrt();
    let mut iterations = 0;
    let mut converged = best_res <= tol;

    while !converged && iterations < cap {
        laplacian_apply(&p, w, h, &mut ap);
        let p_ap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if p_ap <= 0.0 {
            // Search direction collapsed into the null space; stop early.
            break;
        }
        let alpha = rs / p_ap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        iterations += 1;
        let res = rs_new.sqrt();
        if res < best_res {
            best_res = res;
            best.copy_from_slice(&x);
        }
        if res <= tol {
            converged = true;
            break;
        }
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }

    // Fix the gauge exactly.
    let mean = best.iter().sum::<f64>() / n as f64;
    for (dst, v) in field.data_mut().iter_mut().zip(&best) {
        *dst = v - mean + gauge_mean;
    }
    Ok(PoissonSolution {
        field,
        converged,
        residual: best_res / b_norm,
        iterations,
    })
}

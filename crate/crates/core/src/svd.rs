//! Full and truncated singular value decomposition.
//!
//! The decomposition is a cyclic one-sided Jacobi: columns of the working
//! matrix are rotated pairwise until mutually orthogonal, which yields
//! `W = U Σ Vᵀ` with high relative accuracy on the small dense matrices this
//! crate deals with. Wide inputs are handled by decomposing the transpose.

use crate::error::{Error, Result};
use crate::lora::LoraFactors;
use crate::matrix::{frob_dist_sq, Matrix};

/// Off-diagonal tolerance for the sweep loop, relative to the column norms.
const JACOBI_TOL: f64 = 1e-12;

/// Sweep budget multiplier; exceeding `SWEEP_CAP_FACTOR * min(d,k)` sweeps
/// without convergence is reported as an error.
const SWEEP_CAP_FACTOR: usize = 100;

/// Result of a full SVD: `U` (d×p), singular values (descending, length
/// p = min(d,k)) and `Vt` (p×k).
#[derive(Debug, Clone)]
pub struct SvdTriple {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
}

impl SvdTriple {
    /// Reassemble `U · diag(sigma) · Vt`.
    pub fn reconstruct(&self) -> Matrix {
        let p = self.sigma.len();
        let k = self.vt.cols();
        let mut scaled = Matrix::zeros(p, k);
        for j in 0..p {
            for l in 0..k {
                scaled[(j, l)] = self.sigma[j] * self.vt[(j, l)];
            }
        }
        self.u.matmul(&scaled)
    }
}

/// Full SVD with a deterministic sign convention: in each column of `U` the
/// entry of largest magnitude (ties broken by lowest row index) is
/// non-negative, with the matching `Vt` row negated to compensate.
pub fn svd(w: &Matrix) -> Result<SvdTriple> {
    w.check_finite("svd input")?;
    let (d, k) = w.shape();
    let mut triple = if d >= k {
        jacobi_tall(w)?
    } else {
        // Wide input: decompose Wᵀ and swap the factors.
        let t = jacobi_tall(&w.transpose())?;
        SvdTriple {
            u: t.vt.transpose(),
            sigma: t.sigma,
            vt: t.u.transpose(),
        }
    };
    apply_sign_convention(&mut triple);
    Ok(triple)
}

/// One-sided Jacobi on a tall (rows ≥ cols) matrix.
///
/// Works on the transposed buffer so each column of the input is a
/// contiguous row, which keeps the rotation loops cache-friendly.
fn jacobi_tall(w: &Matrix) -> Result<SvdTriple> {
    let (d, k) = w.shape();
    debug_assert!(d >= k);
    // cols[j] is the j-th column of the working matrix.
    let wt = w.transpose();
    let mut cols: Vec<Vec<f64>> = (0..k).map(|j| wt.row(j).to_vec()).collect();
    // Right-hand accumulator V, also stored column-wise.
    let mut v: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let mut e = vec![0.0; k];
            e[j] = 1.0;
            e
        })
        .collect();

    let max_sweeps = SWEEP_CAP_FACTOR * k.max(1);
    let mut converged = k < 2;
    for _ in 0..max_sweeps {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..k - 1 {
            for q in p + 1..k {
                let (app, aqq, apq) = column_moments(&cols[p], &cols[q]);
                if apq.abs() <= JACOBI_TOL * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut cols, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::SvdNoConvergence { sweeps: max_sweeps });
    }

    // Column norms are the singular values; sort descending, ties keep the
    // lower original index first.
    let mut order: Vec<usize> = (0..k).collect();
    let norms: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap().then(a.cmp(&b)));

    let mut u = Matrix::zeros(d, k);
    let mut vt = Matrix::zeros(k, k);
    let mut sigma = vec![0.0; k];
    for (slot, &j) in order.iter().enumerate() {
        sigma[slot] = norms[j];
        if norms[j] > 0.0 {
            for i in 0..d {
                u[(i, slot)] = cols[j][i] / norms[j];
            }
        }
        for l in 0..k {
            vt[(slot, l)] = v[j][l];
        }
    }
    complete_zero_columns(&mut u, &sigma);
    Ok(SvdTriple { u, sigma, vt })
}

fn column_moments(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let mut aa = 0.0;
    let mut bb = 0.0;
    let mut ab = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        aa += x * x;
        bb += y * y;
        ab += x * y;
    }
    (aa, bb, ab)
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let cp = &mut head[p];
    let cq = &mut tail[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = c * *x - s * *y;
        let xq = s * *x + c * *y;
        *x = xp;
        *y = xq;
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Fill columns whose singular value is exactly zero with an orthonormal
/// completion, so `U` always has orthonormal columns.
fn complete_zero_columns(u: &mut Matrix, sigma: &[f64]) {
    let (d, p) = u.shape();
    for j in 0..p {
        if sigma[j] > 0.0 {
            continue;
        }
        // Gram-Schmidt a standard basis vector against every other column;
        // columns not yet filled are all-zero and project out nothing.
        'candidates: for basis in 0..d {
            let mut cand = vec![0.0; d];
            cand[basis] = 1.0;
            for l in 0..p {
                if l == j {
                    continue;
                }
                let dot: f64 = (0..d).map(|i| u[(i, l)] * cand[i]).sum();
                for (i, c) in cand.iter_mut().enumerate() {
                    *c -= dot * u[(i, l)];
                }
            }
            let n = norm(&cand);
            if n > 0.5 {
                for i in 0..d {
                    u[(i, j)] = cand[i] / n;
                }
                break 'candidates;
            }
        }
    }
}

fn apply_sign_convention(t: &mut SvdTriple) {
    let (d, p) = t.u.shape();
    let k = t.vt.cols();
    for j in 0..p {
        let mut best = 0usize;
        let mut best_abs = t.u[(0, j)].abs();
        for i in 1..d {
            let a = t.u[(i, j)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if t.u[(best, j)] < 0.0 {
            for i in 0..d {
                t.u[(i, j)] = -t.u[(i, j)];
            }
            for l in 0..k {
                t.vt[(j, l)] = -t.vt[(j, l)];
            }
        }
    }
}

/// Slice the top-`r` singular triples out of an existing decomposition and
/// build the symmetric-split adapter factors `B = U_r √Σ_r`, `A = √Σ_r Vt_r`.
/// Returns the factors and the rank-`r` approximation `B·A`.
pub fn factors_from_svd(triple: &SvdTriple, r: usize, alpha: f64) -> Result<(LoraFactors, Matrix)> {
    let p = triple.sigma.len();
    if r == 0 || r > p {
        return Err(Error::RankOutOfRange { rank: r, max: p });
    }
    let d = triple.u.rows();
    let k = triple.vt.cols();
    let mut b = Matrix::zeros(d, r);
    let mut a = Matrix::zeros(r, k);
    for j in 0..r {
        let root = triple.sigma[j].sqrt();
        for i in 0..d {
            b[(i, j)] = triple.u[(i, j)] * root;
        }
        for l in 0..k {
            a[(j, l)] = root * triple.vt[(j, l)];
        }
    }
    let approx = b.matmul(&a);
    let factors = LoraFactors::new(b, a, alpha)?;
    Ok((factors, approx))
}

/// Rank-`r` truncation of `W`.
///
/// Returns the adapter factors, the rank-`r` approximation `B·A`, and the
/// squared Frobenius truncation error `‖W − B·A‖_F²`.
pub fn truncate_to_rank(w: &Matrix, r: usize, alpha: f64) -> Result<(LoraFactors, Matrix, f64)> {
    let p = w.rows().min(w.cols());
    if r == 0 || r > p {
        return Err(Error::RankOutOfRange { rank: r, max: p });
    }
    let triple = svd(w)?;
    let (factors, approx) = factors_from_svd(&triple, r, alpha)?;
    let err = frob_dist_sq(w, &approx)?;
    Ok((factors, approx, err))
}

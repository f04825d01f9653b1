//! Shared oracles for the integration suites. Everything here is an
//! independent computation path: the eigensolver is a two-sided Jacobi on
//! the Gram matrix (the library's SVD is one-sided on the input columns),
//! the simplex search is brute force, and the derivative checks are central
//! differences.
//!
//! Not every test binary uses every oracle.
#![allow(dead_code)]
// The Jacobi sweeps read and write both triangles; index loops match the math.
#![allow(clippy::needless_range_loop)]

use fedlora_core::matrix::Matrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Seeded standard-normal test matrix.
pub fn seeded_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Eigenvalues of a symmetric matrix by classic two-sided cyclic Jacobi,
/// sorted descending.
pub fn sym_eigenvalues(s: &Matrix) -> Vec<f64> {
    assert_eq!(s.rows(), s.cols());
    let n = s.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| s.row(i).to_vec()).collect();
    let scale: f64 = a
        .iter()
        .flatten()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(1e-300);
    for _ in 0..200 {
        let mut off = 0.0_f64;
        for p in 0..n {
            for q in p + 1..n {
                off = off.max(a[p][q].abs());
            }
        }
        if off <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() <= 1e-300 {
                    continue;
                }
                let zeta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                for i in 0..n {
                    let aip = a[i][p];
                    let aiq = a[i][q];
                    a[i][p] = c * aip - sn * aiq;
                    a[i][q] = sn * aip + c * aiq;
                }
                for j in 0..n {
                    let apj = a[p][j];
                    let aqj = a[q][j];
                    a[p][j] = c * apj - sn * aqj;
                    a[q][j] = sn * apj + c * aqj;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eig.sort_by(|x, y| y.partial_cmp(x).unwrap());
    eig
}

/// Singular values of `w` through the Gram-matrix eigendecomposition,
/// descending. Uses whichever Gram matrix is smaller.
pub fn singular_values_oracle(w: &Matrix) -> Vec<f64> {
    let gram = if w.rows() >= w.cols() {
        w.t_matmul(w)
    } else {
        w.matmul_t(w)
    };
    sym_eigenvalues(&gram)
        .into_iter()
        .map(|l| l.max(0.0).sqrt())
        .collect()
}

fn quad_objective(p: &[f64], costs: &[f64]) -> f64 {
    p.iter().zip(costs).map(|(&pi, &c)| pi * pi * c).sum()
}

/// Minimiser of `Σ pᵢ² (errᵢ + ε)` over the 1e-4 lattice on the simplex.
///
/// N = 2 is searched exhaustively. N = 3 is searched on a 1e-3 lattice
/// first and then exhaustively on the 1e-4 lattice inside a ±2e-2 window:
/// the objective is a strictly convex quadratic, so any lattice minimiser
/// lies within `h·sqrt(n·max(cost)/min(cost))` of the continuous one, which
/// keeps the fine minimiser inside the window for the cost ranges used in
/// these tests.
pub fn simplex_grid_min(errs: &[f64], epsilon: f64) -> Vec<f64> {
    let costs: Vec<f64> = errs.iter().map(|e| e + epsilon).collect();
    let res: f64 = 1e-4;
    match costs.len() {
        2 => {
            let mut best = (f64::INFINITY, vec![0.0, 1.0]);
            let steps = (1.0 / res).round() as usize;
            for i in 0..=steps {
                let p0 = i as f64 * res;
                let p = vec![p0, 1.0 - p0];
                let v = quad_objective(&p, &costs);
                if v < best.0 {
                    best = (v, p);
                }
            }
            best.1
        }
        3 => {
            let coarse: f64 = 1e-3;
            let steps = (1.0 / coarse).round() as usize;
            let mut best = (f64::INFINITY, vec![1.0, 0.0, 0.0]);
            for i in 0..=steps {
                let p0 = i as f64 * coarse;
                for j in 0..=(steps - i) {
                    let p1 = j as f64 * coarse;
                    let p = vec![p0, p1, 1.0 - p0 - p1];
                    let v = quad_objective(&p, &costs);
                    if v < best.0 {
                        best = (v, p);
                    }
                }
            }
            let window = 2e-2;
            let lo0 = ((best.1[0] - window).max(0.0) / res).round() as usize;
            let hi0 = ((best.1[0] + window).min(1.0) / res).round() as usize;
            let lo1 = ((best.1[1] - window).max(0.0) / res).round() as usize;
            let hi1 = ((best.1[1] + window).min(1.0) / res).round() as usize;
            let mut fine = (f64::INFINITY, best.1.clone());
            for i in lo0..=hi0 {
                let p0 = i as f64 * res;
                for j in lo1..=hi1 {
                    let p1 = j as f64 * res;
                    if p0 + p1 > 1.0 + 1e-12 {
                        continue;
                    }
                    let p = vec![p0, p1, 1.0 - p0 - p1];
                    let v = quad_objective(&p, &costs);
                    if v < fine.0 {
                        fine = (v, p);
                    }
                }
            }
            fine.1
        }
        n => panic!("grid search oracle only supports N in {{2, 3}}, got {n}"),
    }
}

/// Central-difference gradient of `f` with respect to the entries of `w`.
pub fn central_diff_grad(f: &mut dyn FnMut(&Matrix) -> f64, w: &Matrix, h: f64) -> Matrix {
    let mut g = Matrix::zeros(w.rows(), w.cols());
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            let mut plus = w.clone();
            plus[(i, j)] += h;
            let mut minus = w.clone();
            minus[(i, j)] -= h;
            g[(i, j)] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
    }
    g
}

/// `‖a − b‖_F / max(‖b‖_F, floor)`.
pub fn rel_frob_err(a: &Matrix, b: &Matrix, floor: f64) -> f64 {
    fedlora_core::matrix::frob_dist_sq(a, b).unwrap().sqrt() / b.frob_norm().max(floor)
}

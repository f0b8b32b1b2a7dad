//! Cyclic Jacobi eigendecomposition for small symmetric matrices.

use crate::linalg::Matrix;

/// Off-diagonal Frobenius tolerance, relative to the matrix norm.
pub const OFF_DIAG_TOL: f64 = 1e-11;
const MAX_SWEEPS: usize = 100;

/// Eigenvalues (ascending) and the matching orthonormal eigenvectors, stored
/// as the columns of the returned matrix.
pub fn sym_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.rows();
    assert_eq!(n, a.cols(), "square matrix required");
    let mut s = a.clone();
    // symmetrize so that tiny asymmetries do not stall the sweeps
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    let mut v = Matrix::identity(n);
    let scale = frobenius(&s).max(f64::MIN_POSITIVE);
    for _ in 0..MAX_SWEEPS {
        if off_diagonal(&s) <= OFF_DIAG_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = s[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (s[(q, q)] - s[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                rotate(&mut s, &mut v, p, q, c, sn);
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[(i, i)].total_cmp(&s[(j, j)]));
    let values = order.iter().map(|&i| s[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, col)] = v[(r, k)];
        }
    }
    (values, vectors)
}

fn rotate(s: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, sn: f64) {
    let n = s.rows();
    for k in 0..n {
        let (skp, skq) = (s[(k, p)], s[(k, q)]);
        s[(k, p)] = c * skp - sn * skq;
        s[(k, q)] = sn * skp + c * skq;
    }
    for k in 0..n {
        let (spk, sqk) = (s[(p, k)], s[(q, k)]);
        s[(p, k)] = c * spk - sn * sqk;
        s[(q, k)] = sn * spk + c * sqk;
    }
    s[(p, q)] = 0.0;
    s[(q, p)] = 0.0;
    for k in 0..n {
        let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
        v[(k, p)] = c * vkp - sn * vkq;
        v[(k, q)] = sn * vkp + c * vkq;
    }
}

fn frobenius(s: &Matrix) -> f64 {
    s.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn off_diagonal(s: &Matrix) -> f64 {
    let n = s.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += s[(i, j)] * s[(i, j)];
            }
        }
    }
    acc.sqrt()
}

pub fn min_eigenvalue(a: &Matrix) -> f64 {
    sym_eigen(a).0.first().copied().unwrap_or(0.0)
}

/// Nearest positive semidefinite matrix in Frobenius norm.
pub fn project_psd(a: &Matrix) -> Matrix {
    let (vals, vecs) = sym_eigen(a);
    let n = a.rows();
    let mut out = Matrix::zeros(n, n);
    for (k, &lam) in vals.iter().enumerate() {
        if lam <= 0.0 {
            continue;
        }
        for i in 0..n {
            let vik = lam * vecs[(i, k)];
            for j in i..n {
                out[(i, j)] += vik * vecs[(j, k)];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            out[(i, j)] = out[(j, i)];
        }
    }
    out
}

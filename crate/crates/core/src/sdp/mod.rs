//! Semidefinite relaxation of a one-layer ReLU network.
//!
//! The lifted matrix is indexed by `v = (1, x, z)`:
//!
//! ```text
//! P = [ 1     P[x]ᵀ    P[z]ᵀ  ]
//!     [ P[x]  P[xxᵀ]   P[xzᵀ] ]
//!     [ P[z]  P[zxᵀ]   P[zzᵀ] ]
//! ```
//!
//! and the relaxation maximizes `cᵀP[z]` subject to
//! `P[z] ≥ 0`, `P[z] ≥ W P[x]`, `diag(P[zzᵀ]) = diag(W P[xzᵀ])`,
//! `diag(P[xxᵀ]) ≤ (l + u) ⊙ P[x] − l ⊙ u`, `P₁₁ = 1` and `P ⪰ 0`.
//! A nonzero bias is carried by an extra input coordinate pinned to 1.

mod admm;
pub mod jacobi;

use serde::Serialize;

use crate::error::{CertError, Result};
use crate::linalg::Matrix;
use crate::network::Network;
use crate::region::InputRegion;

pub use admm::solve_sdp;

/// Largest lifted dimension the dense solver accepts.
pub const MAX_SDP_DIM: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SdpProblem {
    n_x: usize,
    n_z: usize,
    weight: Matrix,
    lower: Vec<f64>,
    upper: Vec<f64>,
    c: Vec<f64>,
    augmented: bool,
}

impl SdpProblem {
    pub fn new(weight: Matrix, lower: Vec<f64>, upper: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let (n_z, n_x) = (weight.rows(), weight.cols());
        if n_z == 0 || n_x == 0 {
            return Err(CertError::Dimension("empty weight matrix".into()));
        }
        if lower.len() != n_x || upper.len() != n_x || c.len() != n_z {
            return Err(CertError::Dimension(format!(
                "weight is {n_z}x{n_x} but bounds have {}/{} entries and c has {}",
                lower.len(),
                upper.len(),
                c.len()
            )));
        }
        if !weight.is_finite() || !lower.iter().chain(&upper).chain(&c).all(|v| v.is_finite()) {
            return Err(CertError::NonFinite("sdp data".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(CertError::InvalidArgument("input lower exceeds upper".into()));
        }
        Ok(Self {
            n_x,
            n_z,
            weight,
            lower,
            upper,
            c,
            augmented: false,
        })
    }

    /// Input dimension, including the constant coordinate when present.
    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn dim(&self) -> usize {
        1 + self.n_x + self.n_z
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    /// Scalar rows per group: ReLU nonnegativity, ReLU upper, ReLU diagonal,
    /// input quadratic, unit corner.
    pub fn constraint_counts(&self) -> [usize; 5] {
        [self.n_z, self.n_z, self.n_z, self.n_x, 1]
    }

    fn zi(&self, i: usize) -> usize {
        1 + self.n_x + i
    }

    pub fn objective(&self, p: &Matrix) -> f64 {
        (0..self.n_z).map(|i| self.c[i] * p[(0, self.zi(i))]).sum()
    }

    /// Lifts a network input/output pair, appending the constant coordinate
    /// for biased networks.
    pub fn lift(&self, x: &[f64], z: &[f64]) -> Matrix {
        if self.augmented && x.len() + 1 == self.n_x {
            let mut xa = x.to_vec();
            xa.push(1.0);
            lift_point(&xa, z)
        } else {
            lift_point(x, z)
        }
    }

    fn linear_rows(&self) -> Vec<LinRow> {
        self.core().linear_rows()
    }

    fn core(&self) -> Core {
        Core {
            n_x: self.n_x,
            n_z: self.n_z,
            weight: self.weight.clone(),
            bias: vec![0.0; self.n_z],
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        }
    }
}

/// Constraint data with an explicit bias; the public problem is the
/// bias-free case, the solver works on a version with fixed inputs folded
/// into the bias.
#[derive(Debug, Clone)]
struct Core {
    n_x: usize,
    n_z: usize,
    weight: Matrix,
    bias: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Core {
    fn xi(&self, j: usize) -> usize {
        1 + j
    }

    fn zi(&self, i: usize) -> usize {
        1 + self.n_x + i
    }

    /// All scalar linear rows, grouped, as `Σ a·P_ij (kind) rhs`.
    fn linear_rows(&self) -> Vec<LinRow> {
        let w = &self.weight;
        let mut rows = Vec::new();
        for i in 0..self.n_z {
            rows.push(LinRow {
                group: Group::ReluNonneg,
                terms: vec![(0, self.zi(i), 1.0)],
                eq: false,
                rhs: 0.0,
            });
        }
        for i in 0..self.n_z {
            let mut terms = vec![(0, self.zi(i), 1.0)];
            terms.extend((0..self.n_x).map(|j| (0, self.xi(j), -w[(i, j)])));
            rows.push(LinRow {
                group: Group::ReluUpper,
                terms,
                eq: false,
                rhs: self.bias[i],
            });
        }
        for i in 0..self.n_z {
            let mut terms = vec![(self.zi(i), self.zi(i), 1.0)];
            terms.extend((0..self.n_x).map(|j| (self.xi(j), self.zi(i), -w[(i, j)])));
            if self.bias[i] != 0.0 {
                terms.push((0, self.zi(i), -self.bias[i]));
            }
            rows.push(LinRow {
                group: Group::ReluDiag,
                terms,
                eq: true,
                rhs: 0.0,
            });
        }
        for j in 0..self.n_x {
            rows.push(LinRow {
                group: Group::InputQuad,
                terms: vec![
                    (self.xi(j), self.xi(j), -1.0),
                    (0, self.xi(j), self.lower[j] + self.upper[j]),
                ],
                eq: false,
                rhs: self.lower[j] * self.upper[j],
            });
        }
        rows.push(LinRow {
            group: Group::Unit,
            terms: vec![(0, 0, 1.0)],
            eq: true,
            rhs: 1.0,
        });
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Group {
    ReluNonneg,
    ReluUpper,
    ReluDiag,
    InputQuad,
    Unit,
}

/// `Σ a·P_ij = rhs` when `eq`, else `Σ a·P_ij ≥ rhs`; entries are `(i, j)`
/// with `i ≤ j`.
#[derive(Debug, Clone)]
struct LinRow {
    group: Group,
    terms: Vec<(usize, usize, f64)>,
    eq: bool,
    rhs: f64,
}

impl LinRow {
    fn violation(&self, p: &Matrix) -> f64 {
        let lhs: f64 = self.terms.iter().map(|&(i, j, a)| a * p[(i, j)]).sum();
        if self.eq {
            (lhs - self.rhs).abs()
        } else {
            (self.rhs - lhs).max(0.0)
        }
    }
}

pub fn build_sdp(net: &Network, region: &InputRegion, c: &[f64]) -> Result<SdpProblem> {
    if net.num_layers() != 1 {
        return Err(CertError::InvalidArgument(format!(
            "the SDP relaxation needs a one-layer network, got {} layers",
            net.num_layers()
        )));
    }
    if !region.is_pure_box() {
        return Err(CertError::InvalidArgument(
            "the SDP relaxation needs a box region without cuts".into(),
        ));
    }
    if region.dim() != net.input_dim() {
        return Err(CertError::Dimension(format!(
            "region dimension {} vs network input {}",
            region.dim(),
            net.input_dim()
        )));
    }
    let layer = net.last_layer();
    let w = layer.weight();
    let b = layer.bias();
    if b.iter().all(|v| *v == 0.0) {
        return SdpProblem::new(w.clone(), region.lower().to_vec(), region.upper().to_vec(), c.to_vec());
    }
    let (n_z, n_x) = (w.rows(), w.cols());
    let mut wa = Matrix::zeros(n_z, n_x + 1);
    for i in 0..n_z {
        wa.row_mut(i)[..n_x].copy_from_slice(w.row(i));
        wa[(i, n_x)] = b[i];
    }
    let mut lower = region.lower().to_vec();
    let mut upper = region.upper().to_vec();
    lower.push(1.0);
    upper.push(1.0);
    let mut p = SdpProblem::new(wa, lower, upper, c.to_vec())?;
    p.augmented = true;
    Ok(p)
}

/// `v vᵀ` with `v = (1, x, z)`.
pub fn lift_point(x: &[f64], z: &[f64]) -> Matrix {
    let v: Vec<f64> = std::iter::once(1.0).chain(x.iter().copied()).chain(z.iter().copied()).collect();
    let m = v.len();
    let mut p = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            p[(i, j)] = v[i] * v[j];
        }
    }
    p
}

/// Largest violation per constraint group, plus symmetry and spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SdpResiduals {
    pub relu_nonneg: f64,
    pub relu_upper: f64,
    pub relu_diag: f64,
    pub input_quad: f64,
    pub unit: f64,
    pub asymmetry: f64,
    pub min_eig: f64,
}

impl SdpResiduals {
    /// Worst violation among the linear groups.
    pub fn max_linear(&self) -> f64 {
        [self.relu_nonneg, self.relu_upper, self.relu_diag, self.input_quad, self.unit]
            .into_iter()
            .fold(0.0, f64::max)
    }

    /// Worst violation overall, counting a negative eigenvalue by its size.
    pub fn max_violation(&self) -> f64 {
        self.max_linear().max(self.asymmetry).max(-self.min_eig)
    }
}

pub fn sdp_feasibility_residuals(p: &Matrix, problem: &SdpProblem) -> Result<SdpResiduals> {
    let m = problem.dim();
    if p.rows() != m || p.cols() != m {
        return Err(CertError::Dimension(format!(
            "matrix is {}x{}, problem needs {m}x{m}",
            p.rows(),
            p.cols()
        )));
    }
    let mut r = SdpResiduals {
        relu_nonneg: 0.0,
        relu_upper: 0.0,
        relu_diag: 0.0,
        input_quad: 0.0,
        unit: 0.0,
        asymmetry: 0.0,
        min_eig: jacobi::min_eigenvalue(p),
    };
    for row in problem.linear_rows() {
        let v = row.violation(p);
        let slot = match row.group {
            Group::ReluNonneg => &mut r.relu_nonneg,
            Group::ReluUpper => &mut r.relu_upper,
            Group::ReluDiag => &mut r.relu_diag,
            Group::InputQuad => &mut r.input_quad,
            Group::Unit => &mut r.unit,
        };
        *slot = slot.max(v);
    }
    for i in 0..m {
        for j in i + 1..m {
            r.asymmetry = r.asymmetry.max((p[(i, j)] - p[(j, i)]).abs());
        }
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SdpSettings {
    pub eps: f64,
    pub max_iters: usize,
    pub rho: f64,
    pub alpha: f64,
}

impl Default for SdpSettings {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_iters: 50_000,
            rho: 0.03,
            alpha: 1.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SdpStatus {
    Converged,
    MaxIters,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveResiduals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub min_eig: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SdpResult {
    pub p: Matrix,
    pub objective: f64,
    pub status: SdpStatus,
    pub residuals: SolveResiduals,
    pub iterations: usize,
    /// Tolerance the objective is accurate to.
    pub eps: f64,
}

/// Worst-case gap of the two-vector geometric picture:
/// `(h/2)(1 − cos θ)/cos θ`.
pub fn geo_gap(h: f64, theta: f64) -> Result<f64> {
    if !(h >= 0.0) || !h.is_finite() {
        return Err(CertError::InvalidArgument(format!("h must be nonnegative, got {h}")));
    }
    if !(theta.abs() < std::f64::consts::FRAC_PI_2) {
        return Err(CertError::InvalidArgument(format!(
            "|theta| must be below pi/2, got {theta}"
        )));
    }
    let cos = theta.cos();
    Ok(0.5 * h * (1.0 - cos) / cos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::relu;
    use crate::region::CutSense;

    fn toy() -> Network {
        Network::from_parts(vec![(vec![vec![1.0, 1.0], vec![1.0, -1.0]], vec![0.0, 0.0])]).unwrap()
    }

    fn unit_box() -> InputRegion {
        InputRegion::box_from_center(&[0.0, 0.0], 1.0).unwrap()
    }

    #[test]
    fn counts_and_dims() {
        let p = build_sdp(&toy(), &unit_box(), &[1.0, 1.0]).unwrap();
        assert_eq!(p.dim(), 5);
        assert_eq!(p.constraint_counts(), [2, 2, 2, 2, 1]);
        assert_eq!(p.linear_rows().len(), 9);
        let iris = Network::from_parts(vec![(vec![vec![0.5; 4]; 3], vec![0.0; 3])]).unwrap();
        let region = InputRegion::box_from_center(&[0.0; 4], 0.1).unwrap();
        assert_eq!(build_sdp(&iris, &region, &[1.0, -1.0, 0.0]).unwrap().dim(), 8);
    }

    #[test]
    fn bias_appends_constant_coordinate() {
        let net = Network::from_parts(vec![(vec![vec![1.0, 1.0]], vec![0.5])]).unwrap();
        let p = build_sdp(&net, &unit_box(), &[1.0]).unwrap();
        assert!(p.is_augmented());
        assert_eq!(p.n_x(), 3);
        assert_eq!(p.lower()[2], 1.0);
        assert_eq!(p.weight()[(0, 2)], 0.5);
        let x = [0.3, -0.1];
        let z = net.eval(&x).unwrap();
        let r = sdp_feasibility_residuals(&p.lift(&x, &z), &p).unwrap();
        assert!(r.max_violation() < 1e-12);
    }

    #[test]
    fn rejects_unsupported_inputs() {
        let deep = Network::from_parts(vec![
            (vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]),
            (vec![vec![1.0, 1.0]], vec![0.0]),
        ])
        .unwrap();
        assert!(build_sdp(&deep, &unit_box(), &[1.0]).is_err());
        let cut = unit_box().add_halfspace(vec![1.0, 0.0], 0.0, CutSense::Ge).unwrap();
        assert!(build_sdp(&toy(), &cut, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn lifted_point_residuals() {
        let p = build_sdp(&toy(), &unit_box(), &[1.0, 1.0]).unwrap();
        let x = [1.0, 0.0];
        let z: Vec<f64> = toy().eval(&x).unwrap();
        let r = sdp_feasibility_residuals(&lift_point(&x, &z), &p).unwrap();
        assert!(r.max_violation() <= 1e-12, "{r:?}");

        let bad = sdp_feasibility_residuals(&lift_point(&x, &[0.5, 1.0]), &p).unwrap();
        assert!(bad.relu_diag > 0.0);

        let out = [1.5, 0.0];
        let r = sdp_feasibility_residuals(&lift_point(&out, &[relu(1.5), relu(1.5)]), &p).unwrap();
        assert!(r.input_quad > 0.0);
    }

    #[test]
    fn identity_and_negative_eigenvalue_detected() {
        let p = build_sdp(&toy(), &unit_box(), &[1.0, 1.0]).unwrap();
        let r = sdp_feasibility_residuals(&Matrix::identity(5), &p).unwrap();
        assert!(r.relu_diag > 0.0);

        let x = [0.5, 0.25];
        let z = toy().eval(&x).unwrap();
        let feasible = lift_point(&x, &z);
        let (vals, vecs) = jacobi::sym_eigen(&feasible);
        let top = vals.len() - 1;
        let mut flipped = feasible.clone();
        for i in 0..5 {
            for j in 0..5 {
                flipped[(i, j)] -= 2.0 * vals[top] * vecs[(i, top)] * vecs[(j, top)];
            }
        }
        assert!(sdp_feasibility_residuals(&flipped, &p).unwrap().min_eig < 0.0);
        assert!(sdp_feasibility_residuals(&Matrix::identity(4), &p).is_err());
    }

    #[test]
    fn geo_gap_examples() {
        assert_eq!(geo_gap(3.0, 0.0).unwrap(), 0.0);
        assert!((geo_gap(1.0, std::f64::consts::FRAC_PI_3).unwrap() - 0.5).abs() < 1e-15);
        let g = geo_gap(2.0, 0.7).unwrap();
        assert!((geo_gap(0.5, 0.7).unwrap() - 0.25 * g).abs() < 1e-12);
        assert!(geo_gap(1.0, std::f64::consts::FRAC_PI_2).is_err());
        assert!(geo_gap(-1.0, 0.1).is_err());
        assert!(geo_gap(1.0, 0.3).unwrap() < geo_gap(1.0, 0.4).unwrap());
        assert_eq!(geo_gap(1.0, -0.4).unwrap(), geo_gap(1.0, 0.4).unwrap());
    }
}

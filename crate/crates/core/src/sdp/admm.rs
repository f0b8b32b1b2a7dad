//! Operator splitting for the lifted relaxation.
//!
//! The iterate is `y = (svec(P), s)` where `s ≥ 0` are slacks of the
//! inequality rows. Each step projects onto the affine set
//! `{A svec(P) − E s = b}` with a prefactored `(M Mᵀ)` and onto the cone
//! `S₊ × R₊`, with over-relaxation and residual-balanced penalty.
//!
//! Before iterating, free inputs are centred and scaled to `[−1, 1]` and each
//! hidden unit by its largest possible pre-activation, which is a congruence
//! of the lifted matrix and leaves the optimum unchanged. The fixed-point map
//! on the pre-projection point is accelerated with a safeguarded Anderson
//! scheme that falls back to the plain step whenever it fails to reduce the
//! residual.

use std::f64::consts::SQRT_2;

use super::jacobi::project_psd;
use super::{sdp_feasibility_residuals, Core, SdpProblem, SdpResult, SdpSettings, SdpStatus, SolveResiduals, MAX_SDP_DIM};
use crate::error::{CertError, Result};
use crate::linalg::{cholesky, cholesky_solve, dot, solve_dense, Matrix};

const CHECK_EVERY: usize = 10;
const ADAPT_EVERY: usize = 100;
const RHO_RATIO: f64 = 10.0;
/// Residuals and gap are driven this far below `eps` so that the objective
/// itself lands within `eps` of the optimum.
const STOP_FACTOR: f64 = 0.01;
const AA_MEMORY: usize = 8;
const AA_REGULARIZATION: f64 = 1e-10;
/// An extrapolated point is kept only if its fixed-point residual is at most
/// this multiple of the residual at the point it was built from.
const AA_SAFEGUARD: f64 = 1.0;

struct Svec {
    m: usize,
    index: Vec<usize>,
}

impl Svec {
    fn new(m: usize) -> Self {
        let mut index = vec![0; m * m];
        let mut k = 0;
        for j in 0..m {
            for i in 0..=j {
                index[i * m + j] = k;
                index[j * m + i] = k;
                k += 1;
            }
        }
        Self { m, index }
    }

    fn len(&self) -> usize {
        self.m * (self.m + 1) / 2
    }

    fn at(&self, i: usize, j: usize) -> usize {
        self.index[i * self.m + j]
    }

    /// Coefficient on the svec entry for a unit weight on matrix entry `(i, j)`.
    fn weight(i: usize, j: usize) -> f64 {
        if i == j {
            1.0
        } else {
            1.0 / SQRT_2
        }
    }

    fn pack(&self, p: &Matrix, out: &mut [f64]) {
        for j in 0..self.m {
            for i in 0..=j {
                out[self.at(i, j)] = if i == j { p[(i, i)] } else { SQRT_2 * p[(i, j)] };
            }
        }
    }

    fn unpack(&self, v: &[f64]) -> Matrix {
        let mut p = Matrix::zeros(self.m, self.m);
        for j in 0..self.m {
            for i in 0..=j {
                let x = v[self.at(i, j)] * Svec::weight(i, j);
                p[(i, j)] = x;
                p[(j, i)] = x;
            }
        }
        p
    }
}

struct Affine {
    m: Matrix,
    b: Vec<f64>,
    chol: Matrix,
}

impl Affine {
    fn new(core: &Core, sv: &Svec) -> Result<Self> {
        let rows = core.linear_rows();
        let n_in = rows.iter().filter(|r| !r.eq).count();
        let n = sv.len() + n_in;
        let mut m = Matrix::zeros(rows.len(), n);
        let mut b = Vec::with_capacity(rows.len());
        let mut slack = sv.len();
        for (r, row) in rows.iter().enumerate() {
            for &(i, j, a) in &row.terms {
                m[(r, sv.at(i, j))] += a * Svec::weight(i, j);
            }
            if !row.eq {
                m[(r, slack)] = -1.0;
                slack += 1;
            }
            b.push(row.rhs);
        }
        let mmt = m.matmul(&m.transpose());
        let chol = cholesky(&mmt)
            .ok_or_else(|| CertError::LpNumerical("sdp constraint rows are dependent".into()))?;
        Ok(Self { m, b, chol })
    }

    /// Projects in place and returns the multipliers `λ` with
    /// `y_in − y_out = Mᵀλ`.
    fn project(&self, y: &mut [f64]) -> Vec<f64> {
        let mut r = self.m.matvec(y);
        for (ri, bi) in r.iter_mut().zip(&self.b) {
            *ri -= bi;
        }
        let lam = cholesky_solve(&self.chol, &r);
        for (k, &l) in lam.iter().enumerate() {
            if l != 0.0 {
                for (yj, a) in y.iter_mut().zip(self.m.row(k)) {
                    *yj -= a * l;
                }
            }
        }
        lam
    }
}

fn project_cone(sv: &Svec, y: &mut [f64]) {
    let n_s = sv.len();
    let p = project_psd(&sv.unpack(&y[..n_s]));
    sv.pack(&p, &mut y[..n_s]);
    for s in &mut y[n_s..] {
        *s = s.max(0.0);
    }
}

/// Presolve by congruence `P = T P_red Tᵀ`, which preserves
/// semidefiniteness and maps every constraint onto one of the same kind.
///
/// Inputs with `l = u` are folded into the bias: PSD together with
/// `P_jj ≤ 2 l_j P_0j − l_j²` forces row `j` of `P` to equal `l_j` times
/// row 0. Free inputs are centred and scaled onto `[−1, 1]`, and each
/// output is scaled by its largest preactivation magnitude, so that all
/// reduced data is of order one.
struct Reduction {
    core: Core,
    expand: Matrix,
    /// Output scales; the objective on reduced output `i` is `c_i·s_i`.
    z_scale: Vec<f64>,
}

impl Reduction {
    fn new(problem: &SdpProblem) -> Self {
        let full = problem.core();
        let free: Vec<usize> = (0..full.n_x).filter(|&j| full.lower[j] != full.upper[j]).collect();
        let n_f = free.len();
        let centre = |j: usize| 0.5 * (full.lower[j] + full.upper[j]);
        let half = |j: usize| 0.5 * (full.upper[j] - full.lower[j]);
        let mut weight = Matrix::zeros(full.n_z, n_f);
        let mut bias = vec![0.0; full.n_z];
        let mut z_scale = vec![1.0; full.n_z];
        for i in 0..full.n_z {
            // preactivation is bias ± Σ|w̃| over the reduced box
            let mut b = 0.0;
            for j in 0..full.n_x {
                b += full.weight[(i, j)] * if free.contains(&j) { centre(j) } else { full.lower[j] };
            }
            let row: Vec<f64> = free.iter().map(|&j| full.weight[(i, j)] * half(j)).collect();
            let spread: f64 = row.iter().map(|v| v.abs()).sum();
            let s = b.abs() + spread;
            if s > 0.0 {
                z_scale[i] = s;
            }
            for (k, v) in row.iter().enumerate() {
                weight[(i, k)] = v / z_scale[i];
            }
            bias[i] = b / z_scale[i];
        }
        let m_red = 1 + n_f + full.n_z;
        let mut expand = Matrix::zeros(problem.dim(), m_red);
        expand[(0, 0)] = 1.0;
        for j in 0..full.n_x {
            match free.iter().position(|&f| f == j) {
                Some(k) => {
                    expand[(1 + j, 0)] = centre(j);
                    expand[(1 + j, 1 + k)] = half(j);
                }
                None => expand[(1 + j, 0)] = full.lower[j],
            }
        }
        for i in 0..full.n_z {
            expand[(1 + full.n_x + i, 1 + n_f + i)] = z_scale[i];
        }
        let core = Core {
            n_x: n_f,
            n_z: full.n_z,
            weight,
            bias,
            lower: vec![-1.0; n_f],
            upper: vec![1.0; n_f],
        };
        Self {
            core,
            expand,
            z_scale,
        }
    }

    fn dim(&self) -> usize {
        self.expand.cols()
    }

    fn expand(&self, p_red: &Matrix) -> Matrix {
        let mut p = self.expand.matmul(p_red).matmul(&self.expand.transpose());
        // exact symmetry
        for i in 0..p.rows() {
            for j in 0..i {
                p[(i, j)] = p[(j, i)];
            }
        }
        p
    }
}

fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Scratch for one splitting step on the pre-projection point `v`.
struct Step {
    z: Vec<f64>,
    x: Vec<f64>,
    next: Vec<f64>,
    lam: Vec<f64>,
}

impl Step {
    fn new(n: usize) -> Self {
        Self {
            z: vec![0.0; n],
            x: vec![0.0; n],
            next: vec![0.0; n],
            lam: Vec::new(),
        }
    }
}

fn admm_step(aff: &Affine, sv: &Svec, q: &[f64], rho: f64, alpha: f64, v: &[f64], st: &mut Step) {
    st.z.copy_from_slice(v);
    project_cone(sv, &mut st.z);
    for k in 0..q.len() {
        let u = v[k] - st.z[k];
        st.x[k] = st.z[k] - u + q[k] / rho;
    }
    st.lam = aff.project(&mut st.x);
    for k in 0..q.len() {
        let u = v[k] - st.z[k];
        st.next[k] = alpha * st.x[k] + (1.0 - alpha) * st.z[k] + u;
    }
}

/// Type-II Anderson acceleration of the fixed-point map `w ↦ T(w)`.
struct Anderson {
    dim: usize,
    /// Differences of successive residuals `T(w) − w` and of images `T(w)`.
    d_res: Vec<Vec<f64>>,
    d_img: Vec<Vec<f64>>,
    last: Option<(Vec<f64>, Vec<f64>)>,
}

impl Anderson {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            d_res: Vec::new(),
            d_img: Vec::new(),
            last: None,
        }
    }

    fn reset(&mut self) {
        self.d_res.clear();
        self.d_img.clear();
        self.last = None;
    }

    /// Records `(w, T(w))` and returns the extrapolated next iterate, or
    /// `None` while the history is empty or the least-squares fit is singular.
    fn extrapolate(&mut self, w: &[f64], img: &[f64]) -> Option<Vec<f64>> {
        let res: Vec<f64> = img.iter().zip(w).map(|(a, b)| a - b).collect();
        if let Some((prev_res, prev_img)) = self.last.take() {
            if self.d_res.len() == AA_MEMORY {
                self.d_res.remove(0);
                self.d_img.remove(0);
            }
            self.d_res.push(res.iter().zip(&prev_res).map(|(a, b)| a - b).collect());
            self.d_img.push(img.iter().zip(&prev_img).map(|(a, b)| a - b).collect());
        }
        self.last = Some((res.clone(), img.to_vec()));
        let k = self.d_res.len();
        if k == 0 {
            return None;
        }
        let mut gram = Matrix::zeros(k, k);
        let mut rhs = vec![0.0; k];
        for i in 0..k {
            for j in 0..=i {
                let g = dot(&self.d_res[i], &self.d_res[j]);
                gram[(i, j)] = g;
                gram[(j, i)] = g;
            }
            rhs[i] = dot(&self.d_res[i], &res);
        }
        let scale = (0..k).map(|i| gram[(i, i)]).fold(0.0, f64::max);
        if !(scale > 0.0) {
            return None;
        }
        for i in 0..k {
            gram[(i, i)] += AA_REGULARIZATION * scale;
        }
        let gamma = solve_dense(&gram, &rhs, 1e-14 * scale)?;
        let mut next = img.to_vec();
        for (g, d) in gamma.iter().zip(&self.d_img) {
            for (v, dv) in next.iter_mut().zip(d) {
                *v -= g * dv;
            }
        }
        debug_assert_eq!(next.len(), self.dim);
        next.iter().all(|v| v.is_finite()).then_some(next)
    }
}

/// Approximately maximizes `cᵀP[z]`. Terminates once the primal
/// (`‖x − z‖∞`) and dual (`ρ‖zₖ − zₖ₋₁‖∞`) residuals and the duality gap
/// drop below `STOP_FACTOR · settings.eps`, or flags the result after
/// `settings.max_iters`.
pub fn solve_sdp(problem: &SdpProblem, settings: &SdpSettings) -> Result<SdpResult> {
    let m = problem.dim();
    if m > MAX_SDP_DIM {
        return Err(CertError::Budget(format!(
            "lifted dimension {m} exceeds {MAX_SDP_DIM}"
        )));
    }
    if !(settings.eps > 0.0) || !(settings.rho > 0.0) || !(settings.alpha > 0.0 && settings.alpha < 2.0) {
        return Err(CertError::InvalidArgument("invalid sdp settings".into()));
    }
    let red = Reduction::new(problem);
    let core = &red.core;
    let sv = Svec::new(red.dim());
    let aff = Affine::new(core, &sv)?;
    let n = aff.m.cols();

    let mut q = vec![0.0; n];
    for (i, &ci) in problem.c().iter().enumerate() {
        q[sv.at(0, core.zi(i))] = ci * red.z_scale[i] * Svec::weight(0, 1);
    }

    // start from the lifted box centre
    let centre: Vec<f64> = core
        .lower
        .iter()
        .zip(&core.upper)
        .map(|(l, u)| 0.5 * (l + u))
        .collect();
    let zc: Vec<f64> = core
        .weight
        .matvec(&centre)
        .into_iter()
        .zip(&core.bias)
        .map(|(v, b)| (v + b).max(0.0))
        .collect();
    let mut z = vec![0.0; n];
    sv.pack(&super::lift_point(&centre, &zc), &mut z[..sv.len()]);
    // the state is the point v fed to the cone projection: z = Π(v), u = v − z
    let mut v = z;
    let mut step = Step::new(n);
    let mut rho = settings.rho;
    let mut aa = Anderson::new(n);
    // last plain step and its residual, kept so a rejected extrapolation can fall back
    let mut fallback: Option<(Vec<f64>, f64)> = None;

    let mut status = SdpStatus::MaxIters;
    let mut iterations = settings.max_iters;
    let (mut r_p, mut r_d, mut gap) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for it in 1..=settings.max_iters {
        admm_step(&aff, &sv, &q, rho, settings.alpha, &v, &mut step);
        if let Some((plain, prev_norm)) = fallback.take() {
            if l2_dist(&v, &step.next) > AA_SAFEGUARD * prev_norm {
                aa.reset();
                v = plain;
                admm_step(&aff, &sv, &q, rho, settings.alpha, &v, &mut step);
            }
        }
        if it % CHECK_EVERY == 0 || it == settings.max_iters {
            let mut z_next = step.next.clone();
            project_cone(&sv, &mut z_next);
            r_p = inf_dist(&step.x, &z_next);
            r_d = rho * inf_dist(&z_next, &step.z);
            // dual point ν = ρλ with slack −ρu in the cone
            let dual_obj: f64 = rho * step.lam.iter().zip(&aff.b).map(|(l, b)| l * b).sum::<f64>();
            let primal_obj: f64 = q.iter().zip(&z_next).map(|(a, b)| a * b).sum();
            gap = (dual_obj - primal_obj).abs();
            let tol = STOP_FACTOR * settings.eps;
            if r_p <= tol && r_d <= tol && gap <= tol {
                status = SdpStatus::Converged;
                iterations = it;
                v.copy_from_slice(&step.next);
                break;
            }
            if it % ADAPT_EVERY == 0 {
                let scale = if r_p > RHO_RATIO * r_d {
                    2.0
                } else if r_d > RHO_RATIO * r_p {
                    0.5
                } else {
                    1.0
                };
                if scale != 1.0 {
                    rho *= scale;
                    // keep z and rescale the scaled dual u = v − z
                    v = z_next
                        .iter()
                        .zip(&step.next)
                        .map(|(z, vn)| z + (vn - z) / scale)
                        .collect();
                    aa.reset();
                    continue;
                }
            }
        }
        let res_norm = l2_dist(&v, &step.next);
        let plain = step.next.clone();
        match aa.extrapolate(&v, &plain) {
            Some(next) => {
                fallback = Some((plain, res_norm));
                v = next;
            }
            None => v = plain,
        }
    }
    if status == SdpStatus::MaxIters {
        v.copy_from_slice(&step.next);
    }
    project_cone(&sv, &mut v);
    let z = &v;

    let p = red.expand(&sv.unpack(&z[..sv.len()]));
    let res = sdp_feasibility_residuals(&p, problem)?;
    Ok(SdpResult {
        objective: problem.objective(&p),
        status,
        residuals: SolveResiduals {
            primal: r_p.max(res.max_linear()),
            dual: r_d,
            gap,
            min_eig: res.min_eig,
        },
        p,
        iterations,
        eps: settings.eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Network;
    use crate::region::InputRegion;
    use crate::sdp::build_sdp;

    #[test]
    fn svec_round_trip() {
        let sv = Svec::new(4);
        let mut p = Matrix::zeros(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                p[(i, j)] = (i.min(j) * 10 + i.max(j)) as f64;
            }
        }
        let mut v = vec![0.0; sv.len()];
        sv.pack(&p, &mut v);
        let back = sv.unpack(&v);
        for (a, b) in p.as_slice().iter().zip(back.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
        // Frobenius norm is preserved
        let fro: f64 = p.as_slice().iter().map(|x| x * x).sum();
        let vn: f64 = v.iter().map(|x| x * x).sum();
        assert!((fro - vn).abs() < 1e-9);
    }

    #[test]
    fn worked_instance() {
        let net = Network::from_parts(vec![(vec![vec![1.0, 1.0], vec![1.0, -1.0]], vec![0.0, 0.0])]).unwrap();
        let region = InputRegion::box_from_center(&[0.0, 0.0], 1.0).unwrap();
        let prob = build_sdp(&net, &region, &[1.0, 1.0]).unwrap();
        let res = solve_sdp(&prob, &SdpSettings::default()).unwrap();
        assert_eq!(res.status, SdpStatus::Converged);
        assert!(res.objective >= 2.0 - 1e-3, "{}", res.objective);
        assert!(res.residuals.min_eig >= -1e-6);
        assert!((res.p[(0, 0)] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn degenerate_box_pins_the_input() {
        let net = Network::from_parts(vec![(vec![vec![1.0, 2.0], vec![-1.0, 0.5]], vec![0.0, 0.0])]).unwrap();
        let x0 = [0.4, 0.3];
        let region = InputRegion::new(x0.to_vec(), x0.to_vec()).unwrap();
        let c = [1.0, -2.0];
        let prob = build_sdp(&net, &region, &c).unwrap();
        let res = solve_sdp(&prob, &SdpSettings::default()).unwrap();
        let z = net.eval(&x0).unwrap();
        let expect: f64 = c.iter().zip(&z).map(|(a, b)| a * b).sum();
        assert!((res.objective - expect).abs() < 1e-4, "{} vs {expect}", res.objective);
    }

    #[test]
    fn deterministic() {
        let net = Network::from_parts(vec![(vec![vec![0.3, -0.7], vec![0.9, 0.1]], vec![0.1, -0.2])]).unwrap();
        let region = InputRegion::box_from_center(&[0.2, -0.1], 0.5).unwrap();
        let prob = build_sdp(&net, &region, &[1.0, -0.5]).unwrap();
        let a = solve_sdp(&prob, &SdpSettings::default()).unwrap();
        let b = solve_sdp(&prob, &SdpSettings::default()).unwrap();
        assert_eq!(a, b);
    }
}

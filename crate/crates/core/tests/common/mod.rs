//! Independent reference computations shared by the integration tests.
//! Nothing here calls the simplex solver or the relaxation code.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use partcert::{InputRegion, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FEAS: f64 = 1e-9;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A one-layer instance with weights and biases in U[-1, 1] and an
/// objective in U[-1, 1].
pub struct Instance {
    pub net: Network,
    pub region: InputRegion,
    pub c: Vec<f64>,
}

pub fn random_weights<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

pub fn random_one_layer<R: Rng>(rng: &mut R, n_x: usize, n_z: usize, eps: f64) -> Instance {
    let w = random_weights(rng, n_z, n_x);
    let b = (0..n_z).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let center: Vec<f64> = (0..n_x).map(|_| rng.gen_range(-0.5..0.5)).collect();
    Instance {
        net: Network::from_parts(vec![(w, b)]).unwrap(),
        region: InputRegion::box_from_center(&center, eps).unwrap(),
        c: (0..n_z).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

/// Instance with dimensions drawn from `1..=max_x` and `1..=max_z`.
pub fn random_instance(seed: u64, max_x: usize, max_z: usize, eps: f64) -> Instance {
    let mut r = rng(seed);
    let n_x = r.gen_range(1..=max_x);
    let n_z = r.gen_range(1..=max_z);
    random_one_layer(&mut r, n_x, n_z, eps)
}

pub fn random_deep<R: Rng>(rng: &mut R, widths: &[usize]) -> Network {
    let parts = widths
        .windows(2)
        .map(|w| {
            let b = (0..w[1]).map(|_| rng.gen_range(-0.5..0.5)).collect();
            (random_weights(rng, w[1], w[0]), b)
        })
        .collect();
    Network::from_parts(parts).unwrap()
}

/// Calls `f` on every `k`-subset of `0..n` in lexicographic order.
pub fn for_each_subset(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn go(start: usize, n: usize, k: usize, acc: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if acc.len() == k {
            f(acc);
            return;
        }
        for i in start..n {
            if n - i < k - acc.len() {
                break;
            }
            acc.push(i);
            go(i + 1, n, k, acc, f);
            acc.pop();
        }
    }
    go(0, n, k, &mut Vec::with_capacity(k), f);
}

/// `max cᵀv s.t. A v ≤ b` by enumerating every basis of `n` tight rows.
/// The feasible set must be a nonempty polytope, or at least pointed with
/// the objective bounded. Returns `None` when no vertex is feasible.
pub fn vertex_max(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Option<(f64, Vec<f64>)> {
    let n = c.len();
    let m = a.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for_each_subset(m, n, &mut |rows| {
        let mat = DMatrix::from_fn(n, n, |i, j| a[rows[i]][j]);
        let rhs = DVector::from_fn(n, |i, _| b[rows[i]]);
        let Some(v) = mat.clone().lu().solve(&rhs) else {
            return;
        };
        // reject near-singular bases whose solution is numerically unreliable
        if (&mat * &v - &rhs).amax() > 1e-9 {
            return;
        }
        let v: Vec<f64> = v.iter().copied().collect();
        let feasible = a
            .iter()
            .zip(b)
            .all(|(row, bi)| dot(row, &v) <= bi + FEAS * (1.0 + bi.abs()));
        if feasible {
            let val = dot(c, &v);
            if best.as_ref().map_or(true, |(bv, _)| val > *bv) {
                best = Some((val, v));
            }
        }
    });
    best
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Box rows `x_j ≤ u_j` and `−x_j ≤ −l_j`, padded with `extra` zero columns.
fn box_rows(lo: &[f64], hi: &[f64], extra: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = lo.len();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for j in 0..n {
        let mut row = vec![0.0; n + extra];
        row[j] = 1.0;
        a.push(row.clone());
        b.push(hi[j]);
        row[j] = -1.0;
        a.push(row);
        b.push(-lo[j]);
    }
    (a, b)
}

/// Exact preactivation range of `w·x + b` over a box.
pub fn interval(w: &[f64], bias: f64, lo: &[f64], hi: &[f64]) -> (f64, f64) {
    let mut l = bias;
    let mut u = bias;
    for ((wj, a), b) in w.iter().zip(lo).zip(hi) {
        l += (wj * a).min(wj * b);
        u += (wj * a).max(wj * b);
    }
    (l, u)
}

fn layer_rows(net: &Network) -> (Vec<Vec<f64>>, Vec<f64>) {
    let layer = &net.layers()[0];
    let w = layer.weight().to_rows();
    (w, layer.bias().to_vec())
}

/// Exact `max cᵀ relu(Wx + b)` over a box: for every activation pattern,
/// maximize the linear objective over that pattern's cell.
pub fn exact_oracle(net: &Network, lo: &[f64], hi: &[f64], c: &[f64]) -> f64 {
    assert_eq!(net.num_layers(), 1);
    let (w, bias) = layer_rows(net);
    let n_z = w.len();
    let mut best = f64::NEG_INFINITY;
    for pattern in 0u32..(1 << n_z) {
        let (mut a, mut b) = box_rows(lo, hi, 0);
        let mut obj = vec![0.0; lo.len()];
        let mut constant = 0.0;
        for i in 0..n_z {
            let on = pattern >> i & 1 == 1;
            // on: −(w x + b) ≤ 0, off: w x + b ≤ 0
            let s = if on { -1.0 } else { 1.0 };
            a.push(w[i].iter().map(|v| s * v).collect());
            b.push(-s * bias[i]);
            if on {
                for (o, wij) in obj.iter_mut().zip(&w[i]) {
                    *o += c[i] * wij;
                }
                constant += c[i] * bias[i];
            }
        }
        if let Some((v, _)) = vertex_max(&a, &b, &obj) {
            best = best.max(v + constant);
        }
    }
    best
}

/// The triangle LP bound over a box for a one-layer network with exact
/// interval preactivation bounds.
///
/// For fixed `x` the relaxation decouples: a neuron with `c_i ≥ 0` sits on
/// the upper chord and one with `c_i < 0` on `relu(ẑ_i)`. The latter is
/// written with an epigraph variable `t_i ≥ max(0, ẑ_i)`.
pub fn relaxed_oracle(net: &Network, lo: &[f64], hi: &[f64], c: &[f64]) -> f64 {
    assert_eq!(net.num_layers(), 1);
    let (w, bias) = layer_rows(net);
    let n_x = lo.len();
    let epi: Vec<usize> = (0..w.len())
        .filter(|&i| {
            let (l, u) = interval(&w[i], bias[i], lo, hi);
            c[i] < 0.0 && l < 0.0 && u > 0.0
        })
        .collect();
    let dim = n_x + epi.len();
    let (mut a, mut b) = box_rows(lo, hi, epi.len());
    let mut obj = vec![0.0; dim];
    let mut constant = 0.0;
    for i in 0..w.len() {
        let (l, u) = interval(&w[i], bias[i], lo, hi);
        if let Some(k) = epi.iter().position(|&e| e == i) {
            let t = n_x + k;
            obj[t] = c[i];
            let mut row = vec![0.0; dim];
            row[t] = -1.0;
            a.push(row.clone());
            b.push(0.0);
            row[..n_x].copy_from_slice(&w[i]);
            a.push(row);
            b.push(-bias[i]);
        } else if l >= 0.0 {
            for j in 0..n_x {
                obj[j] += c[i] * w[i][j];
            }
            constant += c[i] * bias[i];
        } else if u > 0.0 {
            // upper chord u (ẑ − l) / (u − l)
            let s = c[i] * u / (u - l);
            for j in 0..n_x {
                obj[j] += s * w[i][j];
            }
            constant += s * (bias[i] - l);
        }
    }
    vertex_max(&a, &b, &obj).expect("box is nonempty").0 + constant
}

/// Largest `cᵀ f(x)` over a uniform grid with `k` points per axis.
pub fn grid_max(net: &Network, lo: &[f64], hi: &[f64], c: &[f64], k: usize) -> f64 {
    let n = lo.len();
    let mut best = f64::NEG_INFINITY;
    let total = k.pow(n as u32);
    let mut x = vec![0.0; n];
    for mut code in 0..total {
        for j in 0..n {
            let t = (code % k) as f64 / (k - 1).max(1) as f64;
            code /= k;
            x[j] = lo[j] + t * (hi[j] - lo[j]);
        }
        best = best.max(dot(c, &net.eval(&x).unwrap()));
    }
    best
}

/// Scalar-by-scalar forward pass.
pub fn naive_forward(net: &Network, x: &[f64]) -> Vec<Vec<f64>> {
    let mut cur = x.to_vec();
    let mut pre = Vec::new();
    for layer in net.layers() {
        let w = layer.weight();
        let mut next = Vec::with_capacity(w.rows());
        let mut z = Vec::with_capacity(w.rows());
        for i in 0..w.rows() {
            let mut s = layer.bias()[i];
            for j in 0..w.cols() {
                s += w.row(i)[j] * cur[j];
            }
            z.push(s);
            next.push(relu(s));
        }
        pre.push(z);
        cur = next;
    }
    pre
}

/// Index of the smallest entry, first occurrence on ties.
pub fn argmin(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |best, i| if v[i] < v[best] { i } else { best })
}

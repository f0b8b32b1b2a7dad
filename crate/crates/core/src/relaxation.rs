//! LP relaxation of the certification problem `sup { cᵀf(x) : x ∈ X }`, the
//! exact optimum by activation-pattern enumeration, and the worst-case
//! relaxation gap.
//!
//! Each unstable ReLU `z = relu(ẑ)` with `l < 0 < u` is replaced by its
//! triangle envelope
//!
//! ```text
//! z ≥ 0,   z ≥ ẑ,   z ≤ u (ẑ − l) / (u − l)
//! ```
//!
//! while stable neurons keep their exact linear form.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{preact_bounds_with_splits, BoundsMode, PreactBounds, Stability};
use crate::error::{CertError, Result};
use crate::linalg::{dot, norm2, relu, Matrix};
use crate::lp::{solve_lp, LpProblem, LpResult, Sense};
use crate::network::Network;
use crate::region::InputRegion;

/// Widths below this are treated as a degenerate interval.
const DEGENERATE_WIDTH: f64 = 1e-12;

/// Largest total ReLU count [`exact_value`] will enumerate.
pub const EXACT_NEURON_BUDGET: usize = 24;

/// Restricts the sign of one neuron's preactivation: `ẑ ≥ 0` when `active`,
/// `ẑ ≤ 0` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronSplit {
    pub layer: usize,
    pub neuron: usize,
    pub active: bool,
}

/// Polyhedral safe set `{z : C z ≤ d}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetySpec {
    c: Matrix,
    d: Vec<f64>,
}

impl SafetySpec {
    pub fn new(rows: Vec<Vec<f64>>, d: Vec<f64>) -> Result<Self> {
        let c = Matrix::from_rows(&rows)
            .ok_or_else(|| CertError::Dimension("ragged safety rows".into()))?;
        if c.rows() != d.len() || c.rows() == 0 {
            return Err(CertError::Dimension(format!(
                "safety spec has {} rows but {} offsets",
                c.rows(),
                d.len()
            )));
        }
        if !c.is_finite() || !d.iter().all(|v| v.is_finite()) {
            return Err(CertError::NonFinite("safety spec".into()));
        }
        Ok(Self { c, d })
    }

    /// Single objective row with `d = 0`.
    pub fn single(c: Vec<f64>) -> Result<Self> {
        Self::new(vec![c], vec![0.0])
    }

    pub fn num_rows(&self) -> usize {
        self.d.len()
    }

    pub fn output_dim(&self) -> usize {
        self.c.cols()
    }

    pub fn row(&self, i: usize) -> (&[f64], f64) {
        (self.c.row(i), self.d[i])
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            #[serde(rename = "C")]
            big_c: Option<Vec<Vec<f64>>>,
            d: Option<Vec<f64>>,
            c: Option<Vec<f64>>,
        }
        let doc: Doc = serde_json::from_str(text).map_err(|source| CertError::Parse {
            what: "safety spec",
            source,
        })?;
        match doc {
            Doc {
                big_c: Some(rows),
                d: Some(d),
                c: None,
            } => Self::new(rows, d),
            Doc {
                big_c: None,
                d: None,
                c: Some(c),
            } => Self::single(c),
            _ => Err(CertError::InvalidArgument(
                "safety spec needs either C+d or c".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertKind {
    LpRelaxed,
    SdpRelaxed,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub bound: f64,
    pub kind: CertKind,
    pub witness_x: Option<Vec<f64>>,
    pub witness_z: Option<Vec<f64>>,
    /// Post-activation values of the hidden layers at the witness.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub witness_hidden: Vec<Vec<f64>>,
}

impl Certificate {
    pub fn safe(&self) -> bool {
        self.bound <= 0.0
    }
}

/// Variable layout of an encoded network: `x`, then each layer's outputs.
#[derive(Debug, Clone)]
pub struct VarLayout {
    offsets: Vec<usize>,
}

impl VarLayout {
    pub fn num_vars(&self, net: &Network) -> usize {
        let k = self.offsets.len() - 1;
        self.offsets[k] + if k == 0 { net.input_dim() } else { net.layers()[k - 1].output_dim() }
    }

    /// First variable of the block feeding layer `k` (block 0 is `x`).
    pub fn block(&self, k: usize) -> usize {
        self.offsets[k]
    }

    /// Dense row and constant of `ẑ` for neuron `i` of layer `k`.
    pub fn preact_row(&self, net: &Network, k: usize, i: usize) -> (Vec<f64>, f64) {
        let layer = &net.layers()[k];
        let mut row = vec![0.0; self.num_vars(net)];
        let start = self.offsets[k];
        row[start..start + layer.input_dim()].copy_from_slice(layer.weight().row(i));
        (row, layer.bias()[i])
    }
}

/// Encodes the region and the relaxation of the first `depth` layers using
/// `bounds` for those layers. Splits on layers `≤ depth` are added as sign
/// constraints on their preactivations. The objective is left at zero.
pub(crate) fn encode_network(
    net: &Network,
    region: &InputRegion,
    bounds: &PreactBounds,
    depth: usize,
    splits: &[NeuronSplit],
) -> (LpProblem, VarLayout) {
    let mut offsets = vec![0];
    let mut next = net.input_dim();
    for layer in &net.layers()[..depth] {
        offsets.push(next);
        next += layer.output_dim();
    }
    let layout = VarLayout { offsets };
    let mut lp = LpProblem::new(next);
    region.encode(&mut lp, 0);
    for k in 0..depth {
        let lb = bounds.layer(k);
        let out = layout.block(k + 1);
        for i in 0..net.layers()[k].output_dim() {
            let (row, b) = layout.preact_row(net, k, i);
            let z = out + i;
            emit_neuron(&mut lp, row, b, z, lb.lower[i], lb.upper[i]);
        }
    }
    for s in splits.iter().filter(|s| s.layer <= depth) {
        let (row, b) = layout.preact_row(net, s.layer, s.neuron);
        let sense = if s.active { Sense::Ge } else { Sense::Le };
        lp.add_constraint(row, sense, -b);
    }
    (lp, layout)
}

fn emit_neuron(lp: &mut LpProblem, row: Vec<f64>, b: f64, z: usize, l: f64, u: f64) {
    let n = lp.num_vars();
    let unit = |j: usize| {
        let mut r = vec![0.0; n];
        r[j] = 1.0;
        r
    };
    // z − scale·(wᵀx) with z's own coefficient set to one.
    let minus = |scale: f64| {
        let mut r: Vec<f64> = row.iter().map(|v| -scale * v).collect();
        r[z] += 1.0;
        r
    };
    match Stability::of(l, u) {
        Stability::StableActive => lp.add_constraint(minus(1.0), Sense::Eq, b),
        Stability::StableInactive => lp.set_bounds(z, 0.0, 0.0),
        Stability::Unstable if u - l < DEGENERATE_WIDTH => {
            lp.add_constraint(unit(z), Sense::Ge, 0.0);
            lp.add_constraint(minus(1.0), Sense::Ge, b);
            lp.add_constraint(unit(z), Sense::Le, u);
        }
        Stability::Unstable => {
            let slope = u / (u - l);
            lp.add_constraint(unit(z), Sense::Ge, 0.0);
            lp.add_constraint(minus(1.0), Sense::Ge, b);
            lp.add_constraint(minus(slope), Sense::Le, slope * (b - l));
        }
    }
}

/// The relaxed LP `sup { cᵀz : (x, z) ∈ N, x ∈ X }` over variables
/// `(x, x^[1], …, x^[K])`.
pub fn build_relaxed_lp(
    net: &Network,
    region: &InputRegion,
    bounds: &PreactBounds,
    c: &[f64],
) -> Result<LpProblem> {
    build_relaxed_lp_with_splits(net, region, bounds, &[], c).map(|(lp, _)| lp)
}

pub(crate) fn build_relaxed_lp_with_splits(
    net: &Network,
    region: &InputRegion,
    bounds: &PreactBounds,
    splits: &[NeuronSplit],
    c: &[f64],
) -> Result<(LpProblem, VarLayout)> {
    check_objective(net, c)?;
    if bounds.layers().len() != net.num_layers() {
        return Err(CertError::Dimension("bounds do not cover every layer".into()));
    }
    let depth = net.num_layers();
    let (mut lp, layout) = encode_network(net, region, bounds, depth, splits);
    let mut obj = vec![0.0; lp.num_vars()];
    let out = layout.block(depth);
    obj[out..out + c.len()].copy_from_slice(c);
    lp.set_objective(obj);
    Ok((lp, layout))
}

fn check_objective(net: &Network, c: &[f64]) -> Result<()> {
    if c.len() != net.output_dim() {
        return Err(CertError::Dimension(format!(
            "objective has length {}, network output is {}",
            c.len(),
            net.output_dim()
        )));
    }
    if !c.iter().all(|v| v.is_finite()) {
        return Err(CertError::NonFinite("objective".into()));
    }
    Ok(())
}

/// Relaxed bound `f̂*(X)`. An empty region is reported as
/// [`CertError::EmptyRegion`].
pub fn certify_lp(
    net: &Network,
    region: &InputRegion,
    c: &[f64],
    mode: BoundsMode,
) -> Result<Certificate> {
    certify_lp_with_splits(net, region, &[], c, mode).map(|(cert, _)| cert)
}

/// Like [`certify_lp`] under extra sign splits; also returns the bounds used.
pub fn certify_lp_with_splits(
    net: &Network,
    region: &InputRegion,
    splits: &[NeuronSplit],
    c: &[f64],
    mode: BoundsMode,
) -> Result<(Certificate, PreactBounds)> {
    check_objective(net, c)?;
    let bounds = preact_bounds_with_splits(net, region, splits, mode)?;
    let (lp, layout) = build_relaxed_lp_with_splits(net, region, &bounds, splits, c)?;
    let (value, point) = match solve_lp(&lp)? {
        LpResult::Optimal { value, point } => (value, point),
        LpResult::Infeasible => return Err(CertError::EmptyRegion),
        LpResult::Unbounded => return Err(CertError::LpStatus("unbounded relaxation")),
    };
    let blocks: Vec<Vec<f64>> = (1..=net.num_layers())
        .map(|k| {
            let start = layout.block(k);
            point[start..start + net.layers()[k - 1].output_dim()].to_vec()
        })
        .collect();
    let (hidden, z) = blocks.split_at(net.num_layers() - 1);
    let cert = Certificate {
        bound: value,
        kind: CertKind::LpRelaxed,
        witness_x: Some(point[..net.input_dim()].to_vec()),
        witness_z: Some(z[0].clone()),
        witness_hidden: hidden.to_vec(),
    };
    Ok((cert, bounds))
}

/// Exact optimum `f*(X)` by enumerating activation patterns.
pub fn exact_value(net: &Network, region: &InputRegion, c: &[f64]) -> Result<Certificate> {
    exact_value_with_splits(net, region, &[], c)
}

pub fn exact_value_with_splits(
    net: &Network,
    region: &InputRegion,
    splits: &[NeuronSplit],
    c: &[f64],
) -> Result<Certificate> {
    check_objective(net, c)?;
    if net.num_neurons() > EXACT_NEURON_BUDGET {
        return Err(CertError::Budget(format!(
            "{} neurons exceed the enumeration budget of {EXACT_NEURON_BUDGET}",
            net.num_neurons()
        )));
    }
    let bounds = preact_bounds_with_splits(net, region, splits, BoundsMode::LpTight)?;
    let search = PatternSearch {
        net,
        region,
        bounds: &bounds,
        splits,
        c,
    };
    let n = net.input_dim();
    let root = Affine {
        map: Matrix::identity(n),
        shift: vec![0.0; n],
    };
    let first = search.layer_choices(0);
    let combos = 1usize << first.iter().filter(|o| o.is_none()).count();
    let leaves = (0..combos)
        .into_par_iter()
        .map(|code| search.descend(0, &root, &[], &first, code))
        .collect::<Result<Vec<_>>>()?;
    let best = leaves
        .into_iter()
        .flatten()
        .fold(None::<(f64, Vec<f64>)>, |acc, cand| match acc {
            Some(a) if a.0 >= cand.0 => Some(a),
            _ => Some(cand),
        });
    let Some((value, x)) = best else {
        return Err(CertError::EmptyRegion);
    };
    let trace = net.forward(&x)?;
    let depth = net.num_layers();
    Ok(Certificate {
        bound: value,
        kind: CertKind::Exact,
        witness_x: Some(x),
        witness_z: Some(trace.postactivations[depth - 1].clone()),
        witness_hidden: trace.postactivations[..depth - 1].to_vec(),
    })
}

/// `x ↦ map·x + shift`, the input-to-activation map under a fixed pattern.
struct Affine {
    map: Matrix,
    shift: Vec<f64>,
}

struct PatternSearch<'a> {
    net: &'a Network,
    region: &'a InputRegion,
    bounds: &'a PreactBounds,
    splits: &'a [NeuronSplit],
    c: &'a [f64],
}

impl PatternSearch<'_> {
    /// Per neuron: `Some(active)` if the sign is forced, `None` if both are possible.
    fn layer_choices(&self, k: usize) -> Vec<Option<bool>> {
        let lb = self.bounds.layer(k);
        (0..lb.len())
            .map(|i| {
                let forced = self
                    .splits
                    .iter()
                    .find(|s| s.layer == k && s.neuron == i)
                    .map(|s| s.active);
                forced.or(match lb.stability(i) {
                    Stability::StableActive => Some(true),
                    Stability::StableInactive => Some(false),
                    Stability::Unstable => None,
                })
            })
            .collect()
    }

    /// Applies the pattern selected by `code` to layer `k` and recurses.
    /// Returns the best `(value, x)` below this node, if any is feasible.
    fn descend(
        &self,
        k: usize,
        input: &Affine,
        rows: &[(Vec<f64>, Sense, f64)],
        choices: &[Option<bool>],
        code: usize,
    ) -> Result<Option<(f64, Vec<f64>)>> {
        let layer = &self.net.layers()[k];
        let n = self.net.input_dim();
        let pre_map = layer.weight().matmul(&input.map);
        let pre_shift: Vec<f64> = layer
            .weight()
            .matvec(&input.shift)
            .iter()
            .zip(layer.bias())
            .map(|(a, b)| a + b)
            .collect();
        let mut rows = rows.to_vec();
        let mut map = Matrix::zeros(layer.output_dim(), n);
        let mut shift = vec![0.0; layer.output_dim()];
        let mut bit = 0;
        for (i, choice) in choices.iter().enumerate() {
            let active = match choice {
                Some(a) => {
                    if self.splits.iter().any(|s| s.layer == k && s.neuron == i) {
                        let sense = if *a { Sense::Ge } else { Sense::Le };
                        rows.push((pre_map.row(i).to_vec(), sense, -pre_shift[i]));
                    }
                    *a
                }
                None => {
                    let a = code >> bit & 1 == 1;
                    bit += 1;
                    let sense = if a { Sense::Ge } else { Sense::Le };
                    rows.push((pre_map.row(i).to_vec(), sense, -pre_shift[i]));
                    a
                }
            };
            if active {
                map.row_mut(i).copy_from_slice(pre_map.row(i));
                shift[i] = pre_shift[i];
            }
        }
        let here = Affine { map, shift };
        let last = k + 1 == self.net.num_layers();
        let lp = self.pattern_lp(&rows, if last { Some(&here) } else { None });
        match solve_lp(&lp)? {
            LpResult::Infeasible => return Ok(None),
            LpResult::Unbounded => return Err(CertError::LpStatus("unbounded pattern LP")),
            LpResult::Optimal { value, point } if last => {
                let constant = dot(self.c, &here.shift);
                return Ok(Some((value + constant, point)));
            }
            LpResult::Optimal { .. } => {}
        }
        let next = self.layer_choices(k + 1);
        let combos = 1usize << next.iter().filter(|o| o.is_none()).count();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for code in 0..combos {
            if let Some(cand) = self.descend(k + 1, &here, &rows, &next, code)? {
                if best.as_ref().map_or(true, |b| cand.0 > b.0) {
                    best = Some(cand);
                }
            }
        }
        Ok(best)
    }

    fn pattern_lp(&self, rows: &[(Vec<f64>, Sense, f64)], output: Option<&Affine>) -> LpProblem {
        let n = self.net.input_dim();
        let mut lp = LpProblem::new(n);
        self.region.encode(&mut lp, 0);
        for (row, sense, rhs) in rows {
            lp.add_constraint(row.clone(), *sense, *rhs);
        }
        if let Some(out) = output {
            let obj = (0..n)
                .map(|j| (0..out.map.rows()).map(|i| self.c[i] * out.map[(i, j)]).sum())
                .collect();
            lp.set_objective(obj);
        }
        lp
    }
}

/// Worst-case relaxation gap and the quantities used to diagnose it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapDiagnostics {
    pub worst_case_bound: f64,
    /// `relu(c_i)·u_i l_i/(u_i − l_i)` for unstable neurons, zero otherwise.
    pub per_neuron_terms: Vec<f64>,
    pub max_diameter: Option<f64>,
    pub empirical_lipschitz: Option<f64>,
}

/// Per-neuron score `relu(c_i)·u_i l_i/(u_i − l_i)`; zero for stable neurons.
pub fn neuron_gap_term(c: f64, l: f64, u: f64) -> f64 {
    if Stability::of(l, u) == Stability::Unstable {
        relu(c) * u * l / (u - l)
    } else {
        0.0
    }
}

/// Worst-case gap `−Σ relu(c_i)·(αu_i)(αl_i)/(αu_i − αl_i)` for one-layer
/// networks whose bounds are scaled inward by `alpha`.
pub fn worst_case_gap_bound(c: &[f64], l: &[f64], u: &[f64], alpha: f64) -> Result<GapDiagnostics> {
    if c.len() != l.len() || l.len() != u.len() {
        return Err(CertError::Dimension("c, l and u must have equal length".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(CertError::InvalidArgument(format!("alpha {alpha} outside (0, 1]")));
    }
    if l.iter().zip(u).any(|(a, b)| a > b) {
        return Err(CertError::InvalidArgument("lower bound exceeds upper bound".into()));
    }
    let terms: Vec<f64> = c
        .iter()
        .zip(l.iter().zip(u))
        .map(|(&ci, (&li, &ui))| neuron_gap_term(ci, alpha * li, alpha * ui))
        .collect();
    Ok(GapDiagnostics {
        worst_case_bound: -terms.iter().sum::<f64>(),
        per_neuron_terms: terms,
        max_diameter: None,
        empirical_lipschitz: None,
    })
}

/// `sup { cᵀz : (x, z) ∈ N }` with the input pinned to `x`.
pub fn relaxed_value_at(
    net: &Network,
    region: &InputRegion,
    bounds: &PreactBounds,
    c: &[f64],
    x: &[f64],
) -> Result<f64> {
    let (mut lp, _) = build_relaxed_lp_with_splits(net, region, bounds, &[], c)?;
    for (j, &v) in x.iter().enumerate() {
        lp.set_bounds(j, v, v);
    }
    match solve_lp(&lp)? {
        LpResult::Optimal { value, .. } => Ok(value),
        LpResult::Infeasible => Err(CertError::EmptyRegion),
        LpResult::Unbounded => Err(CertError::LpStatus("unbounded relaxation")),
    }
}

/// Full diagnostics on `region`: the worst-case bound from LP-tight final
/// layer bounds, the region diameter, and a sampled Lipschitz estimate of the
/// pinned relaxation over `pairs` random point pairs.
pub fn gap_diagnostics(
    net: &Network,
    region: &InputRegion,
    c: &[f64],
    pairs: usize,
    seed: u64,
) -> Result<GapDiagnostics> {
    let bounds = preact_bounds_with_splits(net, region, &[], BoundsMode::LpTight)?;
    let last = bounds.last();
    let mut diag = worst_case_gap_bound(c, &last.lower, &last.upper, 1.0)?;
    diag.max_diameter = Some(region.diameter());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lipschitz: f64 = 0.0;
    for _ in 0..pairs {
        let (Some(a), Some(b)) = (region.sample(&mut rng, 1000), region.sample(&mut rng, 1000))
        else {
            continue;
        };
        let dist = norm2(&a.iter().zip(&b).map(|(p, q)| p - q).collect::<Vec<_>>());
        if dist < 1e-12 {
            continue;
        }
        let fa = relaxed_value_at(net, region, &bounds, c, &a)?;
        let fb = relaxed_value_at(net, region, &bounds, c, &b)?;
        lipschitz = lipschitz.max((fa - fb).abs() / dist);
    }
    diag.empirical_lipschitz = Some(lipschitz);
    Ok(diag)
}

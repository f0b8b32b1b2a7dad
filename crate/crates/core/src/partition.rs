//! Partitioned certification.
//!
//! A partition splits the input region into parts whose union is the region;
//! the certified bound is the maximum of the relaxed bounds over the parts.
//! Parts are cut along the hyperplanes `w_iᵀx + b_i = 0` of final-layer
//! neurons, or along a uniform grid for pure boxes. Neighbouring parts share
//! their boundary hyperplane since the LPs need closed sets.
//!
//! For one-layer networks neuron hyperplanes are ordinary input half-spaces
//! and are stored as region cuts. For deeper networks they are kept as
//! [`NeuronSplit`]s on the final layer and constrain the input only through
//! the relaxation of the hidden layers.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{preact_bounds, BoundsMode, LayerBounds, PreactBounds, Stability};
use crate::error::{CertError, Result};
use crate::linalg::relu;
use crate::lp::{solve_lp, LpProblem, LpStatus};
use crate::network::Network;
use crate::region::{CutSense, InputRegion};
use crate::relaxation::{certify_lp_with_splits, neuron_gap_term, Certificate, NeuronSplit};

/// Largest number of final-layer rows the motivating partition will enumerate.
pub const MOTIVATING_ROW_BUDGET: usize = 20;

/// Solution-guided gaps at or below this count as no gain.
const GUIDED_GAP_TOL: f64 = 1e-9;

/// Certification strategy as written on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Strategy {
    Exact,
    None,
    OptimalRow,
    Rows(usize),
    Row(usize),
    Motivating,
    Grid(usize),
    Recursive(usize),
    Heuristic,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Exact => write!(f, "exact"),
            Strategy::None => write!(f, "none"),
            Strategy::OptimalRow => write!(f, "optimal-row"),
            Strategy::Rows(k) => write!(f, "rows:{k}"),
            Strategy::Row(i) => write!(f, "row:{i}"),
            Strategy::Motivating => write!(f, "motivating"),
            Strategy::Grid(n) => write!(f, "grid:{n}"),
            Strategy::Recursive(d) => write!(f, "recursive:{d}"),
            Strategy::Heuristic => write!(f, "heuristic"),
        }
    }
}

impl FromStr for Strategy {
    type Err = CertError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            CertError::InvalidArgument(format!(
                "unknown strategy '{s}' (expected exact | none | optimal-row | rows:<k> | \
                 row:<i> | motivating | grid:<n> | recursive:<d> | heuristic)"
            ))
        };
        let positive = |v: &str| -> Result<usize> {
            match v.parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(bad()),
            }
        };
        Ok(match s.split_once(':') {
            None => match s {
                "exact" => Strategy::Exact,
                "none" => Strategy::None,
                "optimal-row" => Strategy::OptimalRow,
                "motivating" => Strategy::Motivating,
                "heuristic" => Strategy::Heuristic,
                _ => return Err(bad()),
            },
            Some(("rows", v)) => Strategy::Rows(positive(v)?),
            Some(("row", v)) => Strategy::Row(v.parse().map_err(|_| bad())?),
            Some(("grid", v)) => Strategy::Grid(positive(v)?),
            Some(("recursive", v)) => Strategy::Recursive(positive(v)?),
            Some(_) => return Err(bad()),
        })
    }
}

/// Parses a comma-separated strategy list.
pub fn parse_strategies(list: &str) -> Result<Vec<Strategy>> {
    list.split(',').map(|s| s.trim().parse()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "arg")]
pub enum Scheme {
    None,
    Row(usize),
    Rows(Vec<usize>),
    Motivating,
    Grid(usize),
    Recursive(usize),
    SolutionGuided,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionPlan {
    pub scheme: Scheme,
    pub chosen_rows: Vec<usize>,
    /// `relu(c_i)·u_i l_i/(u_i − l_i)` per final-layer row.
    pub rationale_scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "row")]
pub enum RowChoice {
    Row(usize),
    NoGain,
}

pub fn row_scores(c: &[f64], last: &LayerBounds) -> Vec<f64> {
    c.iter()
        .enumerate()
        .map(|(i, &ci)| neuron_gap_term(ci, last.lower[i], last.upper[i]))
        .collect()
}

/// Row minimizing the worst-case gap of the two-part partition, i.e. the
/// most negative score. Ties go to the lowest index.
pub fn select_optimal_row(c: &[f64], bounds: &PreactBounds) -> RowChoice {
    let scores = row_scores(c, bounds.last());
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s < 0.0 && best.map_or(true, |b| s < scores[b]) {
            best = Some(i);
        }
    }
    best.map_or(RowChoice::NoGain, RowChoice::Row)
}

/// Up to `n_p` rows with negative score, most negative first.
pub fn rank_rows(c: &[f64], bounds: &PreactBounds, n_p: usize) -> Vec<usize> {
    let scores = row_scores(c, bounds.last());
    let mut rows: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] < 0.0).collect();
    rows.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    rows.truncate(n_p);
    rows
}

/// All rows ordered by score with index tie-breaks, zero scores included.
pub fn rank_all_rows(c: &[f64], bounds: &PreactBounds) -> Vec<usize> {
    let scores = row_scores(c, bounds.last());
    let mut rows: Vec<usize> = (0..scores.len()).collect();
    rows.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    rows
}

/// Experimental: the row where the relaxed witness overshoots the true ReLU
/// the most, `argmax_k c_k (z*_k − relu(w_kᵀx* + b_k))`.
pub fn solution_guided_row(
    cert: &Certificate,
    net: &Network,
    bounds: &PreactBounds,
    c: &[f64],
) -> Result<RowChoice> {
    let (Some(x), Some(z)) = (&cert.witness_x, &cert.witness_z) else {
        return Err(CertError::InvalidArgument("certificate carries no witness".into()));
    };
    let input = cert.witness_hidden.last().unwrap_or(x);
    let zhat = net.last_layer().preactivation(input);
    let last = bounds.last();
    if c.len() != z.len() {
        return Err(CertError::Dimension(format!(
            "objective has length {}, final layer has {}",
            c.len(),
            z.len()
        )));
    }
    let weighted: Vec<f64> = (0..z.len())
        .map(|k| match last.stability(k) {
            Stability::Unstable => c[k] * (z[k] - relu(zhat[k])),
            _ => 0.0,
        })
        .collect();
    let max = weighted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > GUIDED_GAP_TOL) {
        return Ok(RowChoice::NoGain);
    }
    // near-ties resolve to the lowest index
    let i = weighted
        .iter()
        .position(|&g| g >= max - 1e-12 * (1.0 + max.abs()))
        .unwrap();
    Ok(RowChoice::Row(i))
}

/// Splits a one-layer network's region along row `i`:
/// `w_iᵀx + b_i ≥ 0` and `w_iᵀx + b_i ≤ 0`.
pub fn split_by_row(
    region: &InputRegion,
    net: &Network,
    i: usize,
) -> Result<(InputRegion, InputRegion)> {
    if net.num_layers() != 1 {
        return Err(CertError::InvalidArgument(
            "input-space row splits need a one-layer network".into(),
        ));
    }
    let layer = net.last_layer();
    if i >= layer.output_dim() {
        return Err(CertError::InvalidArgument(format!(
            "row {i} out of range for {} outputs",
            layer.output_dim()
        )));
    }
    let normal = layer.weight().row(i).to_vec();
    let offset = -layer.bias()[i];
    Ok((
        region.add_halfspace(normal.clone(), offset, CutSense::Ge)?,
        region.add_halfspace(normal, offset, CutSense::Le)?,
    ))
}

/// The sign-cell partition of a one-layer network: one part per sign pattern
/// of `Wx + b`, with empty cells dropped.
pub fn motivating_partition(net: &Network, region: &InputRegion) -> Result<Vec<InputRegion>> {
    if net.num_layers() != 1 {
        return Err(CertError::InvalidArgument(
            "the motivating partition needs a one-layer network".into(),
        ));
    }
    let rows: Vec<usize> = (0..net.output_dim()).collect();
    sign_cells(net, region, &rows)
}

/// Sign cells over the given rows of a one-layer network, empty cells dropped.
fn sign_cells(net: &Network, region: &InputRegion, rows: &[usize]) -> Result<Vec<InputRegion>> {
    if rows.len() > MOTIVATING_ROW_BUDGET {
        return Err(CertError::Budget(format!(
            "{} rows exceed the sign-cell budget of {MOTIVATING_ROW_BUDGET}",
            rows.len()
        )));
    }
    let mut cells = vec![region.clone()];
    for &i in rows {
        let mut next = Vec::with_capacity(cells.len() * 2);
        for cell in &cells {
            let (pos, neg) = split_by_row(cell, net, i)?;
            for part in [pos, neg] {
                if is_feasible(&part)? {
                    next.push(part);
                }
            }
        }
        cells = next;
    }
    Ok(cells)
}

fn is_feasible(region: &InputRegion) -> Result<bool> {
    let mut lp = LpProblem::new(region.dim());
    region.encode(&mut lp, 0);
    Ok(solve_lp(&lp)?.status() == LpStatus::Optimal)
}

/// `n` equal slices per axis; `n^dim` sub-boxes.
pub fn grid_partition(region: &InputRegion, n: usize) -> Result<Vec<InputRegion>> {
    if !region.is_pure_box() {
        return Err(CertError::InvalidArgument("grid partition needs a pure box".into()));
    }
    if n == 0 {
        return Err(CertError::InvalidArgument("grid resolution must be positive".into()));
    }
    let dim = region.dim();
    let edge = |j: usize, k: usize| {
        let (l, u) = (region.lower()[j], region.upper()[j]);
        if k == n {
            u
        } else {
            l + (u - l) * k as f64 / n as f64
        }
    };
    let total = n.checked_pow(dim as u32).ok_or_else(|| {
        CertError::Budget(format!("grid {n}^{dim} overflows"))
    })?;
    (0..total)
        .map(|mut code| {
            let mut lo = Vec::with_capacity(dim);
            let mut hi = Vec::with_capacity(dim);
            for j in 0..dim {
                let k = code % n;
                code /= n;
                lo.push(edge(j, k));
                hi.push(edge(j, k + 1));
            }
            InputRegion::new(lo, hi)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum PartOutcome {
    Certified {
        certificate: Certificate,
        final_bounds: LayerBounds,
    },
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartRecord {
    pub region: InputRegion,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub splits: Vec<NeuronSplit>,
    pub outcome: PartOutcome,
    pub parent: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<usize>,
}

impl PartRecord {
    pub fn bound(&self) -> Option<f64> {
        match &self.outcome {
            PartOutcome::Certified { certificate, .. } => Some(certificate.bound),
            PartOutcome::Empty => None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionedCertificate {
    pub plan: PartitionPlan,
    /// Every part ever certified; refined parts keep links to their children.
    pub parts: Vec<PartRecord>,
    pub overall_bound: f64,
    pub safe: bool,
    /// Overall bound after each refinement level (a single entry when flat).
    pub levels: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stopped_early: Option<String>,
}

impl PartitionedCertificate {
    pub fn leaves(&self) -> impl Iterator<Item = &PartRecord> {
        self.parts.iter().filter(|p| p.is_leaf())
    }

    pub fn num_nonempty_leaves(&self) -> usize {
        self.leaves().filter(|p| p.bound().is_some()).count()
    }
}

/// Unit of work: a region plus final-layer sign splits for deep networks.
#[derive(Debug, Clone)]
struct Domain {
    region: InputRegion,
    splits: Vec<NeuronSplit>,
}

impl Domain {
    fn split(&self, net: &Network, row: usize) -> Result<(Domain, Domain)> {
        if net.num_layers() == 1 {
            let (a, b) = split_by_row(&self.region, net, row)?;
            return Ok((
                Domain {
                    region: a,
                    splits: self.splits.clone(),
                },
                Domain {
                    region: b,
                    splits: self.splits.clone(),
                },
            ));
        }
        if row >= net.output_dim() {
            return Err(CertError::InvalidArgument(format!("row {row} out of range")));
        }
        let layer = net.num_layers() - 1;
        let child = |active| {
            let mut splits = self.splits.clone();
            splits.push(NeuronSplit {
                layer,
                neuron: row,
                active,
            });
            Domain {
                region: self.region.clone(),
                splits,
            }
        };
        Ok((child(true), child(false)))
    }
}

fn certify_domain(net: &Network, dom: &Domain, c: &[f64], parent: Option<usize>) -> Result<PartRecord> {
    let outcome = match certify_lp_with_splits(net, &dom.region, &dom.splits, c, BoundsMode::LpTight) {
        Ok((certificate, bounds)) => PartOutcome::Certified {
            certificate,
            final_bounds: bounds.last().clone(),
        },
        Err(CertError::EmptyRegion) => PartOutcome::Empty,
        Err(e) => return Err(e),
    };
    Ok(PartRecord {
        region: dom.region.clone(),
        splits: dom.splits.clone(),
        outcome,
        parent,
        children: Vec::new(),
    })
}

impl PartitionPlan {
    /// Resolves a strategy against the LP-tight bounds of `region`.
    /// [`Strategy::Exact`] has no partition plan.
    pub fn from_strategy(
        strategy: Strategy,
        net: &Network,
        region: &InputRegion,
        c: &[f64],
    ) -> Result<Self> {
        let bounds = preact_bounds(net, region, BoundsMode::LpTight)?;
        let rationale_scores = row_scores(c, bounds.last());
        let (scheme, chosen_rows) = match strategy {
            Strategy::Exact => {
                return Err(CertError::InvalidArgument(
                    "exact evaluation is not a partition scheme".into(),
                ))
            }
            Strategy::None => (Scheme::None, vec![]),
            Strategy::OptimalRow => match select_optimal_row(c, &bounds) {
                RowChoice::Row(i) => (Scheme::Row(i), vec![i]),
                RowChoice::NoGain => (Scheme::None, vec![]),
            },
            Strategy::Row(i) => (Scheme::Row(i), vec![i]),
            Strategy::Rows(k) => {
                let rows = rank_rows(c, &bounds, k);
                (Scheme::Rows(rows.clone()), rows)
            }
            Strategy::Motivating => (Scheme::Motivating, (0..net.output_dim()).collect()),
            Strategy::Grid(n) => (Scheme::Grid(n), vec![]),
            Strategy::Recursive(d) => (Scheme::Recursive(d), vec![]),
            Strategy::Heuristic => {
                let (cert, _) = certify_lp_with_splits(net, region, &[], c, BoundsMode::LpTight)?;
                match solution_guided_row(&cert, net, &bounds, c)? {
                    RowChoice::Row(i) => (Scheme::SolutionGuided, vec![i]),
                    RowChoice::NoGain => (Scheme::SolutionGuided, vec![]),
                }
            }
        };
        Ok(Self {
            scheme,
            chosen_rows,
            rationale_scores,
        })
    }

    pub fn none(net: &Network) -> Self {
        Self {
            scheme: Scheme::None,
            chosen_rows: vec![],
            rationale_scores: vec![0.0; net.output_dim()],
        }
    }
}

/// Certifies every part of the plan's partition and takes the maximum.
pub fn certify_partitioned(
    net: &Network,
    region: &InputRegion,
    c: &[f64],
    plan: &PartitionPlan,
) -> Result<PartitionedCertificate> {
    if let Scheme::Recursive(depth) = plan.scheme {
        let mut out = refine_recursive(net, region, c, depth)?;
        out.plan = plan.clone();
        return Ok(out);
    }
    let root = Domain {
        region: region.clone(),
        splits: vec![],
    };
    let domains: Vec<Domain> = match &plan.scheme {
        Scheme::None => vec![root],
        Scheme::Row(i) => {
            let (a, b) = root.split(net, *i)?;
            vec![a, b]
        }
        Scheme::SolutionGuided => match plan.chosen_rows.first() {
            Some(&i) => {
                let (a, b) = root.split(net, i)?;
                vec![a, b]
            }
            None => vec![root],
        },
        Scheme::Rows(rows) => {
            if net.num_layers() == 1 {
                sign_cells(net, region, rows)?
                    .into_iter()
                    .map(|r| Domain {
                        region: r,
                        splits: vec![],
                    })
                    .collect()
            } else {
                let mut doms = vec![root];
                for &i in rows {
                    let mut next = Vec::with_capacity(doms.len() * 2);
                    for d in &doms {
                        let (a, b) = d.split(net, i)?;
                        next.push(a);
                        next.push(b);
                    }
                    doms = next;
                }
                doms
            }
        }
        Scheme::Motivating => motivating_partition(net, region)?
            .into_iter()
            .map(|r| Domain {
                region: r,
                splits: vec![],
            })
            .collect(),
        Scheme::Grid(n) => grid_partition(region, *n)?
            .into_iter()
            .map(|r| Domain {
                region: r,
                splits: vec![],
            })
            .collect(),
        Scheme::Recursive(_) => unreachable!(),
    };
    let parts = domains
        .par_iter()
        .map(|d| certify_domain(net, d, c, None))
        .collect::<Result<Vec<_>>>()?;
    let overall = max_leaf_bound(&parts)?;
    Ok(PartitionedCertificate {
        plan: plan.clone(),
        parts,
        overall_bound: overall,
        safe: overall <= 0.0,
        levels: vec![overall],
        stopped_early: None,
    })
}

fn max_leaf_bound(parts: &[PartRecord]) -> Result<f64> {
    parts
        .iter()
        .filter(|p| p.is_leaf())
        .filter_map(PartRecord::bound)
        .reduce(f64::max)
        .ok_or(CertError::EmptyRegion)
}

/// Repeatedly splits the part with the largest bound along its optimal row,
/// with scores recomputed from that part's own bounds. Stops after `depth`
/// splits or as soon as the worst part has no row left to gain from.
pub fn refine_recursive(
    net: &Network,
    region: &InputRegion,
    c: &[f64],
    depth: usize,
) -> Result<PartitionedCertificate> {
    if depth == 0 {
        return Err(CertError::InvalidArgument("refinement depth must be positive".into()));
    }
    let root = Domain {
        region: region.clone(),
        splits: vec![],
    };
    let mut parts = vec![certify_domain(net, &root, c, None)?];
    let mut levels = vec![max_leaf_bound(&parts)?];
    let mut stopped_early = None;
    let mut chosen_rows = Vec::new();
    let mut first_scores = None;
    for level in 1..=depth {
        let worst = worst_leaf(&parts).expect("a nonempty leaf exists");
        let PartOutcome::Certified { final_bounds, .. } = &parts[worst].outcome else {
            unreachable!()
        };
        let bounds = PreactBounds::new(vec![final_bounds.clone()]);
        if first_scores.is_none() {
            first_scores = Some(row_scores(c, final_bounds));
        }
        let row = match select_optimal_row(c, &bounds) {
            RowChoice::Row(i) => i,
            RowChoice::NoGain => {
                stopped_early = Some(format!("no gain at level {level}"));
                break;
            }
        };
        chosen_rows.push(row);
        let dom = Domain {
            region: parts[worst].region.clone(),
            splits: parts[worst].splits.clone(),
        };
        let (a, b) = dom.split(net, row)?;
        let children = [a, b]
            .par_iter()
            .map(|d| certify_domain(net, d, c, Some(worst)))
            .collect::<Result<Vec<_>>>()?;
        for child in children {
            let idx = parts.len();
            parts[worst].children.push(idx);
            parts.push(child);
        }
        levels.push(max_leaf_bound(&parts)?);
    }
    let overall = *levels.last().unwrap();
    Ok(PartitionedCertificate {
        plan: PartitionPlan {
            scheme: Scheme::Recursive(depth),
            chosen_rows,
            rationale_scores: first_scores.unwrap_or_else(|| vec![0.0; net.output_dim()]),
        },
        parts,
        overall_bound: overall,
        safe: overall <= 0.0,
        levels,
        stopped_early,
    })
}

fn worst_leaf(parts: &[PartRecord]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (idx, p) in parts.iter().enumerate().filter(|(_, p)| p.is_leaf()) {
        if let Some(b) = p.bound() {
            if best.map_or(true, |(_, v)| b > v) {
                best = Some((idx, b));
            }
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::LayerBounds;
    use crate::relaxation::{certify_lp, CertKind};

    fn toy() -> Network {
        Network::from_parts(vec![(vec![vec![1.0, 1.0], vec![1.0, -1.0]], vec![0.0, 0.0])]).unwrap()
    }

    fn unit_box() -> InputRegion {
        InputRegion::box_from_center(&[0.0, 0.0], 1.0).unwrap()
    }

    fn last_only(l: Vec<f64>, u: Vec<f64>) -> PreactBounds {
        PreactBounds::new(vec![LayerBounds { lower: l, upper: u }])
    }

    #[test]
    fn strategy_grammar() {
        for s in ["exact", "none", "optimal-row", "rows:2", "row:0", "motivating", "grid:4", "recursive:3", "heuristic"] {
            let parsed: Strategy = s.parse().unwrap();
            assert_eq!(parsed.to_string(), s);
        }
        for s in ["bogus", "grid:0", "rows:x", "recursive:", "grid"] {
            assert!(s.parse::<Strategy>().is_err(), "{s}");
        }
        assert_eq!(parse_strategies("none, motivating").unwrap().len(), 2);
    }

    #[test]
    fn optimal_row_examples() {
        let b = last_only(vec![-2.0, -1.0], vec![2.0, 1.0]);
        assert_eq!(select_optimal_row(&[1.0, 0.5], &b), RowChoice::Row(0));
        assert_eq!(row_scores(&[1.0, 0.5], b.last()), vec![-1.0, -0.25]);
        let b = last_only(vec![-2.0, -2.0], vec![2.0, 2.0]);
        assert_eq!(select_optimal_row(&[1.0, 1.0], &b), RowChoice::Row(0));
        assert_eq!(select_optimal_row(&[-1.0, -1.0], &b), RowChoice::NoGain);
    }

    #[test]
    fn rank_rows_examples() {
        let b = last_only(vec![-2.0, -1.0, -1.0], vec![2.0, 1.0, 1.0]);
        let c = [1.0, 0.5, -3.0];
        assert_eq!(rank_rows(&c, &b, 2), vec![0, 1]);
        assert_eq!(rank_rows(&c, &b, 5), vec![0, 1]);
        assert!(rank_rows(&[-1.0, 0.0, -1.0], &b, 3).is_empty());
    }

    #[test]
    fn split_by_row_cuts() {
        let (a, b) = split_by_row(&unit_box(), &toy(), 0).unwrap();
        assert_eq!(a.cuts()[0].normal, vec![1.0, 1.0]);
        assert_eq!(a.cuts()[0].sense, CutSense::Ge);
        assert_eq!(b.cuts()[0].sense, CutSense::Le);
        assert!(split_by_row(&unit_box(), &toy(), 2).is_err());
    }

    #[test]
    fn stable_row_split_leaves_one_empty_part() {
        let net = Network::from_parts(vec![(vec![vec![1.0, 0.0]], vec![5.0])]).unwrap();
        let (a, b) = split_by_row(&unit_box(), &net, 0).unwrap();
        assert!(is_feasible(&a).unwrap());
        assert!(!is_feasible(&b).unwrap());
    }

    #[test]
    fn motivating_cells() {
        assert_eq!(motivating_partition(&toy(), &unit_box()).unwrap().len(), 4);
        let net = Network::from_parts(vec![(vec![vec![1.0, 1.0], vec![0.0, 1.0]], vec![0.0, 3.0])])
            .unwrap();
        assert_eq!(motivating_partition(&net, &unit_box()).unwrap().len(), 2);
    }

    #[test]
    fn grid_examples() {
        let parts = grid_partition(&unit_box(), 2).unwrap();
        assert_eq!(parts.len(), 4);
        for p in &parts {
            assert!((p.diameter() - 2f64.sqrt()).abs() < 1e-15);
        }
        let one = grid_partition(&unit_box(), 1).unwrap();
        assert_eq!(one, vec![unit_box()]);
        let cut = unit_box().add_halfspace(vec![1.0, 0.0], 0.0, CutSense::Ge).unwrap();
        assert!(grid_partition(&cut, 2).is_err());
    }

    #[test]
    fn worked_instance_schemes() {
        let c = [1.0, 1.0];
        let run = |s| {
            let plan = PartitionPlan::from_strategy(s, &toy(), &unit_box(), &c).unwrap();
            certify_partitioned(&toy(), &unit_box(), &c, &plan).unwrap().overall_bound
        };
        assert!((run(Strategy::None) - 3.0).abs() < 1e-9);
        assert!((run(Strategy::Motivating) - 2.0).abs() < 1e-9);
        assert!(run(Strategy::OptimalRow) <= 3.0 + 1e-9);
    }

    #[test]
    fn guided_row_examples() {
        let cert = certify_lp(&toy(), &unit_box(), &[1.0, 1.0], BoundsMode::LpTight).unwrap();
        let bounds = preact_bounds(&toy(), &unit_box(), BoundsMode::LpTight).unwrap();
        let fake = Certificate {
            bound: 3.0,
            kind: CertKind::LpRelaxed,
            witness_x: Some(vec![1.0, 0.0]),
            witness_z: Some(vec![1.5, 1.5]),
            witness_hidden: vec![],
        };
        assert_eq!(solution_guided_row(&fake, &toy(), &bounds, &[1.0, 1.0]).unwrap(), RowChoice::Row(0));
        let exact = Certificate {
            witness_z: Some(vec![1.0, 1.0]),
            ..fake.clone()
        };
        assert_eq!(solution_guided_row(&exact, &toy(), &bounds, &[1.0, 1.0]).unwrap(), RowChoice::NoGain);
        let bare = Certificate {
            witness_x: None,
            ..fake
        };
        assert!(solution_guided_row(&bare, &toy(), &bounds, &[1.0, 1.0]).is_err());
        assert!(matches!(
            solution_guided_row(&cert, &toy(), &bounds, &[1.0, 1.0]).unwrap(),
            RowChoice::Row(_) | RowChoice::NoGain
        ));
    }

    #[test]
    fn recursive_depth_one_matches_optimal_row() {
        let c = [1.0, 1.0];
        let rec = refine_recursive(&toy(), &unit_box(), &c, 1).unwrap();
        let plan = PartitionPlan::from_strategy(Strategy::OptimalRow, &toy(), &unit_box(), &c).unwrap();
        let flat = certify_partitioned(&toy(), &unit_box(), &c, &plan).unwrap();
        assert!((rec.overall_bound - flat.overall_bound).abs() < 1e-12);
        assert_eq!(rec.levels.len(), 2);
        assert_eq!(rec.parts[0].children, vec![1, 2]);
    }

    #[test]
    fn recursive_stops_without_gain() {
        let net = Network::from_parts(vec![(vec![vec![1.0]], vec![0.0])]).unwrap();
        let region = InputRegion::box_from_center(&[0.0], 1.0).unwrap();
        let rec = refine_recursive(&net, &region, &[-1.0], 3).unwrap();
        assert!(rec.stopped_early.is_some());
        assert_eq!(rec.levels, vec![rec.overall_bound]);
    }
}

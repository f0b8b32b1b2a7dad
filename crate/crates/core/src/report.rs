//! Certification runs over strategy lists and the Iris comparison.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{preact_bounds, BoundsMode};
use crate::error::{CertError, Result};
use crate::iris::{argmax, make_safety_specs, Dataset};
use crate::lp::{FEAS_TOL, PIVOT_TOL};
use crate::network::Network;
use crate::partition::{
    certify_partitioned, grid_partition, rank_all_rows, row_scores, select_optimal_row,
    PartitionPlan, RowChoice, Scheme, Strategy,
};
use crate::region::InputRegion;
use crate::relaxation::{exact_value, CertKind, SafetySpec};
use crate::sdp::{build_sdp, solve_sdp, SdpSettings, SdpStatus};

/// Slack allowed when checking the bound ordering between strategies.
pub const ORDERING_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Lp,
    Sdp,
}

impl FromStr for Solver {
    type Err = CertError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lp" => Ok(Solver::Lp),
            "sdp" => Ok(Solver::Sdp),
            _ => Err(CertError::InvalidArgument(format!("unknown solver '{s}' (lp | sdp)"))),
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Solver::Lp => "lp",
            Solver::Sdp => "sdp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertifyOptions {
    pub solver: Solver,
    pub sdp: SdpSettings,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            solver: Solver::Lp,
            sdp: SdpSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tolerances {
    pub lp_pivot: f64,
    pub lp_feasibility: f64,
    pub sdp_eps: f64,
    pub sdp_max_iters: usize,
    pub ordering: f64,
}

impl Tolerances {
    fn new(sdp: &SdpSettings) -> Self {
        Self {
            lp_pivot: PIVOT_TOL,
            lp_feasibility: FEAS_TOL,
            sdp_eps: sdp.eps,
            sdp_max_iters: sdp.max_iters,
            ordering: ORDERING_TOL,
        }
    }
}

/// Result of one strategy on one safety row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowOutcome {
    /// Certified value of `cᵀf(x) − d`.
    pub bound: f64,
    pub parts: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub chosen_rows: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sdp_status: Option<SdpStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyOutcome {
    pub strategy: String,
    pub kind: CertKind,
    /// Largest row bound.
    pub bound: f64,
    pub safe: bool,
    pub rows: Vec<RowOutcome>,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertifyRecord {
    pub index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nominal: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    pub region: InputRegion,
    pub outcomes: Vec<StrategyOutcome>,
    pub safe: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportMeta {
    pub network_hash: String,
    pub strategies: Vec<String>,
    pub solver: Solver,
    pub tolerances: Tolerances,
    pub version: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub meta: ReportMeta,
    pub records: Vec<CertifyRecord>,
    pub all_safe: bool,
}

impl RunReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Copy with wall-time fields zeroed, for reproducibility comparisons.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        for rec in &mut r.records {
            for o in &mut rec.outcomes {
                o.wall_time_ms = 0.0;
            }
        }
        r
    }
}

/// Runs one strategy over every row of the safety spec.
pub fn certify_strategy(
    net: &Network,
    region: &InputRegion,
    safety: &SafetySpec,
    strategy: Strategy,
    opts: &CertifyOptions,
) -> Result<StrategyOutcome> {
    if safety.output_dim() != net.output_dim() {
        return Err(CertError::Dimension(format!(
            "safety spec acts on {} outputs, network has {}",
            safety.output_dim(),
            net.output_dim()
        )));
    }
    let start = Instant::now();
    let kind = match (strategy, opts.solver) {
        (Strategy::Exact, _) => CertKind::Exact,
        (_, Solver::Lp) => CertKind::LpRelaxed,
        (_, Solver::Sdp) => CertKind::SdpRelaxed,
    };
    let rows = (0..safety.num_rows())
        .map(|r| {
            let (c, d) = safety.row(r);
            let mut out = certify_row(net, region, c, strategy, opts)?;
            out.bound -= d;
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let bound = rows.iter().map(|r| r.bound).fold(f64::NEG_INFINITY, f64::max);
    let converged = rows.iter().all(|r| r.sdp_status != Some(SdpStatus::MaxIters));
    Ok(StrategyOutcome {
        strategy: strategy.to_string(),
        kind,
        bound,
        safe: bound <= 0.0 && converged,
        rows,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

fn certify_row(
    net: &Network,
    region: &InputRegion,
    c: &[f64],
    strategy: Strategy,
    opts: &CertifyOptions,
) -> Result<RowOutcome> {
    if strategy == Strategy::Exact {
        let cert = exact_value(net, region, c)?;
        return Ok(RowOutcome {
            bound: cert.bound,
            parts: 1,
            chosen_rows: vec![],
            sdp_status: None,
            note: None,
        });
    }
    match opts.solver {
        Solver::Lp => {
            let plan = PartitionPlan::from_strategy(strategy, net, region, c)?;
            let cert = certify_partitioned(net, region, c, &plan)?;
            Ok(RowOutcome {
                bound: cert.overall_bound,
                parts: cert.num_nonempty_leaves(),
                chosen_rows: cert.plan.chosen_rows.clone(),
                sdp_status: None,
                note: cert.stopped_early.clone(),
            })
        }
        Solver::Sdp => {
            let boxes = match strategy {
                Strategy::None => vec![region.clone()],
                Strategy::Grid(n) => grid_partition(region, n)?,
                other => {
                    return Err(CertError::InvalidArgument(format!(
                        "strategy '{other}' is not available with the sdp solver (none | grid:<n> | exact)"
                    )))
                }
            };
            let results = boxes
                .par_iter()
                .map(|b| solve_sdp(&build_sdp(net, b, c)?, &opts.sdp))
                .collect::<Result<Vec<_>>>()?;
            // the first-order optimum is accurate to eps; report it with that margin
            let bound = results
                .iter()
                .map(|r| r.objective + r.eps)
                .fold(f64::NEG_INFINITY, f64::max);
            let status = if results.iter().all(|r| r.status == SdpStatus::Converged) {
                SdpStatus::Converged
            } else {
                SdpStatus::MaxIters
            };
            Ok(RowOutcome {
                bound,
                parts: boxes.len(),
                chosen_rows: vec![],
                sdp_status: Some(status),
                note: None,
            })
        }
    }
}

/// Certifies one region under every strategy.
pub fn run_certify(
    net: &Network,
    region: &InputRegion,
    safety: &SafetySpec,
    strategies: &[Strategy],
    opts: &CertifyOptions,
) -> Result<RunReport> {
    if strategies.is_empty() {
        return Err(CertError::InvalidArgument("no strategy given".into()));
    }
    let outcomes = strategies
        .iter()
        .map(|&s| certify_strategy(net, region, safety, s, opts))
        .collect::<Result<Vec<_>>>()?;
    let safe = outcomes.iter().all(|o| o.safe);
    Ok(RunReport {
        meta: ReportMeta {
            network_hash: net.content_hash(),
            strategies: strategies.iter().map(Strategy::to_string).collect(),
            solver: opts.solver,
            tolerances: Tolerances::new(&opts.sdp),
            version: env!("CARGO_PKG_VERSION"),
        },
        records: vec![CertifyRecord {
            index: 0,
            nominal: None,
            epsilon: None,
            label: None,
            region: region.clone(),
            outcomes,
            safe,
        }],
        all_safe: safe,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    /// Perturbation radii in standardized feature units.
    pub epsilons: Vec<f64>,
    pub num_points: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.05, 0.1, 0.2],
            num_points: 10,
        }
    }
}

impl ExperimentConfig {
    /// 0.05 to 0.8 in steps of 0.05.
    pub fn extended() -> Self {
        Self {
            epsilons: (1..=16).map(|k| k as f64 / 20.0).collect(),
            num_points: 10,
        }
    }
}

/// The comparison series for one objective (or the maximum over objectives).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Series {
    pub exact: f64,
    pub unpartitioned: f64,
    pub optimal: f64,
    pub suboptimal_1: Option<f64>,
    pub suboptimal_2: Option<f64>,
    /// Only for one-layer networks.
    pub motivating: Option<f64>,
    /// `exact` plus the two-part worst-case gap bound of the optimal row;
    /// one-layer networks only.
    pub worst_case_bound: Option<f64>,
}

impl Series {
    fn max(self, o: Series) -> Series {
        let opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => Some(x.max(y)),
            _ => None,
        };
        Series {
            exact: self.exact.max(o.exact),
            unpartitioned: self.unpartitioned.max(o.unpartitioned),
            optimal: self.optimal.max(o.optimal),
            suboptimal_1: opt(self.suboptimal_1, o.suboptimal_1),
            suboptimal_2: opt(self.suboptimal_2, o.suboptimal_2),
            motivating: opt(self.motivating, o.motivating),
            worst_case_bound: opt(self.worst_case_bound, o.worst_case_bound),
        }
    }

    /// Violations of `exact ≤ motivating ≤ optimal ≤ suboptimal ≤ unpartitioned`
    /// beyond `tol`.
    pub fn ordering_violations(&self, tol: f64) -> Vec<String> {
        let mut chain: Vec<(&str, f64)> = vec![("exact", self.exact)];
        if let Some(m) = self.motivating {
            chain.push(("motivating", m));
        }
        chain.push(("optimal", self.optimal));
        let mut out = Vec::new();
        let mut check = |a: (&str, f64), b: (&str, f64)| {
            if a.1 > b.1 + tol {
                out.push(format!("{} {} > {} {}", a.0, a.1, b.0, b.1));
            }
        };
        for w in chain.windows(2) {
            check(w[0], w[1]);
        }
        let last = *chain.last().unwrap();
        for (name, v) in [("suboptimal_1", self.suboptimal_1), ("suboptimal_2", self.suboptimal_2)] {
            if let Some(v) = v {
                check(last, (name, v));
                check((name, v), ("unpartitioned", self.unpartitioned));
            }
        }
        check(last, ("unpartitioned", self.unpartitioned));
        out
    }

    /// Violations of the orderings that hold by construction:
    /// `exact ≤ motivating ≤ every split ≤ unpartitioned`.
    pub fn guaranteed_violations(&self, tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        let floor = self.motivating.unwrap_or(self.exact);
        let splits = [
            Some(("optimal", self.optimal)),
            self.suboptimal_1.map(|v| ("suboptimal_1", v)),
            self.suboptimal_2.map(|v| ("suboptimal_2", v)),
        ];
        if let Some(m) = self.motivating {
            if self.exact > m + tol {
                out.push(format!("exact {} > motivating {m}", self.exact));
            }
        }
        for (name, v) in splits.into_iter().flatten() {
            if floor > v + tol {
                out.push(format!("floor {floor} > {name} {v}"));
            }
            if v > self.unpartitioned + tol {
                out.push(format!("{name} {v} > unpartitioned {}", self.unpartitioned));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpecSeries {
    pub adversarial_label: usize,
    pub c: Vec<f64>,
    /// Rows split by the optimal and the two suboptimal series.
    pub split_rows: Vec<usize>,
    pub optimal_has_gain: bool,
    pub series: Series,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IrisRecord {
    pub test_index: usize,
    pub label: usize,
    pub nominal: Vec<f64>,
    pub epsilon: f64,
    pub specs: Vec<SpecSeries>,
    /// Maximum over adversarial labels; robust iff a value is ≤ 0.
    pub overall: Series,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IrisReport {
    pub network_hash: String,
    pub num_layers: usize,
    pub config: ExperimentConfig,
    pub tolerances: Tolerances,
    pub records: Vec<IrisRecord>,
}

impl IrisReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.records.iter_mut().for_each(|rec| rec.wall_time_ms = 0.0);
        r
    }

    /// `(test index, ε)` pairs the optimal row certifies while the
    /// unpartitioned relaxation does not.
    pub fn optimal_only_certificates(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter(|r| r.overall.optimal <= 0.0 && r.overall.unpartitioned > 0.0)
            .map(|r| (r.test_index, r.epsilon))
            .collect()
    }

    /// Plot table with one line per (point, ε).
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "test_index",
            "label",
            "epsilon",
            "exact",
            "unpartitioned",
            "optimal",
            "suboptimal_1",
            "suboptimal_2",
            "worst_case_bound",
            "motivating",
        ])
        .expect("in-memory csv");
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.records {
            let s = &r.overall;
            w.write_record([
                r.test_index.to_string(),
                r.label.to_string(),
                r.epsilon.to_string(),
                s.exact.to_string(),
                s.unpartitioned.to_string(),
                s.optimal.to_string(),
                opt(s.suboptimal_1),
                opt(s.suboptimal_2),
                opt(s.worst_case_bound),
                opt(s.motivating),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// Up to `n` correctly classified test samples, taken round-robin over the
/// classes (each class in test-split order) so every class is represented.
pub fn correctly_classified(net: &Network, data: &Dataset, n: usize) -> Result<Vec<usize>> {
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes()];
    for &i in &data.test {
        if argmax(&net.eval(data.sample(i))?) == data.labels[i] {
            per_class[data.labels[i]].push(i);
        }
    }
    let mut out = Vec::new();
    let longest = per_class.iter().map(Vec::len).max().unwrap_or(0);
    'outer: for k in 0..longest {
        for class in &per_class {
            if out.len() == n {
                break 'outer;
            }
            if let Some(&i) = class.get(k) {
                out.push(i);
            }
        }
    }
    Ok(out)
}

fn split_bound(net: &Network, region: &InputRegion, c: &[f64], row: usize) -> Result<f64> {
    let plan = PartitionPlan {
        scheme: Scheme::Row(row),
        chosen_rows: vec![row],
        rationale_scores: vec![],
    };
    Ok(certify_partitioned(net, region, c, &plan)?.overall_bound)
}

/// All comparison series for one objective over one region.
pub fn spec_series(net: &Network, region: &InputRegion, c: &[f64]) -> Result<(Series, Vec<usize>, bool)> {
    let one_layer = net.num_layers() == 1;
    let bounds = preact_bounds(net, region, BoundsMode::LpTight)?;
    let exact = exact_value(net, region, c)?.bound;
    let unpartitioned = certify_partitioned(net, region, c, &PartitionPlan::none(net))?.overall_bound;
    let order = rank_all_rows(c, &bounds);
    let choice = select_optimal_row(c, &bounds);
    let (optimal, star) = match choice {
        RowChoice::Row(i) => (split_bound(net, region, c, i)?, i),
        RowChoice::NoGain => (unpartitioned, order[0]),
    };
    let rest: Vec<usize> = order.iter().copied().filter(|&i| i != star).collect();
    let suboptimal_1 = rest.first().map(|&i| split_bound(net, region, c, i)).transpose()?;
    let suboptimal_2 = rest.get(1).map(|&i| split_bound(net, region, c, i)).transpose()?;
    let motivating = if one_layer {
        let plan = PartitionPlan {
            scheme: Scheme::Motivating,
            chosen_rows: (0..net.output_dim()).collect(),
            rationale_scores: vec![],
        };
        Some(certify_partitioned(net, region, c, &plan)?.overall_bound)
    } else {
        None
    };
    let worst_case_bound = one_layer.then(|| {
        let scores = row_scores(c, bounds.last());
        let gap: f64 = -scores
            .iter()
            .enumerate()
            .filter(|&(k, _)| matches!(choice, RowChoice::NoGain) || k != star)
            .map(|(_, s)| s)
            .sum::<f64>();
        exact + gap
    });
    let mut split_rows = vec![star];
    split_rows.extend(rest.iter().take(2));
    Ok((
        Series {
            exact,
            unpartitioned,
            optimal,
            suboptimal_1,
            suboptimal_2,
            motivating,
            worst_case_bound,
        },
        split_rows,
        matches!(choice, RowChoice::Row(_)),
    ))
}

/// Certification series for correctly classified test points over an ε sweep.
pub fn iris_experiment(net: &Network, data: &Dataset, cfg: &ExperimentConfig) -> Result<IrisReport> {
    if net.input_dim() != data.num_features() || net.output_dim() != data.num_classes() {
        return Err(CertError::Dimension("network does not match the dataset".into()));
    }
    if cfg.epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(CertError::InvalidArgument("epsilons must be positive".into()));
    }
    let points = correctly_classified(net, data, cfg.num_points)?;
    let jobs: Vec<(usize, f64)> = points
        .iter()
        .flat_map(|&p| cfg.epsilons.iter().map(move |&e| (p, e)))
        .collect();
    let mut records = jobs
        .par_iter()
        .map(|&(idx, eps)| -> Result<IrisRecord> {
            let start = Instant::now();
            let nominal = data.sample(idx).to_vec();
            let region = InputRegion::box_from_center(&nominal, eps)?;
            let label = data.labels[idx];
            let mut specs = Vec::new();
            let mut overall: Option<Series> = None;
            for (a, c) in make_safety_specs(net, label)? {
                let (series, split_rows, optimal_has_gain) = spec_series(net, &region, &c)?;
                overall = Some(overall.map_or(series, |o| o.max(series)));
                specs.push(SpecSeries {
                    adversarial_label: a,
                    c,
                    split_rows,
                    optimal_has_gain,
                    series,
                });
            }
            Ok(IrisRecord {
                test_index: idx,
                label,
                nominal,
                epsilon: eps,
                specs,
                overall: overall.expect("at least two classes"),
                wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| {
        a.test_index
            .cmp(&b.test_index)
            .then(a.epsilon.total_cmp(&b.epsilon))
    });
    Ok(IrisReport {
        network_hash: net.content_hash(),
        num_layers: net.num_layers(),
        config: cfg.clone(),
        tolerances: Tolerances::new(&SdpSettings::default()),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Network {
        Network::from_parts(vec![(vec![vec![1.0, 1.0], vec![1.0, -1.0]], vec![0.0, 0.0])]).unwrap()
    }

    fn unit_box() -> InputRegion {
        InputRegion::box_from_center(&[0.0, 0.0], 1.0).unwrap()
    }

    #[test]
    fn worked_instance_report() {
        let safety = SafetySpec::single(vec![1.0, 1.0]).unwrap();
        let strategies = [Strategy::Exact, Strategy::None, Strategy::Motivating, Strategy::OptimalRow];
        let rep = run_certify(&toy(), &unit_box(), &safety, &strategies, &CertifyOptions::default()).unwrap();
        let b: Vec<f64> = rep.records[0].outcomes.iter().map(|o| o.bound).collect();
        assert!((b[0] - 2.0).abs() < 1e-9);
        assert!((b[1] - 3.0).abs() < 1e-9);
        assert!((b[2] - 2.0).abs() < 1e-9);
        assert!(!rep.all_safe);
        let shifted = SafetySpec::new(vec![vec![1.0, 1.0]], vec![2.5]).unwrap();
        let rep = run_certify(&toy(), &unit_box(), &shifted, &[Strategy::Motivating], &CertifyOptions::default())
            .unwrap();
        assert!(rep.all_safe);
        assert_eq!(rep.without_timings(), rep.without_timings().without_timings());
    }

    #[test]
    fn sdp_strategies() {
        let safety = SafetySpec::single(vec![1.0, 1.0]).unwrap();
        let opts = CertifyOptions {
            solver: Solver::Sdp,
            ..Default::default()
        };
        let out = certify_strategy(&toy(), &unit_box(), &safety, Strategy::None, &opts).unwrap();
        assert_eq!(out.kind, CertKind::SdpRelaxed);
        assert!(out.bound >= 2.0 - 1e-3);
        assert!(certify_strategy(&toy(), &unit_box(), &safety, Strategy::Motivating, &opts).is_err());
        let grid = certify_strategy(&toy(), &unit_box(), &safety, Strategy::Grid(2), &opts).unwrap();
        assert_eq!(grid.rows[0].parts, 4);
        assert!(grid.bound <= out.bound + 2e-5);
    }

    #[test]
    fn series_on_worked_instance() {
        let (s, rows, gain) = spec_series(&toy(), &unit_box(), &[1.0, 1.0]).unwrap();
        assert!(gain);
        assert_eq!(rows.len(), 2);
        assert!((s.exact - 2.0).abs() < 1e-9);
        assert!((s.motivating.unwrap() - 2.0).abs() < 1e-9);
        assert!(s.guaranteed_violations(1e-7).is_empty());
        // worst case: exact + the one remaining term (1)
        assert!((s.worst_case_bound.unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn solver_parse() {
        assert_eq!("lp".parse::<Solver>().unwrap(), Solver::Lp);
        assert!("ip".parse::<Solver>().is_err());
    }
}

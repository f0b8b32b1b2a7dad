//! Per-layer preactivation bounds over an input region.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CertError, Result};
use crate::lp::{solve_lp, LpResult};
use crate::network::Network;
use crate::region::InputRegion;
use crate::relaxation::{encode_network, NeuronSplit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    StableActive,
    StableInactive,
    Unstable,
}

impl Stability {
    pub fn of(l: f64, u: f64) -> Self {
        if l >= 0.0 {
            Stability::StableActive
        } else if u <= 0.0 {
            Stability::StableInactive
        } else {
            Stability::Unstable
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsMode {
    /// Interval arithmetic through the box (cuts ignored).
    Interval,
    /// Per-neuron LPs over the region and the relaxation of earlier layers.
    LpTight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LayerBounds {
    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn stability(&self, i: usize) -> Stability {
        Stability::of(self.lower[i], self.upper[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreactBounds {
    layers: Vec<LayerBounds>,
}

impl PreactBounds {
    pub fn new(layers: Vec<LayerBounds>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[LayerBounds] {
        &self.layers
    }

    pub fn layer(&self, k: usize) -> &LayerBounds {
        &self.layers[k]
    }

    pub fn last(&self) -> &LayerBounds {
        self.layers.last().expect("bounds for at least one layer")
    }

    pub fn stability(&self, k: usize, i: usize) -> Stability {
        self.layers[k].stability(i)
    }

    pub fn num_unstable(&self) -> usize {
        self.layers
            .iter()
            .map(|l| (0..l.len()).filter(|&i| l.stability(i) == Stability::Unstable).count())
            .sum()
    }
}

pub fn preact_bounds(net: &Network, region: &InputRegion, mode: BoundsMode) -> Result<PreactBounds> {
    preact_bounds_with_splits(net, region, &[], mode)
}

/// Bounds over `region` with additional neuron sign restrictions. Splits are
/// only honoured in [`BoundsMode::LpTight`]; interval bounds stay valid
/// without them.
pub fn preact_bounds_with_splits(
    net: &Network,
    region: &InputRegion,
    splits: &[NeuronSplit],
    mode: BoundsMode,
) -> Result<PreactBounds> {
    if region.dim() != net.input_dim() {
        return Err(CertError::Dimension(format!(
            "region dimension {} vs network input {}",
            region.dim(),
            net.input_dim()
        )));
    }
    match mode {
        BoundsMode::Interval => Ok(interval_bounds(net, region)),
        BoundsMode::LpTight => lp_bounds(net, region, splits),
    }
}

fn interval_bounds(net: &Network, region: &InputRegion) -> PreactBounds {
    let mut lo = region.lower().to_vec();
    let mut hi = region.upper().to_vec();
    let mut layers = Vec::with_capacity(net.num_layers());
    for layer in net.layers() {
        let w = layer.weight();
        let mut l = layer.bias().to_vec();
        let mut u = layer.bias().to_vec();
        for i in 0..w.rows() {
            for (j, &a) in w.row(i).iter().enumerate() {
                if a >= 0.0 {
                    l[i] += a * lo[j];
                    u[i] += a * hi[j];
                } else {
                    l[i] += a * hi[j];
                    u[i] += a * lo[j];
                }
            }
        }
        lo = l.iter().map(|v| v.max(0.0)).collect();
        hi = u.iter().map(|v| v.max(0.0)).collect();
        layers.push(LayerBounds { lower: l, upper: u });
    }
    PreactBounds { layers }
}

fn lp_bounds(net: &Network, region: &InputRegion, splits: &[NeuronSplit]) -> Result<PreactBounds> {
    let mut done = PreactBounds { layers: Vec::new() };
    for k in 0..net.num_layers() {
        let (base, layout) = encode_network(net, region, &done, k, splits);
        let layer = &net.layers()[k];
        let extremes = (0..layer.output_dim())
            .into_par_iter()
            .map(|i| {
                let (row, b) = layout.preact_row(net, k, i);
                let mut lp = base.clone();
                lp.set_objective(row.clone());
                let hi = extreme(&lp)?;
                lp.set_objective(row.iter().map(|v| -v).collect());
                let lo = -extreme(&lp)?;
                let (mut l, mut u) = (lo + b, hi + b);
                if l > u {
                    let mid = 0.5 * (l + u);
                    l = mid;
                    u = mid;
                }
                Ok((l, u))
            })
            .collect::<Result<Vec<_>>>()?;
        let (lower, upper) = extremes.into_iter().unzip();
        done.layers.push(LayerBounds { lower, upper });
    }
    Ok(done)
}

fn extreme(lp: &crate::lp::LpProblem) -> Result<f64> {
    match solve_lp(lp)? {
        LpResult::Optimal { value, .. } => Ok(value),
        LpResult::Infeasible => Err(CertError::EmptyRegion),
        LpResult::Unbounded => Err(CertError::LpStatus("unbounded in bound computation")),
    }
}

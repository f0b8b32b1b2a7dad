//! Feedforward ReLU networks: evaluation and the on-disk JSON format.
//!
//! Every layer applies `x ↦ relu(W x + b)`, including the last one, so the
//! network output `z` is the final post-activation.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CertError, Result};
use crate::linalg::{relu, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    weight: Matrix,
    bias: Vec<f64>,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(CertError::Dimension(format!(
                "weight has {} rows but bias has {} entries",
                weight.rows(),
                bias.len()
            )));
        }
        if weight.rows() == 0 || weight.cols() == 0 {
            return Err(CertError::Dimension("layer with zero width".into()));
        }
        if !weight.is_finite() || !bias.iter().all(|v| v.is_finite()) {
            return Err(CertError::NonFinite("layer parameters".into()));
        }
        Ok(Self { weight, bias })
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    /// `W x + b`.
    pub fn preactivation(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.weight.matvec(x);
        for (zi, bi) in z.iter_mut().zip(&self.bias) {
            *zi += bi;
        }
        z
    }
}

/// A K-layer ReLU network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

/// Per-layer values produced by [`Network::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub preactivations: Vec<Vec<f64>>,
    pub postactivations: Vec<Vec<f64>>,
}

impl ActivationTrace {
    pub fn output(&self) -> &[f64] {
        self.postactivations.last().expect("trace has at least one layer")
    }
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(CertError::Dimension("network needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[1].input_dim() != pair[0].output_dim() {
                return Err(CertError::Dimension(format!(
                    "layer {} expects {} inputs but layer {} produces {}",
                    k + 1,
                    pair[1].input_dim(),
                    k,
                    pair[0].output_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Convenience constructor from nested row vectors: `(weight rows, bias)` per layer.
    pub fn from_parts(parts: Vec<(Vec<Vec<f64>>, Vec<f64>)>) -> Result<Self> {
        let layers = parts
            .into_iter()
            .map(|(w, b)| {
                let weight = Matrix::from_rows(&w)
                    .ok_or_else(|| CertError::Dimension("ragged weight rows".into()))?;
                Layer::new(weight, b)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    pub fn last_layer(&self) -> &Layer {
        self.layers.last().unwrap()
    }

    /// Number of ReLU units across all layers.
    pub fn num_neurons(&self) -> usize {
        self.layers.iter().map(Layer::output_dim).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<ActivationTrace> {
        if x.len() != self.input_dim() {
            return Err(CertError::Dimension(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(CertError::NonFinite("network input".into()));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = post.last().map_or(x, Vec::as_slice);
            let zhat = layer.preactivation(input);
            post.push(zhat.iter().copied().map(relu).collect());
            pre.push(zhat);
        }
        Ok(ActivationTrace {
            preactivations: pre,
            postactivations: post,
        })
    }

    /// Network output `z = f(x)`.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.postactivations.pop().unwrap())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_doc()).expect("network serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: NetworkDoc =
            serde_json::from_str(text).map_err(|source| CertError::Parse {
                what: "network",
                source,
            })?;
        let parts = doc
            .layers
            .into_iter()
            .map(|l| (l.weight, l.bias))
            .collect();
        Self::from_parts(parts)
    }

    /// Hex SHA-256 of the compact JSON serialization.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn to_doc(&self) -> NetworkDoc {
        NetworkDoc {
            layers: self
                .layers
                .iter()
                .map(|l| LayerDoc {
                    weight: l.weight.to_rows(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    layers: Vec<LayerDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

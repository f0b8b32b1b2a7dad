//! Iris data ingestion and a small deterministic trainer.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{CertError, Result};
use crate::linalg::Matrix;
use crate::network::{Layer, Network};

pub const DEFAULT_SPLIT_SEED: u64 = 7;
const TRAIN_FRACTION: f64 = 0.8;
const NUM_FEATURE_COLUMNS: usize = 4;
/// Backward-pass slope for inactive units, so that a unit that is off on
/// every sample can still recover. The forward pass is an exact ReLU.
const SURROGATE_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    /// Standardized features, one row per sample.
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Per kept feature, computed on the training split.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Source columns that survived constant-feature filtering.
    pub kept_columns: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    /// Maps raw measurements into the standardized feature space.
    pub fn standardize(&self, raw: &[f64]) -> Vec<f64> {
        self.kept_columns
            .iter()
            .enumerate()
            .map(|(k, &col)| (raw[col] - self.mean[k]) / self.std[k])
            .collect()
    }
}

pub fn ingest_iris(path: impl AsRef<Path>, seed: u64) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_iris(file, seed)
}

/// Parses a headed CSV with four numeric columns and a class column.
pub fn parse_iris<R: Read>(reader: R, seed: u64) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CertError::Dataset(format!("header: {e}")))?
        .clone();
    if headers.len() != NUM_FEATURE_COLUMNS + 1 {
        return Err(CertError::Dataset(format!(
            "expected {} columns, header has {}",
            NUM_FEATURE_COLUMNS + 1,
            headers.len()
        )));
    }
    let mut raw: Vec<Vec<f64>> = Vec::new();
    let mut names: Vec<String> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CertError::Dataset(format!("row {}: {e}", line + 1)))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != NUM_FEATURE_COLUMNS + 1 {
            return Err(CertError::Dataset(format!(
                "row {} has {} columns, expected {}",
                line + 1,
                rec.len(),
                NUM_FEATURE_COLUMNS + 1
            )));
        }
        let vals = rec
            .iter()
            .take(NUM_FEATURE_COLUMNS)
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(CertError::Dataset(format!("row {}: bad number '{f}'", line + 1))),
            })
            .collect::<Result<Vec<_>>>()?;
        let class = rec[NUM_FEATURE_COLUMNS].to_string();
        if class.is_empty() {
            return Err(CertError::Dataset(format!("row {}: missing class", line + 1)));
        }
        raw.push(vals);
        names.push(class);
    }
    if raw.is_empty() {
        return Err(CertError::Dataset("no data rows".into()));
    }
    let class_names: Vec<String> = names.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let labels: Vec<usize> = names
        .iter()
        .map(|n| class_names.binary_search(n).expect("known class"))
        .collect();

    let (train, test) = stratified_split(&labels, class_names.len(), seed)?;

    let n_train = train.len() as f64;
    let mut kept_columns = Vec::new();
    let mut mean = Vec::new();
    let mut std = Vec::new();
    for col in 0..NUM_FEATURE_COLUMNS {
        let mu = train.iter().map(|&i| raw[i][col]).sum::<f64>() / n_train;
        let var = train.iter().map(|&i| (raw[i][col] - mu).powi(2)).sum::<f64>() / n_train;
        if var > 0.0 {
            kept_columns.push(col);
            mean.push(mu);
            std.push(var.sqrt());
        }
    }
    if kept_columns.is_empty() {
        return Err(CertError::Dataset("every feature is constant on the training split".into()));
    }
    let mut features = Matrix::zeros(raw.len(), kept_columns.len());
    for (i, row) in raw.iter().enumerate() {
        for (k, &col) in kept_columns.iter().enumerate() {
            features[(i, k)] = (row[col] - mean[k]) / std[k];
        }
    }
    Ok(Dataset {
        features,
        labels,
        class_names,
        feature_names: kept_columns.iter().map(|&c| headers[c].to_string()).collect(),
        train,
        test,
        mean,
        std,
        kept_columns,
    })
}

fn stratified_split(labels: &[usize], k: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..k {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < 2 {
            return Err(CertError::Dataset(format!("class {class} has fewer than two samples")));
        }
        idx.shuffle(&mut rng);
        let n_train = ((idx.len() as f64) * TRAIN_FRACTION).round() as usize;
        let n_train = n_train.clamp(1, idx.len() - 1);
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    /// Widths of extra hidden ReLU layers in front of the output layer.
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub target_accuracy: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: Vec::new(),
            learning_rate: 0.1,
            epochs: 2000,
            seed: 42,
            target_accuracy: 0.90,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainOutcome {
    #[serde(skip)]
    pub network: Network,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub final_loss: f64,
    pub reached_target: bool,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(net: &Network, data: &Dataset, idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for &i in idx {
        if argmax(&net.eval(data.sample(i))?) == data.labels[i] {
            hits += 1;
        }
    }
    Ok(hits as f64 / idx.len() as f64)
}

/// Full-batch gradient descent on softmax cross-entropy over the ReLU
/// outputs, which double as the class scores.
pub fn train_one_layer(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if !(cfg.learning_rate > 0.0) {
        return Err(CertError::InvalidArgument("learning rate must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut widths = vec![data.num_features()];
    widths.extend(&cfg.hidden);
    widths.push(data.num_classes());
    let mut weights: Vec<Matrix> = Vec::new();
    let mut biases: Vec<Vec<f64>> = Vec::new();
    for w in widths.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut m = Matrix::zeros(fan_out, fan_in);
        for v in m.as_mut_slice() {
            *v = rng.gen_range(-a..a);
        }
        weights.push(m);
        // positive bias keeps every unit active at the start
        biases.push(vec![0.5; fan_out]);
    }

    let n = data.train.len() as f64;
    let mut final_loss = f64::NAN;
    for _ in 0..cfg.epochs {
        let mut gw: Vec<Matrix> = weights.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
        let mut gb: Vec<Vec<f64>> = biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut loss = 0.0;
        for &s in &data.train {
            let mut acts = vec![data.sample(s).to_vec()];
            let mut pre = Vec::new();
            for (w, b) in weights.iter().zip(&biases) {
                let mut h = w.matvec(acts.last().unwrap());
                for (hi, bi) in h.iter_mut().zip(b) {
                    *hi += bi;
                }
                acts.push(h.iter().map(|v| v.max(0.0)).collect());
                pre.push(h);
            }
            let z = acts.last().unwrap();
            let probs = softmax(z);
            let y = data.labels[s];
            loss -= probs[y].max(f64::MIN_POSITIVE).ln();
            let mut delta: Vec<f64> = probs.clone();
            delta[y] -= 1.0;
            for k in (0..weights.len()).rev() {
                for (d, p) in delta.iter_mut().zip(&pre[k]) {
                    if *p <= 0.0 {
                        *d *= SURROGATE_SLOPE;
                    }
                }
                let input = &acts[k];
                for (i, &d) in delta.iter().enumerate() {
                    if d != 0.0 {
                        gb[k][i] += d;
                        for (g, x) in gw[k].row_mut(i).iter_mut().zip(input) {
                            *g += d * x;
                        }
                    }
                }
                if k > 0 {
                    let wt = &weights[k];
                    let mut next = vec![0.0; wt.cols()];
                    for (i, &d) in delta.iter().enumerate() {
                        for (nx, w) in next.iter_mut().zip(wt.row(i)) {
                            *nx += d * w;
                        }
                    }
                    delta = next;
                }
            }
        }
        final_loss = loss / n;
        let step = cfg.learning_rate / n;
        for k in 0..weights.len() {
            for (w, g) in weights[k].as_mut_slice().iter_mut().zip(gw[k].as_slice()) {
                *w -= step * g;
            }
            for (b, g) in biases[k].iter_mut().zip(&gb[k]) {
                *b -= step * g;
            }
        }
    }
    let layers = weights
        .into_iter()
        .zip(biases)
        .map(|(w, b)| Layer::new(w, b))
        .collect::<Result<Vec<_>>>()?;
    let network = Network::new(layers)?;
    let train_accuracy = accuracy(&network, data, &data.train)?;
    let test_accuracy = accuracy(&network, data, &data.test)?;
    Ok(TrainOutcome {
        network,
        train_accuracy,
        test_accuracy,
        final_loss,
        reached_target: test_accuracy >= cfg.target_accuracy,
    })
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// One objective `c = e_a − e_y` per adversarial label `a ≠ y`.
pub fn make_safety_specs(net: &Network, y: usize) -> Result<Vec<(usize, Vec<f64>)>> {
    let k = net.output_dim();
    if y >= k {
        return Err(CertError::InvalidArgument(format!("label {y} out of range for {k} classes")));
    }
    Ok((0..k)
        .filter(|&a| a != y)
        .map(|a| {
            let mut c = vec![0.0; k];
            c[a] = 1.0;
            c[y] = -1.0;
            (a, c)
        })
        .collect())
}

//! Hashed bag-of-tokens encoder and the interaction-type predictor.
//!
//! The encoder maps text to the mean of per-token embedding rows, where a
//! token's row is the FNV-1a hash of its bytes masked into a power-of-two
//! table. The predictor is a linear softmax head over that encoding,
//! trained with analytic gradients and mini-batch gradient descent with
//! decoupled weight decay. The same encoder type is shared with the
//! sentence-selection policy, which starts from a copy of the trained
//! predictor encoder.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::TrainError;
use crate::par::map_ordered;
use crate::rng::fnv1a64;
use crate::text::tokenize;

/// Hashed token-embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub dim_hash: usize,
    pub dim_embed: usize,
    /// Row-major `dim_hash x dim_embed`.
    pub table: Vec<f64>,
}

impl EncoderParams {
    /// Rows i.i.d. uniform in `[-0.5/dim_embed, 0.5/dim_embed]`.
    pub fn init<R: Rng>(dim_hash: usize, dim_embed: usize, rng: &mut R) -> Self {
        assert!(dim_hash.is_power_of_two(), "dim_hash must be a power of two");
        assert!(dim_embed > 0);
        let scale = 0.5 / dim_embed as f64;
        let table = (0..dim_hash * dim_embed)
            .map(|_| rng.random_range(-scale..=scale))
            .collect();
        EncoderParams { dim_hash, dim_embed, table }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.table[r * self.dim_embed..(r + 1) * self.dim_embed]
    }

    fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.as_bytes()) as usize) & (self.dim_hash - 1)
    }

    /// Hash rows touched by `text` with their occurrence counts, sorted by
    /// row, plus the total token count.
    pub fn token_rows(&self, text: &str) -> (Vec<(usize, usize)>, usize) {
        let tokens = tokenize(text);
        let n = tokens.len();
        let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
        for t in &tokens {
            *rows.entry(self.bucket(t)).or_default() += 1;
        }
        (rows.into_iter().collect(), n)
    }

    /// Mean of the token rows; empty text encodes to the zero vector.
    pub fn encode(&self, text: &str) -> Vec<f64> {
        let (rows, n) = self.token_rows(text);
        let mut out = vec![0.0; self.dim_embed];
        if n == 0 {
            return out;
        }
        for (r, count) in rows {
            let w = count as f64 / n as f64;
            for (o, &x) in out.iter_mut().zip(self.row(r)) {
                *o += w * x;
            }
        }
        out
    }
}

/// Encoder plus the linear classification head realizing `P(i | prompt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParams {
    pub encoder: EncoderParams,
    pub n_types: usize,
    /// Row-major `n_types x dim_embed`.
    pub head: Vec<f64>,
    pub bias: Vec<f64>,
}

impl PredictorParams {
    /// Zero head and bias give a uniform initial distribution.
    pub fn init<R: Rng>(dim_hash: usize, dim_embed: usize, n_types: usize, rng: &mut R) -> Self {
        PredictorParams {
            encoder: EncoderParams::init(dim_hash, dim_embed, rng),
            n_types,
            head: vec![0.0; n_types * dim_embed],
            bias: vec![0.0; n_types],
        }
    }

    pub fn logits_from_encoding(&self, enc: &[f64]) -> Vec<f64> {
        let d = self.encoder.dim_embed;
        (0..self.n_types)
            .map(|c| {
                let row = &self.head[c * d..(c + 1) * d];
                self.bias[c] + dot(row, enc)
            })
            .collect()
    }

    /// Probability distribution over interaction types for a rendered prompt.
    pub fn forward(&self, text: &str) -> Vec<f64> {
        softmax(&self.logits_from_encoding(&self.encoder.encode(text)))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy gradient of one batch, summed over samples.
#[derive(Debug, Clone)]
pub struct PredictorGrad {
    /// Sparse rows of the embedding-table gradient, keyed by row index.
    pub table: BTreeMap<usize, Vec<f64>>,
    pub head: Vec<f64>,
    pub bias: Vec<f64>,
}

impl PredictorGrad {
    pub fn zeros(params: &PredictorParams) -> Self {
        PredictorGrad {
            table: BTreeMap::new(),
            head: vec![0.0; params.head.len()],
            bias: vec![0.0; params.bias.len()],
        }
    }

    fn merge(&mut self, other: &PredictorGrad, dim_embed: usize) {
        for (r, row) in &other.table {
            let acc = self.table.entry(*r).or_insert_with(|| vec![0.0; dim_embed]);
            for (a, b) in acc.iter_mut().zip(row) {
                *a += b;
            }
        }
        for (a, b) in self.head.iter_mut().zip(&other.head) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

/// Analytic gradient of the summed cross-entropy over `batch`, plus the
/// summed loss. Follows the mean-pool chain rule into the hashed table.
pub fn predictor_gradient(params: &PredictorParams, batch: &[(String, usize)]) -> (PredictorGrad, f64) {
    let d = params.encoder.dim_embed;
    let per_sample: Vec<(PredictorGrad, f64)> = map_ordered(batch, |(text, label)| {
        let (rows, n) = params.encoder.token_rows(text);
        let mut enc = vec![0.0; d];
        if n > 0 {
            for &(r, count) in &rows {
                let w = count as f64 / n as f64;
                for (o, &x) in enc.iter_mut().zip(params.encoder.row(r)) {
                    *o += w * x;
                }
            }
        }
        let probs = softmax(&params.logits_from_encoding(&enc));
        let loss = -probs[*label].max(f64::MIN_POSITIVE).ln();

        let mut grad = PredictorGrad::zeros(params);
        // dL/dlogits = p - onehot(label)
        let mut dlogits = probs;
        dlogits[*label] -= 1.0;
        let mut denc = vec![0.0; d];
        for (c, &g) in dlogits.iter().enumerate() {
            grad.bias[c] += g;
            let head_row = &params.head[c * d..(c + 1) * d];
            let grad_row = &mut grad.head[c * d..(c + 1) * d];
            for j in 0..d {
                grad_row[j] += g * enc[j];
                denc[j] += g * head_row[j];
            }
        }
        if n > 0 {
            for &(r, count) in &rows {
                let w = count as f64 / n as f64;
                let acc = grad.table.entry(r).or_insert_with(|| vec![0.0; d]);
                for (a, &g) in acc.iter_mut().zip(&denc) {
                    *a += w * g;
                }
            }
        }
        (grad, loss)
    });

    let mut total = PredictorGrad::zeros(params);
    let mut loss_sum = 0.0;
    for (grad, loss) in &per_sample {
        total.merge(grad, d);
        loss_sum += loss;
    }
    (total, loss_sum)
}

/// Gradient-descent settings with decoupled weight decay.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct OptConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig { lr: 1e-5, weight_decay: 6e-6, batch_size: 128, epochs: 1 }
    }
}

/// One descent step: `theta -= lr * grad / batch_len` followed by
/// `theta -= lr * weight_decay * theta` on every parameter.
pub fn apply_predictor_update(
    params: &mut PredictorParams,
    grad: &PredictorGrad,
    batch_len: usize,
    cfg: &OptConfig,
) {
    let scale = cfg.lr / batch_len as f64;
    let d = params.encoder.dim_embed;
    for (r, row) in &grad.table {
        let dst = &mut params.encoder.table[r * d..(r + 1) * d];
        for (p, g) in dst.iter_mut().zip(row) {
            *p -= scale * g;
        }
    }
    for (p, g) in params.head.iter_mut().zip(&grad.head) {
        *p -= scale * g;
    }
    for (p, g) in params.bias.iter_mut().zip(&grad.bias) {
        *p -= scale * g;
    }
    if cfg.weight_decay != 0.0 {
        let decay = cfg.lr * cfg.weight_decay;
        for p in params.encoder.table.iter_mut() {
            *p -= decay * *p;
        }
        for p in params.head.iter_mut() {
            *p -= decay * *p;
        }
        for p in params.bias.iter_mut() {
            *p -= decay * *p;
        }
    }
}

/// Mini-batch descent over `samples` in the given order.
pub fn train_predictor(
    samples: &[(String, usize)],
    mut params: PredictorParams,
    cfg: &OptConfig,
) -> Result<PredictorParams, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptySamples);
    }
    for epoch in 0..cfg.epochs {
        for (batch_idx, batch) in samples.chunks(cfg.batch_size.max(1)).enumerate() {
            let (grad, loss) = predictor_gradient(&params, batch);
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: batch_idx });
            }
            apply_predictor_update(&mut params, &grad, batch.len(), cfg);
        }
    }
    Ok(params)
}

/// Mean cross-entropy of `params` on `samples`.
pub fn predictor_loss(params: &PredictorParams, samples: &[(String, usize)]) -> f64 {
    let losses = map_ordered(samples, |(text, label)| {
        -params.forward(text)[*label].max(f64::MIN_POSITIVE).ln()
    });
    losses.iter().sum::<f64>() / samples.len().max(1) as f64
}

const PREDICTOR_MAGIC: &[u8; 4] = b"TXE1";

/// Flat binary checkpoint: magic, little-endian u32 dims, row-major f64s.
pub fn save_predictor(params: &PredictorParams, path: &Path) -> Result<(), TrainError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(PREDICTOR_MAGIC)?;
    for dim in [params.encoder.dim_hash, params.encoder.dim_embed, params.n_types] {
        w.write_all(&(dim as u32).to_le_bytes())?;
    }
    for value in params
        .encoder
        .table
        .iter()
        .chain(params.head.iter())
        .chain(params.bias.iter())
    {
        w.write_all(&value.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_predictor(path: &Path) -> Result<PredictorParams, TrainError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != PREDICTOR_MAGIC {
        return Err(TrainError::BadCheckpoint(format!("bad magic {magic:?}")));
    }
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)?;
        *d = u32::from_le_bytes(buf) as usize;
    }
    let [dim_hash, dim_embed, n_types] = dims;
    if !dim_hash.is_power_of_two() || dim_embed == 0 {
        return Err(TrainError::BadCheckpoint(format!("bad dims {dims:?}")));
    }
    let mut read_f64s = |count: usize| -> Result<Vec<f64>, TrainError> {
        let mut out = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            out.push(f64::from_le_bytes(buf));
        }
        Ok(out)
    };
    let table = read_f64s(dim_hash * dim_embed)?;
    let head = read_f64s(n_types * dim_embed)?;
    let bias = read_f64s(n_types)?;
    Ok(PredictorParams {
        encoder: EncoderParams { dim_hash, dim_embed, table },
        n_types,
        head,
        bias,
    })
}

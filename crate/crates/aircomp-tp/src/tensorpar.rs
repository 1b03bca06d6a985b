//! Toy tensor-parallel transformer with pluggable all-reduce.
//!
//! Weights are randomly initialized (seeded Gaussian scaled by
//! `1/sqrt(d_model)`); the model exists to propagate aggregation distortion,
//! not to learn. MLP layers are sharded by columns of the up-projection and
//! matching rows of the down-projection; attention is sharded at head
//! granularity. Summing all shards' partial outputs reproduces the
//! centralized forward exactly, so any deviation is attributable to the
//! reducer transport.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::numerics::RealMatrix;
use crate::rng::stream_rng;
use crate::{Error, Result};

/// Shape of the toy transformer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0
            || self.d_ff == 0
            || self.num_heads == 0
            || self.vocab_size == 0
            || self.seq_len == 0
        {
            return Err(Error::InvalidArgument {
                operation: "TransformerConfig",
                detail: "all dimensions must be >= 1".to_string(),
            });
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return Err(Error::InvalidArgument {
                operation: "TransformerConfig",
                detail: format!(
                    "d_model {} not divisible by num_heads {}",
                    self.d_model, self.num_heads
                ),
            });
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    /// Real values carried by one all-reduce (`seq_len x d_model`).
    pub fn all_reduce_payload_reals(&self) -> usize {
        self.seq_len * self.d_model
    }

    /// Complex symbols per all-reduce after real-pair packing.
    pub fn all_reduce_payload_symbols(&self) -> u64 {
        self.all_reduce_payload_reals().div_ceil(2) as u64
    }

    /// All-reduce operations per forward pass (one per sub-layer).
    pub fn all_reduces_per_forward(&self) -> usize {
        2 * self.num_layers
    }

    /// Weights per transformer layer subject to sharding (attention
    /// projections plus the MLP pair).
    pub fn weights_per_layer(&self) -> u64 {
        (4 * self.d_model * self.d_model + 2 * self.d_model * self.d_ff) as u64
    }
}

/// One transformer block's weights.
#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub wq: RealMatrix,
    pub wk: RealMatrix,
    pub wv: RealMatrix,
    pub wo: RealMatrix,
    pub w_up: RealMatrix,   // d_model x d_ff
    pub w_down: RealMatrix, // d_ff x d_model
}

/// Randomly initialized toy transformer.
#[derive(Debug, Clone)]
pub struct ToyTransformer {
    pub config: TransformerConfig,
    pub embedding: RealMatrix, // vocab x d_model
    pub layers: Vec<LayerWeights>,
    pub output_head: RealMatrix, // d_model x vocab
}

impl ToyTransformer {
    pub fn new(config: TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let scale = 1.0 / (config.d_model as f64).sqrt();
        let mut rng = stream_rng(seed, 0x4d4f44);
        let mut gaussian = |rows: usize, cols: usize| {
            RealMatrix::from_fn(rows, cols, |_, _| {
                let z: f64 = rng.sample(StandardNormal);
                z * scale
            })
        };
        let embedding = gaussian(config.vocab_size, config.d_model);
        let layers = (0..config.num_layers)
            .map(|_| LayerWeights {
                wq: gaussian(config.d_model, config.d_model),
                wk: gaussian(config.d_model, config.d_model),
                wv: gaussian(config.d_model, config.d_model),
                wo: gaussian(config.d_model, config.d_model),
                w_up: gaussian(config.d_model, config.d_ff),
                w_down: gaussian(config.d_ff, config.d_model),
            })
            .collect();
        let output_head = gaussian(config.d_model, config.vocab_size);
        Ok(Self { config, embedding, layers, output_head })
    }

    pub fn embed(&self, tokens: &[usize]) -> Result<RealMatrix> {
        if tokens.len() != self.config.seq_len {
            return Err(Error::Dimension {
                operation: "embed",
                detail: format!("expected {} tokens, got {}", self.config.seq_len, tokens.len()),
            });
        }
        let d = self.config.d_model;
        let mut x = RealMatrix::zeros(tokens.len(), d);
        for (i, &t) in tokens.iter().enumerate() {
            if t >= self.config.vocab_size {
                return Err(Error::InvalidArgument {
                    operation: "embed",
                    detail: format!("token {t} outside vocabulary {}", self.config.vocab_size),
                });
            }
            for j in 0..d {
                x[(i, j)] = self.embedding[(t, j)];
            }
        }
        Ok(x)
    }
}

// ---------------------------------------------------------------------------
// Sharding
// ---------------------------------------------------------------------------

/// Largest-remainder rounding of `fractions * total` to nonnegative integers
/// summing to `total`. Remainder ties go to lower indices.
pub fn largest_remainder(fractions: &[f64], total: usize) -> Vec<usize> {
    let mut sizes: Vec<usize> = Vec::with_capacity(fractions.len());
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(fractions.len());
    let mut assigned = 0usize;
    for (i, &f) in fractions.iter().enumerate() {
        let exact = f * total as f64;
        let floor = exact.floor() as usize;
        sizes.push(floor);
        assigned += floor;
        remainders.push((i, exact - floor as f64));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for k in 0..total.saturating_sub(assigned) {
        sizes[remainders[k % remainders.len()].0] += 1;
    }
    sizes
}

/// Column shards of the up-projection and matching row shards of the
/// down-projection, sized by largest-remainder rounding of the assignment.
#[derive(Debug, Clone)]
pub struct ShardedMlp {
    pub up: Vec<RealMatrix>,
    pub down: Vec<RealMatrix>,
    pub sizes: Vec<usize>,
}

/// One layer's shards: MLP blocks plus per-device attention head sets
/// (a partition of `0..num_heads`).
#[derive(Debug, Clone)]
pub struct ShardedLayer {
    pub mlp: ShardedMlp,
    pub heads: Vec<Vec<usize>>,
}

/// Splits `w_up` (columns) and `w_down` (rows) into contiguous per-device
/// blocks with sizes `largest_remainder(m, d_ff)`. Zero-size shards are
/// valid and contribute nothing.
pub fn partition_mlp(
    w_up: &RealMatrix,
    w_down: &RealMatrix,
    assignment: &[f64],
) -> Result<ShardedMlp> {
    let d_ff = w_up.cols();
    if w_down.rows() != d_ff {
        return Err(Error::Dimension {
            operation: "partition_mlp",
            detail: format!(
                "up-projection has {d_ff} columns but down-projection has {} rows",
                w_down.rows()
            ),
        });
    }
    if assignment.is_empty() || d_ff < assignment.len() {
        return Err(Error::Dimension {
            operation: "partition_mlp",
            detail: format!("d_ff {d_ff} must be >= device count {}", assignment.len()),
        });
    }
    let sizes = largest_remainder(assignment, d_ff);
    let mut up = Vec::with_capacity(sizes.len());
    let mut down = Vec::with_capacity(sizes.len());
    let mut offset = 0;
    for &k in &sizes {
        up.push(w_up.col_block(offset, offset + k));
        down.push(w_down.row_block(offset, offset + k));
        offset += k;
    }
    Ok(ShardedMlp { up, down, sizes })
}

/// Contiguous head blocks sized by largest-remainder rounding of the
/// assignment over `num_heads`.
pub fn partition_heads(num_heads: usize, assignment: &[f64]) -> Vec<Vec<usize>> {
    let sizes = largest_remainder(assignment, num_heads);
    let mut out = Vec::with_capacity(sizes.len());
    let mut next = 0;
    for &k in &sizes {
        out.push((next..next + k).collect());
        next += k;
    }
    out
}

/// Shards one layer for the given assignment.
pub fn partition_layer(
    layer: &LayerWeights,
    num_heads: usize,
    assignment: &[f64],
) -> Result<ShardedLayer> {
    Ok(ShardedLayer {
        mlp: partition_mlp(&layer.w_up, &layer.w_down, assignment)?,
        heads: partition_heads(num_heads, assignment),
    })
}

/// Device n's local MLP contribution `relu(X W_n) U_n`; empty shards yield
/// a zero matrix.
pub fn device_forward_mlp(x: &RealMatrix, up: &RealMatrix, down: &RealMatrix) -> RealMatrix {
    if up.cols() == 0 {
        return RealMatrix::zeros(x.rows(), x.cols());
    }
    let hidden = x.mul(up).map(|v| v.max(0.0));
    hidden.mul(down)
}

// ---------------------------------------------------------------------------
// All-reduce
// ---------------------------------------------------------------------------

/// Aggregation transport combining per-device partial outputs into their sum.
pub trait Reducer {
    fn reduce(&mut self, partials: &[RealMatrix]) -> Result<RealMatrix>;
}

/// Noiseless in-memory sum.
#[derive(Debug, Default, Clone)]
pub struct ExactReducer;

impl Reducer for ExactReducer {
    fn reduce(&mut self, partials: &[RealMatrix]) -> Result<RealMatrix> {
        let mut out = partials[0].clone();
        for p in &partials[1..] {
            out = out.add(p);
        }
        Ok(out)
    }
}

/// Sums equally shaped partials through the given reducer.
pub fn all_reduce(partials: &[RealMatrix], reducer: &mut dyn Reducer) -> Result<RealMatrix> {
    let Some(first) = partials.first() else {
        return Err(Error::Dimension {
            operation: "all_reduce",
            detail: "no partial outputs".to_string(),
        });
    };
    let shape = (first.rows(), first.cols());
    if partials.iter().any(|p| (p.rows(), p.cols()) != shape) {
        return Err(Error::Dimension {
            operation: "all_reduce",
            detail: "partial outputs must share one shape".to_string(),
        });
    }
    let out = reducer.reduce(partials)?;
    if (out.rows(), out.cols()) != shape {
        return Err(Error::Dimension {
            operation: "all_reduce",
            detail: "reducer changed the output shape".to_string(),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

fn causal_attention(
    q: &RealMatrix,
    k: &RealMatrix,
    v: &RealMatrix,
    head_dim: usize,
) -> RealMatrix {
    let seq = q.rows();
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut out = RealMatrix::zeros(seq, v.cols());
    let mut scores = vec![0.0f64; seq];
    for i in 0..seq {
        let mut max = f64::NEG_INFINITY;
        for (j, slot) in scores.iter_mut().enumerate().take(i + 1) {
            let dot: f64 = (0..q.cols()).map(|c| q[(i, c)] * k[(j, c)]).sum();
            *slot = dot * scale;
            max = max.max(*slot);
        }
        let mut denom = 0.0;
        for s in scores.iter_mut().take(i + 1) {
            *s = (*s - max).exp();
            denom += *s;
        }
        for j in 0..=i {
            let w = scores[j] / denom;
            for c in 0..v.cols() {
                out[(i, c)] += w * v[(j, c)];
            }
        }
    }
    out
}

/// Attention output contribution of one head block through the output
/// projection rows belonging to those heads.
fn head_block_attention(
    x: &RealMatrix,
    weights: &LayerWeights,
    heads: &[usize],
    head_dim: usize,
) -> RealMatrix {
    let seq = x.rows();
    let d_model = x.cols();
    let mut partial = RealMatrix::zeros(seq, d_model);
    for &h in heads {
        let lo = h * head_dim;
        let hi = lo + head_dim;
        let q = x.mul(&weights.wq.col_block(lo, hi));
        let k = x.mul(&weights.wk.col_block(lo, hi));
        let v = x.mul(&weights.wv.col_block(lo, hi));
        let attended = causal_attention(&q, &k, &v, head_dim);
        partial = partial.add(&attended.mul(&weights.wo.row_block(lo, hi)));
    }
    partial
}

/// Centralized reference forward: embeddings, `num_layers` blocks of
/// (causal attention + residual, MLP + residual), then the output head.
pub fn forward_reference(model: &ToyTransformer, tokens: &[usize]) -> Result<RealMatrix> {
    let mut x = model.embed(tokens)?;
    let head_dim = model.config.head_dim();
    let all_heads: Vec<usize> = (0..model.config.num_heads).collect();
    for layer in &model.layers {
        let attn = head_block_attention(&x, layer, &all_heads, head_dim);
        x = x.add(&attn);
        let hidden = x.mul(&layer.w_up).map(|v| v.max(0.0));
        x = x.add(&hidden.mul(&layer.w_down));
    }
    Ok(x.mul(&model.output_head))
}

/// Sharded forward: per-device heads and MLP blocks with an all-reduce after
/// each sub-layer. With [`ExactReducer`] this matches [`forward_reference`]
/// up to floating-point summation order.
pub fn forward_sharded(
    model: &ToyTransformer,
    assignment: &[f64],
    tokens: &[usize],
    reducer: &mut dyn Reducer,
) -> Result<RealMatrix> {
    let mut x = model.embed(tokens)?;
    let head_dim = model.config.head_dim();
    let heads = partition_heads(model.config.num_heads, assignment);
    for layer in &model.layers {
        let mlp = partition_mlp(&layer.w_up, &layer.w_down, assignment)?;

        let attn_partials: Vec<RealMatrix> = heads
            .iter()
            .map(|block| head_block_attention(&x, layer, block, head_dim))
            .collect();
        let attn = all_reduce(&attn_partials, reducer)?;
        x = x.add(&attn);

        let mlp_partials: Vec<RealMatrix> = mlp
            .up
            .iter()
            .zip(&mlp.down)
            .map(|(up, down)| device_forward_mlp(&x, up, down))
            .collect();
        let z = all_reduce(&mlp_partials, reducer)?;
        x = x.add(&z);
    }
    Ok(x.mul(&model.output_head))
}

/// Log-probabilities of the realized next tokens under the logits:
/// position `k` predicts `tokens[k + 1]`.
pub fn next_token_log_probs(logits: &RealMatrix, tokens: &[usize]) -> Result<Vec<f64>> {
    if logits.rows() != tokens.len() {
        return Err(Error::Dimension {
            operation: "next_token_log_probs",
            detail: format!("{} logit rows vs {} tokens", logits.rows(), tokens.len()),
        });
    }
    if tokens.len() < 2 {
        return Err(Error::InvalidArgument {
            operation: "next_token_log_probs",
            detail: "need at least two tokens".to_string(),
        });
    }
    let vocab = logits.cols();
    let mut out = Vec::with_capacity(tokens.len() - 1);
    for k in 0..tokens.len() - 1 {
        let row = logits.row(k);
        let target = tokens[k + 1];
        if target >= vocab {
            return Err(Error::InvalidArgument {
                operation: "next_token_log_probs",
                detail: format!("token {target} outside vocabulary {vocab}"),
            });
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        out.push(row[target] - log_sum);
    }
    Ok(out)
}

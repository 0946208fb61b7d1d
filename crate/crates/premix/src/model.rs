//! The bag aggregator: token embedding, sinusoidal positional encoding,
//! a masked transformer encoder that can interpolate hidden states with
//! the batch-order mirror (Loc2/Loc3), global attention pooling, and the
//! two heads (projector for pre-training, linear classifier downstream).
//!
//! Forward passes are recorded on a [`Tape`]; gradients for every
//! parameter and for the input come out of one backward call.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Var};
use crate::bag::PaddedBatch;
use crate::error::{Error, Result};
use crate::mixing::{flip_index, prefix_len, sample_lambda};
use crate::rng;
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;
pub const BN_EPS: f64 = 1e-5;
/// Momentum for the projector's running batch-norm statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProjectorConfig {
    /// Two affine+batchnorm+relu blocks followed by a final affine.
    Standard { dims: [usize; 3] },
    /// A single affine initialized to the identity, no normalization.
    /// Useful for projector-free oracle tests.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Input feature width of a region row.
    pub dim: usize,
    /// Encoder width.
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_ratio: usize,
    /// Attention-pooling projection width.
    pub pool_dim: usize,
    pub projector: ProjectorConfig,
    /// Add sinusoidal positional encodings over the region index.
    pub positional: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            dim: 192,
            hidden: 192,
            layers: 2,
            heads: 3,
            ffn_ratio: 4,
            pool_dim: 128,
            projector: ProjectorConfig::Standard { dims: [512, 512, 256] },
            positional: true,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden == 0 || self.layers == 0 || self.heads == 0 {
            return Err(Error::invalid("architecture dims must be positive"));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::invalid(format!(
                "hidden width {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.ffn_ratio == 0 || self.pool_dim == 0 {
            return Err(Error::invalid("ffn_ratio and pool_dim must be positive"));
        }
        if let ProjectorConfig::Standard { dims } = &self.projector {
            if dims.iter().any(|&d| d == 0) {
                return Err(Error::invalid("projector dims must be positive"));
            }
        }
        Ok(())
    }

    /// Output width of the projector head.
    pub fn projector_out(&self) -> usize {
        match &self.projector {
            ProjectorConfig::Standard { dims } => dims[2],
            ProjectorConfig::Identity => self.hidden,
        }
    }
}

/// Where mixing may act during fine-tuning: the raw inputs, after the first
/// encoder layer's attention residual, or on the final hidden states.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixLocation {
    Loc1,
    Loc2,
    Loc3,
}

/// Fine-tuning mix policy: one location per batch, drawn uniformly from the
/// enabled set, with a single Beta-distributed lambda shared by the batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    pub locations: Vec<MixLocation>,
    pub beta_a: f64,
    pub beta_b: f64,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            locations: vec![MixLocation::Loc1, MixLocation::Loc2, MixLocation::Loc3],
            beta_a: 1.0,
            beta_b: 1.0,
        }
    }
}

impl MixConfig {
    pub fn enabled(&self) -> bool {
        !self.locations.is_empty()
    }

    /// Draw the per-batch `(location, lambda)` pair, or `None` when mixing
    /// is disabled.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<Option<(MixLocation, f64)>> {
        if self.locations.is_empty() {
            return Ok(None);
        }
        let loc = self.locations[rng.random_range(0..self.locations.len())];
        let lambda = sample_lambda(rng, self.beta_a, self.beta_b, 1)?[0];
        Ok(Some((loc, lambda)))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    /// Weight matrices: decayed and LARS-adapted.
    Weights,
    /// Biases and normalization scales/shifts: no decay, no adaptation.
    BiasNorm,
    /// Non-learnable state (running batch-norm statistics).
    Buffer,
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub group: ParamGroup,
}

/// Every tensor of the aggregator, keyed by name, in a fixed order.
#[derive(Clone, Debug)]
pub struct AggregatorParams {
    pub arch: ArchConfig,
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl AggregatorParams {
    /// Deterministic initialization: affine weights are uniform with
    /// fan-in scaling, biases zero, normalization scales one / shifts zero.
    pub fn init(seed: u64, arch: &ArchConfig) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng::stream(seed, "init", 0);
        let mut p = AggregatorParams {
            arch: arch.clone(),
            entries: Vec::new(),
            index: HashMap::new(),
        };
        let h = arch.hidden;

        p.push_affine(&mut rng, "embed", arch.dim, h);
        for l in 0..arch.layers {
            p.push_norm(&format!("enc{l}.ln1"), h);
            for proj in ["q", "k", "v", "o"] {
                p.push_affine(&mut rng, &format!("enc{l}.attn.{proj}"), h, h);
            }
            p.push_norm(&format!("enc{l}.ln2"), h);
            let f = arch.ffn_ratio * h;
            p.push_affine_named(&mut rng, &format!("enc{l}.ffn.w1"), &format!("enc{l}.ffn.b1"), h, f);
            p.push_affine_named(&mut rng, &format!("enc{l}.ffn.w2"), &format!("enc{l}.ffn.b2"), f, h);
        }
        p.push_weight(&mut rng, "pool.v", h, arch.pool_dim);
        p.push_weight(&mut rng, "pool.w", arch.pool_dim, 1);
        match arch.projector.clone() {
            ProjectorConfig::Standard { dims } => {
                let chain = [h, dims[0], dims[1], dims[2]];
                for i in 0..3 {
                    p.push_affine(&mut rng, &format!("proj.{i}"), chain[i], chain[i + 1]);
                    if i < 2 {
                        p.push_norm(&format!("proj.bn{i}"), chain[i + 1]);
                        p.push_buffer(&format!("proj.bn{i}.rm"), Tensor::zeros(&[chain[i + 1]]));
                        p.push_buffer(&format!("proj.bn{i}.rv"), Tensor::full(&[chain[i + 1]], 1.0));
                    }
                }
            }
            ProjectorConfig::Identity => {
                let mut eye = Tensor::zeros(&[h, h]);
                for i in 0..h {
                    eye.data_mut()[i * h + i] = 1.0;
                }
                p.push(ParamEntry { name: "proj.0.w".into(), tensor: eye, group: ParamGroup::Weights });
                p.push(ParamEntry { name: "proj.0.b".into(), tensor: Tensor::zeros(&[h]), group: ParamGroup::BiasNorm });
            }
        }
        p.push_affine(&mut rng, "cls", h, 2);
        Ok(p)
    }

    fn push(&mut self, entry: ParamEntry) {
        self.index.insert(entry.name.clone(), self.entries.len());
        self.entries.push(entry);
    }

    fn push_weight(&mut self, rng: &mut impl Rng, name: &str, fan_in: usize, fan_out: usize) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.push(ParamEntry {
            name: name.to_string(),
            tensor: Tensor::new(vec![fan_in, fan_out], data),
            group: ParamGroup::Weights,
        });
    }

    fn push_affine(&mut self, rng: &mut impl Rng, stem: &str, fan_in: usize, fan_out: usize) {
        self.push_affine_named(rng, &format!("{stem}.w"), &format!("{stem}.b"), fan_in, fan_out);
    }

    fn push_affine_named(
        &mut self,
        rng: &mut impl Rng,
        wname: &str,
        bname: &str,
        fan_in: usize,
        fan_out: usize,
    ) {
        self.push_weight(rng, wname, fan_in, fan_out);
        self.push(ParamEntry {
            name: bname.to_string(),
            tensor: Tensor::zeros(&[fan_out]),
            group: ParamGroup::BiasNorm,
        });
    }

    fn push_norm(&mut self, stem: &str, width: usize) {
        self.push(ParamEntry {
            name: format!("{stem}.g"),
            tensor: Tensor::full(&[width], 1.0),
            group: ParamGroup::BiasNorm,
        });
        self.push(ParamEntry {
            name: format!("{stem}.b"),
            tensor: Tensor::zeros(&[width]),
            group: ParamGroup::BiasNorm,
        });
    }

    fn push_buffer(&mut self, name: &str, tensor: Tensor) {
        self.push(ParamEntry { name: name.to_string(), tensor, group: ParamGroup::Buffer });
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> &Tensor {
        let idx = *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.entries[idx].tensor
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        let idx = *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        &mut self.entries[idx].tensor
    }

    pub fn set(&mut self, name: &str, tensor: Tensor) {
        let cur = self.get_mut(name);
        assert_eq!(cur.shape(), tensor.shape(), "shape change for {name}");
        *cur = tensor;
    }

    /// Number of learnable scalars (buffers excluded).
    pub fn learnable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.group != ParamGroup::Buffer)
            .map(|e| e.tensor.size())
            .sum()
    }

    pub fn validate_finite(&self) -> Result<()> {
        for e in &self.entries {
            if !e.tensor.is_finite() {
                return Err(Error::NonFinite(format!("parameter {}", e.name)));
            }
        }
        Ok(())
    }
}

/// Parameters bound onto a tape as leaves for one forward pass.
pub struct Bound {
    names: Vec<String>,
    vars: Vec<Var>,
    map: HashMap<String, Var>,
}

impl Bound {
    pub fn v(&self, name: &str) -> Var {
        *self.map.get(name).unwrap_or_else(|| panic!("unbound parameter {name}"))
    }

    /// Gradients per learnable parameter, zeros where the loss never
    /// touched a tensor.
    pub fn param_grads(&self, params: &AggregatorParams, grads: &Gradients) -> Vec<(String, Tensor)> {
        self.names
            .iter()
            .zip(&self.vars)
            .filter(|(n, _)| {
                params.entries()[params.index[n.as_str()]].group != ParamGroup::Buffer
            })
            .map(|(n, &v)| (n.clone(), grads.get_or_zeros(v, params.get(n).shape())))
            .collect()
    }
}

pub fn bind_params(tape: &mut Tape, params: &AggregatorParams) -> Bound {
    let mut names = Vec::new();
    let mut vars = Vec::new();
    let mut map = HashMap::new();
    for e in params.entries() {
        let v = tape.leaf(e.tensor.clone());
        names.push(e.name.clone());
        vars.push(v);
        map.insert(e.name.clone(), v);
    }
    Bound { names, vars, map }
}

/// Softmax restricted to valid entries; invalid entries get exactly zero.
pub fn masked_softmax(scores: &[f64], valid: &[bool]) -> Result<Vec<f64>> {
    if scores.len() != valid.len() {
        return Err(Error::shape("scores and mask lengths differ"));
    }
    if !valid.iter().any(|&v| v) {
        return Err(Error::AllInvalid);
    }
    let mx = scores
        .iter()
        .zip(valid)
        .filter(|(_, &v)| v)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; scores.len()];
    let mut denom = 0.0;
    for i in 0..scores.len() {
        if valid[i] {
            let e = (scores[i] - mx).exp();
            out[i] = e;
            denom += e;
        }
    }
    for o in &mut out {
        *o /= denom;
    }
    Ok(out)
}

/// Sinusoidal positional table `[r, h]` over the region index.
pub fn positional_table(r: usize, h: usize) -> Tensor {
    let mut data = vec![0.0; r * h];
    for t in 0..r {
        for i in 0..h {
            let exponent = (2 * (i / 2)) as f64 / h as f64;
            let angle = t as f64 / 10_000f64.powf(exponent);
            data[t * h + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![r, h], data)
}

fn mask_tensor(valid: &[Vec<bool>]) -> Tensor {
    let (n, r) = (valid.len(), valid[0].len());
    let mut m = vec![0.0; n * r];
    for i in 0..n {
        for t in 0..r {
            if valid[i][t] {
                m[i * r + t] = 1.0;
            }
        }
    }
    Tensor::new(vec![n, r], m)
}

/// Key mask for multi-head attention: `[n*heads, r, r]` with row `q` equal
/// to the sample's validity over key positions.
fn attention_mask(valid: &[Vec<bool>], heads: usize) -> Tensor {
    let (n, r) = (valid.len(), valid[0].len());
    let mut m = vec![0.0; n * heads * r * r];
    for i in 0..n {
        let mut row = vec![0.0; r];
        for t in 0..r {
            if valid[i][t] {
                row[t] = 1.0;
            }
        }
        for hh in 0..heads {
            for q in 0..r {
                let base = ((i * heads + hh) * r + q) * r;
                m[base..base + r].copy_from_slice(&row);
            }
        }
    }
    Tensor::new(vec![n * heads, r, r], m)
}

fn check_batch(valid: &[Vec<bool>]) -> Result<()> {
    if valid.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    for (i, m) in valid.iter().enumerate() {
        let len = prefix_len(m);
        if len == 0 {
            return Err(Error::invalid(format!("sample {i} has no valid region")));
        }
        if m[len..].iter().any(|&v| v) {
            return Err(Error::invalid(format!("sample {i} mask is not a prefix")));
        }
    }
    Ok(())
}

/// Result of running the encoder: the hidden states, the input leaf (for
/// input-gradient queries), and the validity mask as widened by any hidden
/// state mixing.
pub struct EncoderOutput {
    pub hidden: Var,
    pub input: Var,
    pub valid: Vec<Vec<bool>>,
}

/// Mirror-interpolate a `[n, ...]` variable on the tape and widen the mask.
fn tape_manifold_mix(
    tape: &mut Tape,
    x: Var,
    valid: &[Vec<bool>],
    lambda: f64,
) -> (Var, Vec<Vec<bool>>) {
    let own = tape.scale(x, lambda);
    let flipped = tape.flip0(x);
    let donor = tape.scale(flipped, 1.0 - lambda);
    let mixed = tape.add(own, donor);
    let n = valid.len();
    let union: Vec<Vec<bool>> = (0..n)
        .map(|i| {
            valid[i]
                .iter()
                .zip(&valid[flip_index(i, n)])
                .map(|(&a, &b)| a || b)
                .collect()
        })
        .collect();
    (mixed, union)
}

/// Embed, positionally encode, and run the masked encoder stack.
///
/// `mix` carries the per-batch hidden-state mixing choice (Loc2 applies
/// after the first layer's attention residual, Loc3 to the final hidden
/// states; Loc1 is input-level and handled by the caller before padding).
pub fn encoder_forward(
    tape: &mut Tape,
    bound: &Bound,
    arch: &ArchConfig,
    batch: &PaddedBatch,
    mix: Option<(MixLocation, f64)>,
) -> Result<EncoderOutput> {
    check_batch(&batch.valid)?;
    let (n, r, d) = (batch.batch_size(), batch.r_max(), batch.dim());
    if d != arch.dim {
        return Err(Error::shape(format!("batch width {d} vs architecture dim {}", arch.dim)));
    }
    let h = arch.hidden;
    let heads = arch.heads;
    let dk = h / heads;
    let mut valid = batch.valid.clone();

    let input = tape.leaf(batch.data.clone());
    let flat = tape.reshape(input, vec![n * r, d]);
    let emb = tape.matmul(flat, bound.v("embed.w"));
    let emb = tape.add_bias(emb, bound.v("embed.b"));
    let emb = tape.reshape(emb, vec![n, r, h]);
    let mut mask_t = mask_tensor(&valid);
    let mut x = tape.row_mask(emb, &mask_t);
    if arch.positional {
        let table = positional_table(r, h);
        let mut pe = vec![0.0; n * r * h];
        for i in 0..n {
            for t in 0..r {
                if valid[i][t] {
                    pe[(i * r + t) * h..(i * r + t + 1) * h]
                        .copy_from_slice(&table.data()[t * h..(t + 1) * h]);
                }
            }
        }
        x = tape.add_const(x, &Tensor::new(vec![n, r, h], pe));
    }

    for l in 0..arch.layers {
        // post-norm layer: x = LN1(x + attn(x)); x = LN2(x + ffn(x)),
        // with padded rows re-zeroed after each normalization
        let attn_mask = attention_mask(&valid, heads);
        let flat = tape.reshape(x, vec![n * r, h]);
        let heads_of = |tape: &mut Tape, proj: &str| {
            let w = bound.v(&format!("enc{l}.attn.{proj}.w"));
            let b = bound.v(&format!("enc{l}.attn.{proj}.b"));
            let y = tape.matmul(flat, w);
            let y = tape.add_bias(y, b);
            let y = tape.reshape(y, vec![n, r, heads, dk]);
            let y = tape.permute(y, &[0, 2, 1, 3]);
            tape.reshape(y, vec![n * heads, r, dk])
        };
        let q = heads_of(tape, "q");
        let k = heads_of(tape, "k");
        let v = heads_of(tape, "v");
        let kt = tape.transpose_last2(k);
        let scores = tape.bmm(q, kt);
        let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt());
        let probs = tape.masked_softmax(scores, &attn_mask);
        let ctx = tape.bmm(probs, v);
        let ctx = tape.reshape(ctx, vec![n, heads, r, dk]);
        let ctx = tape.permute(ctx, &[0, 2, 1, 3]);
        let ctx = tape.reshape(ctx, vec![n * r, h]);
        let out = tape.matmul(ctx, bound.v(&format!("enc{l}.attn.o.w")));
        let out = tape.add_bias(out, bound.v(&format!("enc{l}.attn.o.b")));
        let out = tape.reshape(out, vec![n, r, h]);
        let out = tape.row_mask(out, &mask_t);
        x = tape.add(x, out);
        x = tape.layer_norm(x, bound.v(&format!("enc{l}.ln1.g")), bound.v(&format!("enc{l}.ln1.b")), LN_EPS);
        x = tape.row_mask(x, &mask_t);

        if l == 0 {
            if let Some((MixLocation::Loc2, lambda)) = mix {
                let (mixed, union) = tape_manifold_mix(tape, x, &valid, lambda);
                x = mixed;
                valid = union;
                mask_t = mask_tensor(&valid);
            }
        }

        let flat = tape.reshape(x, vec![n * r, h]);
        let f1 = tape.matmul(flat, bound.v(&format!("enc{l}.ffn.w1")));
        let f1 = tape.add_bias(f1, bound.v(&format!("enc{l}.ffn.b1")));
        let f1 = tape.gelu(f1);
        let f2 = tape.matmul(f1, bound.v(&format!("enc{l}.ffn.w2")));
        let f2 = tape.add_bias(f2, bound.v(&format!("enc{l}.ffn.b2")));
        let f2 = tape.reshape(f2, vec![n, r, h]);
        let f2 = tape.row_mask(f2, &mask_t);
        x = tape.add(x, f2);
        x = tape.layer_norm(x, bound.v(&format!("enc{l}.ln2.g")), bound.v(&format!("enc{l}.ln2.b")), LN_EPS);
        x = tape.row_mask(x, &mask_t);
    }

    if let Some((MixLocation::Loc3, lambda)) = mix {
        let (mixed, union) = tape_manifold_mix(tape, x, &valid, lambda);
        x = mixed;
        valid = union;
    }

    Ok(EncoderOutput { hidden: x, input, valid })
}

/// Global attention pooling: `score_t = w . tanh(V . hidden_t)`, masked
/// softmax over region positions, convex combination of hidden states.
pub fn attention_pool(
    tape: &mut Tape,
    bound: &Bound,
    hidden: Var,
    valid: &[Vec<bool>],
) -> Result<Var> {
    check_batch(valid)?;
    let shape = tape.value(hidden).shape().to_vec();
    let (n, r, h) = (shape[0], shape[1], shape[2]);
    let flat = tape.reshape(hidden, vec![n * r, h]);
    let a = tape.matmul(flat, bound.v("pool.v"));
    let a = tape.tanh(a);
    let s = tape.matmul(a, bound.v("pool.w"));
    let s = tape.reshape(s, vec![n, r]);
    let w = tape.masked_softmax(s, &mask_tensor(valid));
    let w3 = tape.reshape(w, vec![n, 1, r]);
    let pooled = tape.bmm(w3, hidden);
    let pooled = tape.reshape(pooled, vec![n, h]);
    Ok(pooled)
}

/// Batch statistics produced by one training-mode projector pass, used to
/// advance the running estimates between steps.
pub struct BnStats {
    pub block: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Pre-training head. In training mode batch statistics are used (and
/// returned so the caller can update the running buffers); in eval mode the
/// stored running statistics apply.
pub fn project(
    tape: &mut Tape,
    bound: &Bound,
    params: &AggregatorParams,
    embedding: Var,
    train: bool,
) -> Result<(Var, Vec<BnStats>)> {
    let mut stats = Vec::new();
    match &params.arch.projector {
        ProjectorConfig::Identity => {
            let z = tape.matmul(embedding, bound.v("proj.0.w"));
            let z = tape.add_bias(z, bound.v("proj.0.b"));
            Ok((z, stats))
        }
        ProjectorConfig::Standard { .. } => {
            let n = tape.value(embedding).shape()[0];
            if train && n < 2 {
                return Err(Error::BatchTooSmall(n));
            }
            let mut z = embedding;
            for i in 0..3 {
                z = tape.matmul(z, bound.v(&format!("proj.{i}.w")));
                z = tape.add_bias(z, bound.v(&format!("proj.{i}.b")));
                if i < 2 {
                    if train {
                        let (y, mean, var) = tape.batch_norm_train(
                            z,
                            bound.v(&format!("proj.bn{i}.g")),
                            bound.v(&format!("proj.bn{i}.b")),
                            BN_EPS,
                        );
                        stats.push(BnStats { block: i, mean, var });
                        z = y;
                    } else {
                        let rm = params.get(&format!("proj.bn{i}.rm"));
                        let rv = params.get(&format!("proj.bn{i}.rv"));
                        let g = params.get(&format!("proj.bn{i}.g"));
                        let b = params.get(&format!("proj.bn{i}.b"));
                        let f = rm.size();
                        let rows = tape.value(z).shape()[0];
                        let mut scale = vec![0.0; rows * f];
                        let mut shift = vec![0.0; rows * f];
                        for j in 0..f {
                            let a = g.data()[j] / (rv.data()[j] + BN_EPS).sqrt();
                            let c = b.data()[j] - rm.data()[j] * a;
                            for row in 0..rows {
                                scale[row * f + j] = a;
                                shift[row * f + j] = c;
                            }
                        }
                        z = tape.mul_const(z, &Tensor::new(vec![rows, f], scale));
                        z = tape.add_const(z, &Tensor::new(vec![rows, f], shift));
                    }
                    z = tape.relu(z);
                }
            }
            Ok((z, stats))
        }
    }
}

/// Fold one pass's batch statistics into the running buffers (biased batch
/// variance is converted to the unbiased estimate, matching the usual
/// batch-norm bookkeeping). `n` is the batch size of the pass.
pub fn apply_bn_updates(params: &mut AggregatorParams, stats: &[BnStats], n: usize) {
    for s in stats {
        let correction = if n > 1 { n as f64 / (n as f64 - 1.0) } else { 1.0 };
        let rm = params.get_mut(&format!("proj.bn{}.rm", s.block));
        for (r, m) in rm.data_mut().iter_mut().zip(&s.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        let rv = params.get_mut(&format!("proj.bn{}.rv", s.block));
        for (r, v) in rv.data_mut().iter_mut().zip(&s.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * (v * correction);
        }
    }
}

/// Linear classifier over the pooled slide embedding.
pub fn classify(tape: &mut Tape, bound: &Bound, embedding: Var) -> Var {
    let z = tape.matmul(embedding, bound.v("cls.w"));
    tape.add_bias(z, bound.v("cls.b"))
}

/// Eval-mode forward of the classifier path over one padded batch:
/// returns `(logits [n,2], pooled embeddings [n,h])`.
pub fn eval_forward(params: &AggregatorParams, batch: &PaddedBatch) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params);
    let enc = encoder_forward(&mut tape, &bound, &params.arch, batch, None)?;
    let pooled = attention_pool(&mut tape, &bound, enc.hidden, &enc.valid)?;
    let logits = classify(&mut tape, &bound, pooled);
    Ok((tape.value(logits).clone(), tape.value(pooled).clone()))
}

/// Softmax probabilities per row of a `[n, 2]` logit tensor.
pub fn softmax_rows(logits: &Tensor) -> Vec<[f64; 2]> {
    let n = logits.shape()[0];
    (0..n)
        .map(|i| {
            let a = logits.data()[i * 2];
            let b = logits.data()[i * 2 + 1];
            let m = a.max(b);
            let (ea, eb) = ((a - m).exp(), (b - m).exp());
            let z = ea + eb;
            [ea / z, eb / z]
        })
        .collect()
}

/// Predicted class per row: argmax with ties going to class 0.
pub fn predict_rows(logits: &Tensor) -> Vec<u8> {
    let n = logits.shape()[0];
    (0..n)
        .map(|i| u8::from(logits.data()[i * 2 + 1] > logits.data()[i * 2]))
        .collect()
}

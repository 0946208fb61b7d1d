//! Intra-batch span mixing for pre-training and the pairwise interpolation
//! primitives used during fine-tuning.
//!
//! Span mixing pairs sample `i` with its batch-order mirror `flip(i) =
//! n-1-i` and replaces one contiguous run of region rows with the donor's
//! rows at the same positions. All index bookkeeping lives in [`MixPlan`].

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::bag::PaddedBatch;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-sample span-mixing bookkeeping.
///
/// For every sample `i`: `lambda_raw` is the Beta draw, `ratio =
/// sqrt(1 - (0.8*lambda + 0.1))`, `cut_len = round(ratio * non_pad_len)`
/// clamped so the span fits the shorter of receiver and donor, the span is
/// `[start_idx, end_idx)`, and `lam = 1 - cut_len / non_pad_len` is the
/// fraction of the receiver's own regions that survive.
#[derive(Clone, Debug, PartialEq)]
pub struct MixPlan {
    pub lambda_raw: Vec<f64>,
    pub ratio: Vec<f64>,
    pub non_pad_len: Vec<usize>,
    pub cut_len: Vec<usize>,
    pub start_idx: Vec<usize>,
    pub end_idx: Vec<usize>,
    pub lam: Vec<f64>,
}

impl MixPlan {
    pub fn len(&self) -> usize {
        self.lam.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lam.is_empty()
    }
}

/// Batch-order mirror index.
pub fn flip_index(i: usize, n: usize) -> usize {
    n - 1 - i
}

/// `n` independent Beta(a, b) draws in the open unit interval.
pub fn sample_lambda(rng: &mut impl Rng, a: f64, b: f64, n: usize) -> Result<Vec<f64>> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::invalid(format!("Beta shape parameters must be positive, got ({a}, {b})")));
    }
    let beta = Beta::new(a, b).map_err(|e| Error::invalid(format!("Beta({a},{b}): {e}")))?;
    Ok((0..n)
        .map(|_| {
            let v: f64 = beta.sample(rng);
            v.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
        })
        .collect())
}

/// Mixing proportion `sqrt(1 - (0.8*lambda + 0.1))`; the affine map keeps
/// the argument inside [0.1, 0.9] for any lambda in [0, 1].
pub fn mix_ratio(lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must lie in [0,1], got {lambda}")));
    }
    Ok((1.0 - (0.8 * lambda + 0.1)).sqrt())
}

fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Number of leading `true` positions (masks are trailing-padded prefixes).
pub fn prefix_len(valid: &[bool]) -> usize {
    valid.iter().take_while(|&&v| v).count()
}

/// Plan one span mix for a batch described by its validity mask.
///
/// The donor of sample `i` is `flip(i)`. The cut length is clamped so the
/// span lies inside the valid prefix of both receiver and donor; the span
/// center is drawn continuously and indices are rounded half-up, which
/// keeps `end - start == cut_len` exactly.
pub fn plan_span_mix(
    valid: &[Vec<bool>],
    lambdas: &[f64],
    rng: &mut impl Rng,
) -> Result<MixPlan> {
    let n = valid.len();
    if n == 0 {
        return Err(Error::invalid("cannot plan a mix for an empty batch"));
    }
    if lambdas.len() != n {
        return Err(Error::shape(format!("{} lambdas for {} samples", lambdas.len(), n)));
    }
    let lens: Vec<usize> = valid.iter().map(|m| prefix_len(m)).collect();
    if lens.iter().any(|&l| l == 0) {
        return Err(Error::invalid("every sample needs at least one valid region"));
    }

    let mut plan = MixPlan {
        lambda_raw: lambdas.to_vec(),
        ratio: Vec::with_capacity(n),
        non_pad_len: lens.clone(),
        cut_len: Vec::with_capacity(n),
        start_idx: Vec::with_capacity(n),
        end_idx: Vec::with_capacity(n),
        lam: Vec::with_capacity(n),
    };

    for i in 0..n {
        let ratio = mix_ratio(lambdas[i])?;
        let npl = lens[i];
        let donor_len = lens[flip_index(i, n)];
        let limit = npl.min(donor_len);
        let cut = (round_half_up(ratio * npl as f64) as usize).clamp(1, limit);
        let half = cut as f64 / 2.0;
        let lo = half;
        let hi = limit as f64 - half;
        let cr = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let start = round_half_up(cr - half) as usize;
        let end = round_half_up(cr + half) as usize;
        debug_assert_eq!(end - start, cut);
        plan.ratio.push(ratio);
        plan.cut_len.push(cut);
        plan.start_idx.push(start);
        plan.end_idx.push(end);
        plan.lam.push(1.0 - cut as f64 / npl as f64);
    }
    Ok(plan)
}

/// Replace each sample's planned span with the donor's rows at the same
/// positions. The source is always the unmixed input and the mask is
/// unchanged.
pub fn apply_span_mix(batch: &PaddedBatch, plan: &MixPlan) -> Result<PaddedBatch> {
    let n = batch.batch_size();
    if plan.len() != n {
        return Err(Error::shape(format!("plan for {} samples, batch has {}", plan.len(), n)));
    }
    let (r, d) = (batch.r_max(), batch.dim());
    for i in 0..n {
        let limit = batch.len_of(i).min(batch.len_of(flip_index(i, n)));
        if plan.end_idx[i] > limit {
            return Err(Error::shape(format!(
                "span [{}, {}) of sample {i} exceeds the common valid prefix {limit}",
                plan.start_idx[i], plan.end_idx[i]
            )));
        }
    }
    let mut out = batch.clone();
    let src = batch.data.data();
    let dst = out.data.data_mut();
    for i in 0..n {
        let j = flip_index(i, n);
        let (s, e) = (plan.start_idx[i], plan.end_idx[i]);
        for t in s..e {
            let from = (j * r + t) * d;
            let to = (i * r + t) * d;
            dst[to..to + d].copy_from_slice(&src[from..from + d]);
        }
    }
    Ok(out)
}

/// Union of two trailing-padded prefix masks.
fn union_masks(a: &[Vec<bool>], b: &[Vec<bool>]) -> Vec<Vec<bool>> {
    a.iter()
        .zip(b)
        .map(|(ma, mb)| ma.iter().zip(mb).map(|(&x, &y)| x || y).collect())
        .collect()
}

/// Convex interpolation of a batch with its batch-order mirror, treating
/// padding as zero. Returns the mixed batch (mask = union of the pair's
/// masks) together with the `(own, donor)` label pairs.
pub fn mixup_pair(
    batch: &PaddedBatch,
    labels: &[u8],
    lambda: f64,
) -> Result<(PaddedBatch, Vec<(u8, u8)>, f64)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must lie in [0,1], got {lambda}")));
    }
    let n = batch.batch_size();
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for {} samples", labels.len(), n)));
    }
    let flipped = batch.data.flipped0();
    let data = batch
        .data
        .zip(&flipped, |x, y| lambda * x + (1.0 - lambda) * y);
    let flipped_valid: Vec<Vec<bool>> = (0..n).map(|i| batch.valid[flip_index(i, n)].clone()).collect();
    let valid = union_masks(&batch.valid, &flipped_valid);
    let pairs = (0..n)
        .map(|i| (labels[i], labels[flip_index(i, n)]))
        .collect();
    Ok((PaddedBatch { data, valid }, pairs, lambda))
}

/// The same interpolation applied to hidden states `[n, r, h]`.
pub fn manifold_mix(
    hidden: &Tensor,
    valid: &[Vec<bool>],
    lambda: f64,
) -> Result<(Tensor, Vec<Vec<bool>>)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must lie in [0,1], got {lambda}")));
    }
    let n = hidden.shape()[0];
    if valid.len() != n {
        return Err(Error::shape("mask batch size mismatch"));
    }
    let flipped = hidden.flipped0();
    let mixed = hidden.zip(&flipped, |x, y| lambda * x + (1.0 - lambda) * y);
    let flipped_valid: Vec<Vec<bool>> = (0..n).map(|i| valid[flip_index(i, n)].clone()).collect();
    Ok((mixed, union_masks(valid, &flipped_valid)))
}

//! Pre-training losses built on the cross-correlation of two batch-normalized
//! embedding views, the three-term mixed total, and the mixed-label
//! cross-entropy used during fine-tuning.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Weights of the three pre-training loss components plus the off-diagonal
/// coefficient of the cross-correlation objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda_bt: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 0.5,
            gamma: 0.5,
            lambda_bt: 0.0051,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        if self.lambda_bt <= 0.0 {
            return Err(Error::invalid("lambda_bt must be positive"));
        }
        Ok(())
    }
}

/// Normalization epsilon inside the loss's batch normalization.
pub const LOSS_BN_EPS: f64 = 1e-5;
const VAR_TINY: f64 = 1e-12;

/// The plain cross-correlation loss between two `[n, p]` embedding views:
/// columns of both views are standardized over the batch, `C` is their
/// `1/n` cross product, and the loss drives `diag(C)` to one while shrinking
/// every off-diagonal entry.
pub fn original_loss(tape: &mut Tape, za: Var, zb: Var, lambda_bt: f64) -> Result<Var> {
    original_loss_opts(tape, za, zb, lambda_bt, LOSS_BN_EPS, false)
}

pub fn original_loss_opts(
    tape: &mut Tape,
    za: Var,
    zb: Var,
    lambda_bt: f64,
    eps: f64,
    strict: bool,
) -> Result<Var> {
    let (n, p) = {
        let sa = tape.value(za).shape();
        let sb = tape.value(zb).shape();
        if sa != sb || sa.len() != 2 {
            return Err(Error::shape(format!("embedding shapes {sa:?} vs {sb:?}")));
        }
        (sa[0], sa[1])
    };
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    if strict {
        for (name, v) in [("first", za), ("second", zb)] {
            if let Some(col) = zero_variance_column(tape.value(v)) {
                return Err(Error::invalid(format!(
                    "{name} embedding has zero variance in column {col}"
                )));
            }
        }
    }
    let zha = tape.standardize_cols(za, eps);
    let zhb = tape.standardize_cols(zb, eps);
    let zha_t = tape.transpose2(zha);
    let c = tape.matmul(zha_t, zhb);
    let c = tape.scale(c, 1.0 / n as f64);

    let mut eye = Tensor::zeros(&[p, p]);
    let mut off = Tensor::full(&[p, p], 1.0);
    for i in 0..p {
        eye.data_mut()[i * p + i] = 1.0;
        off.data_mut()[i * p + i] = 0.0;
    }
    let neg_eye = eye.scale(-1.0);

    let c_minus_i = tape.add_const(c, &neg_eye);
    let sq = tape.mul(c_minus_i, c_minus_i);
    let diag_sq = tape.mul_const(sq, &eye);
    let on_diag = tape.sum_all(diag_sq);

    let c_sq = tape.mul(c, c);
    let off_sq = tape.mul_const(c_sq, &off);
    let off_diag = tape.sum_all(off_sq);

    let off_scaled = tape.scale(off_diag, lambda_bt);
    Ok(tape.add(on_diag, off_scaled))
}

fn zero_variance_column(z: &Tensor) -> Option<usize> {
    let (n, p) = (z.shape()[0], z.shape()[1]);
    (0..p).find(|&j| {
        let mean = (0..n).map(|i| z.data()[i * p + j]).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|i| {
                let d = z.data()[i * p + j] - mean;
                d * d
            })
            .sum::<f64>()
            / n as f64;
        var < VAR_TINY
    })
}

/// Mixed-pair loss: per-sample weights applied to the plain loss against
/// `zy` and against its batch-order flip. The two inner losses are scalars,
/// so the per-sample weighting collapses to the mean weights; both routes
/// agree and the literal form is kept in the tests.
pub fn mix_loss(
    tape: &mut Tape,
    zx: Var,
    zy: Var,
    lam_a: &[f64],
    lam_b: &[f64],
    lambda_bt: f64,
) -> Result<Var> {
    let n = tape.value(zx).shape()[0];
    if lam_a.len() != n || lam_b.len() != n {
        return Err(Error::shape(format!(
            "weight vectors of lengths {}/{} for batch {n}",
            lam_a.len(),
            lam_b.len()
        )));
    }
    let o = original_loss(tape, zx, zy, lambda_bt)?;
    let zy_flip = tape.flip0(zy);
    let f = original_loss(tape, zx, zy_flip, lambda_bt)?;
    let mean_a = lam_a.iter().sum::<f64>() / n as f64;
    let mean_b = lam_b.iter().sum::<f64>() / n as f64;
    let oa = tape.scale(o, mean_a);
    let fb = tape.scale(f, mean_b);
    Ok(tape.add(oa, fb))
}

/// The three components of the pre-training objective and their weighted sum.
pub struct PretrainLoss {
    pub total: Var,
    pub source: Var,
    pub mix_source: Var,
    pub mix: Var,
}

/// Total pre-training loss over the four embedding views.
///
/// `lam[i]` is the fraction of sample `i`'s own regions that survived span
/// mixing; `com` measures how much of each mixed pair the two views share
/// and reweights the mixed-vs-mixed term.
pub fn total_pretrain_loss(
    tape: &mut Tape,
    za: Var,
    zb: Var,
    za_mix: Var,
    zb_mix: Var,
    lam: &[f64],
    weights: &LossWeights,
) -> Result<PretrainLoss> {
    weights.validate()?;
    let n = tape.value(za).shape()[0];
    if lam.len() != n {
        return Err(Error::shape(format!("{} lam values for batch {n}", lam.len())));
    }
    if lam.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(Error::invalid("lam values must lie in [0,1]"));
    }

    let source = original_loss(tape, za, zb, weights.lambda_bt)?;

    let one_minus: Vec<f64> = lam.iter().map(|l| 1.0 - l).collect();
    let mix_source = mix_loss(tape, zb_mix, za, lam, &one_minus, weights.lambda_bt)?;

    let com: Vec<f64> = (0..n)
        .map(|i| {
            let flip = lam[n - 1 - i];
            lam[i].min(1.0 - flip) + (1.0 - lam[i]).min(flip)
        })
        .collect();
    let w_own: Vec<f64> = com.iter().map(|c| 1.0 / (1.0 + c)).collect();
    let w_com: Vec<f64> = com.iter().map(|c| c / (1.0 + c)).collect();
    let mix = mix_loss(tape, zb_mix, za_mix, &w_own, &w_com, weights.lambda_bt)?;

    let s = tape.scale(source, weights.alpha);
    let ms = tape.scale(mix_source, weights.beta);
    let m = tape.scale(mix, weights.gamma);
    let sm = tape.add(s, ms);
    let total = tape.add(sm, m);
    Ok(PretrainLoss { total, source, mix_source, mix })
}

/// `lambda * CE(logits, y_a) + (1 - lambda) * CE(logits, y_b)`, mean over
/// the batch. With `lambda = 1` this is plain cross-entropy against `y_a`.
pub fn cross_entropy_mixed(
    tape: &mut Tape,
    logits: Var,
    y_a: &[usize],
    y_b: &[usize],
    lambda: f64,
) -> Result<Var> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must lie in [0,1], got {lambda}")));
    }
    let classes = tape.value(logits).shape()[1];
    if y_a.iter().chain(y_b).any(|&y| y >= classes) {
        return Err(Error::invalid("class index out of range"));
    }
    let ce_a = tape.cross_entropy_mean(logits, y_a);
    let ce_b = tape.cross_entropy_mean(logits, y_b);
    let wa = tape.scale(ce_a, lambda);
    let wb = tape.scale(ce_b, 1.0 - lambda);
    Ok(tape.add(wa, wb))
}

//! Training-phase drivers: the self-supervised pre-training loop over four
//! embedding views, the mixed-label fine-tuning loop, batched evaluation,
//! and the learner that the selection loop retrains each iteration.

use std::collections::HashMap;

use crate::active::{FitOutcome, Learner, PoolSnapshot};
use crate::augment::make_view;
use crate::autodiff::{Tape, Var};
use crate::bag::{pad_batch, FeatureBag, PaddedBatch};
use crate::config::RunConfig;
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::losses::{cross_entropy_mixed, total_pretrain_loss};
use crate::mixing::{apply_span_mix, flip_index, mixup_pair, plan_span_mix, sample_lambda};
use crate::model::{
    apply_bn_updates, attention_pool, bind_params, classify, encoder_forward, eval_forward,
    predict_rows, project, softmax_rows, AggregatorParams, BnStats, Bound, MixLocation,
};
use crate::optim::{adam_step, lars_step, step_lr, warmup_cosine_lr, AdamState, LarsState};
use crate::rng;

const EVAL_BATCH: usize = 64;

/// Mean loss components of one pre-training epoch.
#[derive(Clone, Debug)]
pub struct EpochLoss {
    pub total: f64,
    pub source: f64,
    pub mix_source: f64,
    pub mix: f64,
    pub lr_weights: f64,
    pub lr_bias_norm: f64,
}

pub struct PretrainOutcome {
    pub params: AggregatorParams,
    pub epochs: Vec<EpochLoss>,
}

/// Standard deviation of all feature values across a set of bags.
pub fn feature_std(bags: &[FeatureBag]) -> f64 {
    let mut n = 0usize;
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for b in bags {
        for &v in &b.features {
            let v = f64::from(v);
            n += 1;
            sum += v;
            sum_sq += v * v;
        }
    }
    if n == 0 {
        return 1.0;
    }
    let mean = sum / n as f64;
    (sum_sq / n as f64 - mean * mean).max(0.0).sqrt()
}

fn project_view(
    tape: &mut Tape,
    bound: &Bound,
    params: &AggregatorParams,
    batch: &PaddedBatch,
) -> Result<(Var, Vec<BnStats>)> {
    let enc = encoder_forward(tape, bound, &params.arch, batch, None)?;
    let pooled = attention_pool(tape, bound, enc.hidden, &enc.valid)?;
    project(tape, bound, params, pooled, true)
}

/// Intersection of the two views' valid prefixes, one mask per sample.
/// Span plans drawn against it are valid in both padded view batches.
fn intersection_mask(a: &PaddedBatch, b: &PaddedBatch) -> Vec<Vec<bool>> {
    let width = a.r_max().min(b.r_max());
    (0..a.batch_size())
        .map(|i| {
            let l = a.len_of(i).min(b.len_of(i));
            (0..width).map(|t| t < l).collect()
        })
        .collect()
}

/// Self-supervised pre-training: two augmented views per bag, one shared
/// span-mix plan applied to both, four forward passes through the
/// aggregator and projector, and a layer-adaptive update per step.
pub fn pretrain(cfg: &RunConfig, dataset: &Dataset, seed: u64) -> Result<PretrainOutcome> {
    let mut bags = dataset.load_split(Split::Pretrain)?;
    if cfg.dataset.include_pool_in_pretraining {
        bags.extend(dataset.load_split(Split::Pool)?);
    }
    let batch_size = cfg.pretrain.batch_size;
    if bags.len() < batch_size {
        return Err(Error::invalid(format!(
            "pre-training needs at least one full batch ({} bags available, batch size {batch_size})",
            bags.len()
        )));
    }
    let aug = cfg.augment.resolve(feature_std(&bags));
    aug.validate()?;
    let mut params = AggregatorParams::init(seed, &cfg.arch)?;
    let schedule = cfg.pretrain.schedule();
    let lars_cfg = cfg.pretrain.lars();
    let mut state = LarsState::default();
    let mut epochs = Vec::with_capacity(cfg.pretrain.epochs);
    let mut step: u64 = 0;

    for epoch in 0..cfg.pretrain.epochs {
        let lr = warmup_cosine_lr(&schedule, epoch)?;
        let mut order: Vec<usize> = (0..bags.len()).collect();
        shuffle(&mut order, &mut rng::stream(seed, "data", epoch as u64));

        let mut sums = [0.0f64; 4];
        let mut batches = 0usize;
        for chunk in order.chunks_exact(batch_size) {
            step += 1;
            let mut views_a = Vec::with_capacity(batch_size);
            let mut views_b = Vec::with_capacity(batch_size);
            for (k, &idx) in chunk.iter().enumerate() {
                let view_idx = (step * batch_size as u64 + k as u64) * 2;
                let mut rng_a = rng::stream(seed, "augment", view_idx);
                let mut rng_b = rng::stream(seed, "augment", view_idx + 1);
                views_a.push(make_view(&bags[idx], &mut rng_a, cfg.augment.view_mode, &aug));
                views_b.push(make_view(&bags[idx], &mut rng_b, cfg.augment.view_mode, &aug));
            }
            let batch_a = pad_batch(&views_a.iter().collect::<Vec<_>>())?;
            let batch_b = pad_batch(&views_b.iter().collect::<Vec<_>>())?;

            let mut rng_mix = rng::stream(seed, "mixing", step);
            let lambdas = sample_lambda(&mut rng_mix, cfg.pretrain.beta_a, cfg.pretrain.beta_b, batch_size)?;
            let mask = intersection_mask(&batch_a, &batch_b);
            let plan = plan_span_mix(&mask, &lambdas, &mut rng_mix)?;
            let mixed_a = apply_span_mix(&batch_a, &plan)?;
            let mixed_b = apply_span_mix(&batch_b, &plan)?;

            let mut tape = Tape::new();
            let bound = bind_params(&mut tape, &params);
            let (za, st_a) = project_view(&mut tape, &bound, &params, &batch_a)?;
            let (zb, st_b) = project_view(&mut tape, &bound, &params, &batch_b)?;
            let (za_mix, st_am) = project_view(&mut tape, &bound, &params, &mixed_a)?;
            let (zb_mix, st_bm) = project_view(&mut tape, &bound, &params, &mixed_b)?;
            let parts =
                total_pretrain_loss(&mut tape, za, zb, za_mix, zb_mix, &plan.lam, &cfg.loss)?;
            let total = tape.value(parts.total).item();
            if !total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "pre-training loss at epoch {epoch} step {step}"
                )));
            }
            sums[0] += total;
            sums[1] += tape.value(parts.source).item();
            sums[2] += tape.value(parts.mix_source).item();
            sums[3] += tape.value(parts.mix).item();
            batches += 1;

            let grads = tape.backward(parts.total);
            let grads: Vec<_> = bound
                .param_grads(&params, &grads)
                .into_iter()
                .filter(|(name, _)| !name.starts_with("cls."))
                .collect();
            lars_step(&mut params, &grads, &mut state, lr, &lars_cfg)?;
            for stats in [&st_a, &st_b, &st_am, &st_bm] {
                apply_bn_updates(&mut params, stats, batch_size);
            }
        }
        let denom = batches.max(1) as f64;
        epochs.push(EpochLoss {
            total: sums[0] / denom,
            source: sums[1] / denom,
            mix_source: sums[2] / denom,
            mix: sums[3] / denom,
            lr_weights: lr.weights,
            lr_bias_norm: lr.bias_norm,
        });
    }
    Ok(PretrainOutcome { params, epochs })
}

#[derive(Clone, Debug)]
pub struct FinetuneEpoch {
    pub ce: f64,
    pub lr: f64,
    pub test_accuracy: Option<f64>,
}

pub struct FinetuneOutcome {
    pub params: AggregatorParams,
    pub epochs: Vec<FinetuneEpoch>,
}

/// Supervised fine-tuning of the classifier path. When mixing is enabled,
/// each batch draws one location and one lambda; labels enter the loss as
/// `(own, donor)` pairs.
pub fn finetune(
    cfg: &RunConfig,
    init: &AggregatorParams,
    train_bags: &[FeatureBag],
    test_bags: &[FeatureBag],
    seed: u64,
    eval_each_epoch: bool,
) -> Result<FinetuneOutcome> {
    if train_bags.is_empty() {
        return Err(Error::invalid("fine-tuning needs at least one labeled bag"));
    }
    let labels: Vec<u8> = train_bags
        .iter()
        .map(|b| b.label.ok_or_else(|| Error::MissingLabel(b.slide_id.clone())))
        .collect::<Result<_>>()?;
    let mut params = init.clone();
    let schedule = cfg.finetune.schedule();
    let adam_cfg = cfg.finetune.adam();
    let mut state = AdamState::default();
    let batch_size = cfg.finetune.batch_size;
    let mut epochs = Vec::with_capacity(cfg.finetune.epochs);
    let mut step: u64 = 0;

    for epoch in 0..cfg.finetune.epochs {
        let lr = step_lr(&schedule, epoch);
        let mut order: Vec<usize> = (0..train_bags.len()).collect();
        shuffle(&mut order, &mut rng::stream(seed, "ft.data", epoch as u64));

        let mut ce_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            step += 1;
            let refs: Vec<&FeatureBag> = chunk.iter().map(|&i| &train_bags[i]).collect();
            let batch_labels: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
            let batch = pad_batch(&refs)?;

            let mut rng_mix = rng::stream(seed, "ft.mix", step);
            let mix = cfg.mixing.sample(&mut rng_mix)?;

            let mut tape = Tape::new();
            let bound = bind_params(&mut tape, &params);
            let loss = match mix {
                None => {
                    let enc = encoder_forward(&mut tape, &bound, &params.arch, &batch, None)?;
                    let pooled = attention_pool(&mut tape, &bound, enc.hidden, &enc.valid)?;
                    let logits = classify(&mut tape, &bound, pooled);
                    let targets: Vec<usize> = batch_labels.iter().map(|&y| y as usize).collect();
                    tape.cross_entropy_mean(logits, &targets)
                }
                Some((MixLocation::Loc1, lambda)) => {
                    let (mixed, pairs, lambda) = mixup_pair(&batch, &batch_labels, lambda)?;
                    let enc = encoder_forward(&mut tape, &bound, &params.arch, &mixed, None)?;
                    let pooled = attention_pool(&mut tape, &bound, enc.hidden, &enc.valid)?;
                    let logits = classify(&mut tape, &bound, pooled);
                    let (y_a, y_b) = split_pairs(&pairs);
                    cross_entropy_mixed(&mut tape, logits, &y_a, &y_b, lambda)?
                }
                Some((loc, lambda)) => {
                    let enc =
                        encoder_forward(&mut tape, &bound, &params.arch, &batch, Some((loc, lambda)))?;
                    let pooled = attention_pool(&mut tape, &bound, enc.hidden, &enc.valid)?;
                    let logits = classify(&mut tape, &bound, pooled);
                    let n = batch_labels.len();
                    let y_a: Vec<usize> = batch_labels.iter().map(|&y| y as usize).collect();
                    let y_b: Vec<usize> =
                        (0..n).map(|i| batch_labels[flip_index(i, n)] as usize).collect();
                    cross_entropy_mixed(&mut tape, logits, &y_a, &y_b, lambda)?
                }
            };
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "fine-tuning loss at epoch {epoch} step {step}"
                )));
            }
            ce_sum += value;
            batches += 1;

            let grads = tape.backward(loss);
            let grads: Vec<_> = bound
                .param_grads(&params, &grads)
                .into_iter()
                .filter(|(name, _)| !name.starts_with("proj."))
                .collect();
            adam_step(&mut params, &grads, &mut state, lr, &adam_cfg)?;
        }

        let accuracy = if eval_each_epoch || epoch + 1 == cfg.finetune.epochs {
            Some(evaluate(&params, test_bags)?)
        } else {
            None
        };
        epochs.push(FinetuneEpoch { ce: ce_sum / batches.max(1) as f64, lr, test_accuracy: accuracy });
    }
    Ok(FinetuneOutcome { params, epochs })
}

fn split_pairs(pairs: &[(u8, u8)]) -> (Vec<usize>, Vec<usize>) {
    pairs
        .iter()
        .map(|&(a, b)| (a as usize, b as usize))
        .unzip()
}

fn shuffle(order: &mut [usize], rng: &mut impl rand::Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

/// Deterministic accuracy of the classifier path over labeled bags.
pub fn evaluate(params: &AggregatorParams, bags: &[FeatureBag]) -> Result<f64> {
    if bags.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty split"));
    }
    let mut correct = 0usize;
    for chunk in bags.chunks(EVAL_BATCH) {
        let refs: Vec<&FeatureBag> = chunk.iter().collect();
        let batch = pad_batch(&refs)?;
        let (logits, _) = eval_forward(params, &batch)?;
        let preds = predict_rows(&logits);
        for (bag, pred) in chunk.iter().zip(preds) {
            let label = bag.label.ok_or_else(|| Error::MissingLabel(bag.slide_id.clone()))?;
            if label == pred {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / bags.len() as f64)
}

/// Class probabilities, slide embedding, and predicted class per bag.
pub fn score_slides(params: &AggregatorParams, bags: &[&FeatureBag]) -> Result<Vec<PoolSnapshot>> {
    let mut out = Vec::with_capacity(bags.len());
    for chunk in bags.chunks(EVAL_BATCH) {
        let batch = pad_batch(chunk)?;
        let (logits, pooled) = eval_forward(params, &batch)?;
        let probs = softmax_rows(&logits);
        let preds = predict_rows(&logits);
        let h = pooled.shape()[1];
        for (i, bag) in chunk.iter().enumerate() {
            out.push(PoolSnapshot {
                id: bag.slide_id.clone(),
                probs: probs[i],
                embedding: pooled.data()[i * h..(i + 1) * h].to_vec(),
                predicted: preds[i],
            });
        }
    }
    Ok(out)
}

/// Retrains from a fixed initialization on each iteration's labeled set and
/// scores the remaining pool, as the selection loop requires.
pub struct PipelineLearner<'a> {
    pub cfg: &'a RunConfig,
    pub init: AggregatorParams,
    pub bags_by_id: HashMap<String, FeatureBag>,
    pub test_bags: Vec<FeatureBag>,
    pub master_seed: u64,
}

impl PipelineLearner<'_> {
    fn bag(&self, id: &str) -> Result<&FeatureBag> {
        self.bags_by_id
            .get(id)
            .ok_or_else(|| Error::invalid(format!("slide {id} is not in the pool")))
    }
}

impl Learner for PipelineLearner<'_> {
    fn fit_and_score(
        &mut self,
        iteration: usize,
        labeled_ids: &[String],
        pool_ids: &[String],
    ) -> Result<FitOutcome> {
        let train: Vec<FeatureBag> = labeled_ids
            .iter()
            .map(|id| self.bag(id).cloned())
            .collect::<Result<_>>()?;
        let ft_seed = rng::child_seed(self.master_seed, "al.train", iteration as u64);
        let out = finetune(self.cfg, &self.init, &train, &self.test_bags, ft_seed, false)?;
        let test_accuracy = out
            .epochs
            .last()
            .and_then(|e| e.test_accuracy)
            .expect("final epoch evaluates");
        let pool_refs: Vec<&FeatureBag> =
            pool_ids.iter().map(|id| self.bag(id)).collect::<Result<_>>()?;
        let pool = score_slides(&out.params, &pool_refs)?;
        let train_refs: Vec<&FeatureBag> = train.iter().collect();
        let labeled = score_slides(&out.params, &train_refs)?;
        Ok(FitOutcome { test_accuracy, pool, labeled })
    }
}

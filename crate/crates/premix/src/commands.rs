//! Command implementations behind the `premix` binary. Each function is a
//! pure function of the loaded config, the seeds, and the dataset bytes;
//! reruns reproduce outputs exactly (modulo file timestamps).

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::active::{al_loop, AlLoopConfig, IterationRecord, Strategy};
use crate::checkpoint::{load_checkpoint_expect, save_checkpoint};
use crate::config::RunConfig;
use crate::dataset::{synth_dataset, Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{append_jsonl, MetricsRecord, MetricsWriter};
use crate::model::AggregatorParams;
use crate::train::{evaluate, finetune, pretrain, PipelineLearner};

pub struct SynthSummary {
    pub dir: PathBuf,
    pub counts: [(Split, usize); 3],
}

/// Generate the synthetic dataset described by the config's `[synth]`
/// section into the dataset directory (or an explicit output directory).
pub fn cmd_synth(cfg: &RunConfig, out: Option<&Path>) -> Result<SynthSummary> {
    let dir = out.unwrap_or(&cfg.dataset.dir).to_path_buf();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let manifest = synth_dataset(&cfg.synth, &dir)?;
    let count = |s: Split| manifest.split(s).count();
    Ok(SynthSummary {
        dir,
        counts: [
            (Split::Pretrain, count(Split::Pretrain)),
            (Split::Pool, count(Split::Pool)),
            (Split::Test, count(Split::Test)),
        ],
    })
}

pub struct PretrainArtifacts {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub first_epoch_loss: f64,
    pub final_epoch_loss: f64,
}

/// Pre-train the aggregator and write `pretrain.pmck` plus per-epoch
/// metrics under `out_dir`.
pub fn cmd_pretrain(cfg: &RunConfig, out_dir: &Path) -> Result<PretrainArtifacts> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let dataset = Dataset::open(&cfg.manifest_path())?;
    let outcome = pretrain(cfg, &dataset, cfg.seed)?;
    let hash = cfg.config_hash();

    let metrics_path = out_dir.join("pretrain_metrics.jsonl");
    let mut writer = MetricsWriter::open(&metrics_path)?;
    for (epoch, e) in outcome.epochs.iter().enumerate() {
        writer.write(&MetricsRecord {
            phase: "pretrain".into(),
            epoch,
            total_loss: e.total,
            source_loss: Some(e.source),
            mix_source_loss: Some(e.mix_source),
            mix_loss: Some(e.mix),
            lr_weights: e.lr_weights,
            lr_bias_norm: Some(e.lr_bias_norm),
            test_accuracy: None,
            config_hash: hash.clone(),
        })?;
    }
    let checkpoint = out_dir.join("pretrain.pmck");
    save_checkpoint(&outcome.params, cfg.pretrain.epochs, &hash, &checkpoint)?;
    Ok(PretrainArtifacts {
        checkpoint,
        metrics: metrics_path,
        first_epoch_loss: outcome.epochs.first().map(|e| e.total).unwrap_or(f64::NAN),
        final_epoch_loss: outcome.epochs.last().map(|e| e.total).unwrap_or(f64::NAN),
    })
}

pub struct FinetuneArtifacts {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub first_epoch_loss: f64,
    pub final_accuracy: f64,
}

/// Fine-tune on the labeled pool split, starting from a checkpoint when
/// given and from scratch otherwise. Test accuracy is evaluated per epoch.
pub fn cmd_finetune(cfg: &RunConfig, out_dir: &Path, init: Option<&Path>) -> Result<FinetuneArtifacts> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let dataset = Dataset::open(&cfg.manifest_path())?;
    let hash = cfg.config_hash();
    let init_params = match init {
        Some(path) => load_checkpoint_expect(path, &cfg.arch, &hash)?.0,
        None => AggregatorParams::init(cfg.seed, &cfg.arch)?,
    };
    let train_bags = dataset.load_split(Split::Pool)?;
    let test_bags = dataset.load_split(Split::Test)?;
    let outcome = finetune(cfg, &init_params, &train_bags, &test_bags, cfg.seed, true)?;

    let metrics_path = out_dir.join("finetune_metrics.jsonl");
    let mut writer = MetricsWriter::open(&metrics_path)?;
    for (epoch, e) in outcome.epochs.iter().enumerate() {
        writer.write(&MetricsRecord {
            phase: "finetune".into(),
            epoch,
            total_loss: e.ce,
            source_loss: None,
            mix_source_loss: None,
            mix_loss: None,
            lr_weights: e.lr,
            lr_bias_norm: None,
            test_accuracy: e.test_accuracy,
            config_hash: hash.clone(),
        })?;
    }
    let checkpoint = out_dir.join("finetune.pmck");
    save_checkpoint(&outcome.params, cfg.finetune.epochs, &hash, &checkpoint)?;
    Ok(FinetuneArtifacts {
        checkpoint,
        metrics: metrics_path,
        first_epoch_loss: outcome.epochs.first().map(|e| e.ce).unwrap_or(f64::NAN),
        final_accuracy: outcome
            .epochs
            .last()
            .and_then(|e| e.test_accuracy)
            .unwrap_or(f64::NAN),
    })
}

/// Which acquisition functions an `al` run covers.
#[derive(Clone, Debug)]
pub enum StrategyChoice {
    One(Strategy),
    All,
}

impl std::str::FromStr for StrategyChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            Ok(StrategyChoice::All)
        } else {
            Ok(StrategyChoice::One(s.parse()?))
        }
    }
}

/// Run the budgeted selection loop for one strategy or sweep all six,
/// appending one JSON line per iteration to `al_history.jsonl`.
pub fn cmd_al(
    cfg: &RunConfig,
    out_dir: &Path,
    choice: Option<StrategyChoice>,
) -> Result<Vec<IterationRecord>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let dataset = Dataset::open(&cfg.manifest_path())?;
    let strategies: Vec<Strategy> = match choice.unwrap_or(StrategyChoice::One(cfg.al.strategy)) {
        StrategyChoice::One(s) => vec![s],
        StrategyChoice::All => Strategy::ALL.to_vec(),
    };

    let hash = cfg.config_hash();
    let init = match &cfg.al.init_checkpoint {
        Some(path) => load_checkpoint_expect(path, &cfg.arch, &hash)?.0,
        None => AggregatorParams::init(cfg.seed, &cfg.arch)?,
    };
    let pool_bags = dataset.load_split(Split::Pool)?;
    let test_bags = dataset.load_split(Split::Test)?;
    let pool_ids: Vec<String> = pool_bags.iter().map(|b| b.slide_id.clone()).collect();
    let bags_by_id: HashMap<String, _> =
        pool_bags.into_iter().map(|b| (b.slide_id.clone(), b)).collect();

    let mut all_records = Vec::new();
    for strategy in strategies {
        let mut learner = PipelineLearner {
            cfg,
            init: init.clone(),
            bags_by_id: bags_by_id.clone(),
            test_bags: test_bags.clone(),
            master_seed: cfg.seed,
        };
        let loop_cfg = AlLoopConfig {
            strategy,
            initial_size: cfg.al.initial_size,
            budget: cfg.al.budget,
            iterations: cfg.al.iterations,
            seed: cfg.seed,
        };
        let state = al_loop(&loop_cfg, &pool_ids, &dataset, &mut learner)?;
        all_records.extend(state.history);
    }
    append_jsonl(&out_dir.join("al_history.jsonl"), &all_records)?;
    Ok(all_records)
}

/// Accuracy of a checkpoint on one labeled split.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, split: Split) -> Result<f64> {
    let dataset = Dataset::open(&cfg.manifest_path())?;
    let (params, _) = load_checkpoint_expect(checkpoint, &cfg.arch, &cfg.config_hash())?;
    let bags = dataset.load_split(split)?;
    if bags.is_empty() {
        return Err(Error::invalid(format!("split {} is empty", split.as_str())));
    }
    evaluate(&params, &bags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SynthSpec;
    use crate::model::{ArchConfig, ProjectorConfig};

    fn fast_config(dir: &Path) -> RunConfig {
        let mut cfg: RunConfig = toml::from_str("").unwrap();
        cfg.seed = 3;
        cfg.dataset.dir = dir.join("data");
        cfg.synth = SynthSpec {
            n_pretrain: 8,
            n_pool: 0,
            n_test: 6,
            dim: 4,
            r_min: 2,
            r_max: 5,
            signal_fraction: 0.5,
            shift: 2.0,
            noise_scale: 1.0,
            seed: 3,
        };
        cfg.arch = ArchConfig {
            dim: 4,
            hidden: 6,
            layers: 1,
            heads: 2,
            ffn_ratio: 2,
            pool_dim: 4,
            projector: ProjectorConfig::Standard { dims: [6, 6, 4] },
            positional: true,
        };
        cfg.pretrain.epochs = 2;
        cfg.pretrain.batch_size = 4;
        cfg.pretrain.warmup_epochs = 1;
        cfg.finetune.epochs = 2;
        cfg.finetune.batch_size = 3;
        cfg.al.initial_size = 4;
        cfg.al.budget = 3;
        cfg.al.iterations = 2;
        cfg
    }

    #[test]
    fn synth_then_pretrain_then_finetune_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = fast_config(dir.path());
        cfg.synth.n_pool = 9;
        let summary = cmd_synth(&cfg, None).unwrap();
        assert_eq!(summary.counts[0].1, 8);

        let runs = dir.path().join("runs");
        let pre = cmd_pretrain(&cfg, &runs).unwrap();
        assert!(pre.checkpoint.exists());
        let records: Vec<MetricsRecord> = crate::metrics::read_jsonl(&pre.metrics).unwrap();
        assert_eq!(records.len(), 2);

        let ft = cmd_finetune(&cfg, &runs, Some(&pre.checkpoint)).unwrap();
        assert!(ft.final_accuracy.is_finite());
        let scratch = cmd_finetune(&cfg, &dir.path().join("runs2"), None).unwrap();
        // same config hash, different initial weights
        assert_ne!(ft.first_epoch_loss, scratch.first_epoch_loss);

        let acc = cmd_eval(&cfg, &ft.checkpoint, Split::Test).unwrap();
        assert!((0.0..=1.0).contains(&acc));
        let acc2 = cmd_eval(&cfg, &ft.checkpoint, Split::Test).unwrap();
        assert_eq!(acc, acc2);
    }
}

// Temporary tuning harness for the directional experiment.
use std::time::Instant;

use premix::config::RunConfig;
use premix::dataset::{synth_dataset, Dataset, Split, SynthSpec};
use premix::model::{AggregatorParams, ArchConfig, MixLocation, ProjectorConfig};
use premix::train::{finetune, pretrain};

fn cfg_for(dir: &std::path::Path, seed: u64, fraction: f64, shift: f64, lr_mult: f64, ft_epochs: usize) -> RunConfig {
    let mut cfg: RunConfig = toml::from_str("").unwrap();
    cfg.seed = seed;
    cfg.dataset.dir = dir.to_path_buf();
    cfg.synth = SynthSpec {
        n_pretrain: 300,
        n_pool: 100,
        n_test: 128,
        dim: 32,
        r_min: 8,
        r_max: 32,
        signal_fraction: fraction,
        shift,
        noise_scale: 1.0,
        seed,
    };
    cfg.arch = ArchConfig {
        dim: 32,
        hidden: 32,
        layers: 1,
        heads: 2,
        ffn_ratio: 2,
        pool_dim: 16,
        projector: ProjectorConfig::Standard { dims: [64, 64, 32] },
        positional: true,
    };
    cfg.pretrain.epochs = 50;
    cfg.pretrain.batch_size = 32;
    cfg.pretrain.warmup_epochs = 5;
    cfg.pretrain.base_lr_weights *= lr_mult;
    cfg.pretrain.base_lr_bias_norm *= lr_mult;
    cfg.finetune.epochs = ft_epochs;
    cfg.finetune.batch_size = 4;
    if let Ok(b) = std::env::var("PT_BATCH") {
        cfg.pretrain.batch_size = b.parse().unwrap();
    }
    if let Ok(l) = std::env::var("LAYERS") {
        cfg.arch.layers = l.parse().unwrap();
    }
    if let Ok(h) = std::env::var("HIDDEN") {
        let h: usize = h.parse().unwrap();
        cfg.arch.hidden = h;
        cfg.arch.pool_dim = h / 2;
    }
    if let Ok(lr) = std::env::var("FT_LR") {
        cfg.finetune.lr = lr.parse().unwrap();
    }
    if let Ok(p) = std::env::var("PROJ") {
        let p: usize = p.parse().unwrap();
        cfg.arch.projector = ProjectorConfig::Standard { dims: [p, p, p / 2] };
    }
    if let Ok(locs) = std::env::var("MIX_LOCS") {
        cfg.mixing.locations = locs
            .chars()
            .map(|c| match c {
                '1' => MixLocation::Loc1,
                '2' => MixLocation::Loc2,
                _ => MixLocation::Loc3,
            })
            .collect();
    }
    cfg
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let fraction: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.25);
    let shift: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.6);
    let lr_mult: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let ft_epochs: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(20);
    let labels: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(100);
    let n_seeds: u64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(3);

    println!("fraction={fraction} shift={shift} lr_mult={lr_mult} ft_epochs={ft_epochs} labels={labels}");
    let mut gaps = Vec::new();
    for seed in 1..=n_seeds {
        let t0 = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let cfg = cfg_for(dir.path(), seed, fraction, shift, lr_mult, ft_epochs);
        synth_dataset(&cfg.synth, dir.path()).unwrap();
        let ds = Dataset::open(&cfg.manifest_path()).unwrap();
        let pool = ds.load_split(Split::Pool).unwrap();
        let test = ds.load_split(Split::Test).unwrap();
        // nested budgets: first k/2 entries of each class in manifest order
        let budget = |k: usize| -> Vec<premix::bag::FeatureBag> {
            let mut out = Vec::new();
            for class in [0u8, 1] {
                out.extend(pool.iter().filter(|b| b.label == Some(class)).take(k / 2).cloned());
            }
            out
        };
        let budgets: Vec<usize> = if labels == 0 { vec![20, 40, 60, 80, 100] } else { vec![labels] };

        let t1 = Instant::now();
        let pre = pretrain(&cfg, &ds, seed).unwrap();
        let pretrain_time = t1.elapsed();
        let first = pre.epochs.first().unwrap().total;
        let last = pre.epochs.last().unwrap().total;

        let mut plain_cfg = cfg.clone();
        plain_cfg.mixing.locations.clear();
        let scratch_init = AggregatorParams::init(seed, &cfg.arch).unwrap();

        let acc_of = |cfg: &RunConfig, init: &AggregatorParams| {
            let mut accs = Vec::new();
            for &k in &budgets {
                let train = budget(k);
                let out = finetune(cfg, init, &train, &test, seed, false).unwrap();
                accs.push(out.epochs.last().unwrap().test_accuracy.unwrap());
            }
            if std::env::var("PER_BUDGET").is_ok() {
                let row: Vec<String> = accs.iter().map(|a| format!("{a:.3}")).collect();
                println!("    budgets: {}", row.join(" "));
            }
            accs.iter().sum::<f64>() / accs.len() as f64
        };
        let scratch_plain = acc_of(&plain_cfg, &scratch_init);
        let scratch_mix = acc_of(&cfg, &scratch_init);
        let pre_plain = acc_of(&plain_cfg, &pre.params);
        let pre_mix = acc_of(&cfg, &pre.params);

        println!(
            "seed {seed}: bt {first:.2}->{last:.2} | scratch {scratch_plain:.4} scratch+mix {scratch_mix:.4} pre {pre_plain:.4} pre+mix {pre_mix:.4} | gap {:+.4} (pretrain {pretrain_time:.0?}, total {:.0?})",
            pre_mix - scratch_plain,
            t0.elapsed()
        );
        gaps.push(pre_mix - scratch_plain);
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    println!("mean gap {mean_gap:+.4}");
}

// Temporary micro-benchmark of one pre-training step's pieces.
use std::time::Instant;

use premix::autodiff::Tape;
use premix::bag::{pad_batch, FeatureBag};
use premix::losses::{total_pretrain_loss, LossWeights};
use premix::model::{attention_pool, bind_params, encoder_forward, project, AggregatorParams, ArchConfig, ProjectorConfig};
use premix::rng::stream;
use premix::tensor::Tensor;
use rand::Rng;

fn main() {
    let arch = ArchConfig {
        dim: 32,
        hidden: 32,
        layers: 1,
        heads: 2,
        ffn_ratio: 2,
        pool_dim: 16,
        projector: ProjectorConfig::Standard { dims: [64, 64, 32] },
        positional: true,
    };
    let params = AggregatorParams::init(0, &arch).unwrap();
    let mut rng = stream(0, "bench", 0);
    let bags: Vec<FeatureBag> = (0..32)
        .map(|i| {
            let r = rng.random_range(8..=32usize);
            let f = (0..r * 32).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            FeatureBag::new(format!("s{i}"), r, 32, f).unwrap()
        })
        .collect();
    let refs: Vec<&FeatureBag> = bags.iter().collect();
    let batch = pad_batch(&refs).unwrap();
    let lam = vec![0.5; 32];
    let weights = LossWeights::default();

    // raw matmul throughput reference
    let a = Tensor::new(vec![960, 32], (0..960 * 32).map(|i| i as f64 * 1e-5).collect());
    let b = Tensor::new(vec![32, 32], (0..32 * 32).map(|i| i as f64 * 1e-4).collect());
    let t = Instant::now();
    let mut acc = 0.0;
    for _ in 0..2000 {
        acc += a.matmul(&b).data()[0];
    }
    println!("2000 matmuls [960x32][32x32]: {:?} (sink {acc:.1})", t.elapsed());

    let t = Instant::now();
    let reps = 20;
    for _ in 0..reps {
        let mut tape = Tape::new();
        let bound = bind_params(&mut tape, &params);
        let mut views = Vec::new();
        for _ in 0..4 {
            let enc = encoder_forward(&mut tape, &bound, &arch, &batch, None).unwrap();
            let pooled = attention_pool(&mut tape, &bound, enc.hidden, &enc.valid).unwrap();
            let (z, _) = project(&mut tape, &bound, &params, pooled, true).unwrap();
            views.push(z);
        }
        let parts =
            total_pretrain_loss(&mut tape, views[0], views[1], views[2], views[3], &lam, &weights)
                .unwrap();
        std::hint::black_box(tape.value(parts.total).item());
    }
    let fwd = t.elapsed();
    println!("{reps} forward-only steps: {fwd:?} ({:?}/step)", fwd / reps);

    let t = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let bound = bind_params(&mut tape, &params);
        let mut views = Vec::new();
        for _ in 0..4 {
            let enc = encoder_forward(&mut tape, &bound, &arch, &batch, None).unwrap();
            let pooled = attention_pool(&mut tape, &bound, enc.hidden, &enc.valid).unwrap();
            let (z, _) = project(&mut tape, &bound, &params, pooled, true).unwrap();
            views.push(z);
        }
        let parts =
            total_pretrain_loss(&mut tape, views[0], views[1], views[2], views[3], &lam, &weights)
                .unwrap();
        let grads = tape.backward(parts.total);
        std::hint::black_box(bound.param_grads(&params, &grads).len());
    }
    let full = t.elapsed();
    println!("{reps} forward+backward steps: {full:?} ({:?}/step)", full / reps);

    // time individual op families at forward sizes
    let x = Tensor::new(vec![32, 30, 32], (0..32*30*32).map(|i| (i % 97) as f64 * 0.01).collect());
    let t = Instant::now();
    for _ in 0..1000 {
        std::hint::black_box(x.permuted(&[0, 2, 1]));
    }
    println!("1000 permutes [32,30,32]: {:?}", t.elapsed());

    let scores = Tensor::new(vec![64, 30, 30], (0..64*30*30).map(|i| (i % 13) as f64 * 0.1).collect());
    let mask = Tensor::full(&[64, 30, 30], 1.0);
    let t = Instant::now();
    for _ in 0..1000 {
        let mut tape = Tape::new();
        let s = tape.leaf(scores.clone());
        std::hint::black_box(tape.masked_softmax(s, &mask));
    }
    println!("1000 masked softmax [64,30,30]: {:?}", t.elapsed());

    let t = Instant::now();
    for _ in 0..1000 {
        std::hint::black_box(x.map(|v| v.tanh()));
    }
    println!("1000 tanh maps [30k]: {:?}", t.elapsed());

    let t = Instant::now();
    for _ in 0..1000 {
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone());
        let g = tape.leaf(Tensor::full(&[32], 1.0));
        let b = tape.leaf(Tensor::zeros(&[32]));
        std::hint::black_box(tape.layer_norm(v, g, b, 1e-5));
    }
    println!("1000 layer norms [32,30,32]: {:?}", t.elapsed());

    let t = Instant::now();
    for _ in 0..1000 {
        std::hint::black_box(x.clone());
    }
    println!("1000 tensor clones [30k]: {:?}", t.elapsed());
}

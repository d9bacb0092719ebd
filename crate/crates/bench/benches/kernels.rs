use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use mmfuse_core::nn::ForwardCtx;
use mmfuse_core::text_encoder::TokenBatch;
use mmfuse_core::{Modality, Model, ModelInputs, RunConfig, Tape, Tensor};

/// Deterministic values in [-1, 1) without pulling in an rng.
fn filled(shape: &[usize]) -> Tensor<f32> {
    let n = shape.iter().product();
    let data = (0..n).map(|i| ((i * 7919) % 1000) as f32 / 500.0 - 1.0).collect();
    Tensor::new(shape, data).unwrap()
}

fn kernels(c: &mut Criterion) {
    let a = filled(&[64, 64]);
    let b = filled(&[64, 64]);
    c.bench_function("matmul 64x64x64", |bench| {
        bench.iter(|| {
            let mut t = Tape::<f32>::new();
            let x = t.constant(a.clone());
            let y = t.constant(b.clone());
            black_box(t.matmul(x, y).unwrap());
        })
    });

    let img = filled(&[16, 8, 16, 16]);
    let w = filled(&[16, 8, 3, 3]);
    c.bench_function("conv2d 16x8x16x16 k3", |bench| {
        bench.iter(|| {
            let mut t = Tape::<f32>::new();
            let x = t.constant(img.clone());
            let k = t.constant(w.clone());
            black_box(t.conv2d(x, k, 1, 1).unwrap());
        })
    });

    let q = filled(&[16, 24, 8]);
    let mask: Vec<u8> = (0..16 * 24).map(|i| u8::from(i % 24 < 18)).collect();
    c.bench_function("attention 16x24x8", |bench| {
        bench.iter(|| {
            let mut t = Tape::<f32>::new();
            let x = t.constant(q.clone());
            black_box(t.attention(x, x, x, Some(&mask)).unwrap());
        })
    });
}

fn desk_inputs(cfg: &RunConfig, batch: usize) -> ModelInputs<f32> {
    let text = &cfg.model.text;
    let len = text.max_len;
    let tokens = TokenBatch {
        ids: (0..batch * len).map(|i| (i * 31) % text.vocab_size).collect(),
        mask: (0..batch * len).map(|i| u8::from(i % len < len * 3 / 4)).collect(),
        batch,
        len,
    };
    let r = cfg.model.vision.resolution;
    ModelInputs {
        tokens: Some(tokens),
        images: Some(filled(&[batch, 3, r, r])),
    }
}

fn models(c: &mut Criterion) {
    let cfg = RunConfig::desk();
    let inputs = desk_inputs(&cfg, cfg.optimizer.batch_size);
    for modality in Modality::ALL {
        let model = Model::new(modality, &cfg.model, 0).unwrap();
        c.bench_function(&format!("{modality} forward, desk batch"), |bench| {
            bench.iter(|| black_box(model.predict(&inputs).unwrap()))
        });
        let labels: Vec<usize> = (0..inputs.len()).map(|i| i % 9).collect();
        c.bench_function(&format!("{modality} forward+backward, desk batch"), |bench| {
            bench.iter_batched(
                Tape::<f32>::new,
                |mut tape| {
                    let bind = model.store.bind(&mut tape);
                    let ctx = ForwardCtx {
                        training: true,
                        seed: 0,
                        step: 1,
                    };
                    let logits = model.logits(&mut tape, &bind, &inputs, &ctx).unwrap();
                    let loss = tape.cross_entropy(logits, &labels).unwrap();
                    tape.backward(loss).unwrap();
                    black_box(model.store.gradients(&tape, &bind))
                },
                BatchSize::SmallInput,
            )
        });
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = kernels, models
}
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use harpnet::codec::{decode_stream, encode_audio};
use harpnet::data::{residual_frames, toy_dataset};
use harpnet::exec::Exec;
use harpnet::model::{HarpNetModel, ModelConfig};
use harpnet::train::{train, TrainConfig};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn codec(c: &mut Criterion) {
    let model = HarpNetModel::new(ModelConfig::toy(2), 0).unwrap();
    let (_, audio) = toy_dataset(3, 1, 1.0, 16_000).remove(0);
    let stream = encode_audio(&model, &audio, Exec::Sequential).unwrap();
    let mut g = c.benchmark_group("codec_1s");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new("encode", name), &exec, |b, &e| {
            b.iter(|| encode_audio(&model, &audio, e).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("decode", name), &exec, |b, &e| {
            b.iter(|| decode_stream(&model, &stream, e).unwrap())
        });
    }
    g.finish();
}

fn training(c: &mut Criterion) {
    let model = HarpNetModel::new(ModelConfig::toy(2), 0).unwrap();
    let frames = residual_frames(&model, &toy_dataset(3, 1, 0.5, 16_000), Exec::Sequential).unwrap();
    let cfg = TrainConfig { warmup_epochs: 0, total_epochs: 1, batch_size: 8, ..TrainConfig::default() };
    let mut g = c.benchmark_group("train_epoch");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| {
                let mut m = model.clone();
                train(&mut m, &frames, &cfg, e).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, codec, training);
criterion_main!(benches);

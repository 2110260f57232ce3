use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use ape_bench::synthetic;
use ape_core::lm::NGramLM;
use ape_core::metrics::{corpus_ter, ter};
use ape_core::pipeline::{self, TrainConfig};
use ape_core::{Decoder, FeatureWeights, Smoothing};

fn metrics(c: &mut Criterion) {
    let data = synthetic(7, 200, 25, 0.1);
    let hyps: Vec<Vec<String>> = data.iter().map(|t| t.mt.tokens().to_vec()).collect();
    let refs: Vec<Vec<String>> = data.iter().map(|t| t.pe.tokens().to_vec()).collect();
    c.bench_function("ter/sentence", |b| b.iter(|| ter(black_box(&hyps[0]), black_box(&refs[0])).unwrap()));
    c.bench_function("ter/corpus-200", |b| b.iter(|| corpus_ter(black_box(&hyps), black_box(&refs)).unwrap()));
}

fn language_model(c: &mut Criterion) {
    let data = synthetic(11, 2000, 25, 0.0);
    let corpus: Vec<&[String]> = data.iter().map(|t| t.pe.tokens()).collect();
    c.bench_function("lm/train-kn-3", |b| {
        b.iter(|| NGramLM::train(black_box(&corpus), 3, Smoothing::KneserNey).unwrap())
    });
    let lm = NGramLM::train(&corpus, 3, Smoothing::KneserNey).unwrap();
    c.bench_function("lm/score", |b| b.iter(|| lm.score(black_box(corpus[0]))));
}

fn decoding(c: &mut Criterion) {
    let data = synthetic(13, 400, 15, 0.05);
    let system = pipeline::train(&data, &TrainConfig::default()).unwrap();
    let decoder = Decoder::new(vec![&system.table], vec![&system.lm], FeatureWeights::default());
    let input = system.input(&data[0].src, &data[0].mt).unwrap();
    let mut group = c.benchmark_group("decode");
    group.sample_size(20);
    group.bench_function("sentence", |b| b.iter(|| decoder.decode(black_box(&input)).unwrap()));
    group.finish();
}

criterion_group!(benches, metrics, language_model, decoding);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ia1_core::instruction::Direction;
use ia1_core::model::{batch_loss_and_grad, build_vocab, prepare, ModelDims, TinyLm};
use ia1_core::replay::{sample_replay, schedule_epoch};
use ia1_core::synthetic::{cipher_corpus, compact_templates, copy_task};
use ia1_core::{g_span, g_word, generate_dataset, tokenize, Task};
use std::hint::black_box;

fn perturbation(c: &mut Criterion) {
    let s = tokenize("the quick brown fox jumps over the lazy dog near the river bank").unwrap();
    c.bench_function("g_word", |b| b.iter(|| g_word(black_box(&s), 7).unwrap()));
    c.bench_function("g_span", |b| b.iter(|| g_span(black_box(&s), 7, 0.6).unwrap()));
}

fn generation(c: &mut Criterion) {
    let corpus = cipher_corpus(200, 0).unwrap();
    let templates = compact_templates();
    let tasks = Task::GENERATION;
    c.bench_function("generate_dataset_200_pairs", |b| {
        b.iter(|| generate_dataset(black_box(&corpus), &tasks, &templates, 0, Direction::Both).unwrap())
    });
}

fn scheduling(c: &mut Criterion) {
    let (old, _) = copy_task(400, 1, 0).unwrap();
    let (new, _) = copy_task(1000, 1, 1).unwrap();
    let pool = sample_replay(&old, 100, 2).unwrap();
    c.bench_function("schedule_epoch_1000_new", |b| {
        b.iter(|| schedule_epoch(black_box(&pool), &new, 32, 3).unwrap())
    });
}

fn training_step(c: &mut Criterion) {
    let corpus = cipher_corpus(40, 0).unwrap();
    let ds = generate_dataset(
        &corpus,
        &[Task::MachineTranslation],
        &compact_templates(),
        0,
        Direction::PivotToNew,
    )
    .unwrap();
    let vocab = build_vocab(&[&ds]).unwrap();
    let dims = ModelDims {
        d_model: 64,
        n_layers: 2,
        n_heads: 2,
        context: 128,
    };
    let model = TinyLm::<f32>::new(dims.with_vocab(vocab.len()), 0).unwrap();
    let batch: Vec<_> = ds.examples[..8]
        .iter()
        .map(|e| prepare(e, &vocab, dims.context, false).unwrap())
        .collect();
    c.bench_function("forward_backward_batch_8", |b| {
        b.iter_batched(
            || batch.clone(),
            |batch| batch_loss_and_grad(&model, &batch).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, perturbation, generation, scheduling, training_step);
criterion_main!(benches);

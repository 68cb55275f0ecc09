//! Sequential versus rayon execution of the batch-level workloads.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tcs_core::lattice::batch_nll;
use tcs_core::nnet::Stacking;
use tcs_core::synthgen::stack_sample;
use tcs_core::{evaluate, Exec, LabelSequence, LogitMatrix, RnnModel, SynthConfig, Synthesizer, TopologyKind};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn lattice_batch(c: &mut Criterion) {
    let config = SynthConfig::default();
    let alphabet = config.alphabet(TopologyKind::Tcs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch: Vec<(LogitMatrix, LabelSequence)> = (0..64)
        .map(|_| {
            let labels = LabelSequence::new((0..5).map(|_| rng.random_range(0..config.n_classes)).collect());
            let m = Array2::from_shape_simple_fn((120, alphabet.len()), || rng.random_range(-3.0..3.0));
            (LogitMatrix::new(m).unwrap(), labels)
        })
        .collect();
    let mut group = c.benchmark_group("batch_nll");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| batch_nll(&batch, &alphabet, TopologyKind::Tcs, mode).unwrap())
        });
    }
    group.finish();
}

fn dataset_generation(c: &mut Criterion) {
    let synth = Synthesizer::new(SynthConfig::default()).unwrap();
    let mut group = c.benchmark_group("generate_dataset");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| synth.generate_dataset(200, mode))
        });
    }
    group.finish();
}

fn heldout_evaluation(c: &mut Criterion) {
    let config = SynthConfig::default();
    let stacking = Stacking::default();
    let utts: Vec<_> = Synthesizer::new(config.clone())
        .unwrap()
        .generate_dataset(50, Exec::Sequential)
        .iter()
        .enumerate()
        .map(|(i, s)| stack_sample(format!("utt{i}"), s, stacking.window, stacking.stride).unwrap())
        .collect();
    let model = RnnModel::new(
        config.feature_dim * stacking.window,
        &[32],
        config.alphabet(TopologyKind::Tcs).unwrap(),
        0,
    )
    .unwrap();
    let mut group = c.benchmark_group("evaluate");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate(&model, &utts, TopologyKind::Tcs, mode).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, lattice_batch, dataset_generation, heldout_evaluation);
criterion_main!(benches);

//! Steady-state throughput of the simulation loop. The harness target is
//! at least 50,000 steps/second for the 3-action scenario; these benches
//! report steps/second directly via the element throughput.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};

use spitband_bench::SimSetup;
use spitband_core::{distance, Corpus, CorpusSpec};

const CHUNK: u64 = 10_000;
const WARMUP_STEPS: u64 = 100_000;

fn bench_learner_steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("steps");
    group.sample_size(10);
    group.throughput(Throughput::Elements(CHUNK));

    for k in [3usize, 10] {
        let setup = SimSetup::new(k);

        let mut cmabfas = setup.cmabfas(1_000_000);
        let mut rng = setup.env_rng(11);
        setup.run_steps(&mut cmabfas, &mut rng, WARMUP_STEPS);
        group.bench_function(format!("cmabfas-k{k}"), |b| {
            b.iter_batched(
                || (cmabfas.clone(), rng.clone()),
                |(mut learner, mut rng)| setup.run_steps(&mut learner, &mut rng, CHUNK),
                BatchSize::LargeInput,
            )
        });

        let mut baseline = setup.baseline();
        let mut rng = setup.env_rng(11);
        setup.run_steps(&mut baseline, &mut rng, WARMUP_STEPS);
        group.bench_function(format!("naive-baseline-k{k}"), |b| {
            b.iter_batched(
                || (baseline.clone(), rng.clone()),
                |(mut learner, mut rng)| setup.run_steps(&mut learner, &mut rng, CHUNK),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn bench_distance(c: &mut Criterion) {
    let corpus = Corpus::generate(&CorpusSpec::default()).expect("corpus generates");
    let space = corpus.space();
    let calls = corpus.calls();
    let pairs: Vec<_> = (0..1000)
        .map(|i| {
            (
                calls[(i * 37) % calls.len()].header,
                calls[(i * 101 + 13) % calls.len()].header,
            )
        })
        .collect();
    let mut group = c.benchmark_group("distance");
    group.throughput(Throughput::Elements(pairs.len() as u64));
    group.bench_function("string-path", |b| {
        b.iter(|| {
            pairs
            .iter()
            .map(|&(x, y)| distance(space.header(x), space.header(y)))
            .sum::<f64>()
        })
    });
    group.bench_function("interned-path", |b| {
        b.iter(|| {
            pairs
                .iter()
                .map(|&(x, y)| space.key(x).distance(&space.key(y)))
                .sum::<f64>()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_learner_steps, bench_distance);
criterion_main!(benches);

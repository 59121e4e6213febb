//! Data-parallel core against its sequential execution.
//!
//! With the default `parallel` feature each workload runs in a one-thread
//! pool and in the default pool (one thread per core). `cargo bench --no-default-features` builds
//! the sequential fallback under the same benchmark ids, so criterion
//! reports the difference against the saved parallel baseline.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fld_core::fld::{FldConfig, FldModel};
use fld_core::numerics::{BnMode, DenseArray, Parameterized};
use fld_core::signal::{family_corpus, Corpus, NormalizationStats};
use fld_core::training::latent_track;

fn model() -> FldModel {
    let cfg = FldConfig {
        hidden: 16,
        kernel: 17,
        ..FldConfig::new(27, 8, 51, 10)
    };
    FldModel::new(
        cfg,
        NormalizationStats::identity(27),
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap()
}

fn batch(n: usize, b: usize) -> DenseArray {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    DenseArray::from_fn(&[n + 1, b, 27, 51], |_| rng.gen_range(-1.0..1.0))
}

fn workloads(c: &mut Criterion, label: &str, run: &dyn Fn(&mut (dyn FnMut() + Send))) {
    let mut m = model();
    let x = batch(10, 16);
    c.bench_with_input(BenchmarkId::new("loss_backward", label), &x, |b, x| {
        b.iter(|| {
            run(&mut || {
                m.zero_grad();
                black_box(m.loss_backward(x, 10, 1.0, BnMode::Train).unwrap());
            })
        })
    });
    let m = model();
    let corpus = Corpus::new(family_corpus(1, 400, 0.0, 0).unwrap()).unwrap();
    c.bench_with_input(
        BenchmarkId::new("latent_track", label),
        &corpus,
        |b, corpus| {
            b.iter(|| {
                run(&mut || {
                    for t in &corpus.trajectories {
                        black_box(latent_track(&m, t).unwrap());
                    }
                })
            })
        },
    );
}

#[cfg(feature = "parallel")]
fn bench(c: &mut Criterion) {
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    workloads(c, "one_thread", &|f| one.install(f));
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    eprintln!("default pool: {} threads", all.current_num_threads());
    workloads(c, "default_pool", &|f| all.install(f));
}

#[cfg(not(feature = "parallel"))]
fn bench(c: &mut Criterion) {
    workloads(c, "sequential", &|f| f());
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench
}
criterion_main!(benches);

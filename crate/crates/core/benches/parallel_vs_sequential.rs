//! Data-parallel hot paths on the rayon pool against the same code pinned to
//! one thread. Built without the `parallel` feature, only the sequential
//! path exists and only that group runs.

use cipher_core::autodiff::ParamStore;
use cipher_core::dynamics::FieldKind;
use cipher_core::encoder::EncoderConfig;
use cipher_core::eval::{encode_anchors, eval_anchors, FlowModel};
use cipher_core::odeint::{generate_dataset, SystemSpec};
use cipher_core::teacher::{TeacherArch, TeacherModel};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn run<T: Send>(mode: &str, f: impl FnOnce() -> T + Send) -> T {
    #[cfg(feature = "parallel")]
    if mode == "sequential" {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
        return pool.install(f);
    }
    let _ = mode;
    f()
}

fn modes() -> &'static [&'static str] {
    if cfg!(feature = "parallel") {
        &["parallel", "sequential"]
    } else {
        &["sequential"]
    }
}

fn dataset_generation(c: &mut Criterion) {
    let spec = SystemSpec { n_traj: 200, ..SystemSpec::pendulum() };
    let mut group = c.benchmark_group("generate_dataset");
    group.sample_size(10);
    for &mode in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(mode), &mode, |b, &mode| {
            b.iter(|| run(mode, || generate_dataset(&spec, 0).expect("dataset")))
        });
    }
    group.finish();
}

fn anchor_encoding(c: &mut Criterion) {
    let data = generate_dataset(&SystemSpec { n_traj: 40, ..SystemSpec::pendulum() }, 0).expect("dataset");
    let arch = TeacherArch {
        encoder: EncoderConfig { layers: 1, hidden: 32, ..EncoderConfig::default() },
        field: FieldKind::UnconstrainedMlp,
        field_hidden: vec![64, 64],
        dissipative: false,
    };
    let mut store = ParamStore::new();
    let model = TeacherModel::new(&mut store, &arch, 1, &mut ChaCha8Rng::seed_from_u64(0)).expect("model");
    let flow = FlowModel { encoder: &model.encoder, field: &model.field, store: &store, dt: 0.05 };
    let anchors = eval_anchors(&data.train, 10, 20, 5, 500);
    let mut group = c.benchmark_group("encode_eval_anchors");
    group.sample_size(10);
    for &mode in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(mode), &mode, |b, &mode| {
            b.iter(|| run(mode, || encode_anchors(&flow, &data.train, &anchors).expect("encode")))
        });
    }
    group.finish();
}

criterion_group!(benches, dataset_generation, anchor_encoding);
criterion_main!(benches);

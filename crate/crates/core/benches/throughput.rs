use calfree::calibration::{self_calibrate, CalibrationBuffer, GdConfig};
use calfree::experiment::{sweep, Inputs, RunSpec};
use calfree::par::Execution;
use calfree::ranging::{select_aps, ApKind, RangingParams};
use calfree::scenario::{self, Scenario};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const SQUARE: &str = include_str!("../../../scenarios/square.json");

fn square() -> Scenario {
    scenario::parse(SQUARE, "square.json").unwrap()
}

fn full_buffer(sc: &Scenario) -> CalibrationBuffer {
    let inputs = Inputs::new(sc, None).unwrap();
    let reg = inputs.sim.registry();
    let mut buffer = CalibrationBuffer::new(sc.engine.buffer_capacity);
    for snap in inputs.snapshots(ApKind::Rtt) {
        buffer.push(select_aps(&snap, &reg, ApKind::Rtt, sc.engine.n_max));
    }
    buffer
}

fn modes() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)]
}

fn self_calibration(c: &mut Criterion) {
    let sc = square();
    let buffer = full_buffer(&sc);
    let start = RangingParams::rtt_linear(1.0, 0.0);
    let cfg = GdConfig::default();
    let mut group = c.benchmark_group("self_calibrate");
    for (name, exec) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| self_calibrate(&start, &buffer, &cfg, exec).unwrap())
        });
    }
    group.finish();
}

fn rho_sweep(c: &mut Criterion) {
    let sc = square();
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for kind in [ApKind::Rss, ApKind::Rtt] {
        let plan = RunSpec {
            mode: kind,
            rho: sc.rho.clone(),
            seed: None,
            benchmark: true,
        };
        for (name, exec) in modes() {
            group.bench_function(BenchmarkId::new(kind.to_string(), name), |b| {
                b.iter(|| sweep(&sc, &plan, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, self_calibration, rho_sweep);
criterion_main!(benches);

//! Written sweep artifacts are enough to reproduce a run offline.

use std::collections::HashMap;
use std::fs::File;

use calfree::experiment::{sweep, sweep_dir, write_sweep, RunSpec};
use calfree::fusion::GatePolicy;
use calfree::io;
use calfree::metrics::compute_report;
use calfree::par::Execution;
use calfree::pipeline::{detect_step_events, Engine, Mode};
use calfree::ranging::{ApKind, ApRegistry, RangingSnapshot};
use calfree::scenario::{self, Scenario};
use calfree::simulator::synth_truth;

const SQUARE: &str = include_str!("../../../scenarios/square.json");

fn square() -> Scenario {
    scenario::parse(SQUARE, "square.json").unwrap()
}

fn replay(kind: ApKind) {
    let sc = square();
    let rho = 0.4;
    let plan = RunSpec {
        mode: kind,
        rho: vec![rho],
        seed: Some(9),
        benchmark: false,
    };
    let sw = sweep(&sc, &plan, Execution::Parallel).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let dir = write_sweep(&sw, tmp.path()).unwrap();
    assert_eq!(dir, sweep_dir(tmp.path(), "square", kind, 9));

    let imu = io::read_imu_file(&dir.join("imu.csv")).unwrap();
    let steps = detect_step_events(&imu, &sc.front_end).unwrap();
    assert_eq!(steps, sw.inputs.steps);
    let written = io::read_steps(File::open(dir.join("steps.csv")).unwrap(), "steps.csv").unwrap();
    assert_eq!(written, steps);

    let registry = ApRegistry::new(io::read_aps_file(&dir.join("aps.csv")).unwrap()).unwrap();
    let by_time: HashMap<u64, RangingSnapshot> = io::read_snapshots_file(&dir.join("snapshots.csv"))
        .unwrap()
        .into_iter()
        .map(|s| (s.t.to_bits(), s))
        .collect();
    let output = Engine {
        registry: &registry,
        kind,
        cfg: &sc.engine,
        policy: GatePolicy::new(rho).unwrap(),
        exec: Execution::Sequential,
        source: |_: usize, t: f64| by_time.get(&t.to_bits()).cloned(),
    }
    .run(&steps, &Mode::Proposed)
    .unwrap();

    let run = &sw.runs[0];
    assert_eq!(output.trace, run.output.trace);
    assert_eq!(output.ranging, run.output.ranging);
    let trace = io::read_trace(File::open(dir.join("rho-0.4/trace.csv")).unwrap(), "trace.csv").unwrap();
    assert_eq!(trace, output.trace);

    let truth = synth_truth(&sc.walk, sc.truth_dt).unwrap();
    let report = compute_report(&output.estimates(), &truth, &output.ranging_times, output.burst).unwrap();
    assert_eq!(report, run.report);
}

#[test]
fn rss_run_replays_from_artifacts() {
    replay(ApKind::Rss);
}

#[test]
fn rtt_run_replays_from_artifacts() {
    replay(ApKind::Rtt);
}

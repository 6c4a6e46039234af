//! Scenario runs and gate-threshold sweeps, plus their on-disk artifacts.
//!
//! A sweep writes one directory per run under
//! `<root>/<scenario>/<mode>/seed-<seed>/`:
//!
//! ```text
//! aps.csv  imu.csv  steps.csv  snapshots.csv  summary.json
//! rho-<ρ>/      trace.csv  report.json  cdf.csv
//!               initial_calibration.csv  self_calibration/round-NNN.csv
//! benchmark/    trace.csv  report.json  cdf.csv
//! ```
//!
//! Every file is a pure function of the scenario and seed.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::calibration::{StopReason, Theta};
use crate::fusion::GatePolicy;
use crate::io;
use crate::metrics::{compute_report, export_cdf, RunReport};
use crate::orientation::ImuSample;
use crate::par::{self, Execution};
use crate::pdr::StepEvent;
use crate::pipeline::{detect_step_events, Engine, EngineOutput, Mode};
use crate::ranging::{ApKind, RangingParams, RangingSnapshot};
use crate::scenario::Scenario;
use crate::simulator::{synth_truth, Simulation, TruthSample};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub mode: ApKind,
    pub rho: Vec<f64>,
    /// Overrides the scenario's seed.
    pub seed: Option<u64>,
    /// Also run the benchmark (true parameters, no calibration, ρ = 0).
    pub benchmark: bool,
}

/// Everything a run consumes, generated once per seed.
#[derive(Clone, Debug)]
pub struct Inputs {
    pub sim: Simulation,
    pub imu: Vec<ImuSample>,
    pub steps: Vec<StepEvent>,
    pub truth: Vec<TruthSample>,
}

impl Inputs {
    pub fn new(scenario: &Scenario, seed: Option<u64>) -> Result<Self> {
        let mut world = scenario.world.clone();
        if let Some(s) = seed {
            world.seed = s;
        }
        let sim = Simulation::new(world, scenario.walk.clone())?;
        let imu = sim.imu(&scenario.front_end.lowpass)?;
        let steps = detect_step_events(&imu, &scenario.front_end)?;
        let truth = synth_truth(&sim.walk, scenario.truth_dt)?;
        Ok(Self { sim, imu, steps, truth })
    }

    /// The ranging epoch offered at every detected step.
    pub fn snapshots(&self, kind: ApKind) -> Vec<RangingSnapshot> {
        self.steps
            .iter()
            .enumerate()
            .map(|(k, s)| self.sim.snapshot(kind, k, s.t))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub rho: f64,
    pub benchmark: bool,
    pub output: EngineOutput,
    pub report: RunReport,
}

pub fn run_one(
    scenario: &Scenario,
    inputs: &Inputs,
    kind: ApKind,
    rho: f64,
    benchmark: bool,
    exec: Execution,
) -> Result<RunOutcome> {
    let registry = inputs.sim.registry();
    let mode = if benchmark {
        Mode::Benchmark(Theta {
            ranging: inputs.sim.true_ranging(kind),
            pdr: inputs.sim.true_pdr(),
        })
    } else {
        Mode::Proposed
    };
    let sim = &inputs.sim;
    let output = Engine {
        registry: &registry,
        kind,
        cfg: &scenario.engine,
        policy: GatePolicy::new(rho)?,
        exec,
        source: |k: usize, t: f64| Some(sim.snapshot(kind, k, t)),
    }
    .run(&inputs.steps, &mode)?;
    let report = compute_report(&output.estimates(), &inputs.truth, &output.ranging_times, output.burst)?;
    Ok(RunOutcome {
        rho,
        benchmark,
        output,
        report,
    })
}

#[derive(Clone, Debug)]
pub struct Sweep {
    pub scenario: String,
    pub kind: ApKind,
    pub seed: u64,
    pub inputs: Inputs,
    /// One run per requested ρ, in request order.
    pub runs: Vec<RunOutcome>,
    pub benchmark: Option<RunOutcome>,
}

/// Runs every requested ρ (in parallel under [`Execution::Parallel`]) and,
/// if asked, the benchmark.
pub fn sweep(scenario: &Scenario, plan: &RunSpec, exec: Execution) -> Result<Sweep> {
    scenario.check(Some(plan.mode))?;
    if let Some((i, r)) = plan.rho.iter().enumerate().find(|(_, r)| !(r.is_finite() && **r >= 0.0)) {
        return Err(Error::Validation(vec![format!("rho[{i}]: {r} must be a finite value >= 0")]));
    }
    let inputs = Inputs::new(scenario, plan.seed)?;
    let mut jobs: Vec<(f64, bool)> = plan.rho.iter().map(|r| (*r, false)).collect();
    if plan.benchmark {
        jobs.push((0.0, true));
    }
    let results = par::map(exec, &jobs, |(rho, bench)| run_one(scenario, &inputs, plan.mode, *rho, *bench, exec));
    let mut runs = Vec::with_capacity(results.len());
    for r in results {
        runs.push(r?);
    }
    let benchmark = if plan.benchmark { runs.pop() } else { None };
    Ok(Sweep {
        scenario: scenario.name.clone(),
        kind: plan.mode,
        seed: inputs.sim.world.seed,
        inputs,
        runs,
        benchmark,
    })
}

#[derive(Serialize)]
struct InitialSummary<'a> {
    theta: &'a Theta,
    cost: f64,
    iterations: usize,
    stop: StopReason,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    mode: ApKind,
    rho: f64,
    benchmark: bool,
    seed: u64,
    steps: usize,
    report: &'a RunReport,
    ranging: &'a RangingParams,
    initial: Option<InitialSummary<'a>>,
    self_calibrations: usize,
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    scenario: &'a str,
    mode: ApKind,
    seed: u64,
    steps: usize,
    runs: Vec<RunSummary<'a>>,
    benchmark: Option<RunSummary<'a>>,
}

fn summarize<'a>(sweep: &'a Sweep, run: &'a RunOutcome) -> RunSummary<'a> {
    RunSummary {
        mode: sweep.kind,
        rho: run.rho,
        benchmark: run.benchmark,
        seed: sweep.seed,
        steps: sweep.inputs.steps.len(),
        report: &run.report,
        ranging: &run.output.ranging,
        initial: run.output.initial.as_ref().map(|c| InitialSummary {
            theta: &c.theta,
            cost: c.cost,
            iterations: c.iterations,
            stop: c.stop,
        }),
        self_calibrations: run.output.self_cals.len(),
    }
}

/// Directory name of a run.
pub fn run_dir_name(run: &RunOutcome) -> String {
    if run.benchmark {
        "benchmark".to_owned()
    } else {
        format!("rho-{}", run.rho)
    }
}

/// Directory a sweep writes into.
pub fn sweep_dir(root: &Path, scenario: &str, kind: ApKind, seed: u64) -> PathBuf {
    root.join(scenario).join(kind.to_string()).join(format!("seed-{seed}"))
}

fn write_run(sweep: &Sweep, run: &RunOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    io::write_file(&dir.join("trace.csv"), |w| io::write_trace(w, &run.output.trace))?;
    io::write_file(&dir.join("cdf.csv"), |w| io::write_cdf(w, &export_cdf(&run.report.errors)))?;
    io::write_file(&dir.join("report.json"), |w| io::write_json(w, &summarize(sweep, run)))?;
    if let Some(init) = &run.output.initial {
        io::write_file(&dir.join("initial_calibration.csv"), |w| {
            io::write_calibration_trace(w, &init.theta.names(), &init.trace)
        })?;
    }
    if !run.output.self_cals.is_empty() {
        let sc_dir = dir.join("self_calibration");
        std::fs::create_dir_all(&sc_dir)?;
        for (i, sc) in run.output.self_cals.iter().enumerate() {
            io::write_file(&sc_dir.join(format!("round-{:03}.csv", i + 1)), |w| {
                io::write_calibration_trace(w, &sc.params.trainable_names(), &sc.trace)
            })?;
        }
    }
    Ok(())
}

/// Writes every artifact of `sweep` and returns its directory.
pub fn write_sweep(sweep: &Sweep, root: &Path) -> Result<PathBuf> {
    let dir = sweep_dir(root, &sweep.scenario, sweep.kind, sweep.seed);
    std::fs::create_dir_all(&dir)?;
    let inputs = &sweep.inputs;
    io::write_file(&dir.join("aps.csv"), |w| io::write_aps(w, &inputs.sim.world.aps))?;
    io::write_file(&dir.join("imu.csv"), |w| io::write_imu(w, &inputs.imu))?;
    io::write_file(&dir.join("steps.csv"), |w| io::write_steps(w, &inputs.steps))?;
    io::write_file(&dir.join("snapshots.csv"), |w| {
        io::write_snapshots(w, &inputs.snapshots(sweep.kind))
    })?;
    for run in sweep.runs.iter().chain(&sweep.benchmark) {
        write_run(sweep, run, &dir.join(run_dir_name(run)))?;
    }
    let summary = SweepSummary {
        scenario: &sweep.scenario,
        mode: sweep.kind,
        seed: sweep.seed,
        steps: inputs.steps.len(),
        runs: sweep.runs.iter().map(|r| summarize(sweep, r)).collect(),
        benchmark: sweep.benchmark.as_ref().map(|r| summarize(sweep, r)),
    };
    io::write_file(&dir.join("summary.json"), |w| io::write_json(w, &summary))?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse;

    fn scenario() -> Scenario {
        parse(
            r#"{ "name": "line", "walk": { "waypoints": [[5, 5], [25, 5], [25, 20]], "speed": 1.3, "cadence": 2.0 } }"#,
            "t",
        )
        .unwrap()
    }

    fn plan(rho: Vec<f64>, benchmark: bool) -> RunSpec {
        RunSpec {
            mode: ApKind::Rtt,
            rho,
            seed: Some(3),
            benchmark,
        }
    }

    #[test]
    fn sweep_keeps_request_order() {
        let s = sweep(&scenario(), &plan(vec![0.8, 0.0], true), Execution::Parallel).unwrap();
        assert_eq!(s.runs.iter().map(|r| r.rho).collect::<Vec<_>>(), vec![0.8, 0.0]);
        assert!(s.benchmark.as_ref().unwrap().benchmark);
        assert_eq!(s.seed, 3);
    }

    #[test]
    fn parallel_and_sequential_sweeps_agree() {
        let a = sweep(&scenario(), &plan(vec![0.0, 0.4], false), Execution::Parallel).unwrap();
        let b = sweep(&scenario(), &plan(vec![0.0, 0.4], false), Execution::Sequential).unwrap();
        for (x, y) in a.runs.iter().zip(&b.runs) {
            assert_eq!(x.output, y.output);
            assert_eq!(x.report, y.report);
        }
    }

    #[test]
    fn negative_rho_is_a_validation_error() {
        let err = sweep(&scenario(), &plan(vec![-1.0], false), Execution::Sequential).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn writes_expected_layout() {
        let tmp = tempfile::tempdir().unwrap();
        let s = sweep(&scenario(), &plan(vec![0.2], true), Execution::Sequential).unwrap();
        let dir = write_sweep(&s, tmp.path()).unwrap();
        assert_eq!(dir, tmp.path().join("line/rtt/seed-3"));
        for f in [
            "aps.csv",
            "imu.csv",
            "steps.csv",
            "snapshots.csv",
            "summary.json",
            "rho-0.2/trace.csv",
            "rho-0.2/report.json",
            "rho-0.2/cdf.csv",
            "rho-0.2/initial_calibration.csv",
            "benchmark/trace.csv",
            "benchmark/report.json",
        ] {
            assert!(dir.join(f).is_file(), "missing {f}");
        }
        assert!(!dir.join("benchmark/initial_calibration.csv").exists());
        let header = std::fs::read_to_string(dir.join("rho-0.2/initial_calibration.csv")).unwrap();
        assert!(header.starts_with("iter,cost,c0,c1,x0,y0,phi_ref,alpha\n"), "{}", &header[..60]);
        let steps = io::read_steps(std::fs::File::open(dir.join("steps.csv")).unwrap(), "steps").unwrap();
        assert_eq!(steps, s.inputs.steps);
    }
}

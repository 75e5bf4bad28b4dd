use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use qobs::dynamics::{measured_trajectory, selective_probability, ControlSchedule};
use qobs::lie::{
    dynamical_lie_algebra, is_observable, observability_spaces, selective_observability_spaces, stabilization_index,
    OperatorSubspace,
};
use qobs::matrix::{CMatrix, DensityMatrix, MatrixJson};
use qobs::observer::{run_observer, ObserverParams};
use qobs::random::random_density;
use qobs::reconstruction::reconstruct as reconstruct_state;
use qobs::scenario::{parse_samples, parse_scenario, parse_schedule_file, write_samples, Measurement, Scenario};
use qobs::{disturbance as dist, indirect};

use crate::failure::Failure;
use crate::Common;

type CmdResult = Result<(), Failure>;

const DEFAULT_WINDOW: f64 = 2.0;

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub common: Common,
    /// CSV file with header `time,y`.
    #[arg(long)]
    pub samples: PathBuf,
    /// Integration horizon (defaults to the scenario's, then the schedule length).
    #[arg(long)]
    pub horizon: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ObserveArgs {
    #[command(flatten)]
    pub common: Common,
    /// Forgetting rate M.
    #[arg(long)]
    pub forgetting: Option<f64>,
    /// Window length σ.
    #[arg(long)]
    pub window: Option<f64>,
    /// Simulated time span (defaults to the schedule length).
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Integrator step.
    #[arg(long)]
    pub step: Option<f64>,
    /// Write time, delta_norm, lyapunov here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Start the estimate at the maximally mixed state instead of a random one.
    #[arg(long)]
    pub mixed_estimate: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// JSON file `{"stages": [[segments], ...]}`; defaults to the scenario schedule.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// Number of evolve-then-measure stages.
    #[arg(short, long, default_value_t = 1)]
    pub k: usize,
    /// Outcome label whose probability at stage k is reported.
    #[arg(long)]
    pub outcome: Option<String>,
    /// Extra uniform sampling step inside each stage.
    #[arg(long)]
    pub sample_step: Option<f64>,
    /// Trajectory CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// `(time, y)` samples of the first stage, readable by `reconstruct`.
    #[arg(long)]
    pub record: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    Ok(parse_scenario(&read(path)?)?)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::io(path, e))
}

fn emit(report: &Value, out: Option<&Path>) -> CmdResult {
    let text = serde_json::to_string_pretty(report).expect("reports are plain JSON");
    match out {
        Some(path) => {
            let mut w = create(path)?;
            writeln!(w, "{text}").and_then(|_| w.flush()).map_err(|e| Failure::io(path, e))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::io(Path::new("<stdout>"), e)),
                _ => Ok(()),
            }
        }
    }
}

fn mat(m: &CMatrix) -> Value {
    serde_json::to_value(MatrixJson::from(m)).expect("matrix serialization cannot fail")
}

struct Settings {
    tol: f64,
    kcap: usize,
    kmax: usize,
    nodes: usize,
    seed: u64,
}

fn settings(c: &Common, sc: &Scenario) -> Result<Settings, Failure> {
    let d = sc.defaults();
    let s = Settings {
        tol: c.tol.unwrap_or_else(|| d.tol()),
        kcap: d.kcap(),
        kmax: c.kmax.unwrap_or_else(|| d.kmax()),
        nodes: c.nodes.unwrap_or_else(|| d.nodes()),
        seed: c.seed.unwrap_or_else(|| d.seed()),
    };
    if !(s.tol.is_finite() && s.tol > 0.0) {
        return Err(Failure::invalid(format!("tolerance must be positive, got {}", s.tol)));
    }
    Ok(s)
}

fn require_schedule(sc: &Scenario) -> Result<ControlSchedule, Failure> {
    if sc.doc.schedule.as_ref().is_none_or(|t| t.is_empty()) {
        return Err(Failure::invalid("scenario has no schedule"));
    }
    Ok(sc.schedule()?)
}

fn ranks(spaces: &[OperatorSubspace], f: impl Fn(&OperatorSubspace) -> usize) -> Vec<usize> {
    spaces.iter().map(f).collect()
}

pub fn analyze(c: &Common) -> CmdResult {
    let sc = load(&c.scenario)?;
    let st = settings(c, &sc)?;
    let l = dynamical_lie_algebra(&sc.hamiltonian_list())?;
    let eff = sc.effective_observable(st.tol, st.kcap)?;
    let ch = sc.channel()?;
    let spaces = observability_spaces(&l, &eff.traceless, &ch, st.kmax)?;
    let observable: Vec<bool> = spaces.iter().map(is_observable).collect();
    let observable_in = observable.iter().skip(1).position(|&o| o).map(|k| k + 1);
    let last_rank = spaces.last().map_or(0, OperatorSubspace::traceless_rank);
    let verdict = match observable_in {
        Some(1) => "observable in 1 step".to_string(),
        Some(k) => format!("observable in {k} steps"),
        None => format!("unobservable, rank {last_rank}"),
    };
    let selective = match sc.measurement {
        Measurement::Direct(_) => Value::Null,
        _ => {
            let sel = selective_observability_spaces(&l, &ch.effects(), &ch, st.kmax)?;
            json!({
                "quotient_ranks": ranks(&sel, OperatorSubspace::traceless_rank),
                "observable": sel.iter().map(is_observable).collect::<Vec<_>>(),
            })
        }
    };
    let report = json!({
        "scenario": sc.name(),
        "dim": sc.dim(),
        "lie_rank": l.rank(),
        "seff": mat(eff.traceless.matrix()),
        "nonselective": {
            "ranks": ranks(&spaces, OperatorSubspace::rank),
            "traceless_ranks": ranks(&spaces, OperatorSubspace::traceless_rank),
            "observable": observable,
        },
        "selective": selective,
        "observable_in": observable_in,
        "stabilization_index": stabilization_index(&spaces),
        "verdict": verdict,
    });
    emit(&report, c.out.as_deref())
}

pub fn seff(c: &Common) -> CmdResult {
    let sc = load(&c.scenario)?;
    let st = settings(c, &sc)?;
    let eff = sc.effective_observable(st.tol, st.kcap)?;
    if !eff.converged {
        log::warn!("series did not reach tolerance {} within {} terms", st.tol, st.kcap);
    }
    let first_order = match &sc.measurement {
        Measurement::Indirect(setup) => mat(indirect::effective_observable_first_order(setup).matrix()),
        _ => Value::Null,
    };
    let report = json!({
        "scenario": sc.name(),
        "method": eff.method,
        "raw": mat(eff.raw.matrix()),
        "traceless": mat(eff.traceless.matrix()),
        "terms_used": eff.terms_used,
        "converged": eff.converged,
        "first_order": first_order,
    });
    emit(&report, c.out.as_deref())
}

pub fn disturbance(c: &Common) -> CmdResult {
    let sc = load(&c.scenario)?;
    let ch = sc.channel()?;
    let rho = sc.initial_state.clone().unwrap_or_else(|| DensityMatrix::basis_state(sc.dim(), 0));
    let d = dist::disturbance(&rho, &ch)?;
    let mut report = json!({
        "scenario": sc.name(),
        "initial_state": { "d": d, "d_squared": d * d },
        "controls": Value::Null,
    });
    if let Measurement::Indirect(setup) = &sc.measurement {
        let b_eigs = setup.b.eigenvalues();
        let (lo, hi) = (b_eigs[0], b_eigs[b_eigs.len() - 1]);
        let c_now = setup.probe_expectation();
        let mut controls = serde_json::Map::new();
        for (sym, h) in &sc.hamiltonians {
            let x = dist::disturbance_generator(h, &setup.a, c_now)?;
            let worst = dist::worst_case_state(&x, setup.tau)?;
            let c_opt = dist::optimal_probe(h, &setup.a, lo, hi)?;
            controls.insert(
                sym.clone(),
                json!({
                    "generator_eigenvalues": worst.eigenvalues,
                    "d_squared": worst.d_squared,
                    "worst_state": mat(worst.worst_state.matrix()),
                    "weights": worst.weights,
                    "pair": [worst.pair.0, worst.pair.1],
                    "multiplier": worst.multiplier,
                    "degenerate": worst.degenerate,
                    "tie": worst.tie,
                    "probe_expectation": c_now,
                    "gap": dist::worst_case_gap(h, &setup.a, c_now)?,
                    "optimal_probe": c_opt,
                    "optimal_gap": dist::worst_case_gap(h, &setup.a, c_opt)?,
                    "probe_range": [lo, hi],
                }),
            );
        }
        report["controls"] = Value::Object(controls);
    }
    emit(&report, c.out.as_deref())
}

pub fn reconstruct(a: &ReconstructArgs) -> CmdResult {
    let sc = load(&a.common.scenario)?;
    let st = settings(&a.common, &sc)?;
    let sched = require_schedule(&sc)?;
    let file = File::open(&a.samples).map_err(|e| Failure::io(&a.samples, e))?;
    let samples = parse_samples(file)?;
    let horizon = a.horizon.or(sc.defaults().horizon).unwrap_or_else(|| sched.total_duration());
    let eff = sc.effective_observable(st.tol, st.kcap)?;
    let r = reconstruct_state(&samples, &sched, &eff.raw, horizon, st.nodes)?;
    let report = json!({
        "scenario": sc.name(),
        "state": mat(r.state.matrix()),
        "eigenvalues": r.state.eigenvalues(),
        "condition_number": r.gramian.condition_number(),
        "gramian_min_eigenvalue": r.gramian.min_eigenvalue,
        "gramian_max_eigenvalue": r.gramian.max_eigenvalue,
        "residual": r.residual,
        "projected": r.projected,
        "raw_min_eigenvalue": r.raw_min_eigenvalue,
        "horizon": horizon,
        "nodes": r.gramian.quadrature_nodes,
    });
    emit(&report, a.common.out.as_deref())
}

pub fn observe(a: &ObserveArgs) -> CmdResult {
    let sc = load(&a.common.scenario)?;
    let st = settings(&a.common, &sc)?;
    let sched = require_schedule(&sc)?;
    let d = sc.defaults();
    let params = ObserverParams {
        forgetting: a.forgetting.unwrap_or_else(|| d.forgetting()),
        window: a.window.or(d.window).unwrap_or(DEFAULT_WINDOW),
        horizon: a.horizon.or(d.observer_horizon).unwrap_or_else(|| sched.total_duration()),
        step: a.step.unwrap_or_else(|| d.step()),
        check_nodes: st.nodes,
    };
    let n = sc.dim();
    let rho0 = sc.initial_state.clone().unwrap_or_else(|| DensityMatrix::basis_state(n, 0));
    let rho_hat0 = if a.mixed_estimate {
        DensityMatrix::maximally_mixed(n)
    } else {
        random_density(&mut ChaCha8Rng::seed_from_u64(st.seed), n)
    };
    let eff = sc.effective_observable(st.tol, st.kcap)?;
    let run = run_observer(&rho0, &rho_hat0, &sched, &eff.raw, &params)?;
    if let Some(path) = &a.csv {
        let mut w = create(path)?;
        run.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| Failure::io(path, e))?;
    }
    let decay = run.decay.map(|f| {
        json!({ "slope": f.slope, "rate": -f.slope, "intercept": f.intercept, "r_squared": f.r_squared, "points": f.points })
    });
    let report = json!({
        "scenario": sc.name(),
        "forgetting": params.forgetting,
        "window": params.window,
        "horizon": params.horizon,
        "step": params.step,
        "seed": st.seed,
        "alpha1": run.bounds.alpha1,
        "alpha2": run.bounds.alpha2,
        "certified": run.bounds.certified(),
        "initial_delta_norm": run.delta_norms.first(),
        "final_delta_norm": run.delta_norms.last(),
        "final_lyapunov": run.lyapunov.last(),
        "decay": decay,
        "final_estimate": run.estimates.last().map(mat),
    });
    emit(&report, a.common.out.as_deref())
}

pub fn simulate(a: &SimulateArgs) -> CmdResult {
    let sc = load(&a.common.scenario)?;
    let st = settings(&a.common, &sc)?;
    if a.k == 0 {
        return Err(Failure::invalid("k must be at least 1"));
    }
    let timelines = match &a.schedule {
        Some(path) => parse_schedule_file(&read(path)?)?.timelines(a.k)?,
        None => vec![sc.doc.schedule.clone().unwrap_or_default(); a.k],
    };
    let schedules = timelines.into_iter().map(|t| sc.with_timeline(t)).collect::<qobs::Result<Vec<_>>>()?;
    let ch = sc.channel()?;
    let rho0 = sc.initial_state.clone().unwrap_or_else(|| DensityMatrix::basis_state(sc.dim(), 0));
    let traj = measured_trajectory(&rho0, &schedules, &ch, a.k, a.sample_step)?;
    if let Some(path) = &a.csv {
        let mut w = create(path)?;
        traj.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| Failure::io(path, e))?;
    }
    if let Some(path) = &a.record {
        let eff = sc.effective_observable(st.tol, st.kcap)?;
        let samples = traj.stage_outputs(1, &eff.raw);
        let mut w = create(path)?;
        write_samples(&mut w, &samples).and_then(|_| w.flush()).map_err(|e| Failure::io(path, e))?;
    }
    let mut probabilities = serde_json::Map::new();
    for o in ch.outcomes() {
        let p = selective_probability(&rho0, &schedules, &ch, &o.label, a.k)?;
        probabilities.insert(o.label.clone(), json!(p));
    }
    let probability = match &a.outcome {
        Some(label) => Some(selective_probability(&rho0, &schedules, &ch, label, a.k)?),
        None => None,
    };
    let last = traj.final_state();
    let report = json!({
        "scenario": sc.name(),
        "k": a.k,
        "points": traj.points.len(),
        "measurement_times": traj.measurement_times,
        "final_state": mat(last.matrix()),
        "final_purity": last.purity(),
        "outcome": a.outcome,
        "probability": probability,
        "probabilities": probabilities,
    });
    emit(&report, a.common.out.as_deref())
}

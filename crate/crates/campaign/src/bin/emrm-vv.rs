use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

use anyhow::{anyhow, Context as _};
use clap::{Parser, Subcommand, ValueEnum};
use emrm_core::catalog::{builtin_catalog, Catalog};
use emrm_core::fsm::{build_emrm_machine, build_loss_eval_machine, emrm, CoverageLedger, Machine, TraceStatus};
use emrm_sim::vehicle::{simulate_with, SimOptions, Strategy, VehicleParams};
use emrm_vv::artifacts::{emit_artifacts, emit_trajectories, read_cells, report_text};
use emrm_vv::coverage_plan::{load_plan_input, plan_for_scene, save_plan};
use emrm_vv::kpi::{compute_kpis, threshold_checks};
use emrm_vv::scene_io::{bundled_scene, load_scene};
use emrm_vv::sweep::{run_sweep, RunOptions, SweepError, SweepSpec};

static CANCEL: AtomicBool = AtomicBool::new(false);

#[derive(Parser)]
#[command(
    name = "emrm-vv",
    version,
    about = "Verification and validation campaigns for evasive minimum-risk maneuvers"
)]
struct Cli {
    /// HARA/STPA catalog YAML; the built-in catalog when omitted.
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one strategy on one scene.
    Simulate {
        #[arg(long)]
        scene: Option<PathBuf>,
        /// EmergencyStop (es), Dodge, DriftToAvoid or DriftToAccident.
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        /// Write the trajectory as CSV.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Sweep parameter panels and write results, heatmaps and the report.
    Sweep {
        /// Sweep spec YAML; the four standard panels when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        panel: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (EMRM_VV_JOBS takes precedence).
        #[arg(long)]
        jobs: Option<usize>,
        /// Skip the planner showcase renders.
        #[arg(long)]
        no_trajectories: bool,
        /// Exit with status 3 when a campaign gate fails.
        #[arg(long)]
        check: bool,
    },
    /// Plan test points over scene factors.
    PlanCoverage {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Score each point with the simulator instead of the planning stub.
        #[arg(long)]
        live: bool,
    },
    /// State-machine checks.
    Fsm {
        #[command(subcommand)]
        command: FsmCommand,
    },
    /// Rebuild the report from a sweep output directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        /// Exit with status 3 when a campaign gate fails.
        #[arg(long)]
        check: bool,
    },
}

#[derive(Subcommand)]
enum FsmCommand {
    Check {
        #[arg(long, value_enum, default_value_t = MachineKind::Emrm)]
        machine: MachineKind,
        /// Comma-separated event string run from the initial state.
        #[arg(long, value_delimiter = ',')]
        events: Option<Vec<String>>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MachineKind {
    Emrm,
    LossEval,
}

enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
    Threshold(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Threshold(_) => 3,
        }
    }
}

fn validation(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Validation(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // bad arguments are validation errors; --help and --version are not
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let catalog = cli.catalog.as_deref();
    let result = match cli.command {
        Command::Simulate {
            scene,
            strategy,
            mu,
            dt,
            trajectory,
            json,
        } => simulate(scene.as_deref(), strategy, mu, dt, trajectory.as_deref(), json),
        Command::Sweep {
            spec,
            out,
            panel,
            seed,
            jobs,
            no_trajectories,
            check,
        } => sweep(
            catalog,
            spec.as_deref(),
            &out,
            panel.as_deref(),
            seed,
            jobs,
            no_trajectories,
            check,
        ),
        Command::PlanCoverage { spec, out, scene, live } => plan_coverage(&spec, &out, scene.as_deref(), live),
        Command::Fsm {
            command: FsmCommand::Check { machine, events },
        } => fsm_check(machine, events),
        Command::Report { input, check } => report(catalog, &input, check),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Validation(e) => eprintln!("error: {e:#}"),
                Failure::Runtime(e) => eprintln!("error: {e:#}"),
                Failure::Threshold(m) => eprintln!("threshold failure: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn template(path: Option<&Path>) -> Result<emrm_sim::vehicle::Scene, Failure> {
    match path {
        Some(p) => load_scene(p).map_err(validation),
        None => Ok(bundled_scene()),
    }
}

fn load_catalog(path: Option<&Path>) -> Result<Catalog, Failure> {
    match path {
        Some(p) => Catalog::load(p)
            .with_context(|| p.display().to_string())
            .map_err(validation),
        None => builtin_catalog().map_err(runtime),
    }
}

fn simulate(
    scene: Option<&Path>,
    strategy: Strategy,
    mu: Option<f64>,
    dt: f64,
    trajectory: Option<&Path>,
    json: bool,
) -> Result<(), Failure> {
    let scene = template(scene)?;
    let params = match mu {
        Some(m) => VehicleParams::default().with_mu(m),
        None => VehicleParams::default(),
    };
    params.validate().map_err(validation)?;
    let opts = SimOptions {
        dt,
        record: trajectory.is_some(),
        ..SimOptions::default()
    };
    let o = simulate_with(&scene, strategy, &params, &opts).map_err(|e| match e {
        emrm_sim::vehicle::SimError::UnstableIntegration { .. } => runtime(e),
        other => validation(other),
    })?;
    if let Some(path) = trajectory {
        let mut w = csv::Writer::from_path(path)
            .with_context(|| path.display().to_string())
            .map_err(runtime)?;
        w.write_record(["t", "x", "y", "psi", "v", "slip", "sliding"])
            .map_err(runtime)?;
        for p in &o.trajectory {
            let s = &p.state;
            w.write_record([
                format!("{:.3}", p.t),
                format!("{:.4}", s.x),
                format!("{:.4}", s.y),
                format!("{:.5}", s.psi),
                format!("{:.4}", s.v),
                format!("{:.5}", s.slip),
                s.sliding.to_string(),
            ])
            .map_err(runtime)?;
        }
        w.flush().map_err(runtime)?;
    }
    if json {
        let mut summary = o.clone();
        summary.trajectory.clear();
        println!("{}", serde_json::to_string_pretty(&summary).map_err(runtime)?);
    } else {
        println!(
            "scene      {} ({} km/h, TTC {} s, μ {})",
            scene.id, scene.ego.speed_kmh, scene.ttc, params.mu
        );
        println!("strategy   {}", o.strategy);
        println!("collided   {}", o.collided);
        println!("residual   {:.2} km/h", o.residual_kmh);
        println!("loss       {}", o.loss);
        println!(
            "min TTC    {}",
            if o.min_ttc_s.is_finite() {
                format!("{:.3} s", o.min_ttc_s)
            } else {
                "-".into()
            }
        );
        println!("peak lat.  {:.2} m/s²", o.peak_lateral);
        println!("duration   {:.2} s", o.duration);
    }
    Ok(())
}

fn jobs_override(flag: Option<usize>) -> Result<Option<usize>, Failure> {
    match std::env::var("EMRM_VV_JOBS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| validation(anyhow!("EMRM_VV_JOBS must be a positive integer, got `{v}`"))),
        _ => Ok(flag),
    }
}

fn run_checks(report: &emrm_vv::kpi::CampaignReport) -> Result<(), Failure> {
    let checks = threshold_checks(report);
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed: Vec<_> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Threshold(failed.join(", ")))
    }
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    catalog: Option<&Path>,
    spec: Option<&Path>,
    out: &Path,
    panel: Option<&str>,
    seed: Option<u64>,
    jobs: Option<usize>,
    no_trajectories: bool,
    check: bool,
) -> Result<(), Failure> {
    let mut spec = match spec {
        Some(p) => SweepSpec::load(p).map_err(validation)?,
        None => SweepSpec::standard(),
    };
    if let Some(p) = panel {
        spec = spec.only_panel(p).map_err(validation)?;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    let scene = template(spec.scene.as_deref())?;
    let catalog = load_catalog(catalog)?;
    let jobs = jobs_override(jobs)?;
    std::fs::create_dir_all(out)
        .with_context(|| out.display().to_string())
        .map_err(runtime)?;
    let checkpoint = out.join("checkpoint.json");
    let _ = ctrlc::set_handler(|| CANCEL.store(true, Ordering::SeqCst));
    let opts = RunOptions {
        jobs,
        checkpoint: Some(checkpoint.clone()),
        cancel: Some(&CANCEL),
    };
    let started = std::time::Instant::now();
    let grid = run_sweep(&spec, &scene, &opts).map_err(|e| match e {
        SweepError::InvalidSpec(_) | SweepError::Scene(_) | SweepError::Checkpoint { .. } => validation(e),
        other => runtime(other),
    })?;
    let elapsed = started.elapsed();
    let report = compute_kpis(&grid, &spec.strategies, spec.baseline, &scene.id, &catalog).map_err(runtime)?;
    let mut written = emit_artifacts(&report, &grid, &spec, &scene, out).map_err(runtime)?;
    if !no_trajectories {
        written.extend(emit_trajectories(&scene, &spec.vehicle, &spec.planner, spec.seed, out).map_err(runtime)?);
    }
    let _ = std::fs::remove_file(&checkpoint);
    print!("{}", report_text(&report));
    println!();
    println!("{} cells in {:.1} s", grid.len(), elapsed.as_secs_f64());
    for p in &written {
        println!("wrote {}", p.display());
    }
    if check {
        run_checks(&report)?;
    }
    Ok(())
}

fn plan_coverage(spec: &Path, out: &Path, scene: Option<&Path>, live: bool) -> Result<(), Failure> {
    let input = load_plan_input(spec).map_err(validation)?;
    let scene = template(scene)?;
    let plan = plan_for_scene(input, scene, VehicleParams::default(), live).map_err(validation)?;
    save_plan(&plan, out).map_err(runtime)?;
    println!("{} test points", plan.testset.len());
    println!(
        "constraints: {} ({} violations)",
        if plan.coverage.all_satisfied() {
            "satisfied"
        } else {
            "violated"
        },
        plan.coverage.violation_count()
    );
    if let Some(r) = plan.success_rate {
        println!("success rate: {:.1} %", 100.0 * r);
    }
    println!("wrote {}", out.display());
    if plan.coverage.all_satisfied() {
        Ok(())
    } else {
        Err(Failure::Threshold("coverage constraints violated".into()))
    }
}

fn fsm_check(kind: MachineKind, events: Option<Vec<String>>) -> Result<(), Failure> {
    let machine: Machine = match kind {
        MachineKind::Emrm => build_emrm_machine(),
        MachineKind::LossEval => build_loss_eval_machine(),
    };
    println!(
        "machine {}: {} states, {} events, {} transitions",
        machine.name(),
        machine.states().len(),
        machine.events().len(),
        machine.transition_count()
    );
    let reachable = machine.reachable(machine.initial()).map_err(runtime)?;
    let unreachable: Vec<_> = machine.states().iter().filter(|s| !reachable.contains(*s)).collect();
    println!(
        "initial {}, reachable {}/{}",
        machine.initial(),
        reachable.len(),
        machine.states().len()
    );
    let marked: Vec<_> = machine.marked().into_iter().collect();
    println!("marked: {}", marked.join(", "));
    if let Some(events) = events {
        let trace = machine.run_from_initial(&events);
        println!("trace: {}", trace.visited.join(" -> "));
        return match trace.status {
            TraceStatus::Completed => {
                println!(
                    "completed in {}{}",
                    trace.final_state(),
                    if machine.is_marked(trace.final_state()) {
                        " (marked)"
                    } else {
                        ""
                    }
                );
                Ok(())
            }
            TraceStatus::UndefinedTransition(i) => Err(validation(anyhow!(
                "event {i} `{}` is undefined in state {}",
                events[i],
                trace.final_state()
            ))),
        };
    }
    if let MachineKind::Emrm = kind {
        let mut ledger = CoverageLedger::new(&machine);
        for s in [
            &emrm::SUCCESS_STRING[..],
            &emrm::FAILURE_STRING[..],
            &emrm::NO_RISK_STRING[..],
        ] {
            let t = machine.run_from_initial(s);
            ledger.record(&t).map_err(runtime)?;
        }
        println!("canonical strings: transition coverage {:.3}", ledger.coverage());
        for t in ledger.uncovered() {
            println!("  not exercised: {} --{}-->", t.state, t.event);
        }
    }
    if unreachable.is_empty() {
        Ok(())
    } else {
        Err(Failure::Threshold(format!("unreachable states: {unreachable:?}")))
    }
}

fn report(catalog: Option<&Path>, dir: &Path, check: bool) -> Result<(), Failure> {
    let catalog = load_catalog(catalog)?;
    let file = read_cells(dir).map_err(validation)?;
    let report = compute_kpis(
        &file.cells,
        &file.spec.strategies,
        file.spec.baseline,
        &file.scene_id,
        &catalog,
    )
    .map_err(validation)?;
    print!("{}", report_text(&report));
    if check {
        run_checks(&report)?;
    }
    Ok(())
}

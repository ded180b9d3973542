//! `etnmpc` command-line driver.
//!
//! Exit status: 0 when every asserted property holds, 1 on a property
//! failure or a failed run, 2 on a configuration error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use etnmpc::config::{self, RunConfig, PRESET_SEC6};
use etnmpc::export;
use etnmpc::model::SystemModel;
use etnmpc::ocp::{self, OcpSpec};
use etnmpc::sim::{self, Mode, SimLog};
use etnmpc::terminal::{self, TerminalRegion};
use etnmpc::validation::{self, audit_run, BatteryOptions};
use etnmpc::Error;

const OUT_ENV: &str = "ETNMPC_OUT";
const DEFAULT_OUT: &str = "etnmpc-out";

#[derive(Parser, Debug)]
#[command(name = "etnmpc", version, about = "Event-triggered nonlinear MPC experiments")]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset, used when no --config is given.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Seed list, e.g. `3` or `0,1,5` or `0..20`.
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Output root; falls back to $ETNMPC_OUT, then ./etnmpc-out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Concurrent seeds.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Control period for `--mode periodic`.
    #[arg(long, global = true)]
    period: Option<f64>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Event,
    Periodic,
    #[value(name = "self")]
    SelfTriggered,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize or load the terminal region, validate it and write it out.
    Region {
        /// Samples for the decrease-inequality certificate.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Solve the initial optimal control problem once.
    Solve,
    /// Closed-loop runs, one output directory per seed.
    Simulate,
    /// Matched-seed comparison across modes and gamma values.
    Compare {
        #[arg(long, value_delimiter = ',', default_value = "event")]
        modes: Vec<ModeArg>,
        #[arg(long, value_delimiter = ',', default_value = "0.2,1.0")]
        gammas: Vec<f64>,
    },
    /// Run the property battery.
    Validate {
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
}

enum Failure {
    Config(String),
    Property(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::Parse { .. } | Error::Io(_) => Failure::Config(e.to_string()),
            other => Failure::Property(other.to_string()),
        }
    }
}

type CliResult = Result<bool, Failure>;

fn mode_of(arg: ModeArg, period: f64) -> Mode {
    match arg {
        ModeArg::Event => Mode::EventTriggered,
        ModeArg::SelfTriggered => Mode::SelfTriggered,
        ModeArg::Periodic => Mode::Periodic { period },
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::parse(&text)?
        }
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::preset(PRESET_SEC6)?,
    };
    if let Some(s) = &cli.seed {
        cfg.seeds = config::parse_seeds(s).map_err(Failure::Config)?;
    }
    if let Some(g) = cli.gamma {
        cfg.gamma = g;
    }
    let period = cli.period.unwrap_or(match cfg.mode {
        Mode::Periodic { period } => period,
        _ => 0.1,
    });
    if let Some(m) = cli.mode {
        cfg.mode = mode_of(m, period);
    } else if let (Some(p), Mode::Periodic { .. }) = (cli.period, cfg.mode) {
        cfg.mode = Mode::Periodic { period: p };
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.display().to_string());
    }
    cfg.check()?;
    Ok(cfg)
}

fn out_root(cfg: &RunConfig) -> PathBuf {
    cfg.out
        .clone()
        .or_else(|| std::env::var(OUT_ENV).ok().filter(|s| !s.is_empty()))
        .unwrap_or_else(|| DEFAULT_OUT.to_string())
        .into()
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn setup(cfg: &RunConfig) -> Result<(SystemModel, TerminalRegion), Failure> {
    let model = cfg.build_model()?;
    let region = cfg.build_region(&model)?;
    Ok((model, region))
}

fn cmd_region(cfg: &RunConfig, samples: usize) -> CliResult {
    let (model, region) = setup(cfg)?;
    let rep = terminal::validate_region(&region, &model, samples, 1);
    println!("epsilon            {:.6}", region.epsilon());
    println!("epsilon_f          {:.6}", region.epsilon_f());
    println!("L_f                {:.6}", region.l_f());
    println!("lambda_min(Q_P)    {:.6}", region.lambda_min_qp());
    println!("w_hat_max          {:.6e}", region.w_hat_max());
    println!("lyapunov residual  {:.3e}", rep.lyapunov_residual);
    println!("decrease violation {:.3e} over {} samples", rep.max_decrease_violation, rep.n_samples);
    println!("kappa in U         {:.4}", rep.kappa_in_u_fraction);
    println!("phi ratio          {:.4}", rep.max_phi_ratio);
    let pass = rep.passes() && rep.lyapunov_residual <= validation::tol::LYAPUNOV;
    println!("{} region certificate", if pass { "PASS" } else { "FAIL" });
    let path = out_root(cfg).join("region.txt");
    write_file(&path, &config::region_block(&region))?;
    println!("region block written to {}", path.display());
    Ok(pass)
}

fn cmd_solve(cfg: &RunConfig) -> CliResult {
    let (model, region) = setup(cfg)?;
    let mut spec = OcpSpec::new(&model, &region, cfg.x0.clone(), 0.0, cfg.horizon0);
    spec.options = cfg.solver.clone();
    let sol = ocp::solve(&spec)?;
    println!("T*       {:.6}", sol.t_star);
    println!("J        {:.6}", sol.cost);
    println!("V_f(T)   {:.6e} (target {:.6e})", sol.terminal_vf, region.epsilon_f().powi(2));
    println!("iters    {}", sol.iterations);
    println!("stat     {:.3e}", sol.stationarity);
    let mut csv = String::from("t");
    for i in 0..model.state_dim() {
        let _ = write!(csv, ",x{i}");
    }
    for i in 0..model.input_dim() {
        let _ = write!(csv, ",u{i}");
    }
    csv.push('\n');
    for (i, x) in sol.x_star.states.iter().enumerate() {
        let t = sol.x_star.time(i);
        let u = sol.u_star.value_at(t.min(sol.u_star.end_time() - 1e-12));
        let row: Vec<String> = std::iter::once(t).chain(x.iter().cloned()).chain(u.iter().cloned()).map(export::fmt_f64).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let path = out_root(cfg).join("solution.csv");
    write_file(&path, &csv)?;
    println!("trajectory written to {}", path.display());
    Ok(sol.converged)
}

fn run_label(mode: &Mode, gamma: f64) -> String {
    match mode {
        Mode::EventTriggered => format!("event-g{gamma}"),
        Mode::SelfTriggered => "self".to_string(),
        Mode::Periodic { period } => format!("periodic-h{period}"),
    }
}

struct Outcome {
    seed: u64,
    log: Option<SimLog>,
    error: Option<String>,
    lost: bool,
}

fn run_seeds(cfg: &RunConfig, model: &SystemModel, region: &TerminalRegion, dir: &Path) -> Result<Vec<Outcome>, Failure> {
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let sc = cfg.scenario(model, region, seed);
            let (log, error, lost) = match sim::run(&sc) {
                Ok(log) => (Some(log), None, false),
                Err(Error::FeasibilityLost { t, reason, log }) => {
                    (Some(*log), Some(format!("feasibility lost at t = {t}: {reason}")), true)
                }
                Err(e @ (Error::InvalidConfig(_) | Error::Parse { .. })) => return Err(Failure::from(e)),
                Err(e) => (None, Some(e.to_string()), false),
            };
            if let Some(l) = &log {
                let status = error.as_deref().unwrap_or("ok");
                export::write_run_dir(l, status, &dir.join(format!("seed-{seed}")))?;
            }
            Ok(Outcome { seed, log, error, lost })
        })
        .collect()
}

fn cmd_simulate(cfg: &RunConfig) -> CliResult {
    let (model, region) = setup(cfg)?;
    let root = out_root(cfg);
    let dir = root.join(run_label(&cfg.mode, cfg.gamma));
    write_file(&root.join("config.txt"), &cfg.to_text())?;
    let outcomes = run_seeds(cfg, &model, &region, &dir)?;
    let mut ok = true;
    for o in &outcomes {
        match (&o.log, &o.error) {
            (Some(log), None) => {
                let audit = audit_run(log, 0.0, &region)?;
                let m = &log.metrics;
                let entry_ok = audit.entry_excess <= 0.0 && audit.invariance_excess <= 0.0;
                if m.certified && !entry_ok {
                    ok = false;
                }
                if cfg.verbosity > 0 {
                    println!(
                        "seed {:>3}: entry {:>8} bound {:>8} ocp {:>3} meas {:>4} min_delta {:>8} {}{}",
                        o.seed,
                        m.convergence_time.map_or("-".into(), |t| format!("{t:.4}")),
                        m.entry_bound.map_or("-".into(), |t| format!("{t:.4}")),
                        m.ocp_count,
                        m.measurement_count,
                        m.min_inter_event.map_or("-".into(), |t| format!("{t:.4}")),
                        if m.certified { "certified" } else { "uncertified" },
                        if m.certified && !entry_ok { " VIOLATION" } else { "" },
                    );
                }
            }
            (_, Some(e)) => {
                ok = false;
                println!("seed {:>3}: {}{e}", o.seed, if o.lost { "" } else { "error: " });
            }
            (None, None) => unreachable!(),
        }
    }
    println!("runs written under {}", dir.display());
    Ok(ok)
}

fn cmd_compare(cfg: &RunConfig, modes: &[ModeArg], gammas: &[f64]) -> CliResult {
    let period = match cfg.mode {
        Mode::Periodic { period } => period,
        _ => 0.1,
    };
    let mut combos: Vec<(Mode, f64)> = Vec::new();
    for &m in modes {
        match m {
            ModeArg::Event => combos.extend(gammas.iter().map(|&g| (Mode::EventTriggered, g))),
            other => combos.push((mode_of(other, period), cfg.gamma)),
        }
    }
    if combos.len() < 2 {
        return Err(Failure::Config("compare needs at least two (mode, gamma) combinations".into()));
    }
    let (model, region) = setup(cfg)?;
    let root = out_root(cfg);
    let mut rows = String::from(
        "mode,gamma,seed,status,ocp_count,measurement_count,convergence_time,min_delta,mean_delta\n",
    );
    let mut results: Vec<(Mode, f64, Vec<Outcome>)> = Vec::new();
    for &(mode, gamma) in &combos {
        let mut c = cfg.clone();
        c.mode = mode;
        c.gamma = gamma;
        c.check()?;
        let dir = root.join("compare").join(run_label(&mode, gamma));
        let outcomes = run_seeds(&c, &model, &region, &dir)?;
        for o in &outcomes {
            let opt = |v: Option<f64>| v.map_or(String::new(), export::fmt_f64);
            let (oc, mc, ct, mn, me) = o.log.as_ref().map_or_else(
                || (String::new(), String::new(), String::new(), String::new(), String::new()),
                |l| {
                    let m = &l.metrics;
                    (
                        m.ocp_count.to_string(),
                        m.measurement_count.to_string(),
                        opt(m.convergence_time),
                        opt(m.min_inter_event),
                        opt(m.mean_inter_event),
                    )
                },
            );
            let status = if o.error.is_some() { "error" } else { "ok" };
            let _ = writeln!(
                rows,
                "{},{},{},{status},{oc},{mc},{ct},{mn},{me}",
                mode.label(),
                export::fmt_f64(gamma),
                o.seed
            );
        }
        results.push((mode, gamma, outcomes));
    }
    let path = root.join("comparison.csv");
    write_file(&path, &rows)?;
    print!("{rows}");

    let mut ok = results.iter().all(|(_, _, os)| os.iter().all(|o| o.error.is_none()));
    let mut event: Vec<&(Mode, f64, Vec<Outcome>)> =
        results.iter().filter(|(m, _, _)| *m == Mode::EventTriggered).collect();
    event.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    if event.len() >= 2 {
        let mut ordered = true;
        for pair in event.windows(2) {
            for (lo, hi) in pair[0].2.iter().zip(&pair[1].2) {
                if let (Some(a), Some(b)) = (&lo.log, &hi.log) {
                    if a.metrics.measurement_count < b.metrics.measurement_count
                        || a.metrics.ocp_count > b.metrics.ocp_count
                    {
                        ordered = false;
                    }
                }
            }
        }
        println!(
            "{} gamma trade-off: measurements non-increasing and solves non-decreasing in gamma on matched seeds",
            if ordered { "PASS" } else { "FAIL" }
        );
        ok &= ordered;
    }
    let self_run = results.iter().find(|(m, _, _)| *m == Mode::SelfTriggered);
    if let (Some(st), Some(et)) = (self_run, event.last()) {
        let mut worse = 0;
        let mut compared = 0;
        for (a, b) in st.2.iter().zip(&et.2) {
            if let (Some(sl), Some(el)) = (&a.log, &b.log) {
                for (cs, ce) in sl.cycles.iter().zip(&el.cycles) {
                    if let (Some(ds), Some(de)) = (cs.delta, ce.delta) {
                        compared += 1;
                        if ds > de + 1e-12 {
                            worse += 1;
                        }
                    }
                }
            }
        }
        println!(
            "INFO self-triggered delta_k above event-triggered (gamma = {}) at {worse}/{compared} matched cycle indices",
            et.1
        );
    }
    println!("report written to {}", path.display());
    Ok(ok)
}

fn cmd_validate(cfg: &RunConfig, samples: usize) -> CliResult {
    let rep = validation::run_battery(
        cfg,
        &BatteryOptions {
            region_samples: samples,
            ..BatteryOptions::default()
        },
    )?;
    for c in &rep.checks {
        println!("{c}");
    }
    Ok(rep.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| {
        let cfg = load_config(&cli)?;
        if let Some(j) = cli.jobs {
            rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build_global()
                .map_err(|e| Failure::Config(e.to_string()))?;
        }
        match &cli.command {
            Command::Region { samples } => cmd_region(&cfg, *samples),
            Command::Solve => cmd_solve(&cfg),
            Command::Simulate => cmd_simulate(&cfg),
            Command::Compare { modes, gammas } => cmd_compare(&cfg, modes, gammas),
            Command::Validate { samples } => cmd_validate(&cfg, *samples),
        }
    })();
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Property(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
    }
}

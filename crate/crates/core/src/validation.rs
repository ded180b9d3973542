//! End-to-end property battery: region certificate, inter-event formula,
//! one-step-ahead soundness and the closed-loop guarantees over a seed set.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::SystemModel;
use crate::sim::{self, EventKind, Mode, Phase, SimLog};
use crate::terminal::{self, TerminalRegion};
use crate::trigger;

/// Tolerances shared by the battery and the per-run checks.
pub mod tol {
    pub const LYAPUNOV: f64 = 1e-8;
    pub const DECREASE: f64 = 1e-9;
    pub const DELTA_MIN: f64 = 1e-9;
    pub const TERMINAL: f64 = 1e-6;
    pub const INVARIANCE: f64 = 1e-6;
    pub const TELESCOPING: f64 = 1e-6;
    pub const GRONWALL: f64 = 1e-9;
    pub const INTER_EVENT: f64 = 1e-9;
    /// Schedule arithmetic `t_k + T* − t_k` may exceed `T*` by a few ulps.
    pub const TIME_ROUNDOFF: f64 = 1e-12;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub status: Status,
    /// Distance to the tolerance (positive means room to spare).
    pub slack: Option<f64>,
    pub detail: String,
}

impl Check {
    fn from_slack(name: &'static str, slack: f64, detail: String) -> Self {
        Check {
            name,
            status: if slack >= 0.0 { Status::Pass } else { Status::Fail },
            slack: Some(slack),
            detail,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        };
        write!(f, "{tag} {:<28}", self.name)?;
        if let Some(s) = self.slack {
            write!(f, " slack={s:.3e}")?;
        }
        write!(f, " {}", self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatteryReport {
    pub checks: Vec<Check>,
}

impl BatteryReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }
}

/// Largest violations found in one closed-loop log. Each field is the
/// maximum of `measured − allowed`, so non-positive means satisfied.
#[derive(Debug, Clone, PartialEq)]
pub struct RunAudit {
    pub seed: u64,
    pub certified: bool,
    pub entry_excess: f64,
    pub invariance_excess: f64,
    pub telescoping_excess: f64,
    pub gronwall_excess: f64,
    /// Dense-grid instants violating the continuous feasibility predicate.
    pub feasibility_violations: usize,
    pub inter_event_excess: f64,
    pub min_inter_event: Option<f64>,
    pub unconverged_solves: usize,
    pub solves_after_switch: usize,
}

impl RunAudit {
    pub fn clean(&self) -> bool {
        self.entry_excess <= 0.0
            && self.invariance_excess <= 0.0
            && self.telescoping_excess <= 0.0
            && self.gronwall_excess <= 0.0
            && self.feasibility_violations == 0
            && self.inter_event_excess <= 0.0
            && self.min_inter_event.is_none_or(|d| d > 0.0)
            && self.unconverged_solves == 0
            && self.solves_after_switch == 0
    }
}

/// Checks a finished log against the closed-loop guarantees. `fallback`
/// stands in when no OCP was ever solved (start inside the region).
pub fn audit_run(log: &SimLog, t0: f64, fallback: &TerminalRegion) -> Result<RunAudit> {
    let region = log.region.as_ref().unwrap_or(fallback);
    let t_star_0 = region.t_star_0().unwrap_or(0.0);
    let alpha = region.alpha();
    let ef2 = region.epsilon_f().powi(2);
    let w_tilde = region.w_tilde_max().unwrap_or(0.0);
    let l_f = region.l_f();

    let entry_excess = match log.metrics.convergence_time {
        Some(t) => t - t_star_0 / alpha,
        None => f64::INFINITY,
    };
    let invariance_excess = log.metrics.max_vf_ratio_after_entry.map_or(f64::INFINITY, |r| r - 1.0 - tol::INVARIANCE);
    let telescoping_excess = log
        .cycles
        .iter()
        .map(|c| c.t_star - (t_star_0 - alpha * (c.t_k - t0)) - tol::TELESCOPING)
        .fold(f64::NEG_INFINITY, f64::max);

    let mut gronwall_excess = f64::NEG_INFINITY;
    let mut feasibility_violations = 0;
    for s in log.trace.iter().filter(|s| s.phase == Phase::Mpc) {
        let (Some(k), Some(x_hat)) = (s.cycle, s.x_hat.as_ref()) else {
            continue;
        };
        let c = &log.cycles[k];
        let elapsed = s.t - c.t_k;
        let deviation = region.p_f().distance(&s.x, x_hat);
        let envelope = trigger::deviation_bound(w_tilde, l_f, elapsed);
        gronwall_excess = gronwall_excess.max(deviation - envelope - tol::GRONWALL);
        let elapsed = (elapsed - tol::TIME_ROUNDOFF).max(0.0);
        if !trigger::continuous_feasibility(&s.x, x_hat, elapsed, c.t_star, region) {
            feasibility_violations += 1;
        }
    }

    let mut inter_event_excess = f64::NEG_INFINITY;
    if log.info.mode == Mode::EventTriggered.label() {
        for c in &log.cycles {
            if let Some(d) = c.delta {
                let floor = (log.info.gamma * c.delta_min).min(c.t_star);
                inter_event_excess = inter_event_excess.max(floor - tol::INTER_EVENT - d);
            }
        }
    }

    let unconverged_solves = log
        .cycles
        .iter()
        .skip(1)
        .filter(|c| !c.converged || c.terminal_vf > ef2 * (1.0 + tol::TERMINAL))
        .count();
    let switch = log.events.iter().position(|e| e.kind == EventKind::ModeSwitch);
    let solves_after_switch = switch.map_or(0, |i| {
        log.events[i..].iter().filter(|e| e.kind == EventKind::OcpSolve).count()
    });
    Ok(RunAudit {
        seed: log.info.seed,
        certified: log.metrics.certified,
        entry_excess,
        invariance_excess,
        telescoping_excess,
        gronwall_excess,
        feasibility_violations,
        inter_event_excess,
        min_inter_event: log.metrics.min_inter_event,
        unconverged_solves,
        solves_after_switch,
    })
}

/// Root of `(w̃/L)(e^{L·Δ}−1) = (ε−ε_f)e^{−L·T*}` by bisection.
pub fn delta_min_by_bisection(region: &TerminalRegion, t_star: f64) -> f64 {
    let w = region.w_tilde_max().unwrap_or(f64::NAN);
    let l = region.l_f();
    let rhs = (region.epsilon() - region.epsilon_f()) * (-l * t_star).exp();
    let g = |d: f64| trigger::deviation_bound(w, l, d) - rhs;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while g(hi) < 0.0 && hi < 1e12 {
        hi *= 2.0;
    }
    while hi - lo > 1e-13 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn check_delta_min(region: &TerminalRegion, draws: usize, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let eps_f = rng.random_range(0.01..1.0);
        let eps = eps_f * rng.random_range(1.01..3.0);
        let l_f = rng.random_range(0.05..2.0);
        let alpha = rng.random_range(0.1..0.95);
        let t0 = rng.random_range(0.5..5.0);
        let lambda = rng.random_range(0.5..5.0);
        let t_star = rng.random_range(0.0..t0);
        let q = region.q() * (lambda / region.lambda_min_qp());
        let r = terminal::assemble_region(
            region.p_f().matrix().clone(),
            region.k().clone(),
            eps,
            eps_f,
            l_f,
            q,
            region.r() * (lambda / region.lambda_min_qp()),
            alpha,
        )?
        .with_t_star_0(t0)?;
        let closed = trigger::delta_min(&r, t_star)?;
        let oracle = delta_min_by_bisection(&r, t_star);
        worst = worst.max((closed - oracle).abs());
    }
    Ok(Check::from_slack(
        "delta_min_closed_form",
        tol::DELTA_MIN - worst,
        format!("max |closed - bisection| = {worst:.3e} over {draws} draws"),
    ))
}

/// A pass of the one-step-ahead check leaves the worst-case deviation
/// within the continuous margin until the next evaluation.
fn check_ets_soundness(region: &TerminalRegion, draws: usize, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t0 = region.t_star_0().unwrap_or(1.0);
    let l = region.l_f();
    let w = region.w_tilde_max().unwrap_or(0.0);
    let mut worst = f64::NEG_INFINITY;
    let mut used = 0;
    for _ in 0..draws {
        let gamma = rng.random_range(0.05..=1.0);
        let t_star = rng.random_range(1e-3..t0);
        let delta_star = gamma * trigger::delta_min(region, t_star)?;
        let params = trigger::TriggerParams::new(region, gamma)?;
        let thr = trigger::ets_threshold(&params, delta_star, t_star);
        if thr <= 0.0 {
            continue;
        }
        used += 1;
        let dev = thr * rng.random_range(0.0..1.0);
        let margin = trigger::feasibility_margin(region, t_star);
        for j in 0..=20 {
            let s = delta_star * j as f64 / 20.0;
            let propagated = dev * (l * s).exp() + trigger::deviation_bound(w, l, s);
            worst = worst.max((propagated - margin) / margin);
        }
    }
    Ok(Check::from_slack(
        "ets_one_step_soundness",
        1e-12 - worst,
        format!("max relative overshoot {worst:.3e} over {used} passing draws"),
    ))
}

/// Battery sizes.
#[derive(Debug, Clone)]
pub struct BatteryOptions {
    pub region_samples: usize,
    pub formula_draws: usize,
    pub seed: u64,
}

impl Default for BatteryOptions {
    fn default() -> Self {
        Self {
            region_samples: 10_000,
            formula_draws: 100,
            seed: 7,
        }
    }
}

/// Runs every property on the configured scenario and seed list.
pub fn run_battery(cfg: &RunConfig, opts: &BatteryOptions) -> Result<BatteryReport> {
    let model: SystemModel = cfg.build_model()?;
    let region = cfg.build_region(&model)?;
    let mut checks = Vec::new();

    let residual = region.lyapunov_residual(&model);
    checks.push(Check::from_slack(
        "lyapunov_residual",
        tol::LYAPUNOV - residual,
        format!("residual = {residual:.3e}"),
    ));
    let rep = terminal::validate_region(&region, &model, opts.region_samples, opts.seed);
    checks.push(Check {
        name: "region_certificate",
        status: if rep.passes() { Status::Pass } else { Status::Fail },
        slack: Some(tol::DECREASE - rep.max_decrease_violation),
        detail: format!(
            "max decrease violation {:.3e}, kappa in U on {:.4} of {} samples",
            rep.max_decrease_violation, rep.kappa_in_u_fraction, rep.n_samples
        ),
    });

    let runs: Vec<(u64, Result<SimLog>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| (seed, sim::run(&cfg.scenario(&model, &region, seed))))
        .collect();

    let solved = runs.iter().find_map(|(_, r)| match r {
        Ok(log) => log.region.clone(),
        Err(Error::FeasibilityLost { log, .. }) => log.region.clone(),
        Err(_) => None,
    });
    match &solved {
        Some(r) => {
            checks.push(check_delta_min(r, opts.formula_draws, opts.seed)?);
            checks.push(check_ets_soundness(r, opts.formula_draws, opts.seed)?);
        }
        None => {
            for name in ["delta_min_closed_form", "ets_one_step_soundness"] {
                checks.push(Check {
                    name,
                    status: Status::Skipped,
                    slack: None,
                    detail: "no initial solve succeeded".into(),
                });
            }
        }
    }

    let mut audits = Vec::new();
    let mut lost = Vec::new();
    let mut other_errors = Vec::new();
    for (seed, r) in &runs {
        match r {
            Ok(log) => audits.push(audit_run(log, 0.0, &region)?),
            Err(Error::FeasibilityLost { t, .. }) => lost.push(format!("seed {seed} at t = {t:.4}")),
            Err(e) => other_errors.push(format!("seed {seed}: {e}")),
        }
    }
    if !other_errors.is_empty() {
        checks.push(Check {
            name: "closed_loop_runs",
            status: Status::Fail,
            slack: None,
            detail: other_errors.join("; "),
        });
    }
    let certified: Vec<&RunAudit> = audits.iter().filter(|a| a.certified).collect();
    let n_cert = certified.len();
    let uncertified = audits.len() - n_cert;
    let any_certified = n_cert > 0;
    let skip = |name: &'static str| Check {
        name,
        status: Status::Skipped,
        slack: None,
        detail: format!("not certified, skipped ({uncertified} uncertified runs)"),
    };
    let per_run = |name: &'static str, f: &dyn Fn(&RunAudit) -> f64, what: &str| {
        if !any_certified {
            return skip(name);
        }
        let worst = certified.iter().map(|a| f(a)).fold(f64::NEG_INFINITY, f64::max);
        Check::from_slack(name, -worst, format!("{what} over {n_cert} certified runs"))
    };

    checks.push(per_run("entry_time_bound", &|a| a.entry_excess, "max(t_entry - T*0/alpha)"));
    checks.push(per_run("region_invariance", &|a| a.invariance_excess, "max(V_f/eps^2 - 1) after entry"));
    checks.push(if !lost.is_empty() {
        Check {
            name: "recursive_feasibility",
            status: Status::Fail,
            slack: None,
            detail: format!("feasibility lost: {}", lost.join("; ")),
        }
    } else if any_certified {
        let bad: usize = certified.iter().map(|a| a.unconverged_solves).sum();
        Check {
            name: "recursive_feasibility",
            status: if bad == 0 { Status::Pass } else { Status::Fail },
            slack: None,
            detail: format!("{bad} unconverged solves after t0 over {n_cert} certified runs"),
        }
    } else {
        skip("recursive_feasibility")
    });
    checks.push(per_run("horizon_telescoping", &|a| a.telescoping_excess, "max(T*_k - T*0 + alpha(t_k - t0))"));
    checks.push(per_run("gronwall_envelope", &|a| a.gronwall_excess, "max(deviation - envelope)"));
    checks.push(if any_certified {
        let v: usize = certified.iter().map(|a| a.feasibility_violations).sum();
        Check {
            name: "inter_evaluation_feasibility",
            status: if v == 0 { Status::Pass } else { Status::Fail },
            slack: None,
            detail: format!("{v} dense-grid violations"),
        }
    } else {
        skip("inter_evaluation_feasibility")
    });
    let min_delta = audits.iter().filter_map(|a| a.min_inter_event).fold(f64::INFINITY, f64::min);
    let floor_excess = audits.iter().map(|a| a.inter_event_excess).fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check {
        name: "positive_inter_event",
        status: if min_delta > 0.0 && floor_excess <= 0.0 { Status::Pass } else { Status::Fail },
        slack: Some(min_delta),
        detail: format!("min delta_k = {min_delta:.4e}, max floor excess {floor_excess:.3e}"),
    });
    let after_switch: usize = audits.iter().map(|a| a.solves_after_switch).sum();
    checks.push(Check {
        name: "mode_switch_permanence",
        status: if after_switch == 0 { Status::Pass } else { Status::Fail },
        slack: None,
        detail: format!("{after_switch} solves after a switch"),
    });
    Ok(BatteryReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PRESET_SEC6;

    fn small(cfg: &mut RunConfig) {
        cfg.seeds = vec![0];
        cfg.sim_horizon = 6.0;
    }

    #[test]
    fn preset_battery_passes() {
        let mut cfg = RunConfig::preset(PRESET_SEC6).unwrap();
        small(&mut cfg);
        let rep = run_battery(
            &cfg,
            &BatteryOptions {
                region_samples: 2000,
                ..BatteryOptions::default()
            },
        )
        .unwrap();
        for c in &rep.checks {
            assert_ne!(c.status, Status::Fail, "{c}");
        }
        assert!(rep.checks.iter().all(|c| c.status == Status::Pass));
    }

    #[test]
    fn inflated_epsilon_fails_certificate() {
        let mut cfg = RunConfig::preset(PRESET_SEC6).unwrap();
        small(&mut cfg);
        if let crate::config::RegionSource::Fixtures(f) = &mut cfg.region {
            f.epsilon = 3.0;
        }
        let rep = run_battery(
            &cfg,
            &BatteryOptions {
                region_samples: 2000,
                ..BatteryOptions::default()
            },
        )
        .unwrap();
        let cert = rep.checks.iter().find(|c| c.name == "region_certificate").unwrap();
        assert_eq!(cert.status, Status::Fail);
        assert!(!rep.passed());
    }

    #[test]
    fn oversized_disturbance_is_skipped() {
        let mut cfg = RunConfig::preset(PRESET_SEC6).unwrap();
        small(&mut cfg);
        cfg.disturbance_bound = 1.2e-2;
        let rep = run_battery(
            &cfg,
            &BatteryOptions {
                region_samples: 500,
                ..BatteryOptions::default()
            },
        )
        .unwrap();
        let t2 = rep.checks.iter().find(|c| c.name == "entry_time_bound").unwrap();
        assert_eq!(t2.status, Status::Skipped);
        assert!(t2.to_string().contains("not certified, skipped"));
    }

    #[test]
    fn bisection_agrees_with_closed_form() {
        let cfg = RunConfig::preset(PRESET_SEC6).unwrap();
        let model = cfg.build_model().unwrap();
        let region = cfg.build_region(&model).unwrap().with_t_star_0(3.6).unwrap();
        for t in [0.1, 1.0, 3.6] {
            let a = trigger::delta_min(&region, t).unwrap();
            assert!((a - delta_min_by_bisection(&region, t)).abs() < 1e-10);
        }
    }
}

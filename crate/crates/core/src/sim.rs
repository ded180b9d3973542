//! Closed-loop execution: dual-mode event-triggered MPC, the periodic
//! baseline and the self-triggered variant, with a dense log of everything
//! the triggering logic saw.

use serde::Serialize;

use crate::disturbance::{make_disturbance, DisturbanceSignal};
use crate::error::{Error, Result};
use crate::model::SystemModel;
use crate::ocp::{self, OcpSolution, OcpSpec, SolverOptions};
use crate::ode::{rk4_step, Rk4Work};
use crate::terminal::{Set, TerminalRegion};
use crate::trigger::{self, SdsBranch, TriggerParams};

/// Time comparisons between schedule points tolerate this much round-off.
const TIME_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    EventTriggered,
    Periodic { period: f64 },
    SelfTriggered,
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::EventTriggered => "event",
            Mode::Periodic { .. } => "periodic",
            Mode::SelfTriggered => "self",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocalMode {
    Continuous,
    SampleAndHold { delta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DisturbanceSpec {
    /// Cap on `‖w‖_{P_f}`; zero disables the disturbance.
    pub bound: f64,
    pub hold: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: SystemModel,
    /// Terminal ingredients with `T*₀` still unset.
    pub region: TerminalRegion,
    pub x0: Vec<f64>,
    pub t0: f64,
    pub horizon0: f64,
    pub gamma: f64,
    pub disturbance: DisturbanceSpec,
    pub sim_horizon: f64,
    pub plant_step: f64,
    pub mode: Mode,
    pub local: LocalMode,
    /// Time simulated under the local controller after the mode switch.
    pub dwell: f64,
    pub solver: SolverOptions,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let n = self.model.state_dim();
        crate::error::check_dim("initial state", n, self.x0.len())?;
        crate::error::check_dim("region dimension", n, self.region.state_dim())?;
        if self.region.t_star_0().is_some() {
            return Err(Error::State("scenario region must not have T*_0 set".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.horizon0 > 0.0) || !(self.sim_horizon > 0.0) || !(self.dwell >= 0.0) {
            return Err(Error::InvalidConfig("horizons must be positive and the dwell non-negative".into()));
        }
        if !(self.plant_step > 0.0 && self.plant_step <= 1e-3) {
            return Err(Error::InvalidConfig(format!(
                "plant step must lie in (0, 1e-3], got {}",
                self.plant_step
            )));
        }
        if !(self.disturbance.bound >= 0.0) || !(self.disturbance.hold > 0.0) {
            return Err(Error::InvalidConfig("disturbance needs bound >= 0 and hold > 0".into()));
        }
        if let Mode::Periodic { period } = self.mode {
            if !(period > 0.0) {
                return Err(Error::InvalidConfig(format!("period must be positive, got {period}")));
            }
        }
        if let LocalMode::SampleAndHold { delta } = self.local {
            if !(delta > 0.0) {
                return Err(Error::InvalidConfig(format!("local sampling interval must be positive, got {delta}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Mpc,
    Local,
}

impl Phase {
    pub fn label(&self) -> &'static str {
        match self {
            Phase::Mpc => "mpc",
            Phase::Local => "local",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSample {
    pub t: f64,
    pub x: Vec<f64>,
    /// Control applied from `t` on.
    pub u: Vec<f64>,
    pub v_f: f64,
    pub phase: Phase,
    /// Cycle whose prediction is active, `None` in local mode.
    pub cycle: Option<usize>,
    /// Nominal prediction `x̂*(t)` of the active cycle.
    pub x_hat: Option<Vec<f64>>,
    /// `‖x(t) − x̂*(t)‖_{P_f}`.
    pub deviation: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    OcpSolve,
    Measurement,
    EtsContinue,
    EtsStop,
    SdsDirect,
    ModeSwitch,
}

impl EventKind {
    pub fn label(&self) -> &'static str {
        match self {
            EventKind::OcpSolve => "ocp_solve",
            EventKind::Measurement => "measurement",
            EventKind::EtsContinue => "ets_continue",
            EventKind::EtsStop => "ets_stop",
            EventKind::SdsDirect => "sds_direct",
            EventKind::ModeSwitch => "mode_switch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    pub t: f64,
    pub kind: EventKind,
    pub cycle: Option<usize>,
    pub m: Option<usize>,
    pub deviation: Option<f64>,
    pub threshold: Option<f64>,
    pub delta_star: Option<f64>,
    pub delta_min: Option<f64>,
    pub t_star: Option<f64>,
}

impl EventRecord {
    fn at(t: f64, kind: EventKind, cycle: Option<usize>) -> Self {
        Self {
            t,
            kind,
            cycle,
            m: None,
            deviation: None,
            threshold: None,
            delta_star: None,
            delta_min: None,
            t_star: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Sample,
    Direct,
    Periodic,
    SelfTriggered,
}

impl Branch {
    pub fn label(&self) -> &'static str {
        match self {
            Branch::Sample => "sample",
            Branch::Direct => "direct",
            Branch::Periodic => "periodic",
            Branch::SelfTriggered => "self",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleRecord {
    pub k: usize,
    pub t_k: f64,
    /// `Δ_k = t_{k+1} − t_k`; `None` if the run ended inside the cycle.
    pub delta: Option<f64>,
    pub horizon: f64,
    pub t_star: f64,
    pub delta_min: f64,
    pub branch: Branch,
    pub delta_star: Option<f64>,
    pub cost: f64,
    pub terminal_vf: f64,
    pub converged: bool,
    pub iterations: usize,
    pub stationarity: f64,
    /// ETS evaluations made during the cycle.
    pub ets_evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Metrics {
    pub ocp_count: usize,
    pub measurement_count: usize,
    pub convergence_time: Option<f64>,
    pub inter_event_times: Vec<f64>,
    pub min_inter_event: Option<f64>,
    pub max_inter_event: Option<f64>,
    pub mean_inter_event: Option<f64>,
    pub t_star_0: Option<f64>,
    /// Certified entry bound `T*₀/α`.
    pub entry_bound: Option<f64>,
    pub certified: bool,
    /// Largest `V_f/ε²` after first entry into `Φ`.
    pub max_vf_ratio_after_entry: Option<f64>,
    pub mode_switch_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct RunInfo {
    pub mode: String,
    pub gamma: f64,
    pub seed: u64,
    pub disturbance_bound: f64,
    pub epsilon: f64,
    pub epsilon_f: f64,
    pub l_f: f64,
    pub alpha: f64,
    pub lambda_min_qp: f64,
    pub w_hat_max: f64,
    pub w_tilde_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimLog {
    pub info: RunInfo,
    pub trace: Vec<TraceSample>,
    pub events: Vec<EventRecord>,
    pub cycles: Vec<CycleRecord>,
    pub metrics: Metrics,
    /// Region with `T*₀` fixed, once the first OCP has been solved.
    pub region: Option<TerminalRegion>,
}

/// Plant and nominal-prediction propagation state.
struct Plant<'a> {
    model: &'a SystemModel,
    w: DisturbanceSignal,
    step: f64,
    t: f64,
    x: Vec<f64>,
    x_hat: Vec<f64>,
    work: Rk4Work,
    next: Vec<f64>,
}

impl<'a> Plant<'a> {
    fn step_plant(&mut self, u: &[f64], w: &[f64], h: f64) -> Result<()> {
        let model = self.model;
        let zero = w.iter().all(|&v| v == 0.0);
        if zero {
            rk4_step(|x, dx| model.rhs_into(x, u, dx), &self.x, h, &mut self.next, &mut self.work);
        } else {
            rk4_step(
                |x, dx| {
                    model.rhs_into(x, u, dx);
                    for (d, wi) in dx.iter_mut().zip(w) {
                        *d += wi;
                    }
                },
                &self.x,
                h,
                &mut self.next,
                &mut self.work,
            );
        }
        if self.next.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationDiverged { t: self.t + h });
        }
        std::mem::swap(&mut self.x, &mut self.next);
        Ok(())
    }

    fn step_nominal(&mut self, u: &[f64], h: f64) {
        let model = self.model;
        rk4_step(|x, dx| model.rhs_into(x, u, dx), &self.x_hat, h, &mut self.next, &mut self.work);
        std::mem::swap(&mut self.x_hat, &mut self.next);
    }
}

fn substeps(span: f64, max_step: f64) -> usize {
    ((span / max_step) - 1e-9).ceil().max(1.0) as usize
}

struct Runner<'a> {
    sc: &'a Scenario,
    plant: Plant<'a>,
    log: SimLog,
    region: TerminalRegion,
}

impl<'a> Runner<'a> {
    fn sample(&self, u: &[f64], phase: Phase, cycle: Option<usize>) -> TraceSample {
        let x = self.plant.x.clone();
        let (x_hat, deviation) = match phase {
            Phase::Mpc => (
                Some(self.plant.x_hat.clone()),
                Some(self.region.p_f().distance(&self.plant.x, &self.plant.x_hat)),
            ),
            Phase::Local => (None, None),
        };
        TraceSample {
            t: self.plant.t,
            v_f: self.region.v_f(&x),
            x,
            u: u.to_vec(),
            phase,
            cycle,
            x_hat,
            deviation,
        }
    }

    /// Applies the optimal control of `sol` from the current time to
    /// `t_end`, co-integrating the nominal prediction.
    fn advance_mpc(&mut self, sol: &OcpSolution, cycle: usize, t_end: f64) -> Result<()> {
        while self.plant.t < t_end - TIME_EPS {
            let t = self.plant.t;
            let seg_end = sol.u_star.next_switch_after(t);
            let w_end = self.plant.w.next_switch_after(t);
            let stop = t_end.min(seg_end).min(w_end);
            let u = sol.u_star.value_at(t).to_vec();
            let w = self.plant.w.value_at(t).to_vec();
            let span = stop - t;
            let n = substeps(span, self.plant.step);
            let h = span / n as f64;
            for i in 0..n {
                self.plant.step_plant(&u, &w, h)?;
                self.plant.step_nominal(&u, h);
                self.plant.t = if i + 1 == n { stop } else { t + (i + 1) as f64 * h };
                let s = self.sample(&u, Phase::Mpc, Some(cycle));
                self.log.trace.push(s);
            }
        }
        Ok(())
    }

    /// Local controller from the current time to `t_end`.
    fn advance_local(&mut self, t_end: f64) -> Result<()> {
        let ib = self.sc.model.input_box().clone();
        let start = self.plant.t;
        let mut u = vec![0.0; self.sc.model.input_dim()];
        while self.plant.t < t_end - TIME_EPS {
            let t = self.plant.t;
            let w_end = self.plant.w.next_switch_after(t);
            let w = self.plant.w.value_at(t).to_vec();
            match self.sc.local {
                LocalMode::SampleAndHold { delta } => {
                    let j = ((t - start) / delta + 1e-9).floor();
                    let sample_end = start + (j + 1.0) * delta;
                    let stop = t_end.min(w_end).min(sample_end);
                    if (t - (start + j * delta)).abs() <= 1e-9 * delta || t == start {
                        self.region.local_control_into(&self.plant.x, &mut u);
                        ib.project(&mut u);
                    }
                    let span = stop - t;
                    let n = substeps(span, self.plant.step);
                    let h = span / n as f64;
                    for i in 0..n {
                        self.plant.step_plant(&u, &w, h)?;
                        self.plant.t = if i + 1 == n { stop } else { t + (i + 1) as f64 * h };
                        let s = self.sample(&u, Phase::Local, None);
                        self.log.trace.push(s);
                    }
                }
                LocalMode::Continuous => {
                    let stop = t_end.min(w_end);
                    let span = stop - t;
                    let n = substeps(span, self.plant.step);
                    let h = span / n as f64;
                    let model = self.sc.model.clone();
                    let region = &self.region;
                    for i in 0..n {
                        let mut uu = vec![0.0; model.input_dim()];
                        let work = &mut self.plant.work;
                        let next = &mut self.plant.next;
                        rk4_step(
                            |x, dx| {
                                region.local_control_into(x, &mut uu);
                                ib.project(&mut uu);
                                model.rhs_into(x, &uu, dx);
                                for (d, wi) in dx.iter_mut().zip(&w) {
                                    *d += wi;
                                }
                            },
                            &self.plant.x,
                            h,
                            next,
                            work,
                        );
                        if self.plant.next.iter().any(|v| !v.is_finite()) {
                            return Err(Error::IntegrationDiverged { t: self.plant.t + h });
                        }
                        std::mem::swap(&mut self.plant.x, &mut self.plant.next);
                        self.plant.t = if i + 1 == n { stop } else { t + (i + 1) as f64 * h };
                        self.region.local_control_into(&self.plant.x, &mut u);
                        ib.project(&mut u);
                        let s = self.sample(&u, Phase::Local, None);
                        self.log.trace.push(s);
                    }
                }
            }
        }
        Ok(())
    }

    fn fail(mut self, reason: String) -> Error {
        self.finish();
        Error::FeasibilityLost {
            t: self.plant.t,
            reason,
            log: Box::new(self.log),
        }
    }

    fn finish(&mut self) {
        self.log.region = self.region.t_star_0().map(|_| self.region.clone());
        self.log.info.w_tilde_max = self.region.w_tilde_max();
        self.log.metrics = extract_metrics(&self.log, self.sc.t0);
    }
}

/// Runs the scenario in the mode it names.
pub fn run(sc: &Scenario) -> Result<SimLog> {
    sc.validate()?;
    let n = sc.model.state_dim();
    let w = if sc.disturbance.bound > 0.0 {
        make_disturbance(
            sc.disturbance.bound,
            sc.disturbance.hold,
            sc.t0,
            sc.sim_horizon + sc.dwell,
            sc.disturbance.seed,
            sc.region.p_f(),
        )?
    } else {
        DisturbanceSignal::zero(n, sc.t0, sc.disturbance.hold)
    };
    let region = sc.region.clone();
    let mut runner = Runner {
        sc,
        plant: Plant {
            model: &sc.model,
            w,
            step: sc.plant_step,
            t: sc.t0,
            x: sc.x0.clone(),
            x_hat: sc.x0.clone(),
            work: Rk4Work::new(n),
            next: vec![0.0; n],
        },
        log: SimLog {
            info: RunInfo {
                mode: sc.mode.label().to_string(),
                gamma: sc.gamma,
                seed: sc.disturbance.seed,
                disturbance_bound: sc.disturbance.bound,
                epsilon: region.epsilon(),
                epsilon_f: region.epsilon_f(),
                l_f: region.l_f(),
                alpha: region.alpha(),
                lambda_min_qp: region.lambda_min_qp(),
                w_hat_max: region.w_hat_max(),
                w_tilde_max: None,
            },
            ..SimLog::default()
        },
        region,
    };
    let first = TraceSample {
        t: sc.t0,
        x: sc.x0.clone(),
        u: vec![0.0; sc.model.input_dim()],
        v_f: runner.region.v_f(&sc.x0),
        phase: Phase::Mpc,
        cycle: None,
        x_hat: None,
        deviation: None,
    };
    runner.log.trace.push(first);

    let alpha = runner.region.alpha();
    let mut prev: Option<OcpSolution> = None;
    let mut k = 0usize;
    let end = sc.t0 + sc.sim_horizon;
    loop {
        let t_k = runner.plant.t;
        if t_k >= end - TIME_EPS {
            break;
        }
        runner.log.events.push(EventRecord::at(t_k, EventKind::Measurement, Some(k)));
        if runner.region.contains(&runner.plant.x, Set::Outer) {
            runner.log.events.push(EventRecord::at(t_k, EventKind::ModeSwitch, None));
            if let Some(first) = runner.log.trace.first_mut() {
                if first.cycle.is_none() && runner.log.cycles.is_empty() {
                    first.phase = Phase::Local;
                }
            }
            runner.advance_local(t_k + sc.dwell)?;
            break;
        }
        let horizon = match &prev {
            None => sc.horizon0,
            Some(p) => {
                let delta_prev = t_k - p.t_k;
                if delta_prev > p.t_star + TIME_EPS {
                    let reason = format!("inter-event time {delta_prev} exceeds T* = {}", p.t_star);
                    return Err(runner.fail(reason));
                }
                match ocp::shrink_horizon(p.t_star, delta_prev, alpha) {
                    Ok(h) => h,
                    Err(e) => return Err(runner.fail(e.to_string())),
                }
            }
        };
        let mut spec = OcpSpec::new(&sc.model, &runner.region, runner.plant.x.clone(), t_k, horizon);
        spec.options = sc.solver.clone();
        if let Some(p) = &prev {
            spec.warm_start = Some(ocp::shifted_warm_start(
                &sc.model,
                &runner.region,
                p,
                t_k,
                horizon,
                sc.solver.n_segments,
            ));
        }
        let sol = match ocp::solve(&spec) {
            Ok(s) => s,
            Err(e @ Error::Infeasible { .. }) if k == 0 => return Err(Error::InitialInfeasible(Box::new(e))),
            Err(e @ Error::Infeasible { .. }) => return Err(runner.fail(e.to_string())),
            Err(e) => return Err(e),
        };
        if k == 0 {
            runner.region = runner.region.clone().with_t_star_0(sol.t_star)?;
            let bound = runner.region.w_hat_max().min(runner.region.w_tilde_max().unwrap_or(0.0));
            runner.log.metrics.certified = sc.disturbance.bound <= bound;
        }
        let t_star = sol.t_star;
        let dmin = trigger::delta_min(&runner.region, t_star)?;
        let mut ev = EventRecord::at(t_k, EventKind::OcpSolve, Some(k));
        ev.t_star = Some(t_star);
        ev.delta_min = Some(dmin);
        runner.log.events.push(ev);
        runner.plant.x_hat.clone_from(&runner.plant.x);

        let mut cycle = CycleRecord {
            k,
            t_k,
            delta: None,
            horizon,
            t_star,
            delta_min: dmin,
            branch: Branch::Direct,
            delta_star: None,
            cost: sol.cost,
            terminal_vf: sol.terminal_vf,
            converged: sol.converged,
            iterations: sol.iterations,
            stationarity: sol.stationarity,
            ets_evaluations: 0,
        };

        // schedule and propagate
        let (t_next, truncated) = match sc.mode {
            Mode::Periodic { period } => {
                cycle.branch = Branch::Periodic;
                if k == 0 && period > t_star + TIME_EPS {
                    runner.log.cycles.push(cycle);
                    let reason = format!("period {period} exceeds T*_0 = {t_star}");
                    return Err(runner.fail(reason));
                }
                // the prediction reaches the inner set before the next tick
                let planned = t_k + period.min(t_star);
                runner.advance_mpc(&sol, k, planned.min(end))?;
                (planned.min(end), planned > end + TIME_EPS)
            }
            Mode::SelfTriggered => {
                cycle.branch = Branch::SelfTriggered;
                let planned = t_k + dmin.min(t_star);
                runner.advance_mpc(&sol, k, planned.min(end))?;
                (planned.min(end), planned > end + TIME_EPS)
            }
            Mode::EventTriggered => {
                let fixed = runner.region.clone();
                let params = TriggerParams::new(&fixed, sc.gamma)?;
                let decision = trigger::sds_decide(&params, t_k, t_star)?;
                match decision.branch {
                    SdsBranch::DirectUpdate { t_next } => {
                        let mut ev = EventRecord::at(t_k, EventKind::SdsDirect, Some(k));
                        ev.t_star = Some(t_star);
                        ev.delta_min = Some(dmin);
                        runner.log.events.push(ev);
                        runner.advance_mpc(&sol, k, t_next.min(end))?;
                        (t_next.min(end), t_next > end + TIME_EPS)
                    }
                    SdsBranch::SampleAt { delta_star } => {
                        cycle.branch = Branch::Sample;
                        cycle.delta_star = Some(delta_star);
                        let mut m = 1usize;
                        loop {
                            let t_eval = t_k + m as f64 * delta_star;
                            if t_eval > end {
                                runner.advance_mpc(&sol, k, end)?;
                                break (end, true);
                            }
                            runner.advance_mpc(&sol, k, t_eval)?;
                            let verdict = trigger::ets_check(
                                &params,
                                &runner.plant.x,
                                &runner.plant.x_hat,
                                m,
                                delta_star,
                                t_star,
                            )?;
                            cycle.ets_evaluations += 1;
                            runner.log.events.push(EventRecord::at(t_eval, EventKind::Measurement, Some(k)));
                            let kind = if verdict.continue_ { EventKind::EtsContinue } else { EventKind::EtsStop };
                            let mut ev = EventRecord::at(t_eval, kind, Some(k));
                            ev.m = Some(m);
                            ev.deviation = Some(verdict.deviation);
                            ev.threshold = Some(verdict.threshold);
                            ev.delta_star = Some(delta_star);
                            ev.t_star = Some(t_star);
                            runner.log.events.push(ev);
                            if !verdict.continue_ {
                                break (t_eval, false);
                            }
                            m += 1;
                        }
                    }
                }
            }
        };
        // the propagation may end early at the simulation horizon
        runner.plant.t = t_next;
        if !truncated {
            cycle.delta = Some(t_next - t_k);
        }
        runner.log.cycles.push(cycle);
        prev = Some(sol);
        k += 1;
    }
    runner.finish();
    Ok(runner.log)
}

/// Event-triggered closed loop with the sampled trigger.
pub fn run_event_triggered(sc: &Scenario) -> Result<SimLog> {
    let mut sc = sc.clone();
    sc.mode = Mode::EventTriggered;
    run(&sc)
}

/// Baseline solving every `period` seconds with the same horizon rule.
pub fn run_periodic(sc: &Scenario, period: f64) -> Result<SimLog> {
    let mut sc = sc.clone();
    sc.mode = Mode::Periodic { period };
    run(&sc)
}

/// Fires every `min{Δ^min_k, T*_k}` without intermediate measurements.
pub fn run_self_triggered(sc: &Scenario) -> Result<SimLog> {
    let mut sc = sc.clone();
    sc.mode = Mode::SelfTriggered;
    run(&sc)
}

/// Counts, entry time and inter-event statistics of a finished log.
pub fn extract_metrics(log: &SimLog, t0: f64) -> Metrics {
    let eps2 = log.info.epsilon * log.info.epsilon;
    let ocp_count = log.events.iter().filter(|e| e.kind == EventKind::OcpSolve).count();
    let measurement_count = log
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Measurement)
        .count();
    let entry = log.trace.iter().position(|s| s.v_f <= eps2);
    let convergence_time = entry.map(|i| log.trace[i].t - t0);
    let max_vf_ratio_after_entry = entry.map(|i| log.trace[i..].iter().map(|s| s.v_f / eps2).fold(0.0, f64::max));
    let inter_event_times: Vec<f64> = log.cycles.iter().filter_map(|c| c.delta).collect();
    let min_inter_event = inter_event_times.iter().cloned().reduce(f64::min);
    let max_inter_event = inter_event_times.iter().cloned().reduce(f64::max);
    let mean_inter_event = if inter_event_times.is_empty() {
        None
    } else {
        Some(inter_event_times.iter().sum::<f64>() / inter_event_times.len() as f64)
    };
    let t_star_0 = log.cycles.first().map(|c| c.t_star);
    let entry_bound = t_star_0.map(|t| t / log.info.alpha);
    Metrics {
        ocp_count,
        measurement_count,
        convergence_time,
        inter_event_times,
        min_inter_event,
        max_inter_event,
        mean_inter_event,
        t_star_0,
        entry_bound,
        certified: log.metrics.certified,
        max_vf_ratio_after_entry,
        mode_switch_time: log
            .events
            .iter()
            .find(|e| e.kind == EventKind::ModeSwitch)
            .map(|e| e.t - t0),
    }
}

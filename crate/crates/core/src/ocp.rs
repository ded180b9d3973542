//! Finite-horizon optimal control by direct single shooting.
//!
//! Controls are piecewise constant on `n_segments` equal segments, the
//! dynamics are integrated with RK4 on a uniform grid, and the terminal set
//! `Φ_f` enters through an exterior quadratic penalty whose weight is raised
//! until the terminal state lands inside `Φ_f`.

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::model::{ControlTrajectory, InputBox, StateTrajectory, SystemModel};
use crate::ode::{rk4_step, Rk4Work};
use crate::terminal::TerminalRegion;

/// Relative slack on `V_f(x̂(t_k+T_k)) ≤ ε_f²` accepted as converged.
pub const TERMINAL_TOL: f64 = 1e-6;

const BISECTION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub n_segments: usize,
    pub steps_per_segment: usize,
    pub penalty_weights: Vec<f64>,
    /// The penalty acts on `V_f − (1 − margin)ε_f²` so the escalation reaches
    /// the unshifted constraint without the largest weights.
    pub terminal_margin: f64,
    pub max_iterations: usize,
    /// Inner loop stops once the projected gradient norm drops below
    /// `stationarity_tol·(1 + |J|)`.
    pub stationarity_tol: f64,
    pub fd_step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            n_segments: 40,
            steps_per_segment: 20,
            penalty_weights: vec![1e2, 1e4, 1e6, 1e8],
            terminal_margin: 1e-2,
            max_iterations: 600,
            stationarity_tol: 1e-4,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OcpSpec<'a> {
    pub model: &'a SystemModel,
    pub region: &'a TerminalRegion,
    pub x_k: Vec<f64>,
    pub t_k: f64,
    pub horizon: f64,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub warm_start: Option<ControlTrajectory>,
    pub options: SolverOptions,
}

impl<'a> OcpSpec<'a> {
    /// Spec with the stage weights stored in the region and default options.
    pub fn new(model: &'a SystemModel, region: &'a TerminalRegion, x_k: Vec<f64>, t_k: f64, horizon: f64) -> Self {
        Self {
            model,
            region,
            x_k,
            t_k,
            horizon,
            q: region.q().clone(),
            r: region.r().clone(),
            warm_start: None,
            options: SolverOptions::default(),
        }
    }

    pub fn with_warm_start(mut self, u: ControlTrajectory) -> Self {
        self.warm_start = Some(u);
        self
    }

    fn validate(&self) -> Result<()> {
        let n = self.model.state_dim();
        let m = self.model.input_dim();
        check_dim("measured state", n, self.x_k.len())?;
        check_dim("region dimension", n, self.region.state_dim())?;
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Contract(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.q.shape() != (n, n) || self.r.shape() != (m, m) {
            return Err(Error::Contract("stage weights have the wrong shape".into()));
        }
        if !crate::linalg::is_positive_definite(&self.q) || !crate::linalg::is_positive_definite(&self.r) {
            return Err(Error::InvalidConfig("Q and R must be symmetric positive definite".into()));
        }
        let o = &self.options;
        if o.n_segments == 0 || o.steps_per_segment == 0 || o.penalty_weights.is_empty() {
            return Err(Error::Contract("solver options need segments, steps and penalty weights".into()));
        }
        if self.x_k.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("measured state is not finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub t_k: f64,
    pub u_star: ControlTrajectory,
    pub x_star: StateTrajectory,
    /// Unpenalized cost `J`.
    pub cost: f64,
    pub horizon: f64,
    /// First-entry offset `T*_k` into `Φ_f`, relative to `t_k`.
    pub t_star: f64,
    pub terminal_vf: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Penalty weight of the last round.
    pub penalty_weight: f64,
    /// Projected gradient norm of the penalized objective at the returned
    /// controls, as seen by the solver.
    pub stationarity: f64,
}

/// `∫ ‖x‖²_Q + ‖u‖²_R` over the state grid: trapezoid rule for the state
/// term, exact for the piecewise-constant control term.
pub fn eval_cost(x: &StateTrajectory, u: &ControlTrajectory, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<f64> {
    if (x.t_start - u.t_start).abs() > 1e-12 * (1.0 + u.t_start.abs()) {
        return Err(Error::Contract("state and control trajectories start at different times".into()));
    }
    let per = u.segment_width / x.step;
    if (per - per.round()).abs() > 1e-9 * per.max(1.0) || per.round() < 1.0 {
        return Err(Error::Contract("state grid does not refine the control segments".into()));
    }
    let per = per.round() as usize;
    let intervals = x.states.len() - 1;
    if intervals > per * u.len() {
        return Err(Error::Contract("state trajectory is longer than the control".into()));
    }
    let quad = |m: &DMatrix<f64>, v: &[f64]| -> f64 {
        let mut acc = 0.0;
        for i in 0..v.len() {
            for j in 0..v.len() {
                acc += v[i] * m[(i, j)] * v[j];
            }
        }
        acc
    };
    let mut total = 0.0;
    for i in 0..intervals {
        let ui = &u.values[i / per];
        total += 0.5 * x.step * (quad(q, &x.states[i]) + quad(q, &x.states[i + 1])) + x.step * quad(r, ui);
    }
    Ok(total)
}

/// `T_k = T*_{k−1} − αΔ_{k−1}`.
pub fn shrink_horizon(t_star_prev: f64, delta_prev: f64, alpha: f64) -> Result<f64> {
    let t = t_star_prev - alpha * delta_prev;
    if !(t > 0.0) {
        return Err(Error::Contract(format!(
            "shrunk horizon {t} is not positive (T* = {t_star_prev}, Δ = {delta_prev}, α = {alpha})"
        )));
    }
    Ok(t)
}

/// Smallest offset at which the predicted trajectory enters `Φ_f`.
///
/// The grid is scanned for the first point inside; the crossing is then
/// refined by bisection on the length of a single RK4 step from the last
/// outside grid point.
pub fn first_entry_time(
    model: &SystemModel,
    u: &ControlTrajectory,
    x_star: &StateTrajectory,
    region: &TerminalRegion,
) -> Result<f64> {
    let target = region.epsilon_f() * region.epsilon_f();
    let idx = x_star
        .states
        .iter()
        .position(|x| region.v_f(x) <= target)
        .ok_or_else(|| Error::Internal("predicted trajectory never enters the inner terminal set".into()))?;
    if idx == 0 {
        return Ok(0.0);
    }
    let n = model.state_dim();
    let x_prev = &x_star.states[idx - 1];
    let t_prev = x_star.time(idx - 1);
    let ui = u.value_at(t_prev + 0.5 * x_star.step);
    let mut work = Rk4Work::new(n);
    let mut out = vec![0.0; n];
    let (mut lo, mut hi) = (0.0, x_star.step);
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        rk4_step(|x, dx| model.rhs_into(x, ui, dx), x_prev, mid, &mut out, &mut work);
        if region.v_f(&out) <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(t_prev - x_star.t_start + hi)
}

/// Shooting evaluator with reusable buffers.
struct Shooting<'a> {
    model: &'a SystemModel,
    n: usize,
    m: usize,
    segments: usize,
    steps: usize,
    h: f64,
    q: Vec<f64>,
    r: Vec<f64>,
    p: Vec<f64>,
    x0: Vec<f64>,
    target: f64,
    work: Rk4Work,
    x: Vec<f64>,
    next: Vec<f64>,
    /// State at each segment start of the last full simulation.
    seg_states: Vec<f64>,
    /// Stage cost accumulated before each segment start.
    seg_cost: Vec<f64>,
}

fn quad_flat(m: &[f64], v: &[f64]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += m[i * n + j] * v[j];
        }
        acc += v[i] * row;
    }
    acc
}

fn flat(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

impl<'a> Shooting<'a> {
    fn new(spec: &OcpSpec<'a>, target: f64) -> Self {
        let n = spec.model.state_dim();
        let segments = spec.options.n_segments;
        let steps = spec.options.steps_per_segment;
        Self {
            model: spec.model,
            n,
            m: spec.model.input_dim(),
            segments,
            steps,
            h: spec.horizon / (segments * steps) as f64,
            q: flat(&spec.q),
            r: flat(&spec.r),
            p: flat(spec.region.p_f().matrix()),
            x0: spec.x_k.clone(),
            target,
            work: Rk4Work::new(n),
            x: vec![0.0; n],
            next: vec![0.0; n],
            seg_states: vec![0.0; (segments + 1) * n],
            seg_cost: vec![0.0; segments + 1],
        }
    }

    /// Integrates segments `from..` starting at `x`, returning the stage cost
    /// of those segments; the terminal state is left in `self.x`. Segment
    /// `perturbed` (if any) uses `u_pert` instead of its stored value.
    fn run_tail(&mut self, u: &[f64], from: usize, perturbed: Option<(usize, &[f64])>, record: bool) -> f64 {
        let (n, m, h) = (self.n, self.m, self.h);
        let model = self.model;
        let mut cost = 0.0;
        let mut stage = quad_flat(&self.q, &self.x);
        for j in from..self.segments {
            if record {
                self.seg_states[j * n..(j + 1) * n].copy_from_slice(&self.x);
                self.seg_cost[j] = cost;
            }
            let uj: &[f64] = match perturbed {
                Some((k, up)) if k == j => up,
                _ => &u[j * m..(j + 1) * m],
            };
            cost += self.steps as f64 * h * quad_flat(&self.r, uj);
            for _ in 0..self.steps {
                rk4_step(|x, dx| model.rhs_into(x, uj, dx), &self.x, h, &mut self.next, &mut self.work);
                std::mem::swap(&mut self.x, &mut self.next);
                let s = quad_flat(&self.q, &self.x);
                cost += 0.5 * h * (stage + s);
                stage = s;
            }
        }
        if record {
            self.seg_states[self.segments * n..].copy_from_slice(&self.x);
            self.seg_cost[self.segments] = cost;
        }
        cost
    }

    fn penalty(&self, rho: f64) -> f64 {
        let v = quad_flat(&self.p, &self.x);
        let excess = (v - self.target).max(0.0);
        rho * excess * excess
    }

    /// Penalized objective; also records segment-start states and costs.
    fn objective(&mut self, u: &[f64], rho: f64) -> (f64, f64) {
        self.x.copy_from_slice(&self.x0);
        let cost = self.run_tail(u, 0, None, true);
        let total = cost + self.penalty(rho);
        if total.is_finite() {
            (total, cost)
        } else {
            (f64::INFINITY, f64::INFINITY)
        }
    }

    /// Central-difference gradient of the penalized objective at `u`, which
    /// must be the argument of the most recent `objective` call.
    fn gradient(&mut self, u: &[f64], rho: f64, fd: f64, grad: &mut [f64]) {
        let (n, m) = (self.n, self.m);
        let mut up = vec![0.0; m];
        for j in 0..self.segments {
            for c in 0..m {
                let base = u[j * m + c];
                let step = fd * (1.0 + base.abs());
                let mut tails = [0.0; 2];
                for (slot, sign) in [(0usize, 1.0), (1usize, -1.0)] {
                    up.copy_from_slice(&u[j * m..(j + 1) * m]);
                    up[c] = base + sign * step;
                    self.x.copy_from_slice(&self.seg_states[j * n..(j + 1) * n]);
                    let cost = self.run_tail(u, j, Some((j, &up)), false);
                    tails[slot] = cost + self.penalty(rho);
                }
                grad[j * m + c] = (tails[0] - tails[1]) / (2.0 * step);
            }
        }
    }

    fn trajectory(&mut self, u: &[f64], t_k: f64) -> StateTrajectory {
        let (m, h) = (self.m, self.h);
        let model = self.model;
        let mut states = Vec::with_capacity(self.segments * self.steps + 1);
        self.x.copy_from_slice(&self.x0);
        states.push(self.x.clone());
        for j in 0..self.segments {
            let uj = &u[j * m..(j + 1) * m];
            for _ in 0..self.steps {
                rk4_step(|x, dx| model.rhs_into(x, uj, dx), &self.x, h, &mut self.next, &mut self.work);
                std::mem::swap(&mut self.x, &mut self.next);
                states.push(self.x.clone());
            }
        }
        StateTrajectory {
            t_start: t_k,
            step: h,
            states,
        }
    }
}

fn project(ib: &InputBox, u: &mut [f64]) {
    let m = ib.dim();
    for chunk in u.chunks_mut(m) {
        ib.project(chunk);
    }
}

/// Gradient with components that push against an active bound removed.
pub fn projected_gradient(ib: &InputBox, u: &[f64], g: &[f64]) -> Vec<f64> {
    let m = ib.dim();
    u.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (&ui, &gi))| {
            let c = i % m;
            if (ui <= ib.lower[c] && gi > 0.0) || (ui >= ib.upper[c] && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Initial segment values: the warm start sampled at segment midpoints, or
/// without one, a rollout of the saturated local gain from `x_k`.
fn initial_controls(spec: &OcpSpec<'_>) -> Vec<f64> {
    let (segs, m) = (spec.options.n_segments, spec.model.input_dim());
    let width = spec.horizon / segs as f64;
    let ib = spec.model.input_box();
    let mut u = vec![0.0; segs * m];
    match &spec.warm_start {
        Some(ws) if ws.values.first().map(|v| v.len()) == Some(m) => {
            for j in 0..segs {
                let t = spec.t_k + (j as f64 + 0.5) * width;
                u[j * m..(j + 1) * m].copy_from_slice(ws.value_at(t));
            }
        }
        _ => {
            let n = spec.model.state_dim();
            let steps = spec.options.steps_per_segment;
            let h = width / steps as f64;
            let mut work = Rk4Work::new(n);
            let mut x = spec.x_k.clone();
            let mut next = vec![0.0; n];
            for j in 0..segs {
                let uj = &mut u[j * m..(j + 1) * m];
                spec.region.local_control_into(&x, uj);
                ib.project(uj);
                if uj.iter().any(|v| !v.is_finite()) {
                    uj.iter_mut().for_each(|v| *v = 0.0);
                }
                let uj = &u[j * m..(j + 1) * m];
                for _ in 0..steps {
                    rk4_step(|x, dx| spec.model.rhs_into(x, uj, dx), &x, h, &mut next, &mut work);
                    std::mem::swap(&mut x, &mut next);
                }
                if x.iter().any(|v| !v.is_finite()) {
                    break;
                }
            }
        }
    }
    project(ib, &mut u);
    u
}

/// Penalized objective `J + ρ·max(0, V_f(x̂(T)) − (1−margin)ε_f²)²` for flat
/// segment values `u` (segment-major).
pub fn penalized_objective(spec: &OcpSpec<'_>, u: &[f64], rho: f64) -> Result<f64> {
    spec.validate()?;
    check_dim("flat control vector", spec.options.n_segments * spec.model.input_dim(), u.len())?;
    let mut sh = Shooting::new(spec, penalty_target(spec));
    Ok(sh.objective(u, rho).0)
}

fn penalty_target(spec: &OcpSpec<'_>) -> f64 {
    let ef = spec.region.epsilon_f();
    ef * ef * (1.0 - spec.options.terminal_margin)
}

struct Inner {
    f: f64,
    iterations: usize,
    pg_norm: f64,
}

/// Projected gradient with Barzilai–Borwein steps and Armijo backtracking
/// along the projection arc.
fn minimize(sh: &mut Shooting<'_>, ib: &InputBox, u: &mut Vec<f64>, rho: f64, opts: &SolverOptions) -> Result<Inner> {
    let dim = u.len();
    let (mut f, mut cost) = sh.objective(u, rho);
    if !f.is_finite() {
        return Err(Error::IntegrationDiverged { t: 0.0 });
    }
    let mut g = vec![0.0; dim];
    sh.gradient(u, rho, opts.fd_step, &mut g);
    let mut step = 1.0 / norm2(&g).max(1.0);
    let mut trial = vec![0.0; dim];
    let mut g_new = vec![0.0; dim];
    let mut iterations = 0;
    let mut pg_norm = norm2(&projected_gradient(ib, u, &g));
    while iterations < opts.max_iterations {
        if pg_norm <= opts.stationarity_tol * (1.0 + cost.abs()) {
            break;
        }
        iterations += 1;
        let mut a = step;
        let mut accepted = false;
        let (mut f_trial, mut cost_trial) = (f, cost);
        for _ in 0..60 {
            for i in 0..dim {
                trial[i] = u[i] - a * g[i];
            }
            project(ib, &mut trial);
            let decrease: f64 = (0..dim).map(|i| g[i] * (trial[i] - u[i])).sum();
            if decrease >= 0.0 {
                break;
            }
            (f_trial, cost_trial) = sh.objective(&trial, rho);
            if f_trial <= f + 1e-4 * decrease {
                accepted = true;
                break;
            }
            a *= 0.5;
        }
        if !accepted {
            break;
        }
        // the last objective call was at `trial`, as the gradient requires
        sh.gradient(&trial, rho, opts.fd_step, &mut g_new);
        let mut ss = 0.0;
        let mut sy = 0.0;
        for i in 0..dim {
            let s = trial[i] - u[i];
            let y = g_new[i] - g[i];
            ss += s * s;
            sy += s * y;
        }
        step = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e12) } else { (2.0 * a).min(1e12) };
        let progress = f - f_trial;
        std::mem::swap(u, &mut trial);
        std::mem::swap(&mut g, &mut g_new);
        f = f_trial;
        cost = cost_trial;
        pg_norm = norm2(&projected_gradient(ib, u, &g));
        if progress <= 1e-15 * f.abs().max(1e-300) && ss == 0.0 {
            break;
        }
    }
    Ok(Inner {
        f,
        iterations,
        pg_norm,
    })
}

/// Solves the finite-horizon problem from `spec.x_k` over `[t_k, t_k + T_k]`.
pub fn solve(spec: &OcpSpec<'_>) -> Result<OcpSolution> {
    spec.validate()?;
    let ib = spec.model.input_box();
    let opts = &spec.options;
    let ef2 = spec.region.epsilon_f() * spec.region.epsilon_f();
    let mut sh = Shooting::new(spec, penalty_target(spec));
    let mut u = initial_controls(spec);
    let mut iterations = 0;
    let mut best_vf = f64::INFINITY;
    for &rho in &opts.penalty_weights {
        let inner = minimize(&mut sh, ib, &mut u, rho, opts)?;
        iterations += inner.iterations;
        // `minimize` leaves the shooting state at the returned controls
        let (_, cost) = sh.objective(&u, rho);
        let vf = quad_flat(&sh.p, &sh.x);
        best_vf = best_vf.min(vf);
        if vf <= ef2 * (1.0 + TERMINAL_TOL) {
            let segs = opts.n_segments;
            let width = spec.horizon / segs as f64;
            let m = spec.model.input_dim();
            let values: Vec<Vec<f64>> = u.chunks(m).map(|c| c.to_vec()).collect();
            let u_star = ControlTrajectory::new(spec.t_k, width, values, ib)?;
            let x_star = sh.trajectory(&u, spec.t_k);
            let t_star = first_entry_time(spec.model, &u_star, &x_star, spec.region)?;
            debug_assert!(inner.f.is_finite());
            return Ok(OcpSolution {
                t_k: spec.t_k,
                u_star,
                x_star,
                cost,
                horizon: spec.horizon,
                t_star,
                terminal_vf: vf,
                iterations,
                converged: true,
                penalty_weight: rho,
                stationarity: inner.pg_norm,
            });
        }
    }
    Err(Error::Infeasible {
        best_terminal_vf: best_vf,
        target: ef2,
    })
}

/// Warm start for the next solve: the previous optimal controls shifted to
/// `t_next`, extended past their end by the local gain applied along the
/// predicted tail.
pub fn shifted_warm_start(
    model: &SystemModel,
    region: &TerminalRegion,
    prev: &OcpSolution,
    t_next: f64,
    horizon: f64,
    n_segments: usize,
) -> ControlTrajectory {
    let width = horizon / n_segments as f64;
    let ib = model.input_box();
    let n = model.state_dim();
    let prev_end = prev.u_star.end_time();
    let mut x_tail = prev.x_star.final_state().to_vec();
    let mut work = Rk4Work::new(n);
    let mut next = vec![0.0; n];
    let mut values = Vec::with_capacity(n_segments);
    let mut tail_clock = prev_end;
    for j in 0..n_segments {
        let mid = t_next + (j as f64 + 0.5) * width;
        if mid < prev_end {
            values.push(prev.u_star.value_at(mid).to_vec());
            continue;
        }
        let seg_end = t_next + (j as f64 + 1.0) * width;
        let mut u = region.local_control(&x_tail);
        ib.project(&mut u);
        while tail_clock < seg_end {
            let h = (seg_end - tail_clock).min(width / 4.0).max(1e-12);
            rk4_step(|x, dx| model.rhs_into(x, &u, dx), &x_tail, h, &mut next, &mut work);
            std::mem::swap(&mut x_tail, &mut next);
            tail_clock += h;
        }
        values.push(u);
    }
    ControlTrajectory {
        t_start: t_next,
        segment_width: width,
        values,
    }
}

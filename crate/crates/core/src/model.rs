//! Continuous-time plant models, trajectories and fixed-step integration.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::disturbance::DisturbanceSignal;
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::ode::{rk4_step, Rk4Work};

/// Right-hand side `f(x, u)` written into the output slice.
pub type RhsFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

const JACOBIAN_STEP: f64 = 1e-6;

/// Box-shaped input constraint set `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl InputBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim("input box upper bound", lower.len(), upper.len())?;
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidConfig("input box lower bound exceeds upper bound".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn symmetric(dim: usize, bound: f64) -> Self {
        Self {
            lower: vec![-bound; dim],
            upper: vec![bound; dim],
        }
    }

    pub fn unbounded(dim: usize) -> Self {
        Self::symmetric(dim, f64::INFINITY)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.len() == self.dim()
            && u.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    pub fn project(&self, u: &mut [f64]) {
        for (v, (l, h)) in u.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *h);
        }
    }
}

/// The plant `ẋ = f(x, u)` together with its input set and (optionally)
/// analytic Jacobians at the origin.
#[derive(Clone)]
pub struct SystemModel {
    name: String,
    state_dim: usize,
    input_dim: usize,
    rhs: Arc<RhsFn>,
    input_box: InputBox,
    jacobians: Option<(DMatrix<f64>, DMatrix<f64>)>,
    linearization: Arc<OnceLock<(DMatrix<f64>, DMatrix<f64>)>>,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("input_box", &self.input_box)
            .finish_non_exhaustive()
    }
}

impl SystemModel {
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        input_dim: usize,
        rhs: Arc<RhsFn>,
        input_box: InputBox,
        jacobians: Option<(DMatrix<f64>, DMatrix<f64>)>,
    ) -> Result<Self> {
        if state_dim == 0 || input_dim == 0 {
            return Err(Error::Contract("state and input dimensions must be positive".into()));
        }
        check_dim("input box", input_dim, input_box.dim())?;
        if !input_box.contains(&vec![0.0; input_dim]) {
            return Err(Error::InvalidConfig("input box must contain the zero input".into()));
        }
        if let Some((a, b)) = &jacobians {
            if a.shape() != (state_dim, state_dim) || b.shape() != (state_dim, input_dim) {
                return Err(Error::Contract("Jacobian shapes do not match the model".into()));
            }
        }
        let model = Self {
            name: name.into(),
            state_dim,
            input_dim,
            rhs,
            input_box,
            jacobians,
            linearization: Arc::new(OnceLock::new()),
        };
        let mut f0 = vec![0.0; state_dim];
        (model.rhs)(&vec![0.0; state_dim], &vec![0.0; input_dim], &mut f0);
        if f0.iter().any(|v| !(v.abs() <= 1e-12)) {
            return Err(Error::InvalidConfig("model must satisfy f(0, 0) = 0".into()));
        }
        if model.jacobians.is_none() {
            let (a1, b1) = model.central_differences(JACOBIAN_STEP);
            let (a2, b2) = model.central_differences(JACOBIAN_STEP / 2.0);
            let scale = 1.0 + a1.abs().max().max(b1.abs().max());
            let drift = (&a1 - &a2).abs().max().max((&b1 - &b2).abs().max());
            if drift > 1e-6 * scale {
                return Err(Error::InvalidConfig(
                    "finite-difference Jacobian is not stable under step halving".into(),
                ));
            }
        }
        Ok(model)
    }

    /// Linear model `ẋ = A x + B u`.
    pub fn linear(a: DMatrix<f64>, b: DMatrix<f64>, input_box: InputBox) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        if !a.is_square() || b.nrows() != n {
            return Err(Error::Contract("linear model needs square A and B with matching rows".into()));
        }
        let (a2, b2) = (a.clone(), b.clone());
        let rhs = move |x: &[f64], u: &[f64], dx: &mut [f64]| {
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += a2[(i, j)] * x[j];
                }
                for j in 0..m {
                    acc += b2[(i, j)] * u[j];
                }
                dx[i] = acc;
            }
        };
        Self::new("linear", n, m, Arc::new(rhs), input_box, Some((a, b)))
    }

    /// The two-state benchmark with a single bounded input:
    /// `ẋ₁ = x₂ + u(μ + (1−μ)x₁)`, `ẋ₂ = x₁ + u(μ − 4(1−μ)x₂)`, `|u| ≤ 2`.
    pub fn chen_allgower(mu: f64) -> Result<Self> {
        let rhs = move |x: &[f64], u: &[f64], dx: &mut [f64]| {
            dx[0] = x[1] + u[0] * (mu + (1.0 - mu) * x[0]);
            dx[1] = x[0] + u[0] * (mu - 4.0 * (1.0 - mu) * x[1]);
        };
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let b = DMatrix::from_column_slice(2, 1, &[mu, mu]);
        Self::new(
            "chen_allgower",
            2,
            1,
            Arc::new(rhs),
            InputBox::symmetric(1, 2.0),
            Some((a, b)),
        )
    }

    /// Looks a model up in the built-in registry.
    pub fn by_name(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        match name {
            "chen_allgower" => {
                let mu = params.get("mu").copied().unwrap_or(0.8);
                Self::chen_allgower(mu)
            }
            other => Err(Error::InvalidConfig(format!("unknown model '{other}'"))),
        }
    }

    /// Same dynamics with the analytic Jacobians dropped, forcing the
    /// finite-difference linearization path.
    pub fn without_jacobians(&self) -> Result<Self> {
        Self::new(
            self.name.clone(),
            self.state_dim,
            self.input_dim,
            self.rhs.clone(),
            self.input_box.clone(),
            None,
        )
    }

    pub fn with_input_box(&self, input_box: InputBox) -> Result<Self> {
        Self::new(
            self.name.clone(),
            self.state_dim,
            self.input_dim,
            self.rhs.clone(),
            input_box,
            self.jacobians.clone(),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn input_box(&self) -> &InputBox {
        &self.input_box
    }

    pub fn has_analytic_jacobians(&self) -> bool {
        self.jacobians.is_some()
    }

    /// `f(x, u)` without dimension checks.
    #[inline]
    pub fn rhs_into(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        (self.rhs)(x, u, dx)
    }

    pub fn eval_rhs(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_dim("state", self.state_dim, x.len())?;
        check_dim("input", self.input_dim, u.len())?;
        let mut dx = vec![0.0; self.state_dim];
        self.rhs_into(x, u, &mut dx);
        Ok(dx)
    }

    /// `(A_f, B_f)` at the origin: analytic when supplied, otherwise central
    /// differences with step 1e-6. Cached after the first call.
    pub fn linearize_at_origin(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        self.linearization
            .get_or_init(|| match &self.jacobians {
                Some(j) => j.clone(),
                None => self.central_differences(JACOBIAN_STEP),
            })
            .clone()
    }

    pub fn central_differences(&self, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let (n, m) = (self.state_dim, self.input_dim);
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, m);
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        let zero_u = vec![0.0; m];
        let zero_x = vec![0.0; n];
        for j in 0..n {
            let mut xp = zero_x.clone();
            let mut xm = zero_x.clone();
            xp[j] = h;
            xm[j] = -h;
            self.rhs_into(&xp, &zero_u, &mut fp);
            self.rhs_into(&xm, &zero_u, &mut fm);
            for i in 0..n {
                a[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        for j in 0..m {
            let mut up = zero_u.clone();
            let mut um = zero_u.clone();
            up[j] = h;
            um[j] = -h;
            self.rhs_into(&zero_x, &up, &mut fp);
            self.rhs_into(&zero_x, &um, &mut fm);
            for i in 0..n {
                b[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        (a, b)
    }
}

/// Symmetric positive-definite weighting `‖x‖_P = √(xᵀPx)` with a cached
/// Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedNorm {
    p: DMatrix<f64>,
    chol_l: DMatrix<f64>,
    l_inv_t: DMatrix<f64>,
}

impl WeightedNorm {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        if !linalg::is_symmetric(&p, 1e-12) {
            return Err(Error::InvalidConfig("weight matrix must be symmetric".into()));
        }
        let p = linalg::symmetrize(&p);
        let chol = p
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidConfig("weight matrix must be positive definite".into()))?;
        let chol_l = chol.l();
        let l_inv_t = chol_l
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?
            .transpose();
        Ok(Self { p, chol_l, l_inv_t })
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol_l
    }

    /// `xᵀPx`.
    #[inline]
    pub fn quad(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let mut acc = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.p[(i, j)] * x[j];
            }
            acc += x[i] * row;
        }
        acc
    }

    /// `‖Lᵀx‖₂`, the factor-based evaluation of the norm.
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let mut acc = 0.0;
        for j in 0..n {
            let mut v = 0.0;
            for i in j..n {
                v += self.chol_l[(i, j)] * x[i];
            }
            acc += v * v;
        }
        acc.sqrt()
    }

    /// `‖a − b‖_P`.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.eval(&d)
    }

    /// Maps a nonzero direction `d` to the point `x = L⁻ᵀ d / ‖d‖₂` with
    /// `‖x‖_P = 1`.
    pub fn unit_sphere_point(&self, d: &[f64]) -> Vec<f64> {
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let n = d.len();
        (0..n)
            .map(|i| (0..n).map(|j| self.l_inv_t[(i, j)] * d[j] / norm).sum())
            .collect()
    }

    /// The same weighting scaled by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(&self.p * c)
    }
}

/// Checked `‖x‖_P`.
pub fn weighted_norm(p: &WeightedNorm, x: &[f64]) -> Result<f64> {
    check_dim("state", p.dim(), x.len())?;
    Ok(p.eval(x))
}

/// Piecewise-constant control over equal-width segments.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTrajectory {
    pub t_start: f64,
    pub segment_width: f64,
    pub values: Vec<Vec<f64>>,
}

impl ControlTrajectory {
    pub fn new(t_start: f64, segment_width: f64, values: Vec<Vec<f64>>, input_box: &InputBox) -> Result<Self> {
        if !(segment_width > 0.0) {
            return Err(Error::Contract("segment width must be positive".into()));
        }
        if values.is_empty() {
            return Err(Error::Contract("control trajectory needs at least one segment".into()));
        }
        for v in &values {
            check_dim("control value", input_box.dim(), v.len())?;
            if !input_box.contains(v) {
                return Err(Error::Contract(format!("control value {v:?} outside the input box")));
            }
        }
        Ok(Self {
            t_start,
            segment_width,
            values,
        })
    }

    pub fn constant(t_start: f64, segment_width: f64, segments: usize, u: Vec<f64>) -> Self {
        Self {
            t_start,
            segment_width,
            values: vec![u; segments.max(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn end_time(&self) -> f64 {
        self.t_start + self.segment_width * self.values.len() as f64
    }

    pub fn segment_index(&self, t: f64) -> usize {
        let idx = ((t - self.t_start) / self.segment_width + 1e-9).floor();
        if idx <= 0.0 {
            0
        } else {
            (idx as usize).min(self.values.len() - 1)
        }
    }

    /// Value in force at `t`; the last value is held past the end.
    pub fn value_at(&self, t: f64) -> &[f64] {
        &self.values[self.segment_index(t)]
    }

    /// Start of the segment after the one active at `t`.
    pub fn next_switch_after(&self, t: f64) -> f64 {
        let idx = self.segment_index(t);
        if idx + 1 >= self.values.len() {
            return f64::INFINITY;
        }
        self.t_start + (idx + 1) as f64 * self.segment_width
    }
}

/// States on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub t_start: f64,
    pub step: f64,
    pub states: Vec<Vec<f64>>,
}

impl StateTrajectory {
    pub fn time(&self, i: usize) -> f64 {
        self.t_start + i as f64 * self.step
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn final_time(&self) -> f64 {
        self.time(self.states.len() - 1)
    }

    pub fn duration(&self) -> f64 {
        self.step * (self.states.len() - 1) as f64
    }
}

fn steps_in(span: f64, step: f64, what: &str) -> Result<usize> {
    let n = (span / step).round();
    if !(step > 0.0) || (n * step - span).abs() > 1e-9 * span.abs().max(1.0) {
        return Err(Error::Contract(format!("step {step} does not divide {what} {span}")));
    }
    Ok(n as usize)
}

/// RK4 trace of the nominal dynamics `ẋ = f(x, u)`.
pub fn integrate_nominal(
    model: &SystemModel,
    x0: &[f64],
    u: &ControlTrajectory,
    duration: f64,
    step: f64,
) -> Result<StateTrajectory> {
    integrate(model, x0, u, None, duration, step)
}

/// RK4 trace of the disturbed dynamics `ẋ = f(x, u) + w(t)`. With `w ≡ 0`
/// the result is bit-identical to [`integrate_nominal`].
pub fn integrate_disturbed(
    model: &SystemModel,
    x0: &[f64],
    u: &ControlTrajectory,
    w: &DisturbanceSignal,
    duration: f64,
    step: f64,
) -> Result<StateTrajectory> {
    integrate(model, x0, u, Some(w), duration, step)
}

fn integrate(
    model: &SystemModel,
    x0: &[f64],
    u: &ControlTrajectory,
    w: Option<&DisturbanceSignal>,
    duration: f64,
    step: f64,
) -> Result<StateTrajectory> {
    let n = model.state_dim();
    check_dim("initial state", n, x0.len())?;
    if let Some(w) = w {
        for s in &w.samples {
            check_dim("disturbance", n, s.len())?;
        }
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::IntegrationDiverged { t: u.t_start });
    }
    let total = steps_in(duration, step, "duration")?;
    let per_segment = steps_in(u.segment_width, step, "segment width")?.max(1);

    let mut states = Vec::with_capacity(total + 1);
    states.push(x0.to_vec());
    let mut work = Rk4Work::new(n);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; n];
    for i in 0..total {
        let t = u.t_start + i as f64 * step;
        let seg = (i / per_segment).min(u.len() - 1);
        let ui = &u.values[seg];
        let wi = w.map(|w| w.value_at(t)).filter(|wv| wv.iter().any(|&v| v != 0.0));
        match wi {
            None => rk4_step(|x, dx| model.rhs_into(x, ui, dx), &x, step, &mut next, &mut work),
            Some(wv) => rk4_step(
                |x, dx| {
                    model.rhs_into(x, ui, dx);
                    for (d, w) in dx.iter_mut().zip(wv) {
                        *d += w;
                    }
                },
                &x,
                step,
                &mut next,
                &mut work,
            ),
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationDiverged { t: t + step });
        }
        std::mem::swap(&mut x, &mut next);
        states.push(x.clone());
    }
    Ok(StateTrajectory {
        t_start: u.t_start,
        step,
        states,
    })
}

/// RK4 trace of `ẋ = f(x, κ(x)) + w` for a state-feedback law `κ` and a
/// constant disturbance `w`.
pub fn integrate_feedback<C>(
    model: &SystemModel,
    x0: &[f64],
    mut control: C,
    w: &[f64],
    duration: f64,
    step: f64,
) -> Result<StateTrajectory>
where
    C: FnMut(&[f64], &mut [f64]),
{
    let n = model.state_dim();
    check_dim("initial state", n, x0.len())?;
    check_dim("disturbance", n, w.len())?;
    let total = steps_in(duration, step, "duration")?;
    let mut u = vec![0.0; model.input_dim()];
    let mut work = Rk4Work::new(n);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; n];
    let mut states = Vec::with_capacity(total + 1);
    states.push(x.clone());
    for i in 0..total {
        rk4_step(
            |x, dx| {
                control(x, &mut u);
                model.rhs_into(x, &u, dx);
                for (d, wi) in dx.iter_mut().zip(w) {
                    *d += wi;
                }
            },
            &x,
            step,
            &mut next,
            &mut work,
        );
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationDiverged { t: (i + 1) as f64 * step });
        }
        std::mem::swap(&mut x, &mut next);
        states.push(x.clone());
    }
    Ok(StateTrajectory {
        t_start: 0.0,
        step,
        states,
    })
}

/// Sampled estimate of the `P`-weighted Lipschitz constant of `f` in `x`,
/// uniformly over `u ∈ U`, on the ball `‖x‖_P ≤ domain_radius`.
///
/// The sample stream is sequential, so a larger `n_samples` with the same
/// seed extends the previous sample set and the estimate never decreases.
pub fn estimate_lipschitz(
    model: &SystemModel,
    p: &WeightedNorm,
    domain_radius: f64,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    const SAFETY: f64 = 1.05;
    if n_samples < 1000 {
        return Err(Error::Contract(format!("need at least 1000 samples, got {n_samples}")));
    }
    if !(domain_radius > 0.0) {
        return Err(Error::Contract("domain radius must be positive".into()));
    }
    let n = model.state_dim();
    let m = model.input_dim();
    check_dim("weight matrix", n, p.dim())?;
    let ib = model.input_box();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ball_point = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let dir: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let r = domain_radius * rng.random::<f64>().powf(1.0 / n as f64);
        p.unit_sphere_point(&dir).into_iter().map(|v| v * r).collect()
    };
    let mut f1 = vec![0.0; n];
    let mut f2 = vec![0.0; n];
    let mut best = 0.0f64;
    for _ in 0..n_samples {
        let x1 = ball_point(&mut rng);
        let x2 = ball_point(&mut rng);
        let u: Vec<f64> = (0..m)
            .map(|j| {
                let (lo, hi) = (ib.lower[j], ib.upper[j]);
                let s: f64 = rng.random();
                if lo.is_finite() && hi.is_finite() {
                    lo + (hi - lo) * s
                } else {
                    0.0
                }
            })
            .collect();
        let dx = p.distance(&x1, &x2);
        if dx == 0.0 {
            continue;
        }
        model.rhs_into(&x1, &u, &mut f1);
        model.rhs_into(&x2, &u, &mut f2);
        best = best.max(p.distance(&f1, &f2) / dx);
    }
    Ok(SAFETY * best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stub(rhs: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static, n: usize) -> SystemModel {
        SystemModel::new("stub", n, 1, Arc::new(rhs), InputBox::symmetric(1, 1.0), None).unwrap()
    }

    #[test]
    fn benchmark_rhs_values() {
        let m = SystemModel::chen_allgower(0.8).unwrap();
        assert_eq!(m.eval_rhs(&[0.0, 0.0], &[0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(m.eval_rhs(&[3.0, 0.0], &[0.0]).unwrap(), vec![0.0, 3.0]);
        let v = m.eval_rhs(&[1.0, 1.0], &[1.0]).unwrap();
        assert!((v[0] - 2.0).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15, "{v:?}");
    }

    #[test]
    fn rhs_dimension_mismatch() {
        let m = SystemModel::chen_allgower(0.8).unwrap();
        assert!(matches!(m.eval_rhs(&[0.0], &[0.0]), Err(Error::Dimension { .. })));
        assert!(matches!(m.eval_rhs(&[0.0, 0.0], &[0.0, 1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn model_invariants_enforced() {
        let bad = SystemModel::new(
            "offset",
            1,
            1,
            Arc::new(|_x: &[f64], _u: &[f64], dx: &mut [f64]| dx[0] = 1.0),
            InputBox::symmetric(1, 1.0),
            None,
        );
        assert!(matches!(bad, Err(Error::InvalidConfig(_))));
        let no_zero = SystemModel::new(
            "box",
            1,
            1,
            Arc::new(|x: &[f64], _u: &[f64], dx: &mut [f64]| dx[0] = -x[0]),
            InputBox::new(vec![1.0], vec![2.0]).unwrap(),
            None,
        );
        assert!(matches!(no_zero, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn zero_field_keeps_state() {
        let m = stub(|_x, _u, dx| dx.iter_mut().for_each(|v| *v = 0.0), 2);
        let u = ControlTrajectory::constant(0.0, 0.5, 4, vec![0.0]);
        let tr = integrate_nominal(&m, &[1.0, 2.0], &u, 2.0, 0.01).unwrap();
        assert!(tr.states.iter().all(|s| s == &vec![1.0, 2.0]));
        assert!((tr.final_time() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn exponential_decay() {
        let m = stub(|x, _u, dx| dx[0] = -x[0], 1);
        let u = ControlTrajectory::constant(0.0, 0.1, 10, vec![0.0]);
        let tr = integrate_nominal(&m, &[1.0], &u, 1.0, 1e-3).unwrap();
        assert!((tr.final_state()[0] - (-1.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn step_must_divide() {
        let m = stub(|x, _u, dx| dx[0] = -x[0], 1);
        let u = ControlTrajectory::constant(0.0, 0.1, 10, vec![0.0]);
        assert!(matches!(integrate_nominal(&m, &[1.0], &u, 1.0, 0.03), Err(Error::Contract(_))));
    }

    #[test]
    fn divergence_reports_time() {
        let m = stub(|x, _u, dx| dx[0] = x[0] * x[0], 1);
        let u = ControlTrajectory::constant(0.0, 1.0, 5, vec![0.0]);
        match integrate_nominal(&m, &[10.0], &u, 5.0, 0.01) {
            Err(Error::IntegrationDiverged { t }) => assert!(t > 0.0 && t <= 5.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn richardson_benchmark() {
        let m = SystemModel::chen_allgower(0.8).unwrap();
        let u = ControlTrajectory::constant(0.0, 0.1, 10, vec![-0.5]);
        let a = integrate_nominal(&m, &[3.0, 0.0], &u, 1.0, 1e-3).unwrap();
        let b = integrate_nominal(&m, &[3.0, 0.0], &u, 1.0, 5e-4).unwrap();
        let d: f64 = a
            .final_state()
            .iter()
            .zip(b.final_state())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        assert!(d < 1e-6, "{d}");
    }

    #[test]
    fn zero_disturbance_is_bit_identical() {
        let m = SystemModel::chen_allgower(0.8).unwrap();
        let u = ControlTrajectory::constant(0.0, 0.1, 20, vec![-1.0]);
        let w = DisturbanceSignal::zero(2, 0.0, 0.01);
        let a = integrate_nominal(&m, &[3.0, 0.0], &u, 2.0, 1e-2).unwrap();
        let b = integrate_disturbed(&m, &[3.0, 0.0], &u, &w, 2.0, 1e-2).unwrap();
        let bits = |t: &StateTrajectory| -> Vec<u64> { t.states.iter().flatten().map(|v| v.to_bits()).collect() };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn constant_disturbance_drift() {
        let m = stub(|_x, _u, dx| dx.iter_mut().for_each(|v| *v = 0.0), 2);
        let u = ControlTrajectory::constant(0.0, 0.5, 4, vec![0.0]);
        let w = DisturbanceSignal {
            t_start: 0.0,
            hold: 0.5,
            samples: vec![vec![0.3, -0.2]; 4],
            seed: 0,
        };
        let tr = integrate_disturbed(&m, &[1.0, 1.0], &u, &w, 2.0, 0.01).unwrap();
        let xf = tr.final_state();
        assert!((xf[0] - 1.6).abs() < 1e-9 && (xf[1] - 0.6).abs() < 1e-9, "{xf:?}");
    }

    #[test]
    fn weighted_norm_examples() {
        let id = WeightedNorm::identity(2);
        assert_eq!(weighted_norm(&id, &[3.0, 4.0]).unwrap(), 5.0);
        let pf = WeightedNorm::new(DMatrix::from_row_slice(2, 2, &[0.0814, 0.0314, 0.0314, 0.0814])).unwrap();
        assert!((weighted_norm(&pf, &[1.0, 0.0]).unwrap() - 0.0814f64.sqrt()).abs() < 1e-12);
        assert!((weighted_norm(&pf, &[1.0, 0.0]).unwrap() - 0.28531).abs() < 1e-5);
        assert_eq!(weighted_norm(&pf, &[0.0, 0.0]).unwrap(), 0.0);
        assert!(weighted_norm(&pf, &[1.0]).is_err());
        assert!(WeightedNorm::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
        assert!(WeightedNorm::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).is_err());
    }

    #[test]
    fn linearization_paths() {
        let m = SystemModel::chen_allgower(0.8).unwrap();
        let (a, b) = m.linearize_at_origin();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert_eq!(b, DMatrix::from_column_slice(2, 1, &[0.8, 0.8]));
        let fd = m.without_jacobians().unwrap();
        assert!(!fd.has_analytic_jacobians());
        let (af, bf) = fd.linearize_at_origin();
        assert!((af - a).abs().max() < 1e-6);
        assert!((bf - b).abs().max() < 1e-6);

        let al = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]);
        let bl = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let lin = SystemModel::linear(al.clone(), bl.clone(), InputBox::unbounded(1)).unwrap();
        assert_eq!(lin.linearize_at_origin(), (al, bl));
    }

    #[test]
    fn lipschitz_linear_stub() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 0.0]);
        let m = SystemModel::linear(a, b, InputBox::symmetric(1, 1.0)).unwrap();
        let est = estimate_lipschitz(&m, &WeightedNorm::identity(2), 1.0, 5000, 7).unwrap();
        assert!((2.0..=2.1).contains(&est), "{est}");
    }

    #[test]
    fn lipschitz_constant_field_is_zero() {
        let m = stub(|_x, _u, dx| dx.iter_mut().for_each(|v| *v = 0.0), 2);
        assert_eq!(estimate_lipschitz(&m, &WeightedNorm::identity(2), 1.0, 1000, 1).unwrap(), 0.0);
        assert!(estimate_lipschitz(&m, &WeightedNorm::identity(2), 1.0, 999, 1).is_err());
    }

    #[test]
    fn lipschitz_monotone_in_samples() {
        let m = SystemModel::chen_allgower(0.8).unwrap();
        let p = WeightedNorm::identity(2);
        let mut prev = 0.0;
        for n in [1000, 2000, 4000, 8000] {
            let est = estimate_lipschitz(&m, &p, 1.0, n, 99).unwrap();
            assert!(est >= prev);
            prev = est;
        }
    }

    /// On the benchmark the linear part alone has `‖A_f‖_{P_f} = 1`, so any
    /// sampled estimate containing the origin is at least the safety factor.
    #[test]
    fn lipschitz_benchmark_bounded_below_by_linear_part() {
        let m = SystemModel::chen_allgower(0.8).unwrap();
        let pf = WeightedNorm::new(DMatrix::from_row_slice(2, 2, &[0.0814, 0.0314, 0.0314, 0.0814])).unwrap();
        let est = estimate_lipschitz(&m, &pf, 1.0, 20_000, 5).unwrap();
        assert!(est >= 1.0 && est < 3.0, "{est}");
    }

    #[test]
    fn control_lookup() {
        let u = ControlTrajectory::new(1.0, 0.5, vec![vec![0.1], vec![0.2]], &InputBox::symmetric(1, 1.0)).unwrap();
        assert_eq!(u.value_at(0.0), &[0.1]);
        assert_eq!(u.value_at(1.5), &[0.2]);
        assert_eq!(u.value_at(9.0), &[0.2]);
        assert_eq!(u.next_switch_after(1.2), 1.5);
        assert!(ControlTrajectory::new(0.0, 0.5, vec![vec![3.0]], &InputBox::symmetric(1, 1.0)).is_err());
        assert!(ControlTrajectory::new(0.0, 0.0, vec![vec![0.0]], &InputBox::symmetric(1, 1.0)).is_err());
    }
}

//! Terminal ingredients: local gain, Lyapunov weight `P_f`, the invariant
//! ellipsoid `Φ = {V_f ≤ ε²}`, the inner target `Φ_f = {V_f ≤ ε_f²}` and the
//! disturbance budgets that certify invariance and recursive feasibility.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::model::{InputBox, SystemModel, WeightedNorm};

const EPSILON_START: f64 = 10.0;
const EPSILON_SHRINK: f64 = 0.8;
const EPSILON_FLOOR: f64 = 1e-6;

/// Which ellipsoid a membership query refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Set {
    /// `Φ`, radius `ε`.
    Outer,
    /// `Φ_f`, radius `ε_f`.
    Inner,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalRegion {
    p_f: WeightedNorm,
    k: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    epsilon: f64,
    epsilon_f: f64,
    l_f: f64,
    lambda_min_qp: f64,
    w_hat_max: f64,
    alpha: f64,
    t_star_0: Option<f64>,
    w_tilde_max: Option<f64>,
}

/// Sampled verification record of the local decrease certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionReport {
    pub n_samples: usize,
    /// Max over samples in `Φ` of `V̇_f + ½xᵀ(Q+KᵀRK)x`; non-positive when the
    /// decrease inequality holds.
    pub max_decrease_violation: f64,
    /// Max of `2‖φ(x)‖_P / (λ_min(Q̂_P)‖x‖_P)`.
    pub max_phi_ratio: f64,
    /// Fraction of boundary samples with `Kx ∈ U`.
    pub kappa_in_u_fraction: f64,
    /// `‖P_f A_c + A_cᵀP_f + (Q+KᵀRK)‖₂`.
    pub lyapunov_residual: f64,
}

impl RegionReport {
    pub const DECREASE_TOL: f64 = 1e-9;

    pub fn passes(&self) -> bool {
        self.max_decrease_violation <= Self::DECREASE_TOL && self.kappa_in_u_fraction == 1.0
    }
}

/// `Q + KᵀRK`.
pub fn closed_loop_weight(k: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::symmetrize(&(q + k.transpose() * r * k))
}

/// `Q̂_P = P^{-1/2}(Q+KᵀRK)P^{-1/2}`.
pub fn qhat_p(p_f: &DMatrix<f64>, weight: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = linalg::inv_sqrt_spd(p_f)?;
    Ok(linalg::symmetrize(&(&s * weight * &s)))
}

pub fn lambda_min_qp(p_f: &DMatrix<f64>, weight: &DMatrix<f64>) -> Result<f64> {
    Ok(linalg::min_eigenvalue_sym(&qhat_p(p_f, weight)?))
}

/// Feasibility disturbance budget
/// `λ_min(Q̂_P)(1−α)ε_f / (4 e^{L_f T*₀})`.
pub fn w_tilde_formula(lambda_min_qp: f64, alpha: f64, epsilon_f: f64, l_f: f64, t_star_0: f64) -> f64 {
    lambda_min_qp * (1.0 - alpha) * epsilon_f / (4.0 * (l_f * t_star_0).exp())
}

/// Continuous-time LQR gain for the linearization, in the `u = Kx`
/// convention (the minus sign is folded into `K`).
pub fn design_local_gain(
    a_f: &DMatrix<f64>,
    b_f: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a_f.nrows();
    let m = b_f.ncols();
    if q.shape() != (n, n) || r.shape() != (m, m) || b_f.nrows() != n {
        return Err(Error::Contract("gain design: inconsistent matrix shapes".into()));
    }
    if !linalg::is_positive_definite(q) || !linalg::is_positive_definite(r) {
        return Err(Error::InvalidConfig("Q and R must be symmetric positive definite".into()));
    }
    if !linalg::is_stabilizable(a_f, b_f) {
        return Err(Error::NotStabilizable);
    }
    let p = linalg::solve_care(a_f, b_f, q, r)?;
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("R is singular".into()))?;
    let k = -(r_inv * b_f.transpose() * p);
    let abscissa = linalg::spectral_abscissa(&(a_f + b_f * &k));
    if abscissa >= 0.0 {
        return Err(Error::NotStabilized { abscissa });
    }
    Ok(k)
}

/// `P_f` solving `P_f A_c + A_cᵀP_f = −(Q+KᵀRK)` for `A_c = A_f + B_f K`.
pub fn lyapunov_weight_for_gain(
    model: &SystemModel,
    k: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (a_f, b_f) = model.linearize_at_origin();
    linalg::solve_lyapunov(&(a_f + b_f * k), &closed_loop_weight(k, q, r))
}

fn mat_vec(k: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for i in 0..k.nrows() {
        out[i] = (0..k.ncols()).map(|j| k[(i, j)] * x[j]).sum();
    }
}

/// Ratio `‖φ(x)‖_P / ‖x‖_P` with `φ(x) = f(x, Kx) − A_c x`.
fn phi_ratio(model: &SystemModel, k: &DMatrix<f64>, a_c: &DMatrix<f64>, p: &WeightedNorm, x: &[f64]) -> f64 {
    let n = x.len();
    let mut u = vec![0.0; k.nrows()];
    mat_vec(k, x, &mut u);
    let mut fx = vec![0.0; n];
    model.rhs_into(x, &u, &mut fx);
    let mut lin = vec![0.0; n];
    mat_vec(a_c, x, &mut lin);
    let phi: Vec<f64> = fx.iter().zip(&lin).map(|(a, b)| a - b).collect();
    p.eval(&phi) / p.eval(x)
}

fn sphere_directions(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let d: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            if d.iter().any(|&v| v != 0.0) {
                break d;
            }
        })
        .collect()
}

/// Largest radius on the geometric ladder `10·0.8^j` whose sampled boundary
/// `{V_f = ε²}` satisfies `‖φ(x)‖_P/‖x‖_P ≤ λ_min(Q̂_P)/4` and `Kx ∈ U`.
#[allow(clippy::too_many_arguments)]
pub fn find_epsilon(
    model: &SystemModel,
    k: &DMatrix<f64>,
    p_f: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    input_box: &InputBox,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    let n = model.state_dim();
    if k.shape() != (model.input_dim(), n) {
        return Err(Error::Contract("gain shape does not match the model".into()));
    }
    let norm = WeightedNorm::new(p_f.clone())?;
    let lambda = lambda_min_qp(p_f, &closed_loop_weight(k, q, r))?;
    let (a_f, b_f) = model.linearize_at_origin();
    let a_c = a_f + b_f * k;
    let unit: Vec<Vec<f64>> = sphere_directions(n, n_samples.max(1), seed)
        .iter()
        .map(|d| norm.unit_sphere_point(d))
        .collect();
    let mut u = vec![0.0; model.input_dim()];
    let mut eps = EPSILON_START;
    while eps >= EPSILON_FLOOR {
        let ok = unit.iter().all(|s| {
            let x: Vec<f64> = s.iter().map(|v| v * eps).collect();
            mat_vec(k, &x, &mut u);
            input_box.contains(&u) && phi_ratio(model, k, &a_c, &norm, &x) <= lambda / 4.0
        });
        if ok {
            return Ok(eps);
        }
        eps *= EPSILON_SHRINK;
    }
    Err(Error::RegionSynthesis(format!(
        "no admissible radius above {EPSILON_FLOOR:e}"
    )))
}

#[allow(clippy::too_many_arguments)]
pub fn assemble_region(
    p_f: DMatrix<f64>,
    k: DMatrix<f64>,
    epsilon: f64,
    epsilon_f: f64,
    l_f: f64,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    alpha: f64,
) -> Result<TerminalRegion> {
    let n = p_f.nrows();
    check_dim("gain columns", n, k.ncols())?;
    check_dim("stage weight Q", n, q.nrows())?;
    check_dim("stage weight R", k.nrows(), r.nrows())?;
    if !(epsilon_f > 0.0 && epsilon_f < epsilon) || !epsilon.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "need 0 < epsilon_f < epsilon, got epsilon_f = {epsilon_f}, epsilon = {epsilon}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(l_f >= 0.0) || !l_f.is_finite() {
        return Err(Error::InvalidConfig(format!("Lipschitz constant must be >= 0, got {l_f}")));
    }
    let norm = WeightedNorm::new(p_f)?;
    let lambda = lambda_min_qp(norm.matrix(), &closed_loop_weight(&k, &q, &r))?;
    Ok(TerminalRegion {
        p_f: norm,
        k,
        q,
        r,
        epsilon,
        epsilon_f,
        l_f,
        lambda_min_qp: lambda,
        w_hat_max: epsilon * lambda / 4.0,
        alpha,
        t_star_0: None,
        w_tilde_max: None,
    })
}

/// Options for the full synthesis path (gain, weight, radius, Lipschitz).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOptions {
    pub epsilon_f: f64,
    pub alpha: f64,
    pub epsilon_samples: usize,
    pub lipschitz_radius: f64,
    pub lipschitz_samples: usize,
    pub seed: u64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            epsilon_f: 0.08,
            alpha: 0.8,
            epsilon_samples: 10_000,
            lipschitz_radius: 1.0,
            lipschitz_samples: 20_000,
            seed: 0,
        }
    }
}

/// LQR gain, Lyapunov weight, sampled radius and sampled Lipschitz constant.
pub fn synthesize(
    model: &SystemModel,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    opts: &SynthesisOptions,
) -> Result<TerminalRegion> {
    let (a_f, b_f) = model.linearize_at_origin();
    let k = design_local_gain(&a_f, &b_f, q, r)?;
    let p_f = lyapunov_weight_for_gain(model, &k, q, r)?;
    let epsilon = find_epsilon(model, &k, &p_f, q, r, model.input_box(), opts.epsilon_samples, opts.seed)?;
    if epsilon <= opts.epsilon_f {
        return Err(Error::RegionSynthesis(format!(
            "largest admissible radius {epsilon} does not exceed epsilon_f = {}",
            opts.epsilon_f
        )));
    }
    let norm = WeightedNorm::new(p_f.clone())?;
    let l_f = crate::model::estimate_lipschitz(
        model,
        &norm,
        opts.lipschitz_radius,
        opts.lipschitz_samples,
        opts.seed,
    )?;
    assemble_region(p_f, k, epsilon, opts.epsilon_f, l_f, q.clone(), r.clone(), opts.alpha)
}

impl TerminalRegion {
    pub fn p_f(&self) -> &WeightedNorm {
        &self.p_f
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn epsilon_f(&self) -> f64 {
        self.epsilon_f
    }

    pub fn l_f(&self) -> f64 {
        self.l_f
    }

    pub fn lambda_min_qp(&self) -> f64 {
        self.lambda_min_qp
    }

    pub fn w_hat_max(&self) -> f64 {
        self.w_hat_max
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn t_star_0(&self) -> Option<f64> {
        self.t_star_0
    }

    pub fn w_tilde_max(&self) -> Option<f64> {
        self.w_tilde_max
    }

    pub fn state_dim(&self) -> usize {
        self.p_f.dim()
    }

    /// `V_f(x) = xᵀP_f x`.
    #[inline]
    pub fn v_f(&self, x: &[f64]) -> f64 {
        self.p_f.quad(x)
    }

    /// Closed-set membership: `V_f(x) ≤ ε²` or `V_f(x) ≤ ε_f²`.
    pub fn contains(&self, x: &[f64], which: Set) -> bool {
        let radius = match which {
            Set::Outer => self.epsilon,
            Set::Inner => self.epsilon_f,
        };
        self.v_f(x) <= radius * radius
    }

    /// Local control `Kx`, not projected.
    pub fn local_control(&self, x: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.k.nrows()];
        mat_vec(&self.k, x, &mut u);
        u
    }

    pub fn local_control_into(&self, x: &[f64], u: &mut [f64]) {
        mat_vec(&self.k, x, u);
    }

    /// Fixes `T*₀` and the feasibility budget `w̃_max`. Only one call is
    /// allowed per region.
    pub fn with_t_star_0(mut self, t_star_0: f64) -> Result<Self> {
        if self.t_star_0.is_some() {
            return Err(Error::State("T*_0 has already been set for this region".into()));
        }
        if !(t_star_0 > 0.0) || !t_star_0.is_finite() {
            return Err(Error::Contract(format!("T*_0 must be positive, got {t_star_0}")));
        }
        self.w_tilde_max = Some(w_tilde_formula(
            self.lambda_min_qp,
            self.alpha,
            self.epsilon_f,
            self.l_f,
            t_star_0,
        ));
        self.t_star_0 = Some(t_star_0);
        Ok(self)
    }

    /// Copy with a different outer radius, everything else unchanged except
    /// `ŵ_max`. Used for negative tests of the certificate.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        let mut out = assemble_region(
            self.p_f.matrix().clone(),
            self.k.clone(),
            epsilon,
            self.epsilon_f,
            self.l_f,
            self.q.clone(),
            self.r.clone(),
            self.alpha,
        )?;
        if let Some(t) = self.t_star_0 {
            out = out.with_t_star_0(t)?;
        }
        Ok(out)
    }

    pub fn lyapunov_residual(&self, model: &SystemModel) -> f64 {
        let (a_f, b_f) = model.linearize_at_origin();
        let a_c = a_f + b_f * &self.k;
        let m = closed_loop_weight(&self.k, &self.q, &self.r);
        linalg::spectral_norm(&linalg::lyapunov_residual(&a_c, &m, self.p_f.matrix()))
    }

    /// Uniform rejection samples from the ellipsoid `{V_f ≤ ε²}`.
    pub fn sample_interior(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let n = self.state_dim();
        let p_inv = self
            .p_f
            .matrix()
            .clone()
            .try_inverse()
            .expect("P_f is positive definite");
        let half: Vec<f64> = (0..n).map(|i| self.epsilon * p_inv[(i, i)].sqrt()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let x: Vec<f64> = half.iter().map(|h| h * (2.0 * rng.random::<f64>() - 1.0)).collect();
            if self.contains(&x, Set::Outer) {
                out.push(x);
            }
        }
        out
    }

    /// Uniform-direction samples on `{V_f = ε²}`.
    pub fn sample_boundary(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        sphere_directions(self.state_dim(), count, seed)
            .iter()
            .map(|d| self.p_f.unit_sphere_point(d).into_iter().map(|v| v * self.epsilon).collect())
            .collect()
    }
}

/// Sampled check of `∂V_f/∂x f(x, Kx) ≤ −½xᵀ(Q+KᵀRK)x` on `Φ` and of
/// `Kx ∈ U` on its boundary.
pub fn validate_region(region: &TerminalRegion, model: &SystemModel, n_samples: usize, seed: u64) -> RegionReport {
    let n = model.state_dim();
    let (a_f, b_f) = model.linearize_at_origin();
    let a_c = a_f + b_f * region.k();
    let m = closed_loop_weight(region.k(), region.q(), region.r());
    let p = region.p_f().matrix();
    let mut u = vec![0.0; model.input_dim()];
    let mut fx = vec![0.0; n];
    let mut max_violation = f64::NEG_INFINITY;
    let mut max_phi = 0.0f64;
    for x in region.sample_interior(n_samples, seed) {
        region.local_control_into(&x, &mut u);
        model.rhs_into(&x, &u, &mut fx);
        let mut vdot = 0.0;
        let mut half_decay = 0.0;
        for i in 0..n {
            for j in 0..n {
                vdot += 2.0 * x[i] * p[(i, j)] * fx[j];
                half_decay += 0.5 * x[i] * m[(i, j)] * x[j];
            }
        }
        max_violation = max_violation.max(vdot + half_decay);
        if x.iter().any(|&v| v != 0.0) {
            let ratio = phi_ratio(model, region.k(), &a_c, region.p_f(), &x);
            max_phi = max_phi.max(2.0 * ratio / region.lambda_min_qp());
        }
    }
    let boundary = region.sample_boundary(n_samples, seed.wrapping_add(1));
    let inside = boundary
        .iter()
        .filter(|x| {
            region.local_control_into(x, &mut u);
            model.input_box().contains(&u)
        })
        .count();
    RegionReport {
        n_samples,
        max_decrease_violation: max_violation,
        max_phi_ratio: max_phi,
        kappa_in_u_fraction: inside as f64 / boundary.len().max(1) as f64,
        lyapunov_residual: region.lyapunov_residual(model),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m2(a: f64, b: f64, c: f64, d: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, b, c, d])
    }

    fn preset_k() -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 2, &[-1.8042, -1.8042])
    }

    fn preset_pf() -> DMatrix<f64> {
        m2(0.0814, 0.0314, 0.0314, 0.0814)
    }

    #[test]
    fn scalar_lqr_gain() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let k = design_local_gain(&DMatrix::zeros(1, 1), &one, &one, &one).unwrap();
        assert!((k[(0, 0)] + 1.0).abs() < 1e-10);
    }

    #[test]
    fn benchmark_lqr_gain_is_stabilizing() {
        let m = SystemModel::chen_allgower(0.8).unwrap();
        let (a, b) = m.linearize_at_origin();
        let k = design_local_gain(&a, &b, &(DMatrix::identity(2, 2) * 0.1), &DMatrix::from_element(1, 1, 0.05)).unwrap();
        assert!(linalg::is_hurwitz(&(a + b * k)));
    }

    #[test]
    fn hurwitz_plant_stays_hurwitz() {
        let a = m2(-1.0, 0.3, 0.0, -2.0);
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.5]);
        let k = design_local_gain(&a, &b, &(DMatrix::identity(2, 2) * 7.0), &DMatrix::from_element(1, 1, 0.01)).unwrap();
        assert!(linalg::is_hurwitz(&(a + b * k)));
    }

    #[test]
    fn unstabilizable_pair_rejected() {
        let a = m2(1.0, 0.0, 0.0, -1.0);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let err = design_local_gain(&a, &b, &DMatrix::identity(2, 2), &DMatrix::from_element(1, 1, 1.0)).unwrap_err();
        assert!(matches!(err, Error::NotStabilizable));
    }

    #[test]
    fn identity_weighting_lambda() {
        // Q + KᵀRK = diag(2, 3) with K = 0
        let region = assemble_region(
            DMatrix::identity(2, 2),
            DMatrix::zeros(1, 2),
            1.0,
            0.5,
            0.0,
            m2(2.0, 0.0, 0.0, 3.0),
            DMatrix::from_element(1, 1, 1.0),
            0.5,
        )
        .unwrap();
        assert!((region.lambda_min_qp() - 2.0).abs() < 1e-12);
        assert!((region.w_hat_max() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn benchmark_fixture_lambda() {
        let q = DMatrix::identity(2, 2) * 0.1;
        let r = DMatrix::from_element(1, 1, 0.05);
        let w = closed_loop_weight(&preset_k(), &q, &r);
        assert!((w[(0, 0)] - 0.26276).abs() < 1e-5 && (w[(0, 1)] - 0.16276).abs() < 1e-5);
        let lambda = lambda_min_qp(&preset_pf(), &w).unwrap();
        assert!((lambda - 2.0).abs() < 1e-10, "{lambda}");
    }

    #[test]
    fn epsilon_ordering_enforced() {
        let r = assemble_region(
            preset_pf(),
            preset_k(),
            0.08,
            0.08,
            0.53,
            DMatrix::identity(2, 2) * 0.1,
            DMatrix::from_element(1, 1, 0.05),
            0.8,
        );
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }

    fn fixture_region() -> TerminalRegion {
        assemble_region(
            preset_pf(),
            preset_k(),
            0.1,
            0.08,
            0.53,
            DMatrix::identity(2, 2) * 0.1,
            DMatrix::from_element(1, 1, 0.05),
            0.8,
        )
        .unwrap()
    }

    #[test]
    fn t_star_0_set_once() {
        let region = fixture_region().with_t_star_0(4.0).unwrap();
        let expected = 2.0 * 0.2 * 0.08 / (4.0 * 2.12f64.exp());
        assert!((region.w_tilde_max().unwrap() - expected).abs() < 1e-12 * expected.max(1.0));
        assert!((region.w_tilde_max().unwrap() - 9.6e-4).abs() < 0.05e-4);
        assert!(matches!(region.with_t_star_0(3.0), Err(Error::State(_))));
    }

    #[test]
    fn w_tilde_limits() {
        assert!((w_tilde_formula(2.0, 0.8, 0.08, 0.0, 3.0) - 2.0 * 0.2 * 0.08 / 4.0).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let a = i as f64 / 100.0;
            let v = w_tilde_formula(2.0, a, 0.08, 0.53, 3.0);
            assert!(v < prev);
            prev = v;
        }
        assert!(w_tilde_formula(2.0, 1.0 - 1e-12, 0.08, 0.53, 3.0) < 1e-12);
    }

    #[test]
    fn membership_conventions() {
        let region = fixture_region();
        assert!(region.contains(&[0.0, 0.0], Set::Inner));
        assert!(region.contains(&[0.0, 0.0], Set::Outer));
        assert!(!region.contains(&[0.2, 0.2], Set::Inner));
        assert!((region.v_f(&[0.2, 0.2]) - 0.009024).abs() < 1e-12);
        // exact boundary: x = c·(1,-1) with V_f = 2c²·0.05 = ε_f²
        let c = (0.0064f64 / 0.1).sqrt();
        let x = [c, -c];
        let v = region.v_f(&x);
        let on_boundary = assemble_region(
            preset_pf(),
            preset_k(),
            0.1,
            v.sqrt(),
            0.53,
            DMatrix::identity(2, 2) * 0.1,
            DMatrix::from_element(1, 1, 0.05),
            0.8,
        )
        .unwrap();
        assert!(on_boundary.contains(&x, Set::Inner));
    }

    #[test]
    fn epsilon_linear_stub_limited_by_input() {
        let a = m2(-1.0, 0.0, 0.0, -1.0);
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let model = SystemModel::linear(a, b, InputBox::symmetric(1, 2.0)).unwrap();
        let k = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let eps = find_epsilon(
            &model,
            &k,
            &DMatrix::identity(2, 2),
            &DMatrix::identity(2, 2),
            &DMatrix::from_element(1, 1, 1.0),
            &InputBox::symmetric(1, 2.0),
            10_000,
            3,
        )
        .unwrap();
        assert!(eps <= 2.0 && eps >= 2.0 * EPSILON_SHRINK, "{eps}");
        let wide = find_epsilon(
            &model,
            &k,
            &DMatrix::identity(2, 2),
            &DMatrix::identity(2, 2),
            &DMatrix::from_element(1, 1, 1.0),
            &InputBox::symmetric(1, 1e6),
            1000,
            3,
        )
        .unwrap();
        assert_eq!(wide, EPSILON_START);
    }

    #[test]
    fn qhat_scales_inversely() {
        let w = closed_loop_weight(&preset_k(), &(DMatrix::identity(2, 2) * 0.1), &DMatrix::from_element(1, 1, 0.05));
        let base = qhat_p(&preset_pf(), &w).unwrap();
        for c in [0.1, 2.0, 17.0] {
            let scaled = qhat_p(&(preset_pf() * c), &w).unwrap();
            assert!((scaled - &base / c).abs().max() < 1e-10);
        }
    }
}

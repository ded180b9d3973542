//! Triggering mathematics: the Gronwall deviation envelope, the continuous
//! feasibility predicate, the minimum inter-event time `Δ^min_k`, the
//! sampling-time decision (SDS) and the one-step-ahead event check (ETS).
//!
//! Every exponential has a series fallback so `L_f → 0` is well defined.

use crate::error::{Error, Result};
use crate::terminal::TerminalRegion;

const SMALL_EXPONENT: f64 = 1e-8;

/// `(e^{L·t} − 1)/L`, equal to `t` in the limit `L → 0`.
fn growth(l: f64, t: f64) -> f64 {
    if l * t < SMALL_EXPONENT && l * t > -SMALL_EXPONENT {
        t
    } else {
        (l * t).exp_m1() / l
    }
}

/// `(1 − e^{−L·t})/L`, equal to `t` in the limit `L → 0`.
fn decay(l: f64, t: f64) -> f64 {
    if l * t < SMALL_EXPONENT {
        t
    } else {
        -(-l * t).exp_m1() / l
    }
}

/// Envelope `(w̃/L)(e^{L·dt} − 1)` on `‖x(t) − x̂*(t)‖_{P_f}`.
pub fn deviation_bound(w_tilde_max: f64, l_f: f64, dt: f64) -> f64 {
    w_tilde_max * growth(l_f, dt.max(0.0))
}

/// Continuous feasibility: deviation within `(ε−ε_f)e^{−L_f T*_k}` and
/// elapsed time within `T*_k`. Used as a validation oracle.
pub fn continuous_feasibility(
    x_t: &[f64],
    x_hat_t: &[f64],
    elapsed: f64,
    t_star: f64,
    region: &TerminalRegion,
) -> bool {
    let deviation = region.p_f().distance(x_t, x_hat_t);
    deviation <= feasibility_margin(region, t_star) && elapsed <= t_star
}

/// `(ε−ε_f)e^{−L_f T*_k}`.
pub fn feasibility_margin(region: &TerminalRegion, t_star: f64) -> f64 {
    (region.epsilon() - region.epsilon_f()) * (-region.l_f() * t_star).exp()
}

/// Closed form of `Δ^min_k` from raw scalars. Zero when `ε = ε_f`.
#[allow(clippy::too_many_arguments)]
pub fn delta_min_formula(
    epsilon: f64,
    epsilon_f: f64,
    l_f: f64,
    lambda_min_qp: f64,
    alpha: f64,
    t_star_0: f64,
    t_star: f64,
) -> f64 {
    let scale = 4.0 * (epsilon - epsilon_f) / (lambda_min_qp * (1.0 - alpha) * epsilon_f);
    let z_over_l = scale * (l_f * (t_star_0 - t_star)).exp();
    if l_f * z_over_l < SMALL_EXPONENT {
        z_over_l
    } else {
        (l_f * z_over_l).ln_1p() / l_f
    }
}

/// `Δ^min_k = (1/L_f) ln(1 + 4L_f(ε−ε_f)e^{L_f(T*₀−T*_k)} / (λ_min(Q̂_P)(1−α)ε_f))`.
pub fn delta_min(region: &TerminalRegion, t_star: f64) -> Result<f64> {
    let t0 = region
        .t_star_0()
        .ok_or_else(|| Error::State("T*_0 must be set before computing the inter-event time".into()))?;
    if region.epsilon() <= region.epsilon_f() {
        return Err(Error::InvalidConfig("epsilon must exceed epsilon_f".into()));
    }
    if !(t_star >= 0.0) {
        return Err(Error::Contract(format!("T*_k must be non-negative, got {t_star}")));
    }
    Ok(delta_min_formula(
        region.epsilon(),
        region.epsilon_f(),
        region.l_f(),
        region.lambda_min_qp(),
        region.alpha(),
        t0,
        t_star,
    ))
}

#[derive(Debug, Clone)]
pub struct TriggerParams<'a> {
    region: &'a TerminalRegion,
    gamma: f64,
    w_tilde_max: f64,
}

impl<'a> TriggerParams<'a> {
    pub fn new(region: &'a TerminalRegion, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        let w_tilde_max = region
            .w_tilde_max()
            .ok_or_else(|| Error::State("T*_0 must be set before triggering".into()))?;
        Ok(Self {
            region,
            gamma,
            w_tilde_max,
        })
    }

    pub fn region(&self) -> &TerminalRegion {
        self.region
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SdsBranch {
    /// Strategy (a): evaluate the ETS every `delta_star`.
    SampleAt { delta_star: f64 },
    /// Strategy (b): next update exactly at `t_next = t_k + T*_k`.
    DirectUpdate { t_next: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdsDecision {
    pub branch: SdsBranch,
    pub delta_min: f64,
}

/// Branch (a) with `δ* = γΔ^min` when `T*_k ≥ Δ^min_k`, otherwise a direct
/// update at `t_k + T*_k`.
pub fn sds_decide(params: &TriggerParams<'_>, t_k: f64, t_star: f64) -> Result<SdsDecision> {
    if !(t_star > 0.0) {
        return Err(Error::Contract(format!(
            "T*_k must be positive outside the terminal region, got {t_star}"
        )));
    }
    let dmin = delta_min(params.region, t_star)?;
    let branch = if t_star >= dmin {
        SdsBranch::SampleAt {
            delta_star: params.gamma * dmin,
        }
    } else {
        SdsBranch::DirectUpdate { t_next: t_k + t_star }
    };
    Ok(SdsDecision {
        branch,
        delta_min: dmin,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtsVerdict {
    pub deviation: f64,
    pub threshold: f64,
    pub horizon_ok: bool,
    pub continue_: bool,
    /// The threshold itself is negative, so no state can pass.
    pub negative_threshold: bool,
}

/// `(ε−ε_f)e^{−L_f(T*_k+δ*)} − (w̃_max/L_f)(1 − e^{−L_f δ*})`.
pub fn ets_threshold(params: &TriggerParams<'_>, delta_star: f64, t_star: f64) -> f64 {
    let r = params.region;
    let l = r.l_f();
    (r.epsilon() - r.epsilon_f()) * (-l * (t_star + delta_star)).exp() - params.w_tilde_max * decay(l, delta_star)
}

/// One-step-ahead check at `t_k + m·δ*`: continue iff the deviation is
/// strictly below the threshold and `(m+1)δ* ≤ T*_k`.
pub fn ets_check(
    params: &TriggerParams<'_>,
    x_t: &[f64],
    x_hat_t: &[f64],
    m: usize,
    delta_star: f64,
    t_star: f64,
) -> Result<EtsVerdict> {
    if m < 1 {
        return Err(Error::Contract("ETS evaluation index starts at 1".into()));
    }
    if !(delta_star > 0.0) {
        return Err(Error::Contract(format!("sampling interval must be positive, got {delta_star}")));
    }
    let deviation = params.region.p_f().distance(x_t, x_hat_t);
    let threshold = ets_threshold(params, delta_star, t_star);
    let horizon_ok = (m + 1) as f64 * delta_star <= t_star;
    Ok(EtsVerdict {
        deviation,
        threshold,
        horizon_ok,
        continue_: deviation < threshold && horizon_ok,
        negative_threshold: threshold < 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terminal::assemble_region;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn region(epsilon: f64, epsilon_f: f64, l_f: f64, t0: f64) -> TerminalRegion {
        // P = I and Q + KᵀRK = 2I give λ_min(Q̂_P) = 2
        assemble_region(
            DMatrix::identity(2, 2),
            DMatrix::zeros(1, 2),
            epsilon,
            epsilon_f,
            l_f,
            DMatrix::identity(2, 2) * 2.0,
            DMatrix::from_element(1, 1, 1.0),
            0.8,
        )
        .unwrap()
        .with_t_star_0(t0)
        .unwrap()
    }

    /// Root of `(w̃/L)(e^{Lt} − 1) = (ε−ε_f)e^{−L T*}` by plain bisection.
    fn bisection_delta_min(r: &TerminalRegion, t_star: f64) -> f64 {
        let w = r.w_tilde_max().unwrap();
        let l = r.l_f();
        let rhs = (r.epsilon() - r.epsilon_f()) * (-l * t_star).exp();
        let g = |t: f64| w / l * ((l * t).exp() - 1.0) - rhs;
        let (mut lo, mut hi) = (0.0, 1.0);
        while g(hi) < 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn deviation_bound_examples() {
        assert_eq!(deviation_bound(1.0, 1.0, 0.0), 0.0);
        assert!((deviation_bound(1.0, 1.0, 1.0) - (std::f64::consts::E - 1.0)).abs() < 1e-14);
        assert!((deviation_bound(1.0, 1e-12, 1.0) - 1.0).abs() < 1e-9);
        assert!((deviation_bound(2.0, 0.0, 0.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn feasibility_boundary_conventions() {
        let r = region(0.18, 0.08, 0.5, 3.0);
        assert!(continuous_feasibility(&[0.1, 0.0], &[0.1, 0.0], 0.0, 1.0, &r));
        assert!(!continuous_feasibility(&[0.1, 0.0], &[0.1, 0.0], 1.0 + 1e-9, 1.0, &r));
        let margin = feasibility_margin(&r, 1.0);
        assert!(continuous_feasibility(&[margin, 0.0], &[0.0, 0.0], 0.5, 1.0, &r));
        assert!(!continuous_feasibility(&[margin * (1.0 + 1e-12), 0.0], &[0.0, 0.0], 0.5, 1.0, &r));
    }

    #[test]
    fn delta_min_examples() {
        let r = region(0.18, 0.08, 0.5, 2.0);
        let d = delta_min(&r, 2.0).unwrap();
        assert!((d - 2.0 * 7.25f64.ln()).abs() < 1e-12, "{d}");
        assert!((d - 3.9620).abs() < 1e-4);
        assert_eq!(delta_min_formula(0.08, 0.08, 0.5, 2.0, 0.8, 2.0, 1.0), 0.0);
        let tiny = delta_min_formula(0.18, 0.08, 1e-15, 2.0, 0.8, 2.0, 1.0);
        assert!((tiny - 4.0 * 0.1 / (2.0 * 0.2 * 0.08)).abs() < 1e-9);
    }

    #[test]
    fn delta_min_needs_t_star_0() {
        let r = assemble_region(
            DMatrix::identity(2, 2),
            DMatrix::zeros(1, 2),
            0.18,
            0.08,
            0.5,
            DMatrix::identity(2, 2) * 2.0,
            DMatrix::from_element(1, 1, 1.0),
            0.8,
        )
        .unwrap();
        assert!(matches!(delta_min(&r, 1.0), Err(Error::State(_))));
        assert!(TriggerParams::new(&r, 0.5).is_err());
    }

    #[test]
    fn sds_branches() {
        let r = region(0.081, 0.08, 0.53, 3.0);
        let p = TriggerParams::new(&r, 1.0).unwrap();
        let find_dmin = |t: f64| delta_min(&r, t).unwrap();
        // T* far above Δ^min
        let d = sds_decide(&p, 0.0, 3.0).unwrap();
        assert_eq!(d.branch, SdsBranch::SampleAt { delta_star: find_dmin(3.0) });
        // T* below Δ^min: Δ^min(T*) is decreasing in T* so small T* qualifies
        let small = 1e-3;
        assert!(small < find_dmin(small));
        let d = sds_decide(&p, 1.5, small).unwrap();
        assert_eq!(d.branch, SdsBranch::DirectUpdate { t_next: 1.5 + small });
        assert!(sds_decide(&p, 0.0, 0.0).is_err());
    }

    #[test]
    fn sds_equality_takes_sampling_branch() {
        // fixed point T* = Δ^min(T*) by bisection on the monotone difference
        let r = region(0.081, 0.08, 0.53, 3.0);
        let p = TriggerParams::new(&r, 1.0).unwrap();
        let (mut lo, mut hi) = (1e-6, 3.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid >= delta_min(&r, mid).unwrap() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let d = sds_decide(&p, 0.0, hi).unwrap();
        assert!(matches!(d.branch, SdsBranch::SampleAt { .. }));
        let d = sds_decide(&p, 0.0, lo).unwrap();
        assert!(matches!(d.branch, SdsBranch::DirectUpdate { .. }));
    }

    #[test]
    fn ets_zero_deviation_and_horizon_boundary() {
        let r = region(0.18, 0.08, 0.5, 3.0);
        let p = TriggerParams::new(&r, 0.2).unwrap();
        let x = [0.3, -0.1];
        let v = ets_check(&p, &x, &x, 1, 0.1, 1.0).unwrap();
        assert!(v.threshold > 0.0);
        assert!(v.continue_ && v.horizon_ok);
        // (m+1)δ = T* exactly: 4·0.25 = 1
        let v = ets_check(&p, &x, &x, 3, 0.25, 1.0).unwrap();
        assert!(v.horizon_ok);
        let v = ets_check(&p, &x, &x, 4, 0.25, 1.0).unwrap();
        assert!(!v.horizon_ok && !v.continue_);
    }

    #[test]
    fn ets_full_gamma_threshold_vanishes() {
        let r = region(0.081, 0.08, 0.53, 3.0);
        let p = TriggerParams::new(&r, 1.0).unwrap();
        for t_star in [0.5, 1.0, 2.0, 3.0] {
            let dmin = delta_min(&r, t_star).unwrap();
            let th = ets_threshold(&p, dmin, t_star);
            assert!(th.abs() < 1e-15, "{th}");
        }
    }

    #[test]
    fn negative_threshold_stops() {
        let r = region(0.081, 0.08, 0.53, 3.0);
        let p = TriggerParams::new(&r, 1.0).unwrap();
        let v = ets_check(&p, &[0.0, 0.0], &[0.0, 0.0], 1, 2.0, 3.0).unwrap();
        assert!(v.negative_threshold && !v.continue_);
    }

    #[test]
    fn eventual_direct_update() {
        let r = region(0.081, 0.08, 0.53, 3.0);
        let p = TriggerParams::new(&r, 1.0).unwrap();
        let mut t = 3.0;
        let mut switched = false;
        while t > 1e-6 {
            if matches!(sds_decide(&p, 0.0, t).unwrap().branch, SdsBranch::DirectUpdate { .. }) {
                switched = true;
                break;
            }
            t *= 0.9;
        }
        assert!(switched);
    }

    #[test]
    fn delta_min_increases_as_t_star_drops() {
        let r = region(0.081, 0.08, 0.53, 3.6);
        let mut prev = 0.0;
        for i in 0..100 {
            let t = 3.6 * (1.0 - i as f64 / 100.0);
            let d = delta_min(&r, t).unwrap();
            assert!(d > prev);
            prev = d;
        }
    }

    proptest! {
        #[test]
        fn closed_form_matches_bisection(
            gap in 1e-4f64..0.5,
            ef in 0.01f64..0.5,
            l in 0.05f64..2.0,
            t0 in 0.5f64..5.0,
            frac in 0.0f64..1.0,
        ) {
            let r = region(ef + gap, ef, l, t0);
            let t_star = t0 * frac;
            let closed = delta_min(&r, t_star).unwrap();
            let oracle = bisection_delta_min(&r, t_star);
            prop_assert!((closed - oracle).abs() <= 1e-9, "{} vs {}", closed, oracle);
        }

        #[test]
        fn ets_threshold_below_feasibility_margin(
            gap in 1e-4f64..0.5,
            l in 0.0f64..2.0,
            t_star in 0.01f64..3.0,
            delta in 1e-4f64..1.0,
        ) {
            let r = region(0.08 + gap, 0.08, l, 3.0);
            let p = TriggerParams::new(&r, 1.0).unwrap();
            prop_assert!(ets_threshold(&p, delta, t_star) < feasibility_margin(&r, t_star));
        }

        #[test]
        fn larger_gamma_is_more_conservative(
            g1 in 0.05f64..1.0,
            g2 in 0.05f64..1.0,
            t_star in 0.5f64..3.0,
        ) {
            prop_assume!((g1 - g2).abs() > 1e-6);
            let (lo, hi) = if g1 < g2 { (g1, g2) } else { (g2, g1) };
            let r = region(0.081, 0.08, 0.53, 3.0);
            let p_lo = TriggerParams::new(&r, lo).unwrap();
            let p_hi = TriggerParams::new(&r, hi).unwrap();
            let dmin = delta_min(&r, t_star).unwrap();
            let (d_lo, d_hi) = (lo * dmin, hi * dmin);
            prop_assert!(d_hi > d_lo);
            prop_assert!(ets_threshold(&p_hi, d_hi, t_star) < ets_threshold(&p_lo, d_lo, t_star));
        }

        #[test]
        fn gronwall_envelope_monotone(w in 0.0f64..1.0, l in 0.0f64..3.0, a in 0.0f64..2.0, b in 0.0f64..2.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(deviation_bound(w, l, lo) <= deviation_bound(w, l, hi));
        }
    }
}

//! Piecewise-constant additive disturbance signals bounded in the `P_f` norm.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::WeightedNorm;

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSignal {
    pub t_start: f64,
    pub hold: f64,
    pub samples: Vec<Vec<f64>>,
    pub seed: u64,
}

impl DisturbanceSignal {
    pub fn zero(dim: usize, t_start: f64, hold: f64) -> Self {
        Self {
            t_start,
            hold,
            samples: vec![vec![0.0; dim]],
            seed: 0,
        }
    }

    /// Held value at `t`. Times before the start or past the last sample
    /// clamp to the first or last sample.
    pub fn value_at(&self, t: f64) -> &[f64] {
        &self.samples[self.index_at(t)]
    }

    pub fn index_at(&self, t: f64) -> usize {
        let idx = ((t - self.t_start) / self.hold + 1e-9).floor();
        if idx <= 0.0 {
            0
        } else {
            (idx as usize).min(self.samples.len() - 1)
        }
    }

    /// Start time of the hold interval following the one containing `t`.
    pub fn next_switch_after(&self, t: f64) -> f64 {
        let idx = self.index_at(t);
        if idx + 1 >= self.samples.len() {
            return f64::INFINITY;
        }
        self.t_start + (idx + 1) as f64 * self.hold
    }

    pub fn max_norm(&self, norm: &WeightedNorm) -> f64 {
        self.samples
            .iter()
            .map(|w| norm.eval(w))
            .fold(0.0, f64::max)
    }
}

/// Draws a seeded piecewise-constant disturbance on `[t_start, t_start + duration]`.
///
/// Each held sample has a direction uniform on the unit `P_f`-sphere and a
/// magnitude uniform in `[0, bound]`; the result is capped so that
/// `‖w‖_{P_f} ≤ bound` holds exactly in floating point.
pub fn make_disturbance(
    bound: f64,
    hold: f64,
    t_start: f64,
    duration: f64,
    seed: u64,
    p_f: &WeightedNorm,
) -> Result<DisturbanceSignal> {
    if !(bound >= 0.0) || !bound.is_finite() {
        return Err(Error::Contract(format!("disturbance bound must be >= 0, got {bound}")));
    }
    if !(hold > 0.0) {
        return Err(Error::Contract(format!("disturbance hold must be > 0, got {hold}")));
    }
    let n = p_f.dim();
    let count = ((duration / hold) - 1e-9).ceil().max(0.0) as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let dir: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let magnitude: f64 = rng.random::<f64>() * bound;
        let mut w = if bound == 0.0 {
            vec![0.0; n]
        } else {
            let unit = p_f.unit_sphere_point(&dir);
            unit.iter().map(|v| v * magnitude).collect()
        };
        cap_to_bound(&mut w, bound, p_f);
        samples.push(w);
    }
    Ok(DisturbanceSignal {
        t_start,
        hold,
        samples,
        seed,
    })
}

fn cap_to_bound(w: &mut [f64], bound: f64, p_f: &WeightedNorm) {
    let mut norm = p_f.eval(w);
    if norm <= bound {
        return;
    }
    if bound == 0.0 {
        w.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut scale = bound / norm;
    while norm > bound {
        w.iter_mut().for_each(|v| *v *= scale);
        norm = p_f.eval(w);
        scale = 1.0 - 1e-15;
    }
}

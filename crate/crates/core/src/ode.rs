//! Classical fixed-step fourth-order Runge–Kutta.

/// Scratch buffers reused across steps so the inner loop does not allocate.
#[derive(Debug, Clone)]
pub struct Rk4Work {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Work {
    pub fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

/// One RK4 step of the autonomous field `field(x, dx)`, written to `out`.
pub fn rk4_step<F>(mut field: F, x: &[f64], h: f64, out: &mut [f64], work: &mut Rk4Work)
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = x.len();
    field(x, &mut work.k1);
    for i in 0..n {
        work.tmp[i] = x[i] + 0.5 * h * work.k1[i];
    }
    field(&work.tmp, &mut work.k2);
    for i in 0..n {
        work.tmp[i] = x[i] + 0.5 * h * work.k2[i];
    }
    field(&work.tmp, &mut work.k3);
    for i in 0..n {
        work.tmp[i] = x[i] + h * work.k3[i];
    }
    field(&work.tmp, &mut work.k4);
    for i in 0..n {
        out[i] = x[i] + h / 6.0 * (work.k1[i] + 2.0 * work.k2[i] + 2.0 * work.k3[i] + work.k4[i]);
    }
}

//! Flat `key = value` run configuration with dotted section prefixes.
//!
//! ```text
//! # comment
//! model.name = chen_allgower
//! weights.q = [0.1 0; 0 0.1]
//! scenario.x0 = [2.7 0]
//! ```
//!
//! Keys are order-insensitive; unknown keys and duplicates are errors.
//! Matrices use `[row; row]` with whitespace or comma separated entries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{InputBox, SystemModel};
use crate::ocp::SolverOptions;
use crate::sim::{DisturbanceSpec, LocalMode, Mode, Scenario};
use crate::terminal::{self, SynthesisOptions, TerminalRegion};

pub const PRESET_SEC6: &str = "chen_allgower_sec6";

/// Parses `[a b; c d]`, `[a, b]` or a bare scalar into a matrix.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let bad = |msg: &str| Error::InvalidConfig(format!("matrix literal `{text}`: {msg}"));
    let t = text.trim();
    let inner = if let Some(rest) = t.strip_prefix('[') {
        rest.strip_suffix(']').ok_or_else(|| bad("missing closing bracket"))?
    } else {
        t
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for row in inner.split(';') {
        let vals: Vec<f64> = row
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| bad(&format!("`{s}` is not a number"))))
            .collect::<Result<_>>()?;
        rows.push(vals);
    }
    if rows.len() > 1 && rows.last().is_some_and(|r| r.is_empty()) {
        rows.pop();
    }
    let cols = rows.first().map_or(0, |r| r.len());
    if cols == 0 {
        return Err(bad("empty"));
    }
    if rows.iter().any(|r| r.len() != cols) {
        return Err(bad("ragged rows"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(bad("non-finite entry"));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten()))
}

/// Inverse of [`parse_matrix`], exact for every finite entry.
pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| {
            (0..m.ncols())
                .map(|j| format!("{:?}", m[(i, j)]))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    format!("[{}]", rows.join("; "))
}

fn parse_vector(text: &str) -> Result<Vec<f64>> {
    let m = parse_matrix(text)?;
    if m.nrows() != 1 && m.ncols() != 1 {
        return Err(Error::InvalidConfig(format!("`{text}` is not a vector")));
    }
    Ok(m.iter().cloned().collect())
}

fn format_vector(v: &[f64]) -> String {
    format_matrix(&DMatrix::from_row_slice(1, v.len(), v))
}

/// Splits text into `key → (line, value)` pairs.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: line_no,
            msg: "expected `key = value`".into(),
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("invalid key `{key}`"),
            });
        }
        if value.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("empty value for `{key}`"),
            });
        }
        if out.insert(key.to_string(), (line_no, value.to_string())).is_some() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("duplicate key `{key}`"),
            });
        }
    }
    Ok(out)
}

struct Reader {
    pairs: BTreeMap<String, (usize, String)>,
}

impl Reader {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.pairs.remove(key)
    }

    fn wrap<T>(line: usize, r: Result<T>) -> Result<T> {
        r.map_err(|e| match e {
            Error::InvalidConfig(msg) => Error::Parse { line, msg },
            other => other,
        })
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or(Error::Parse {
                line,
                msg: format!("`{key}` must be a finite number, got `{v}`"),
            }),
        }
    }

    fn f64_opt(&mut self, key: &str) -> Result<Option<f64>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) if v == "none" => {
                let _ = line;
                Ok(None)
            }
            Some((line, v)) => v.parse::<f64>().ok().filter(|x| x.is_finite()).map(Some).ok_or(Error::Parse {
                line,
                msg: format!("`{key}` must be a finite number, got `{v}`"),
            }),
        }
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => v.parse::<usize>().map_err(|_| Error::Parse {
                line,
                msg: format!("`{key}` must be a non-negative integer, got `{v}`"),
            }),
        }
    }

    fn string_or(&mut self, key: &str, default: &str) -> String {
        self.take(key).map_or_else(|| default.to_string(), |(_, v)| v)
    }

    fn matrix_opt(&mut self, key: &str) -> Result<Option<DMatrix<f64>>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => Self::wrap(line, parse_matrix(&v)).map(Some),
        }
    }

    fn vector_opt(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => Self::wrap(line, parse_vector(&v)).map(Some),
        }
    }

    fn finish(self) -> Result<()> {
        if let Some((key, (line, _))) = self.pairs.into_iter().next() {
            return Err(Error::Parse {
                line,
                msg: format!("unknown key `{key}`"),
            });
        }
        Ok(())
    }
}

/// Literal terminal ingredients overriding synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixtures {
    pub k: DMatrix<f64>,
    /// `None` derives `P_f` from `K` by the Lyapunov equation.
    pub p_f: Option<DMatrix<f64>>,
    pub epsilon: f64,
    pub l_f: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegionSource {
    Synthesize(SynthesisOptions),
    Fixtures(Fixtures),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model_name: String,
    pub model_params: BTreeMap<String, f64>,
    /// Symmetric input bound overriding the model default.
    pub input_bound: Option<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub region: RegionSource,
    pub epsilon_f: f64,
    pub alpha: f64,
    pub x0: Vec<f64>,
    pub horizon0: f64,
    pub gamma: f64,
    pub sim_horizon: f64,
    pub plant_step: f64,
    pub mode: Mode,
    pub local: LocalMode,
    pub dwell: f64,
    pub disturbance_bound: f64,
    pub disturbance_hold: f64,
    pub solver: SolverOptions,
    pub seeds: Vec<u64>,
    pub out: Option<String>,
    pub verbosity: usize,
    pub validation_samples: usize,
}

impl RunConfig {
    /// Named preset. Only `chen_allgower_sec6` exists.
    pub fn preset(name: &str) -> Result<Self> {
        if name != PRESET_SEC6 {
            return Err(Error::InvalidConfig(format!("unknown preset `{name}`")));
        }
        Self::parse(SEC6_TEXT)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = Reader {
            pairs: parse_pairs(text)?,
        };
        let model_name = r.string_or("model.name", "chen_allgower");
        let mut model_params = BTreeMap::new();
        let param_keys: Vec<String> = r
            .pairs
            .keys()
            .filter(|k| k.starts_with("model.") && k.as_str() != "model.input_bound")
            .cloned()
            .collect();
        for key in param_keys {
            let v = r.f64_or(&key, 0.0)?;
            model_params.insert(key["model.".len()..].to_string(), v);
        }
        let input_bound = r.f64_opt("model.input_bound")?;
        let q = r
            .matrix_opt("weights.q")?
            .ok_or_else(|| Error::InvalidConfig("missing `weights.q`".into()))?;
        let rw = r
            .matrix_opt("weights.r")?
            .ok_or_else(|| Error::InvalidConfig("missing `weights.r`".into()))?;

        let source = r.string_or("region.source", "fixtures");
        let region = match source.as_str() {
            "fixtures" => {
                let k = r
                    .matrix_opt("region.k")?
                    .ok_or_else(|| Error::InvalidConfig("fixtures need `region.k`".into()))?;
                let p_f = match r.take("region.p_f") {
                    None => None,
                    Some((_, v)) if v == "derive" => None,
                    Some((line, v)) => Some(Reader::wrap(line, parse_matrix(&v))?),
                };
                let epsilon = r
                    .f64_opt("region.epsilon")?
                    .ok_or_else(|| Error::InvalidConfig("fixtures need `region.epsilon`".into()))?;
                let l_f = r
                    .f64_opt("region.l_f")?
                    .ok_or_else(|| Error::InvalidConfig("fixtures need `region.l_f`".into()))?;
                RegionSource::Fixtures(Fixtures { k, p_f, epsilon, l_f })
            }
            "synthesize" => {
                let d = SynthesisOptions::default();
                RegionSource::Synthesize(SynthesisOptions {
                    epsilon_f: 0.0,
                    alpha: 0.0,
                    epsilon_samples: r.usize_or("synthesis.epsilon_samples", d.epsilon_samples)?,
                    lipschitz_radius: r.f64_or("synthesis.lipschitz_radius", d.lipschitz_radius)?,
                    lipschitz_samples: r.usize_or("synthesis.lipschitz_samples", d.lipschitz_samples)?,
                    seed: r.usize_or("synthesis.seed", d.seed as usize)? as u64,
                })
            }
            other => {
                return Err(Error::InvalidConfig(format!(
                    "`region.source` must be fixtures or synthesize, got `{other}`"
                )))
            }
        };
        let epsilon_f = r.f64_or("region.epsilon_f", 0.08)?;
        let alpha = r.f64_or("region.alpha", 0.8)?;
        let region = match region {
            RegionSource::Synthesize(mut o) => {
                o.epsilon_f = epsilon_f;
                o.alpha = alpha;
                RegionSource::Synthesize(o)
            }
            f => f,
        };

        let x0 = r
            .vector_opt("scenario.x0")?
            .ok_or_else(|| Error::InvalidConfig("missing `scenario.x0`".into()))?;
        let horizon0 = r.f64_or("scenario.horizon0", 4.0)?;
        let gamma = r.f64_or("scenario.gamma", 1.0)?;
        let sim_horizon = r.f64_or("scenario.sim_horizon", 10.0)?;
        let plant_step = r.f64_or("scenario.plant_step", 1e-3)?;
        let mode = match r.string_or("scenario.mode", "event").as_str() {
            "event" => Mode::EventTriggered,
            "self" => Mode::SelfTriggered,
            "periodic" => Mode::Periodic {
                period: r.f64_or("scenario.period", 0.1)?,
            },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "`scenario.mode` must be event, periodic or self, got `{other}`"
                )))
            }
        };
        if !matches!(mode, Mode::Periodic { .. }) {
            // accepted but unused outside periodic mode
            r.take("scenario.period");
        }
        let local = match r.string_or("scenario.local", "sample_and_hold").as_str() {
            "continuous" => {
                r.take("scenario.local_delta");
                LocalMode::Continuous
            }
            "sample_and_hold" => LocalMode::SampleAndHold {
                delta: r.f64_or("scenario.local_delta", 0.01)?,
            },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "`scenario.local` must be continuous or sample_and_hold, got `{other}`"
                )))
            }
        };
        let dwell = r.f64_or("scenario.dwell", 2.0)?;
        let disturbance_bound = r.f64_or("disturbance.bound", 0.0)?;
        let disturbance_hold = r.f64_or("disturbance.hold", 0.01)?;

        let d = SolverOptions::default();
        let solver = SolverOptions {
            n_segments: r.usize_or("solver.n_segments", d.n_segments)?,
            steps_per_segment: r.usize_or("solver.steps_per_segment", d.steps_per_segment)?,
            penalty_weights: r.vector_opt("solver.penalty_weights")?.unwrap_or(d.penalty_weights),
            terminal_margin: r.f64_or("solver.terminal_margin", d.terminal_margin)?,
            max_iterations: r.usize_or("solver.max_iterations", d.max_iterations)?,
            stationarity_tol: r.f64_or("solver.stationarity_tol", d.stationarity_tol)?,
            fd_step: r.f64_or("solver.fd_step", d.fd_step)?,
        };
        let seeds = match r.take("run.seeds") {
            None => vec![0],
            Some((line, v)) => parse_seeds(&v).map_err(|msg| Error::Parse { line, msg })?,
        };
        let out = r.take("run.out").map(|(_, v)| v);
        let verbosity = r.usize_or("run.verbosity", 1)?;
        let validation_samples = r.usize_or("run.validation_samples", 10_000)?;
        r.finish()?;

        let cfg = RunConfig {
            model_name,
            model_params,
            input_bound,
            q,
            r: rw,
            region,
            epsilon_f,
            alpha,
            x0,
            horizon0,
            gamma,
            sim_horizon,
            plant_step,
            mode,
            local,
            dwell,
            disturbance_bound,
            disturbance_hold,
            solver,
            seeds,
            out,
            verbosity,
            validation_samples,
        };
        cfg.check()?;
        Ok(cfg)
    }

    /// Semantic checks that need more than one key.
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if let RegionSource::Fixtures(f) = &self.region {
            if !(self.epsilon_f > 0.0 && self.epsilon_f < f.epsilon) {
                return bad(format!(
                    "need 0 < epsilon_f < epsilon, got epsilon_f = {}, epsilon = {}",
                    self.epsilon_f, f.epsilon
                ));
            }
            if !(f.l_f >= 0.0) {
                return bad(format!("region.l_f must be >= 0, got {}", f.l_f));
            }
        }
        if !(self.epsilon_f > 0.0) {
            return bad(format!("epsilon_f must be positive, got {}", self.epsilon_f));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        if !(self.disturbance_bound >= 0.0) || !(self.disturbance_hold > 0.0) {
            return bad("disturbance needs bound >= 0 and hold > 0".into());
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("model.name", self.model_name.clone());
        for (k, v) in &self.model_params {
            kv(&format!("model.{k}"), format!("{v:?}"));
        }
        if let Some(b) = self.input_bound {
            kv("model.input_bound", format!("{b:?}"));
        }
        kv("weights.q", format_matrix(&self.q));
        kv("weights.r", format_matrix(&self.r));
        match &self.region {
            RegionSource::Fixtures(f) => {
                kv("region.source", "fixtures".into());
                kv("region.k", format_matrix(&f.k));
                kv(
                    "region.p_f",
                    f.p_f.as_ref().map_or_else(|| "derive".to_string(), format_matrix),
                );
                kv("region.epsilon", format!("{:?}", f.epsilon));
                kv("region.l_f", format!("{:?}", f.l_f));
            }
            RegionSource::Synthesize(o) => {
                kv("region.source", "synthesize".into());
                kv("synthesis.epsilon_samples", o.epsilon_samples.to_string());
                kv("synthesis.lipschitz_radius", format!("{:?}", o.lipschitz_radius));
                kv("synthesis.lipschitz_samples", o.lipschitz_samples.to_string());
                kv("synthesis.seed", o.seed.to_string());
            }
        }
        kv("region.epsilon_f", format!("{:?}", self.epsilon_f));
        kv("region.alpha", format!("{:?}", self.alpha));
        kv("scenario.x0", format_vector(&self.x0));
        kv("scenario.horizon0", format!("{:?}", self.horizon0));
        kv("scenario.gamma", format!("{:?}", self.gamma));
        kv("scenario.sim_horizon", format!("{:?}", self.sim_horizon));
        kv("scenario.plant_step", format!("{:?}", self.plant_step));
        match self.mode {
            Mode::EventTriggered => kv("scenario.mode", "event".into()),
            Mode::SelfTriggered => kv("scenario.mode", "self".into()),
            Mode::Periodic { period } => {
                kv("scenario.mode", "periodic".into());
                kv("scenario.period", format!("{period:?}"));
            }
        }
        match self.local {
            LocalMode::Continuous => kv("scenario.local", "continuous".into()),
            LocalMode::SampleAndHold { delta } => {
                kv("scenario.local", "sample_and_hold".into());
                kv("scenario.local_delta", format!("{delta:?}"));
            }
        }
        kv("scenario.dwell", format!("{:?}", self.dwell));
        kv("disturbance.bound", format!("{:?}", self.disturbance_bound));
        kv("disturbance.hold", format!("{:?}", self.disturbance_hold));
        kv("solver.n_segments", self.solver.n_segments.to_string());
        kv("solver.steps_per_segment", self.solver.steps_per_segment.to_string());
        kv("solver.penalty_weights", format_vector(&self.solver.penalty_weights));
        kv("solver.terminal_margin", format!("{:?}", self.solver.terminal_margin));
        kv("solver.max_iterations", self.solver.max_iterations.to_string());
        kv("solver.stationarity_tol", format!("{:?}", self.solver.stationarity_tol));
        kv("solver.fd_step", format!("{:?}", self.solver.fd_step));
        kv(
            "run.seeds",
            self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
        );
        if let Some(o) = &self.out {
            kv("run.out", o.clone());
        }
        kv("run.verbosity", self.verbosity.to_string());
        kv("run.validation_samples", self.validation_samples.to_string());
        s
    }

    pub fn build_model(&self) -> Result<SystemModel> {
        let model = SystemModel::by_name(&self.model_name, &self.model_params)?;
        match self.input_bound {
            Some(b) => model.with_input_box(InputBox::symmetric(model.input_dim(), b)),
            None => Ok(model),
        }
    }

    /// Terminal ingredients without `T*₀`.
    pub fn build_region(&self, model: &SystemModel) -> Result<TerminalRegion> {
        match &self.region {
            RegionSource::Fixtures(f) => {
                let p_f = match &f.p_f {
                    Some(p) => p.clone(),
                    None => terminal::lyapunov_weight_for_gain(model, &f.k, &self.q, &self.r)?,
                };
                terminal::assemble_region(
                    p_f,
                    f.k.clone(),
                    f.epsilon,
                    self.epsilon_f,
                    f.l_f,
                    self.q.clone(),
                    self.r.clone(),
                    self.alpha,
                )
            }
            RegionSource::Synthesize(o) => terminal::synthesize(model, &self.q, &self.r, o),
        }
    }

    pub fn scenario(&self, model: &SystemModel, region: &TerminalRegion, seed: u64) -> Scenario {
        Scenario {
            model: model.clone(),
            region: region.clone(),
            x0: self.x0.clone(),
            t0: 0.0,
            horizon0: self.horizon0,
            gamma: self.gamma,
            disturbance: DisturbanceSpec {
                bound: self.disturbance_bound,
                hold: self.disturbance_hold,
                seed,
            },
            sim_horizon: self.sim_horizon,
            plant_step: self.plant_step,
            mode: self.mode,
            local: self.local,
            dwell: self.dwell,
            solver: self.solver.clone(),
        }
    }
}

/// `1,2,5` or ranges `0..20` (half-open), comma separated.
pub fn parse_seeds(text: &str) -> std::result::Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range `{part}`"))?;
            let b: u64 = b.trim().parse().map_err(|_| format!("bad seed range `{part}`"))?;
            if b <= a || b - a > 1_000_000 {
                return Err(format!("bad seed range `{part}`"));
            }
            out.extend(a..b);
        } else {
            out.push(part.parse().map_err(|_| format!("bad seed `{part}`"))?);
        }
    }
    if out.is_empty() {
        return Err("empty seed list".into());
    }
    Ok(out)
}

/// Replayable text form of a terminal region.
pub fn region_block(region: &TerminalRegion) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "region.{k} = {v}");
    };
    kv("p_f", format_matrix(region.p_f().matrix()));
    kv("k", format_matrix(region.k()));
    kv("q", format_matrix(region.q()));
    kv("r", format_matrix(region.r()));
    kv("epsilon", format!("{:?}", region.epsilon()));
    kv("epsilon_f", format!("{:?}", region.epsilon_f()));
    kv("l_f", format!("{:?}", region.l_f()));
    kv("alpha", format!("{:?}", region.alpha()));
    kv("lambda_min_qp", format!("{:?}", region.lambda_min_qp()));
    kv("w_hat_max", format!("{:?}", region.w_hat_max()));
    kv(
        "w_tilde_max",
        region.w_tilde_max().map_or_else(|| "none".to_string(), |v| format!("{v:?}")),
    );
    kv(
        "t_star_0",
        region.t_star_0().map_or_else(|| "none".to_string(), |v| format!("{v:?}")),
    );
    s
}

/// Rebuilds a region from [`region_block`] output. Derived scalars are
/// recomputed and must agree with the stored ones to 1e-12 relative.
pub fn parse_region_block(text: &str) -> Result<TerminalRegion> {
    let mut r = Reader {
        pairs: parse_pairs(text)?,
    };
    let need_m = |r: &mut Reader, key: &str| -> Result<DMatrix<f64>> {
        r.matrix_opt(key)?
            .ok_or_else(|| Error::InvalidConfig(format!("region block lacks `{key}`")))
    };
    let p_f = need_m(&mut r, "region.p_f")?;
    let k = need_m(&mut r, "region.k")?;
    let q = need_m(&mut r, "region.q")?;
    let rw = need_m(&mut r, "region.r")?;
    let need = |r: &mut Reader, key: &str| -> Result<f64> {
        r.f64_opt(key)?
            .ok_or_else(|| Error::InvalidConfig(format!("region block lacks `{key}`")))
    };
    let epsilon = need(&mut r, "region.epsilon")?;
    let epsilon_f = need(&mut r, "region.epsilon_f")?;
    let l_f = need(&mut r, "region.l_f")?;
    let alpha = need(&mut r, "region.alpha")?;
    let lambda = r.f64_opt("region.lambda_min_qp")?;
    let w_hat = r.f64_opt("region.w_hat_max")?;
    let w_tilde = r.f64_opt("region.w_tilde_max")?;
    let t0 = r.f64_opt("region.t_star_0")?;
    r.finish()?;
    if p_f.shape() != (k.ncols(), k.ncols()) || q.shape() != p_f.shape() || rw.shape() != (k.nrows(), k.nrows()) {
        return Err(Error::InvalidConfig("region block matrices have inconsistent shapes".into()));
    }
    let mut region = terminal::assemble_region(p_f, k, epsilon, epsilon_f, l_f, q, rw, alpha)?;
    if let Some(t) = t0 {
        region = region.with_t_star_0(t)?;
    }
    let agree = |stored: Option<f64>, actual: Option<f64>, what: &str| -> Result<()> {
        match (stored, actual) {
            (Some(a), Some(b)) if (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300) => Ok(()),
            (None, _) => Ok(()),
            _ => Err(Error::InvalidConfig(format!("stored `{what}` disagrees with the recomputed value"))),
        }
    };
    agree(lambda, Some(region.lambda_min_qp()), "lambda_min_qp")?;
    agree(w_hat, Some(region.w_hat_max()), "w_hat_max")?;
    agree(w_tilde, region.w_tilde_max(), "w_tilde_max")?;
    Ok(region)
}

const SEC6_TEXT: &str = "\
# Chen-Allgower benchmark with the published terminal ingredients.
model.name = chen_allgower
model.mu = 0.8
weights.q = [0.1 0; 0 0.1]
weights.r = [0.05]
region.source = fixtures
# u = Kx convention
region.k = [-1.8042 -1.8042]
region.p_f = derive
region.epsilon = 0.081
region.epsilon_f = 0.08
region.l_f = 0.53
region.alpha = 0.8
# (3, 0) cannot reach the inner set within 4 s under |u| <= 2
scenario.x0 = [2.7 0]
scenario.horizon0 = 4.0
scenario.gamma = 1.0
scenario.sim_horizon = 10.0
scenario.plant_step = 0.001
scenario.mode = event
scenario.local = sample_and_hold
scenario.local_delta = 0.01
scenario.dwell = 2.0
disturbance.bound = 8.3e-4
disturbance.hold = 0.01
run.seeds = 0..20
";

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matrix_literals() {
        let m = parse_matrix("[1 2; 3 4]").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(parse_matrix("[1, -2.5e-3]").unwrap().ncols(), 2);
        assert_eq!(parse_matrix("0.05").unwrap()[(0, 0)], 0.05);
        assert!(parse_matrix("[1 2; 3]").is_err());
        assert!(parse_matrix("[1 x]").is_err());
        assert!(parse_matrix("[]").is_err());
        assert!(parse_matrix("[1 2").is_err());
        assert!(parse_matrix("[inf]").is_err());
    }

    #[test]
    fn preset_parses() {
        let c = RunConfig::preset(PRESET_SEC6).unwrap();
        assert_eq!(c.seeds.len(), 20);
        assert_eq!(c.x0, vec![2.7, 0.0]);
        assert_eq!(c.disturbance_bound, 8.3e-4);
        assert!(RunConfig::preset("nope").is_err());
    }

    #[test]
    fn preset_region_matches_published_weight() {
        let c = RunConfig::preset(PRESET_SEC6).unwrap();
        let model = c.build_model().unwrap();
        let region = c.build_region(&model).unwrap();
        let printed = DMatrix::from_row_slice(2, 2, &[0.0814, 0.0314, 0.0314, 0.0814]);
        assert!((region.p_f().matrix() - printed).abs().max() < 5e-5);
        assert!((region.lambda_min_qp() - 2.0).abs() < 1e-9);
        assert!(region.lyapunov_residual(&model) <= 1e-8);
    }

    #[test]
    fn epsilon_ordering_rejected_at_parse() {
        let text = SEC6_TEXT.replace("region.epsilon = 0.081", "region.epsilon = 0.08");
        assert!(matches!(RunConfig::parse(&text), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn parse_errors_carry_lines() {
        let err = RunConfig::parse("weights.q = [1]\nbogus line\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = RunConfig::parse(&format!("{SEC6_TEXT}unknown.key = 3\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        let err = RunConfig::parse(&format!("{SEC6_TEXT}scenario.gamma = 0.5\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn seeds_syntax() {
        assert_eq!(parse_seeds("1, 4,2").unwrap(), vec![1, 4, 2]);
        assert_eq!(parse_seeds("0..3,7").unwrap(), vec![0, 1, 2, 7]);
        assert!(parse_seeds("3..1").is_err());
        assert!(parse_seeds("").is_err());
    }

    #[test]
    fn region_block_round_trip() {
        let c = RunConfig::preset(PRESET_SEC6).unwrap();
        let model = c.build_model().unwrap();
        let region = c.build_region(&model).unwrap().with_t_star_0(3.5).unwrap();
        let back = parse_region_block(&region_block(&region)).unwrap();
        assert_eq!(back, region);
        let unset = c.build_region(&model).unwrap();
        assert_eq!(parse_region_block(&region_block(&unset)).unwrap(), unset);
    }

    #[test]
    fn tampered_region_block_rejected() {
        let c = RunConfig::preset(PRESET_SEC6).unwrap();
        let model = c.build_model().unwrap();
        let region = c.build_region(&model).unwrap();
        let text = region_block(&region).replace(
            &format!("region.w_hat_max = {:?}", region.w_hat_max()),
            "region.w_hat_max = 0.002",
        );
        assert!(parse_region_block(&text).is_err());
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![-1e6f64..1e6, 1e-9f64..1e-3]
    }

    proptest! {
        #[test]
        fn matrix_format_round_trip(rows in 1usize..4, cols in 1usize..4, vals in prop::collection::vec(finite(), 16)) {
            let m = DMatrix::from_fn(rows, cols, |i, j| vals[i * cols + j]);
            prop_assert_eq!(parse_matrix(&format_matrix(&m)).unwrap(), m);
        }

        #[test]
        fn config_round_trip(
            gamma in 0.01f64..=1.0,
            eps in 0.081f64..1.0,
            bound in 0.0f64..1e-2,
            x0 in prop::collection::vec(-5.0f64..5.0, 2),
            mode in 0usize..3,
            period in 0.01f64..1.0,
            continuous in any::<bool>(),
            seeds in prop::collection::vec(0u64..1000, 1..5),
            margin in 0.0f64..0.1,
        ) {
            let mut c = RunConfig::preset(PRESET_SEC6).unwrap();
            c.gamma = gamma;
            if let RegionSource::Fixtures(f) = &mut c.region {
                f.epsilon = eps;
            }
            c.disturbance_bound = bound;
            c.x0 = x0;
            c.mode = match mode {
                0 => Mode::EventTriggered,
                1 => Mode::SelfTriggered,
                _ => Mode::Periodic { period },
            };
            if continuous {
                c.local = LocalMode::Continuous;
            }
            c.seeds = seeds;
            c.solver.terminal_margin = margin;
            let back = RunConfig::parse(&c.to_text()).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}

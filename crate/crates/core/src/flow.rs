//! Method-of-lines integration of the scalar flow `∂u/∂t = v/F` for graphs over the
//! periodic grid, with diagnostics sampled on a fixed time cadence.

use serde::{Deserialize, Serialize};

use crate::background::{ArwParams, ScaleFactor};
use crate::geometry::{curvature_bundle, umbilicity, CurvatureBundle, GraphState, SpatialDomain};
use crate::integrator::{adaptive_step, StepControl};
use crate::{Error, Result};

/// Diffusive stability factor `c` in `dt ≤ c · min(F² v) · h²`.
pub const CFL_FACTOR: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wave {
    Cos,
    Sin,
}

/// `amplitude · cos(k·x)` or `amplitude · sin(k·x)` with integer wave vector `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub amplitude: f64,
    #[serde(default = "one")]
    pub kx: i32,
    #[serde(default)]
    pub ky: i32,
    #[serde(default = "cos")]
    pub wave: Wave,
}

fn one() -> i32 {
    1
}

fn cos() -> Wave {
    Wave::Cos
}

/// A negative constant plus a finite Fourier sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitialData {
    pub constant: f64,
    #[serde(default)]
    pub modes: Vec<Mode>,
}

impl InitialData {
    pub fn constant(value: f64) -> Self {
        Self {
            constant: value,
            modes: Vec::new(),
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.modes.push(mode);
        self
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        self.modes.iter().fold(self.constant, |acc, m| {
            let phase = m.kx as f64 * x[0] + m.ky as f64 * x[1];
            acc + m.amplitude
                * match m.wave {
                    Wave::Cos => phase.cos(),
                    Wave::Sin => phase.sin(),
                }
        })
    }

    pub fn sample(&self, domain: &SpatialDomain) -> Vec<f64> {
        domain.sample(|x| self.eval(x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub scale_factor: ScaleFactor,
    pub domain: SpatialDomain,
    pub initial: InitialData,
    pub t_end: f64,
    /// Stop once `max u > −u_floor`.
    pub u_floor: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub record_every: f64,
}

impl FlowConfig {
    pub fn new(scale_factor: ScaleFactor, domain: SpatialDomain, initial: InitialData) -> Self {
        Self {
            scale_factor,
            domain,
            initial,
            t_end: 12.0,
            u_floor: 1e-5,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            record_every: 0.1,
        }
    }

    pub fn params(&self) -> &ArwParams {
        self.scale_factor.params()
    }

    pub fn validate(&self) -> Result<()> {
        if self.params().n() != self.domain.n() {
            return Err(Error::Config(format!(
                "scale factor is for n = {} but the grid has n = {}",
                self.params().n(),
                self.domain.n()
            )));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::Config(format!("t_end must be positive, got {}", self.t_end)));
        }
        if !(self.record_every > 0.0) {
            return Err(Error::Config("record_every must be positive".into()));
        }
        if !(self.u_floor > 0.0) || !(self.rel_tol > 0.0) || !(self.abs_tol >= 0.0) {
            return Err(Error::Config("u_floor and rel_tol must be positive, abs_tol non-negative".into()));
        }
        let u0 = self.initial.sample(&self.domain);
        let state = GraphState { t: 0.0, u: u0 };
        let bundle = curvature_bundle(&state, &self.scale_factor, &self.domain)?;
        if let Some(index) = bundle.barrier_violation {
            return Err(Error::BarrierViolated {
                index,
                value: bundle.speed[index],
            });
        }
        Ok(())
    }

    fn control(&self) -> StepControl {
        StepControl::new(self.rel_tol, self.abs_tol)
    }

    /// Time of the `k`-th record.
    pub fn record_time(&self, k: usize) -> f64 {
        (k as f64 * self.record_every).min(self.t_end)
    }

    fn record_count(&self) -> usize {
        (self.t_end / self.record_every - 1e-9).ceil() as usize
    }
}

/// One row of the diagnostics table. Field order is the CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub u_tilde_min: f64,
    pub u_tilde_max: f64,
    pub grad_u_tilde_max: f64,
    pub a_norm_scaled_max: f64,
    pub f_scaled_min: f64,
    pub f_scaled_max: f64,
    pub umbilicity_ratio_max: f64,
    pub umbilicity_breve_scaled_max: f64,
    pub metric_deviation: f64,
    pub fu_residual_max: f64,
}

pub const DIAGNOSTIC_COLUMNS: [&str; 11] = [
    "t",
    "u_tilde_min",
    "u_tilde_max",
    "grad_u_tilde_max",
    "a_norm_scaled_max",
    "f_scaled_min",
    "f_scaled_max",
    "umbilicity_ratio_max",
    "umbilicity_breve_scaled_max",
    "metric_deviation",
    "fu_residual_max",
];

fn max_of(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(f64::NEG_INFINITY, f64::max)
}

fn min_of(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(f64::INFINITY, f64::min)
}

/// Diagnostics of the graph `u` at flow time `t`.
pub fn diagnostics(config: &FlowConfig, t: f64, u: &[f64]) -> Result<DiagnosticsRecord> {
    let state = GraphState { t, u: u.to_vec() };
    let bundle = curvature_bundle(&state, &config.scale_factor, &config.domain)?;
    diagnostics_from_bundle(config, t, u, &bundle)
}

pub(crate) fn diagnostics_from_bundle(
    config: &FlowConfig,
    t: f64,
    u: &[f64],
    bundle: &CurvatureBundle,
) -> Result<DiagnosticsRecord> {
    let p = config.params();
    let n = p.n();
    let gt = p.gamma_tilde();
    let grow = (p.gamma() * t).exp();
    let sf = &config.scale_factor;
    let um = umbilicity(bundle)?;
    let breve_scale = (p.breve_umbilicity_rate() * t).exp();
    let c_lim = gt * p.m().sqrt();

    let mut metric_deviation: f64 = 0.0;
    let mut fu_residual: f64 = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        let (w, _) = sf.conformal(uk)?;
        // e^{2t/n} e^{2f(u)} = (e^{γt} w)^{2/γ̃}
        let scaled = (grow * w).powf(2.0 / gt);
        let target = (c_lim * (-uk * grow)).powf(2.0 / gt);
        let du = bundle.du[k];
        let s = bundle.sigma[k];
        for i in 0..n {
            for j in 0..n {
                let delta = if i == j { 1.0 } else { 0.0 };
                let g = s * delta - du[i] * du[j];
                metric_deviation = metric_deviation.max((scaled * g - target * delta).abs());
            }
        }
        fu_residual = fu_residual.max((sf.time_function_residual(uk)? / gt).abs());
    }

    Ok(DiagnosticsRecord {
        t,
        u_tilde_min: min_of(u.iter().map(|x| x * grow)),
        u_tilde_max: max_of(u.iter().map(|x| x * grow)),
        grad_u_tilde_max: max_of(bundle.du.iter().map(|d| d[0].hypot(d[1]) * grow)),
        a_norm_scaled_max: max_of(bundle.norm_a2.iter().map(|a| a.max(0.0).sqrt() * grow)),
        f_scaled_min: min_of(bundle.speed.iter().map(|f| f / grow)),
        f_scaled_max: max_of(bundle.speed.iter().map(|f| f / grow)),
        umbilicity_ratio_max: max_of(um.ratio.iter().copied()),
        umbilicity_breve_scaled_max: max_of(um.breve.iter().map(|b| b * breve_scale)),
        metric_deviation,
        fu_residual_max: fu_residual,
    })
}

/// Right-hand side `v/F` of the flow.
pub fn rhs(config: &FlowConfig, t: f64, u: &[f64]) -> Result<Vec<f64>> {
    let state = GraphState { t, u: u.to_vec() };
    curvature_bundle(&state, &config.scale_factor, &config.domain)?.normal_speed()
}

/// Largest step allowed by the diffusive stability bound at `u`.
pub fn stability_cap(config: &FlowConfig, u: &[f64]) -> Result<f64> {
    let state = GraphState { t: 0.0, u: u.to_vec() };
    let bundle = curvature_bundle(&state, &config.scale_factor, &config.domain)?;
    Ok(stability_cap_from(config, &bundle))
}

fn stability_cap_from(config: &FlowConfig, bundle: &CurvatureBundle) -> f64 {
    let h = config.domain.spacing();
    CFL_FACTOR * bundle.min_inverse_diffusion() * h * h
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub u: Vec<f64>,
    pub dt_used: f64,
    pub error: f64,
    pub dt_next: f64,
    pub rejections: usize,
}

/// One adaptive step from `(t, u)` limited by `dt_limit` and the stability bound.
pub fn step(config: &FlowConfig, t: f64, u: &[f64], dt_suggest: f64, dt_limit: f64) -> Result<StepOutcome> {
    let state = GraphState { t, u: u.to_vec() };
    let bundle = curvature_bundle(&state, &config.scale_factor, &config.domain)?;
    let k1 = bundle.normal_speed()?;
    let cap = stability_cap_from(config, &bundle).min(dt_limit);
    let mut f = |tt: f64, y: &[f64]| rhs(config, tt, y);
    let acc = adaptive_step(&mut f, t, u, &k1, dt_suggest, cap, &config.control())?;
    Ok(StepOutcome {
        u: acc.y,
        dt_used: acc.dt_used,
        error: acc.error,
        dt_next: acc.dt_next,
        rejections: acc.rejections,
    })
}

/// State stored at each record time; enough to continue the run bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: f64,
    pub u: Vec<f64>,
    pub dt_next: f64,
    pub record_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Termination {
    TEnd,
    UFloor { max_u: f64 },
    Error { message: String, t: f64 },
}

impl Termination {
    pub fn is_error(&self) -> bool {
        matches!(self, Termination::Error { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Termination::TEnd => "t_end",
            Termination::UFloor { .. } => "u_floor",
            Termination::Error { .. } => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory {
    pub config: FlowConfig,
    pub frames: Vec<Frame>,
    pub diagnostics: Vec<DiagnosticsRecord>,
    pub termination: Termination,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl FlowTrajectory {
    pub fn last_frame(&self) -> &Frame {
        self.frames.last().expect("trajectory holds the initial frame")
    }

    /// Frame closest to time `t`.
    pub fn frame_near(&self, t: f64) -> &Frame {
        self.frames
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .expect("trajectory holds the initial frame")
    }
}

/// Callback invoked for every recorded frame, in order.
pub type RecordSink<'a> = dyn FnMut(&Frame, &DiagnosticsRecord) -> Result<()> + 'a;

/// Runs the flow from the initial data to `t_end` or the `u_floor` stop.
pub fn run(config: &FlowConfig) -> Result<FlowTrajectory> {
    run_with(config, &mut |_, _| Ok(()))
}

pub fn run_with(config: &FlowConfig, sink: &mut RecordSink<'_>) -> Result<FlowTrajectory> {
    config.validate()?;
    let u0 = config.initial.sample(&config.domain);
    let cap = stability_cap(config, &u0)?;
    let first = Frame {
        t: 0.0,
        u: u0,
        dt_next: 0.1 * cap.min(config.record_every),
        record_index: 0,
    };
    let diag = diagnostics(config, 0.0, &first.u)?;
    sink(&first, &diag)?;
    let traj = FlowTrajectory {
        config: config.clone(),
        frames: vec![first],
        diagnostics: vec![diag],
        termination: Termination::TEnd,
        accepted_steps: 0,
        rejected_steps: 0,
    };
    Ok(continue_run(traj, sink))
}

/// Continues from previously recorded frames. Diagnostics of the given frames are
/// recomputed, so the result matches an uninterrupted run exactly.
pub fn resume(config: &FlowConfig, frames: Vec<Frame>, sink: &mut RecordSink<'_>) -> Result<FlowTrajectory> {
    let traj = FlowTrajectory::from_frames(config, frames, Termination::TEnd)?;
    Ok(continue_run(traj, sink))
}

impl FlowTrajectory {
    /// Rebuilds a trajectory from stored frames, recomputing their diagnostics.
    pub fn from_frames(config: &FlowConfig, frames: Vec<Frame>, termination: Termination) -> Result<Self> {
        config.validate()?;
        if frames.is_empty() {
            return Err(Error::MissingData("no frames recorded".into()));
        }
        for (k, fr) in frames.iter().enumerate() {
            if fr.record_index != k || fr.u.len() != config.domain.len() {
                return Err(Error::Format(format!(
                    "frame {k} does not match the run (record index {}, {} values)",
                    fr.record_index,
                    fr.u.len()
                )));
            }
        }
        let diagnostics = frames
            .iter()
            .map(|fr| diagnostics(config, fr.t, &fr.u))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            frames,
            diagnostics,
            termination,
            accepted_steps: 0,
            rejected_steps: 0,
        })
    }

    /// How a stored run ended, judged from its frames alone.
    pub fn infer_termination(config: &FlowConfig, frames: &[Frame]) -> Termination {
        let Some(last) = frames.last() else {
            return Termination::Error {
                message: "no frames recorded".into(),
                t: 0.0,
            };
        };
        if let Some(max_u) = floor_hit(config, &last.u) {
            return Termination::UFloor { max_u };
        }
        if last.t >= config.t_end - 1e-9 * config.t_end.max(1.0) {
            return Termination::TEnd;
        }
        Termination::Error {
            message: format!("run stopped early at t = {}", last.t),
            t: last.t,
        }
    }
}

fn continue_run(mut traj: FlowTrajectory, sink: &mut RecordSink<'_>) -> FlowTrajectory {
    let config = traj.config.clone();
    let last = traj.last_frame().clone();
    let mut t = last.t;
    let mut u = last.u;
    let mut dt = last.dt_next;
    let mut record = last.record_index;
    let total = config.record_count();

    let fail = |traj: &mut FlowTrajectory, t: f64, e: Error| {
        log::warn!("flow stopped at t = {t}: {e}");
        traj.termination = Termination::Error {
            message: e.to_string(),
            t,
        };
    };

    if let Some(max_u) = floor_hit(&config, &u) {
        traj.termination = Termination::UFloor { max_u };
        return traj;
    }
    while record < total {
        let target = config.record_time(record + 1);
        let outcome = match step(&config, t, &u, dt, target - t) {
            Ok(o) => o,
            Err(e) => {
                fail(&mut traj, t, e);
                return traj;
            }
        };
        traj.accepted_steps += 1;
        traj.rejected_steps += outcome.rejections;
        let landed = outcome.dt_used >= target - t;
        t = if landed { target } else { t + outcome.dt_used };
        u = outcome.u;
        dt = outcome.dt_next;

        let floor = floor_hit(&config, &u);
        if landed || floor.is_some() {
            if landed {
                record += 1;
            }
            let frame = Frame {
                t,
                u: u.clone(),
                dt_next: dt,
                record_index: if landed { record } else { record + 1 },
            };
            let diag = match diagnostics(&config, t, &u) {
                Ok(d) => d,
                Err(e) => {
                    fail(&mut traj, t, e);
                    return traj;
                }
            };
            if let Err(e) = sink(&frame, &diag) {
                fail(&mut traj, t, e);
                return traj;
            }
            traj.frames.push(frame);
            traj.diagnostics.push(diag);
        }
        if let Some(max_u) = floor {
            traj.termination = Termination::UFloor { max_u };
            return traj;
        }
    }
    traj.termination = Termination::TEnd;
    traj
}

fn floor_hit(config: &FlowConfig, u: &[f64]) -> Option<f64> {
    let max_u = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (max_u > -config.u_floor).then_some(max_u)
}

/// Spatial mean of a grid field.
pub fn mean(u: &[f64]) -> f64 {
    u.iter().sum::<f64>() / u.len() as f64
}

/// Mode `cos x¹` of amplitude `a`.
pub fn cos_mode(amplitude: f64) -> Mode {
    Mode {
        amplitude,
        kx: 1,
        ky: 0,
        wave: Wave::Cos,
    }
}

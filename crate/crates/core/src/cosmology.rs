//! Scale factors generated by an exact perfect fluid through the Friedmann constraint
//!
//! `½n(n−1)|f'|² + ½R̄ = κρ₀ e^{−2γ̃f}`, with `ρ = ρ₀e^{−(n+ω)f}` and `p = (ω/n)ρ`.
//!
//! The constraint is integrated for `w = e^{γ̃f}`, where it reads
//! `w' = −γ̃√(m − k²w²)` with `m = 2κρ₀/(n(n−1))` and `k² = R̄/(n(n−1))`.
//! The right-hand side stays regular at the singularity `w = 0`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::background::{ArwParams, OdeTable, ScaleFactor};
use crate::integrator::{adaptive_step, integrate, StepControl};
use crate::{Error, Result};

/// Stop the forward pass once `e^f` drops below this.
const STOP_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidConfig {
    pub n: usize,
    pub omega: f64,
    pub kappa: f64,
    pub rho0: f64,
    #[serde(default)]
    pub r_bar: f64,
    pub tau0: f64,
    pub f0: f64,
}

impl FluidConfig {
    pub fn validate(&self) -> Result<ArwParams> {
        if self.n < 2 {
            return Err(Error::InvalidParams(
                "the Friedmann constraint needs n ≥ 2 (n(n−1) vanishes for n = 1)".into(),
            ));
        }
        if !(self.kappa > 0.0) || !(self.rho0 > 0.0) {
            return Err(Error::InvalidParams("κ and ρ₀ must be positive".into()));
        }
        if !(self.r_bar >= 0.0) || !self.r_bar.is_finite() {
            return Err(Error::InvalidParams("R̄ must be finite and non-negative".into()));
        }
        if !self.tau0.is_finite() || !self.f0.is_finite() {
            return Err(Error::InvalidParams("initial data must be finite".into()));
        }
        ArwParams::new(self.n, self.omega, self.implied_mass())
    }

    fn nn1(&self) -> f64 {
        (self.n * (self.n - 1)) as f64
    }

    /// `m = 2κρ₀/(n(n−1))`.
    pub fn implied_mass(&self) -> f64 {
        2.0 * self.kappa * self.rho0 / self.nn1()
    }

    /// `k² = R̄/(n(n−1))`.
    pub fn curvature_k2(&self) -> f64 {
        self.r_bar / self.nn1()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmannSolution {
    pub config: FluidConfig,
    /// Scale factor in the shifted clock whose singularity is at `τ = 0`.
    pub scale_factor: ScaleFactor,
    pub m: f64,
    pub phi_limit_predicted: f64,
    /// Position of the singularity in the clock of `config.tau0`.
    pub singularity_tau: f64,
    pub steps: usize,
}

impl FriedmannSolution {
    /// Maps a time of the input clock to the shifted clock of `scale_factor`.
    pub fn shifted(&self, tau: f64) -> f64 {
        tau - self.singularity_tau
    }
}

fn conformal_rhs(gt: f64, m: f64, k2: f64, w: f64) -> Result<f64> {
    let disc = m - k2 * w * w;
    if disc < 0.0 || !disc.is_finite() {
        return Err(Error::Recollapse(format!(
            "recollapse before singularity: 2κρ₀e^(−2γ̃f) − R̄ < 0 at w = {w}"
        )));
    }
    Ok(-gt * disc.sqrt())
}

/// Integrates the constraint from `(tau0, f0)` toward the singularity and returns a
/// dense `ode_derived` scale factor on `(tau0 − τ_sing, 0)`.
pub fn solve_friedmann(config: &FluidConfig) -> Result<FriedmannSolution> {
    let params = config.validate()?;
    let gt = params.gamma_tilde();
    let m = params.m();
    let k2 = config.curvature_k2();
    let w0 = (gt * config.f0).exp();
    if m - k2 * w0 * w0 <= 0.0 {
        return Err(Error::Recollapse(format!(
            "recollapse before singularity: 2κρ₀e^(−2γ̃f₀) − R̄ ≤ 0 at f₀ = {}",
            config.f0
        )));
    }

    // Forward pass: locate the singularity.
    let w_stop = STOP_SCALE.powf(gt);
    let ctl = StepControl::new(1e-12, 1e-14);
    let mut rhs = |_t: f64, y: &[f64]| -> Result<Vec<f64>> { Ok(vec![conformal_rhs(gt, m, k2, y[0])?]) };
    let mut tau = config.tau0;
    let mut y = vec![w0];
    let mut dt = 1e-3 * w0 / (gt * m.sqrt());
    let mut steps = 0usize;
    while y[0] >= w_stop {
        let k1 = rhs(tau, &y)?;
        let acc = adaptive_step(&mut rhs, tau, &y, &k1, dt, f64::INFINITY, &ctl)?;
        tau += acc.dt_used;
        y = acc.y;
        dt = acc.dt_next;
        steps += 1;
        if steps > 1_000_000 {
            return Err(Error::StepFailure {
                t: tau,
                dt,
                rejections: 0,
                reason: "singularity not reached".into(),
            });
        }
    }
    let w_end = y[0];
    let tail = if k2 > 0.0 {
        let k = k2.sqrt();
        (k * w_end / m.sqrt()).asin() / (gt * k)
    } else {
        w_end / (gt * m.sqrt())
    };
    let singularity_tau = tau + tail;
    let start = config.tau0 - singularity_tau;
    log::debug!("friedmann: singularity at τ = {singularity_tau} after {steps} steps");

    // Backward pass from the singularity, which is a regular point for w.
    let mut back = StepControl::new(1e-13, 0.0);
    back.max_dt = 2e-3 * start.abs();
    let nodes = integrate(&mut rhs, 0.0, &[0.0], start, 1e-4 * start.abs(), &back)?;
    let mut taus: Vec<f64> = Vec::with_capacity(nodes.len());
    let mut ws: Vec<f64> = Vec::with_capacity(nodes.len());
    for (t, y) in nodes.iter().rev() {
        taus.push(*t);
        ws.push(y[0]);
    }
    let table = OdeTable { k2, tau: taus, w: ws };
    let scale_factor = ScaleFactor::from_ode_table(params, table)?;
    Ok(FriedmannSolution {
        config: *config,
        scale_factor,
        m,
        phi_limit_predicted: -params.gamma() * config.r_bar / (config.n as f64 - 1.0),
        singularity_tau,
        steps: steps + nodes.len() - 1,
    })
}

/// Closed form `w(τ) = (√m/k) sin(kγ̃|τ|)` of the shifted solution (`√m γ̃|τ|` when `k = 0`).
pub fn closed_form_w(config: &FluidConfig, tau: f64) -> Result<f64> {
    let params = config.validate()?;
    let gt = params.gamma_tilde();
    let k2 = config.curvature_k2();
    let m = params.m();
    Ok(if k2 > 0.0 {
        let k = k2.sqrt();
        m.sqrt() / k * (k * gt * tau.abs()).sin()
    } else {
        m.sqrt() * gt * tau.abs()
    })
}

/// Density and pressure of the fluid at `tau` (shifted clock).
pub fn density_along(sol: &FriedmannSolution, tau: f64) -> Result<(f64, f64)> {
    let f = sol.scale_factor.f(tau)?;
    let c = &sol.config;
    let rho = c.rho0 * (-(c.n as f64 + c.omega) * f).exp();
    Ok((rho, c.omega / c.n as f64 * rho))
}

/// Relative residual of the constraint `½n(n−1)|f'|² + ½R̄ − κρe^{2f}` at `tau`.
pub fn constraint_residual(sol: &FriedmannSolution, tau: f64) -> Result<f64> {
    let d = sol.scale_factor.eval(tau)?;
    let (rho, _) = density_along(sol, tau)?;
    let c = &sol.config;
    let kinetic = 0.5 * c.nn1() * d.d1 * d.d1;
    let source = c.kappa * rho * (2.0 * d.f).exp();
    Ok((kinetic + 0.5 * c.r_bar - source).abs() / source.abs().max(kinetic))
}

/// Summary of the constraint residual over the dense output, as written to reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmannReport {
    pub config: FluidConfig,
    pub m: f64,
    pub phi_limit_predicted: f64,
    pub singularity_tau: f64,
    pub domain_start: f64,
    pub max_constraint_residual: f64,
    pub nodes: usize,
}

pub fn friedmann_report(sol: &FriedmannSolution) -> Result<FriedmannReport> {
    let start = sol.scale_factor.start();
    let mut worst: f64 = 0.0;
    for i in 1..400 {
        let tau = start * (1.0 - i as f64 / 400.0);
        worst = worst.max(constraint_residual(sol, tau)?);
    }
    let mut tau = 0.5 * start;
    while tau < -1e-9 {
        worst = worst.max(constraint_residual(sol, tau)?);
        tau *= 0.7;
    }
    Ok(FriedmannReport {
        config: sol.config,
        m: sol.m,
        phi_limit_predicted: sol.phi_limit_predicted,
        singularity_tau: sol.singularity_tau,
        domain_start: start,
        max_constraint_residual: worst,
        nodes: sol.steps,
    })
}

/// Writes the solution's scale factor as a JSON scale-factor spec.
pub fn export_scale_factor(sol: &FriedmannSolution, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer(std::io::BufWriter::new(file), &sol.scale_factor)?;
    Ok(())
}

/// Reads a JSON scale-factor spec of any kind.
pub fn load_scale_factor(path: &Path) -> Result<ScaleFactor> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

//! WebAssembly bindings for the static page in `www/`.
//!
//! Every export returns a JSON string; the plain `*_json` functions do the work and are
//! what the native tests call.

use arwimcf::analysis::{fit_rate, RateFit};
use arwimcf::background::{make_canonical, ArwParams};
use arwimcf::cosmology::{solve_friedmann, FluidConfig};
use arwimcf::flow::{cos_mode, run, FlowConfig, FlowTrajectory, InitialData};
use arwimcf::geometry::{SpatialDomain, StencilOrder};
use arwimcf::Result;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn to_js(e: arwimcf::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Perfect-fluid background with `n = 2`: `f`, `φ = f'' + γ̃|f'|²` and the predicted limit of `φ`.
pub fn friedmann_json(rho0: f64, r_bar: f64, omega: f64) -> Result<String> {
    let fluid = FluidConfig {
        n: 2,
        omega,
        kappa: 1.0,
        rho0,
        r_bar,
        tau0: -1.0,
        f0: 0.0,
    };
    let sol = solve_friedmann(&fluid)?;
    let sf = &sol.scale_factor;
    let gt = sf.params().gamma_tilde();
    let start = sf.start();
    let (mut tau, mut f, mut phi) = (Vec::new(), Vec::new(), Vec::new());
    for k in 1..200 {
        // Denser toward the singularity.
        let s = 1.0 - k as f64 / 200.0;
        let t = start * s * s;
        let d = sf.eval(t)?;
        tau.push(t);
        f.push(d.f);
        phi.push(d.d2 + gt * d.d1 * d.d1);
    }
    Ok(json!({
        "tau": tau,
        "f": f,
        "phi": phi,
        "m": sol.m,
        "phi_limit": sol.phi_limit_predicted,
        "singularity_tau": sol.singularity_tau,
    })
    .to_string())
}

fn line_flow(amplitude: f64, omega: f64, points: usize, t_end: f64) -> Result<FlowTrajectory> {
    let params = ArwParams::new(1, omega, 1.0)?;
    let domain = SpatialDomain::new(1, points, StencilOrder::Fourth, 0.0)?;
    let mut cfg = FlowConfig::new(
        make_canonical(params, -10.0)?,
        domain,
        InitialData::constant(-0.5).with_mode(cos_mode(amplitude)),
    );
    cfg.t_end = t_end;
    run(&cfg)
}

/// Rescaled profiles `ũ = u e^{γt}` of a one-dimensional run at six evenly spaced times.
pub fn flow_profiles_json(amplitude: f64, omega: f64, t_end: f64) -> Result<String> {
    let traj = line_flow(amplitude, omega, 128, t_end)?;
    let gamma = traj.config.params().gamma();
    let domain = &traj.config.domain;
    let x: Vec<f64> = (0..domain.len()).map(|i| domain.coords(i)[0]).collect();
    let last = traj.last_frame().t;
    let profiles: Vec<Value> = (0..6)
        .map(|k| {
            let fr = traj.frame_near(last * k as f64 / 5.0);
            let scale = (gamma * fr.t).exp();
            json!({ "t": fr.t, "u_tilde": fr.u.iter().map(|u| u * scale).collect::<Vec<_>>() })
        })
        .collect();
    Ok(json!({ "x": x, "gamma": gamma, "profiles": profiles }).to_string())
}

fn fitted(name: &str, series: &[(f64, f64)], window: (f64, f64), predicted: f64) -> Value {
    match fit_rate(name, series, window) {
        Ok(RateFit { rate, r_squared, .. }) => json!({ "rate": rate, "r_squared": r_squared, "predicted": predicted }),
        Err(_) => json!({ "rate": null, "predicted": predicted }),
    }
}

/// Decay of `‖Du‖` and of the umbilicity ratio on a `points²` torus, with fitted and predicted rates.
pub fn decay_json(amplitude: f64, omega: f64, points: usize) -> Result<String> {
    let params = ArwParams::new(2, omega, 1.0)?;
    let domain = SpatialDomain::new(2, points, StencilOrder::Fourth, 0.0)?;
    let mut cfg = FlowConfig::new(
        make_canonical(params, -10.0)?,
        domain,
        InitialData::constant(-0.5).with_mode(cos_mode(amplitude)),
    );
    cfg.t_end = 12.0;
    let traj = run(&cfg)?;
    let gamma = params.gamma();
    let t: Vec<f64> = traj.diagnostics.iter().map(|d| d.t).collect();
    let grad: Vec<f64> = traj
        .diagnostics
        .iter()
        .map(|d| d.grad_u_tilde_max * (-gamma * d.t).exp())
        .collect();
    let umb: Vec<f64> = traj.diagnostics.iter().map(|d| d.umbilicity_ratio_max).collect();
    let pairs = |v: &[f64]| t.iter().copied().zip(v.iter().copied()).collect::<Vec<_>>();
    let window = (6.0, 12.0);
    Ok(json!({
        "t": t,
        "grad_u": grad,
        "umbilicity": umb,
        "grad_u_fit": fitted("grad_u", &pairs(&grad), window, gamma),
        "umbilicity_fit": fitted("umbilicity", &pairs(&umb), window, 2.0 * gamma),
    })
    .to_string())
}

#[wasm_bindgen]
pub fn friedmann_curves(rho0: f64, r_bar: f64, omega: f64) -> std::result::Result<String, JsValue> {
    friedmann_json(rho0, r_bar, omega).map_err(to_js)
}

#[wasm_bindgen]
pub fn flow_profiles_1d(amplitude: f64, omega: f64, t_end: f64) -> std::result::Result<String, JsValue> {
    flow_profiles_json(amplitude, omega, t_end).map_err(to_js)
}

#[wasm_bindgen]
pub fn decay_series_2d(amplitude: f64, omega: f64, points: usize) -> std::result::Result<String, JsValue> {
    decay_json(amplitude, omega, points).map_err(to_js)
}

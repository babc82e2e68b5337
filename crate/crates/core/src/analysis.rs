//! Rate fits and limit verdicts over flow diagnostics.

use serde::{Deserialize, Serialize};

use crate::flow::{DiagnosticsRecord, FlowTrajectory};
use crate::geometry::{curvature_bundle, GraphState};
use crate::stats::fit_line;
use crate::{Error, Result};

/// Values at or below this are treated as exact zeros.
pub const ZERO_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub quantity: String,
    pub t_lo: f64,
    pub t_hi: f64,
    pub points: usize,
    /// Decay rate λ of `value ≈ C e^{−λt}`.
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub predicted: Option<f64>,
    pub relative_error: Option<f64>,
}

impl RateFit {
    pub fn against(mut self, predicted: f64) -> Self {
        self.relative_error = Some((self.rate - predicted).abs() / predicted.abs());
        self.predicted = Some(predicted);
        self
    }
}

/// Least-squares fit of `ln value` against `t` over `window`.
pub fn fit_rate(quantity: &str, series: &[(f64, f64)], window: (f64, f64)) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|(t, _)| *t >= window.0 - 1e-9 && *t <= window.1 + 1e-9)
        .collect();
    if pts.len() < 4 {
        return Err(Error::MissingData(format!(
            "{quantity}: {} points in [{}, {}], need at least 4",
            pts.len(),
            window.0,
            window.1
        )));
    }
    if let Some((t, v)) = pts.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::OutOfRange(format!(
            "{quantity}: non-positive value {v} at t = {t}"
        )));
    }
    let (ts, ls): (Vec<f64>, Vec<f64>) = pts.iter().map(|(t, v)| (*t, v.ln())).unzip();
    let fit = fit_line(&ts, &ls).ok_or_else(|| Error::MissingData(format!("{quantity}: degenerate window")))?;
    Ok(RateFit {
        quantity: quantity.to_string(),
        t_lo: ts[0],
        t_hi: ts[ts.len() - 1],
        points: ts.len(),
        rate: -fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        predicted: None,
        relative_error: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum RateOutcome {
    Fitted(RateFit),
    /// Every value in the window is below the roundoff floor.
    IdenticallyZero,
}

impl RateOutcome {
    pub fn passes(&self, tol: f64) -> bool {
        match self {
            RateOutcome::Fitted(f) => f.relative_error.is_some_and(|e| e <= tol),
            RateOutcome::IdenticallyZero => true,
        }
    }

    pub fn rate(&self) -> f64 {
        match self {
            RateOutcome::Fitted(f) => f.rate,
            RateOutcome::IdenticallyZero => 0.0,
        }
    }
}

fn rate_outcome(quantity: &str, series: &[(f64, f64)], window: (f64, f64), predicted: f64) -> Result<RateOutcome> {
    let in_window = series
        .iter()
        .filter(|(t, _)| *t >= window.0 - 1e-9 && *t <= window.1 + 1e-9);
    if in_window.clone().count() >= 4 && in_window.clone().all(|(_, v)| v.abs() <= ZERO_FLOOR) {
        return Ok(RateOutcome::IdenticallyZero);
    }
    Ok(RateOutcome::Fitted(fit_rate(quantity, series, window)?.against(predicted)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitVerdict {
    pub quantity: String,
    /// Average of the last three values.
    pub limit: f64,
    pub predicted: f64,
    pub abs_deviation: f64,
    pub rel_deviation: f64,
    pub monotone_tail: bool,
    pub tolerance: f64,
    pub pass: bool,
}

/// Non-increasing over the last quarter of the series, up to a roundoff slack.
fn monotone_tail(values: &[f64]) -> bool {
    let start = values.len() - (values.len() / 4).max(2).min(values.len());
    values[start..].windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(ZERO_FLOOR))
}

fn limit_to_zero(quantity: &str, values: &[f64], tol: f64) -> Result<LimitVerdict> {
    if values.len() < 3 {
        return Err(Error::MissingData(format!("{quantity}: fewer than 3 records")));
    }
    let k = values.len();
    let limit = values[k - 3..].iter().sum::<f64>() / 3.0;
    let abs = limit.abs();
    let mono = monotone_tail(values);
    Ok(LimitVerdict {
        quantity: quantity.to_string(),
        limit,
        predicted: 0.0,
        abs_deviation: abs,
        rel_deviation: abs,
        monotone_tail: mono,
        tolerance: tol,
        pass: limit.is_finite() && values[k - 1].abs() <= tol && (mono || abs <= ZERO_FLOOR),
    })
}

/// Tolerances and windows for the convergence claims.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub window: (f64, f64),
    pub grad_rate_tol: f64,
    pub umbilicity_rate_tol: f64,
    pub breve_rate_tol: f64,
    pub fu_rate_tol: f64,
    /// Allowed `last / first` ratio for quantities that must stay bounded.
    pub growth_factor: f64,
    pub metric_tol: f64,
    pub metric_constant_tol: f64,
    pub speed_tol: f64,
    /// Allowed sup-norm change of `ũ` per unit time at the end of the run.
    pub drift_tol: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            window: (6.0, 12.0),
            grad_rate_tol: 0.10,
            umbilicity_rate_tol: 0.25,
            breve_rate_tol: 0.25,
            fu_rate_tol: 0.20,
            growth_factor: 1.1,
            metric_tol: 1e-2,
            metric_constant_tol: 1e-6,
            speed_tol: 1e-3,
            drift_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthCheck {
    pub quantity: String,
    pub first: f64,
    pub last: f64,
    pub ratio: f64,
    pub pass: bool,
}

fn growth_check(quantity: &str, first: f64, last: f64, factor: f64) -> GrowthCheck {
    let ratio = if first.abs() <= ZERO_FLOOR && last.abs() <= ZERO_FLOOR {
        1.0
    } else {
        last / first
    };
    GrowthCheck {
        quantity: quantity.to_string(),
        first,
        last,
        ratio,
        pass: ratio.is_finite() && ratio <= factor,
    }
}

/// Measured constant of the rescaled metric against the two candidate closed forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConstantCheck {
    pub measured: f64,
    /// `(γ̃√m)^{2/γ̃}`.
    pub predicted: f64,
    /// `(γ̃m)^{1/γ̃}`.
    pub alternative: f64,
    pub rel_deviation: f64,
    pub alternative_rel_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitTheoremReport {
    pub window: (f64, f64),
    /// `−c₁ ≤ ũ ≤ −c₂` over the window.
    pub u_tilde_c1: f64,
    pub u_tilde_c2: f64,
    pub u_tilde_drift: f64,
    pub grad_rate: RateOutcome,
    pub a_bounded: GrowthCheck,
    pub hessian_bounded: GrowthCheck,
    pub metric: LimitVerdict,
    pub metric_constant: MetricConstantCheck,
    pub umbilicity: RateOutcome,
    pub breve_umbilicity: Option<RateOutcome>,
    pub speed: LimitVerdict,
}

fn window_of(traj: &FlowTrajectory, cfg: &AnalysisConfig) -> Result<(f64, f64)> {
    let last = traj
        .diagnostics
        .last()
        .ok_or_else(|| Error::MissingData("trajectory has no diagnostics".into()))?
        .t;
    let hi = cfg.window.1.min(last);
    let lo = cfg.window.0.min(hi);
    Ok((lo, hi))
}

fn series(traj: &FlowTrajectory, pick: impl Fn(&DiagnosticsRecord) -> f64) -> Vec<(f64, f64)> {
    traj.diagnostics.iter().map(|d| (d.t, pick(d))).collect()
}

fn in_window(traj: &FlowTrajectory, w: (f64, f64)) -> impl Iterator<Item = &DiagnosticsRecord> {
    traj.diagnostics
        .iter()
        .filter(move |d| d.t >= w.0 - 1e-9 && d.t <= w.1 + 1e-9)
}

/// Convergence of the rescaled graph, metric, speed and umbilicity along a run.
pub fn check_limit_theorem(traj: &FlowTrajectory, cfg: &AnalysisConfig) -> Result<LimitTheoremReport> {
    let window = window_of(traj, cfg)?;
    let config = &traj.config;
    let p = config.params();
    let gamma = p.gamma();
    let gt = p.gamma_tilde();

    let recs: Vec<&DiagnosticsRecord> = in_window(traj, window).collect();
    if recs.len() < 4 {
        return Err(Error::MissingData(format!(
            "only {} records in window [{}, {}]",
            recs.len(),
            window.0,
            window.1
        )));
    }
    let u_tilde_c1 = recs.iter().map(|d| -d.u_tilde_min).fold(f64::NEG_INFINITY, f64::max);
    let u_tilde_c2 = recs.iter().map(|d| -d.u_tilde_max).fold(f64::INFINITY, f64::min);

    // Sup-norm change of ũ over the final unit of time.
    let last = traj.last_frame();
    let earlier = traj.frame_near(last.t - 1.0);
    let span = (last.t - earlier.t).max(f64::MIN_POSITIVE);
    let (g_last, g_early) = ((gamma * last.t).exp(), (gamma * earlier.t).exp());
    let u_tilde_drift = last
        .u
        .iter()
        .zip(&earlier.u)
        .map(|(a, b)| (a * g_last - b * g_early).abs())
        .fold(0.0, f64::max)
        / span;

    let grad = series(traj, |d| d.grad_u_tilde_max * (-gamma * d.t).exp());
    let grad_rate = rate_outcome("grad_u", &grad, window, gamma)?;

    let a_bounded = growth_check(
        "a_norm_scaled",
        recs[0].a_norm_scaled_max,
        recs[recs.len() - 1].a_norm_scaled_max,
        cfg.growth_factor,
    );

    let hess = |t: f64| -> Result<f64> {
        let fr = traj.frame_near(t);
        let der = config.domain.differentiate(&fr.u)?;
        let scale = (gamma * fr.t).exp();
        Ok(der.d2.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs())) * scale)
    };
    let hessian_bounded = growth_check("hessian_u_tilde", hess(window.0)?, hess(window.1)?, cfg.growth_factor);

    let metric_values: Vec<f64> = recs.iter().map(|d| d.metric_deviation).collect();
    let metric = limit_to_zero("metric_deviation", &metric_values, cfg.metric_tol)?;

    // e^{2t/n} e^{2f(u)} g_11 / (−ũ)^{2/γ̃} at the last frame, averaged over the grid.
    let der = config.domain.differentiate(&last.u)?;
    let grow = (gamma * last.t).exp();
    let n = p.n() as f64;
    let mut acc = 0.0;
    for (k, &u) in last.u.iter().enumerate() {
        let f = config.scale_factor.f(u)?;
        let (s, _) = config.domain.sigma(u, config.domain.coords(k)[0]);
        let g11 = s - der.d1[0][k] * der.d1[0][k];
        let log_ratio = 2.0 * last.t / n + 2.0 * f - 2.0 / gt * (-u * grow).ln();
        acc += log_ratio.exp() * g11;
    }
    let measured = acc / last.u.len() as f64;
    let predicted = p.metric_limit_constant();
    let alternative = p.metric_limit_constant_alt();
    let rel_deviation = (measured - predicted).abs() / predicted;
    let metric_constant = MetricConstantCheck {
        measured,
        predicted,
        alternative,
        rel_deviation,
        alternative_rel_deviation: (measured - alternative).abs() / alternative,
        tolerance: cfg.metric_constant_tol,
        pass: rel_deviation <= cfg.metric_constant_tol,
    };

    let umb = series(traj, |d| d.umbilicity_ratio_max);
    let umbilicity = rate_outcome("umbilicity_ratio", &umb, window, 2.0 * gamma)?;

    let breve_rate = p.breve_umbilicity_rate();
    let breve_umbilicity = if breve_rate > 0.0 {
        let raw = series(traj, |d| d.umbilicity_breve_scaled_max * (-breve_rate * d.t).exp());
        Some(rate_outcome("umbilicity_breve", &raw, window, breve_rate)?)
    } else {
        None
    };

    let speed = check_speed_limit(traj, cfg.speed_tol)?;

    Ok(LimitTheoremReport {
        window,
        u_tilde_c1,
        u_tilde_c2,
        u_tilde_drift,
        grad_rate,
        a_bounded,
        hessian_bounded,
        metric,
        metric_constant,
        umbilicity,
        breve_umbilicity,
        speed,
    })
}

/// `F e^{−γt}` against `−1/(γ ũ)` pointwise at the last frame.
fn check_speed_limit(traj: &FlowTrajectory, tol: f64) -> Result<LimitVerdict> {
    let config = &traj.config;
    let gamma = config.params().gamma();
    let last = traj.last_frame();
    let state = GraphState {
        t: last.t,
        u: last.u.clone(),
    };
    let bundle = curvature_bundle(&state, &config.scale_factor, &config.domain)?;
    let grow = (gamma * last.t).exp();
    let mut worst: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    let mut limit_sum = 0.0;
    let mut pred_sum = 0.0;
    for (f, u) in bundle.speed.iter().zip(&last.u) {
        let measured = f / grow;
        let predicted = -1.0 / (gamma * u * grow);
        worst = worst.max((measured - predicted).abs() / predicted.abs());
        worst_abs = worst_abs.max((measured - predicted).abs());
        limit_sum += measured;
        pred_sum += predicted;
    }
    let count = last.u.len() as f64;
    Ok(LimitVerdict {
        quantity: "speed_scaled".into(),
        limit: limit_sum / count,
        predicted: pred_sum / count,
        abs_deviation: worst_abs,
        rel_deviation: worst,
        monotone_tail: true,
        tolerance: tol,
        pass: worst <= tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeFunctionLimit {
    pub verdict: LimitVerdict,
    pub rate: RateOutcome,
}

/// `max |f'(u) u − 1/γ̃| → 0`, decaying like `e^{−2γt}`.
pub fn check_f_u_limit(traj: &FlowTrajectory, cfg: &AnalysisConfig) -> Result<TimeFunctionLimit> {
    let window = window_of(traj, cfg)?;
    let gamma = traj.config.params().gamma();
    let values: Vec<f64> = traj.diagnostics.iter().map(|d| d.fu_residual_max).collect();
    let mut verdict = limit_to_zero("fu_residual", &values, f64::INFINITY)?;
    let s = series(traj, |d| d.fu_residual_max);
    let rate = rate_outcome("fu_residual", &s, window, 2.0 * gamma)?;
    verdict.predicted = 0.0;
    verdict.pass = verdict.limit.is_finite()
        && (verdict.monotone_tail || verdict.abs_deviation <= ZERO_FLOOR)
        && rate.passes(cfg.fu_rate_tol);
    verdict.tolerance = cfg.fu_rate_tol;
    Ok(TimeFunctionLimit { verdict, rate })
}

/// A checked statement as stored in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub name: String,
    pub predicted: f64,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

/// Names of every claim `evaluate_claims` can produce, in report order.
pub const CLAIM_NAMES: [&str; 11] = [
    "u_tilde_bounds",
    "u_tilde_convergence",
    "grad_u_rate",
    "a_norm_bounded",
    "hessian_u_tilde_bounded",
    "metric_limit",
    "metric_constant",
    "umbilicity_rate",
    "breve_umbilicity_rate",
    "speed_limit",
    "fu_limit",
];

fn rate_claim(name: &str, outcome: &RateOutcome, predicted: f64, tol: f64) -> Claim {
    match outcome {
        RateOutcome::Fitted(f) => Claim {
            name: name.into(),
            predicted,
            measured: f.rate,
            tolerance: tol,
            pass: outcome.passes(tol),
            note: format!("R² = {:.6}, window [{}, {}]", f.r_squared, f.t_lo, f.t_hi),
        },
        RateOutcome::IdenticallyZero => Claim {
            name: name.into(),
            predicted,
            measured: 0.0,
            tolerance: tol,
            pass: true,
            note: "identically zero".into(),
        },
    }
}

/// Evaluates the named claims (all of them when `selection` is `None`).
/// Claims that do not apply to the run's parameters are skipped.
pub fn evaluate_claims(
    traj: &FlowTrajectory,
    cfg: &AnalysisConfig,
    selection: Option<&[String]>,
) -> Result<Vec<Claim>> {
    if let Some(sel) = selection {
        if let Some(bad) = sel.iter().find(|s| !CLAIM_NAMES.contains(&s.as_str())) {
            return Err(Error::Config(format!("unknown claim '{bad}'")));
        }
        if sel.is_empty() {
            return Ok(Vec::new());
        }
    }
    let rep = check_limit_theorem(traj, cfg)?;
    let fu = check_f_u_limit(traj, cfg)?;
    let p = traj.config.params();
    let gamma = p.gamma();
    let mut out = Vec::new();
    for name in CLAIM_NAMES {
        if selection.is_some_and(|sel| !sel.iter().any(|s| s == name)) {
            continue;
        }
        let claim = match name {
            "u_tilde_bounds" => Claim {
                name: name.into(),
                predicted: 0.0,
                measured: rep.u_tilde_c2,
                tolerance: 0.0,
                pass: rep.u_tilde_c2 > 0.0 && rep.u_tilde_c1.is_finite(),
                note: format!("−{:.6} ≤ ũ ≤ −{:.6}", rep.u_tilde_c1, rep.u_tilde_c2),
            },
            "u_tilde_convergence" => Claim {
                name: name.into(),
                predicted: 0.0,
                measured: rep.u_tilde_drift,
                tolerance: cfg.drift_tol,
                pass: rep.u_tilde_drift <= cfg.drift_tol,
                note: "sup-norm change of ũ per unit time at the end of the run".into(),
            },
            "grad_u_rate" => rate_claim(name, &rep.grad_rate, gamma, cfg.grad_rate_tol),
            "a_norm_bounded" => Claim {
                name: name.into(),
                predicted: 1.0,
                measured: rep.a_bounded.ratio,
                tolerance: cfg.growth_factor,
                pass: rep.a_bounded.pass,
                note: "last/first of max ‖A‖e^{γt} over the window".into(),
            },
            "hessian_u_tilde_bounded" => Claim {
                name: name.into(),
                predicted: 1.0,
                measured: rep.hessian_bounded.ratio,
                tolerance: cfg.growth_factor,
                pass: rep.hessian_bounded.pass,
                note: "last/first of max |D²ũ| over the window".into(),
            },
            "metric_limit" => Claim {
                name: name.into(),
                predicted: 0.0,
                measured: rep.metric.limit,
                tolerance: cfg.metric_tol,
                pass: rep.metric.pass,
                note: format!("monotone tail: {}", rep.metric.monotone_tail),
            },
            "metric_constant" => Claim {
                name: name.into(),
                predicted: rep.metric_constant.predicted,
                measured: rep.metric_constant.measured,
                tolerance: cfg.metric_constant_tol,
                pass: rep.metric_constant.pass,
                note: format!(
                    "(γ̃m)^(1/γ̃) = {:.9} deviates by {:.3e} relative",
                    rep.metric_constant.alternative, rep.metric_constant.alternative_rel_deviation
                ),
            },
            "umbilicity_rate" => rate_claim(name, &rep.umbilicity, 2.0 * gamma, cfg.umbilicity_rate_tol),
            "breve_umbilicity_rate" => match &rep.breve_umbilicity {
                Some(o) => rate_claim(name, o, p.breve_umbilicity_rate(), cfg.breve_rate_tol),
                None => continue,
            },
            "speed_limit" => Claim {
                name: name.into(),
                predicted: rep.speed.predicted,
                measured: rep.speed.limit,
                tolerance: cfg.speed_tol,
                pass: rep.speed.pass,
                note: format!("max relative pointwise deviation {:.3e}", rep.speed.rel_deviation),
            },
            "fu_limit" => Claim {
                name: name.into(),
                predicted: 2.0 * gamma,
                measured: fu.rate.rate(),
                tolerance: cfg.fu_rate_tol,
                pass: fu.verdict.pass,
                note: match fu.rate {
                    RateOutcome::IdenticallyZero => "identically zero".into(),
                    RateOutcome::Fitted(_) => format!("final residual {:.3e}", fu.verdict.limit),
                },
            },
            _ => unreachable!(),
        };
        out.push(claim);
    }
    Ok(out)
}

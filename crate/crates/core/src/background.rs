//! Conformal scale factors `f(τ)` on `(a, 0)` and the certifier for the ARW growth
//! conditions near the singularity `τ → 0⁻`.
//!
//! Every factor is also exposed through `w(τ) = e^{γ̃ f(τ)}`, which is smooth and
//! vanishes linearly at the singularity. Quantities that cancel badly in terms of
//! `f` (the rates of approach to the limits) are evaluated through `w`.

use serde::{Deserialize, Serialize};

use crate::stats::{fit_line, max_abs};
use crate::{Error, Result};

/// Dimension `n`, equation-of-state exponent `ω` and mass `m`, with the derived
/// exponents `γ̃ = (n + ω − 2)/2` and `γ = γ̃/n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ArwParams {
    n: usize,
    omega: f64,
    m: f64,
    gamma_tilde: f64,
    gamma: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    n: usize,
    omega: f64,
    m: f64,
}

impl TryFrom<RawParams> for ArwParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        ArwParams::new(raw.n, raw.omega, raw.m)
    }
}

impl From<ArwParams> for RawParams {
    fn from(p: ArwParams) -> Self {
        RawParams {
            n: p.n,
            omega: p.omega,
            m: p.m,
        }
    }
}

impl ArwParams {
    pub fn new(n: usize, omega: f64, m: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParams("dimension n must be at least 1".into()));
        }
        if !omega.is_finite() || !m.is_finite() {
            return Err(Error::InvalidParams("ω and m must be finite".into()));
        }
        let excess = n as f64 + omega - 2.0;
        if excess <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "n + ω − 2 = {excess} must be positive"
            )));
        }
        if m <= 0.0 {
            return Err(Error::InvalidParams(format!("mass m = {m} must be positive")));
        }
        let gamma_tilde = excess / 2.0;
        Ok(Self {
            n,
            omega,
            m,
            gamma_tilde,
            gamma: gamma_tilde / n as f64,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn gamma_tilde(&self) -> f64 {
        self.gamma_tilde
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Limit constant of the rescaled induced metric, `(γ̃√m)^{2/γ̃}`.
    pub fn metric_limit_constant(&self) -> f64 {
        (self.gamma_tilde * self.m.sqrt()).powf(2.0 / self.gamma_tilde)
    }

    /// The alternative constant `(γ̃ m)^{1/γ̃}`; coincides with the above only for γ̃ = 1.
    pub fn metric_limit_constant_alt(&self) -> f64 {
        (self.gamma_tilde * self.m).powf(1.0 / self.gamma_tilde)
    }

    /// Decay rate of the trace-free second fundamental form in the physical metric,
    /// `(n + ω − 4)/(2n)`.
    pub fn breve_umbilicity_rate(&self) -> f64 {
        (self.n as f64 + self.omega - 4.0) / (2.0 * self.n as f64)
    }
}

/// `f` and its first three derivatives at one conformal time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FDerivs {
    pub f: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

/// `b(τ) = exp(−1/τ²)` and its first three derivatives. Vanishes to all orders at 0.
pub fn bump(tau: f64) -> [f64; 4] {
    let inv2 = 1.0 / (tau * tau);
    if !inv2.is_finite() || inv2 > 700.0 {
        return [0.0; 4];
    }
    let b = (-inv2).exp();
    let i = 1.0 / tau;
    let i3 = i * i * i;
    let i4 = i3 * i;
    let i5 = i4 * i;
    let i6 = i5 * i;
    let i7 = i6 * i;
    let i9 = i7 * i * i;
    [
        b,
        2.0 * i3 * b,
        (4.0 * i6 - 6.0 * i4) * b,
        (8.0 * i9 - 36.0 * i7 + 24.0 * i5) * b,
    ]
}

/// Dense output of a Friedmann solution in the variable `w = e^{γ̃ f}`, which obeys
/// `w' = −γ̃ √(m − k² w²)` with `k² = R̄/(n(n−1))` and vanishes at `τ = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeTable {
    pub k2: f64,
    /// Ascending node times, the last one is 0.
    pub tau: Vec<f64>,
    pub w: Vec<f64>,
}

impl OdeTable {
    fn slope(&self, params: &ArwParams, w: f64) -> f64 {
        -params.gamma_tilde * (params.m - self.k2 * w * w).max(0.0).sqrt()
    }

    /// Cubic Hermite interpolation of `w` with node slopes taken from the ODE.
    fn w_at(&self, params: &ArwParams, tau: f64) -> Result<f64> {
        let nodes = &self.tau;
        let last = nodes.len() - 1;
        if !(tau >= nodes[0] && tau <= nodes[last]) {
            return Err(Error::OutOfDomain {
                tau,
                start: nodes[0],
            });
        }
        let j = match nodes.binary_search_by(|x| x.partial_cmp(&tau).unwrap()) {
            Ok(j) => return Ok(self.w[j]),
            Err(j) => j,
        };
        let (t0, t1) = (nodes[j - 1], nodes[j]);
        let (w0, w1) = (self.w[j - 1], self.w[j]);
        let (d0, d1) = (self.slope(params, w0), self.slope(params, w1));
        let h = t1 - t0;
        let s = (tau - t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        Ok((2.0 * s3 - 3.0 * s2 + 1.0) * w0
            + (s3 - 2.0 * s2 + s) * h * d0
            + (-2.0 * s3 + 3.0 * s2) * w1
            + (s3 - s2) * h * d1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleFactorKind {
    Canonical,
    Perturbed,
    OdeDerived,
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    Canonical,
    Perturbed { amplitude: f64 },
    OdeDerived { table: OdeTable },
}

/// A conformal scale factor on `(start, 0)`, normalised so the singularity sits at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScaleFactor", into = "RawScaleFactor")]
pub struct ScaleFactor {
    params: ArwParams,
    start: f64,
    repr: Repr,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawScaleFactor {
    Canonical {
        params: ArwParams,
        start: f64,
    },
    Perturbed {
        params: ArwParams,
        start: f64,
        amplitude: f64,
    },
    OdeDerived {
        params: ArwParams,
        table: OdeTable,
    },
}

impl TryFrom<RawScaleFactor> for ScaleFactor {
    type Error = Error;

    fn try_from(raw: RawScaleFactor) -> Result<Self> {
        match raw {
            RawScaleFactor::Canonical { params, start } => make_canonical(params, start),
            RawScaleFactor::Perturbed {
                params,
                start,
                amplitude,
            } => make_perturbed(&make_canonical(params, start)?, amplitude),
            RawScaleFactor::OdeDerived { params, table } => {
                ScaleFactor::from_ode_table(params, table)
            }
        }
    }
}

impl From<ScaleFactor> for RawScaleFactor {
    fn from(sf: ScaleFactor) -> Self {
        let (params, start) = (sf.params, sf.start);
        match sf.repr {
            Repr::Canonical => RawScaleFactor::Canonical { params, start },
            Repr::Perturbed { amplitude } => RawScaleFactor::Perturbed {
                params,
                start,
                amplitude,
            },
            Repr::OdeDerived { table } => RawScaleFactor::OdeDerived { params, table },
        }
    }
}

/// The exact reference family `f(τ) = γ̃⁻¹ ln(−γ̃√m τ)`, for which
/// `|f'|² e^{2γ̃f} ≡ m` and `f'' + γ̃|f'|² ≡ 0`.
pub fn make_canonical(params: ArwParams, a: f64) -> Result<ScaleFactor> {
    if !(a < 0.0) || !a.is_finite() {
        return Err(Error::InvalidParams(format!(
            "left endpoint a = {a} must be finite and negative"
        )));
    }
    Ok(ScaleFactor {
        params,
        start: a,
        repr: Repr::Canonical,
    })
}

/// Adds `amplitude · exp(−1/τ²)` to a canonical factor, rejecting amplitudes that
/// break `−f' > 0` on a dense sample of the domain.
pub fn make_perturbed(base: &ScaleFactor, amplitude: f64) -> Result<ScaleFactor> {
    if base.repr != Repr::Canonical {
        return Err(Error::InvalidParams(
            "perturbations apply to canonical factors only".into(),
        ));
    }
    if !amplitude.is_finite() {
        return Err(Error::InvalidParams("amplitude must be finite".into()));
    }
    let sf = ScaleFactor {
        params: base.params,
        start: base.start,
        repr: Repr::Perturbed { amplitude },
    };
    for tau in sf.sample_taus() {
        let d = sf.eval(tau)?;
        if !(-d.d1 > 0.0) {
            return Err(Error::NotMonotone {
                tau,
                value: -d.d1,
            });
        }
    }
    Ok(sf)
}

impl ScaleFactor {
    pub(crate) fn from_ode_table(params: ArwParams, table: OdeTable) -> Result<Self> {
        let len = table.tau.len();
        if len < 2 || table.w.len() != len {
            return Err(Error::InvalidParams("ODE table needs at least two nodes".into()));
        }
        if table.tau.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(Error::InvalidParams("ODE table times must increase".into()));
        }
        if table.tau[len - 1] != 0.0 || table.w[len - 1] != 0.0 {
            return Err(Error::InvalidParams(
                "ODE table must end at the singularity τ = 0, w = 0".into(),
            ));
        }
        if table.w[..len - 1].iter().any(|w| !(*w > 0.0)) || !(table.k2 >= 0.0) {
            return Err(Error::InvalidParams("ODE table values must be positive".into()));
        }
        Ok(Self {
            params,
            start: table.tau[0],
            repr: Repr::OdeDerived { table },
        })
    }

    pub fn params(&self) -> &ArwParams {
        &self.params
    }

    pub fn kind(&self) -> ScaleFactorKind {
        match self.repr {
            Repr::Canonical => ScaleFactorKind::Canonical,
            Repr::Perturbed { .. } => ScaleFactorKind::Perturbed,
            Repr::OdeDerived { .. } => ScaleFactorKind::OdeDerived,
        }
    }

    /// Left end `a` of the open domain `(a, 0)`.
    pub fn start(&self) -> f64 {
        self.start
    }

    /// Limit of `f'' + γ̃|f'|²` when it is known in closed form.
    pub fn predicted_phi_limit(&self) -> f64 {
        match &self.repr {
            Repr::OdeDerived { table } => -self.params.gamma_tilde * table.k2,
            _ => 0.0,
        }
    }

    fn check_domain(&self, tau: f64) -> Result<()> {
        // Tabulated factors include their initial time.
        let closed = matches!(self.repr, Repr::OdeDerived { .. }) && tau == self.start;
        if (tau > self.start || closed) && tau < 0.0 {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                tau,
                start: self.start,
            })
        }
    }

    fn sample_taus(&self) -> Vec<f64> {
        let mut out: Vec<f64> = (1..400)
            .map(|i| self.start * (1.0 - i as f64 / 400.0))
            .collect();
        let mut tau = self.start * 0.5;
        while tau < -1e-8 {
            out.push(tau);
            tau *= 0.8;
        }
        out
    }

    /// `f, f', f'', f'''` at `tau`.
    pub fn eval(&self, tau: f64) -> Result<FDerivs> {
        self.check_domain(tau)?;
        let gt = self.params.gamma_tilde;
        let out = match &self.repr {
            Repr::Canonical => canonical(gt, self.params.m, tau),
            Repr::Perturbed { amplitude } => {
                let c = canonical(gt, self.params.m, tau);
                let b = bump(tau);
                FDerivs {
                    f: c.f + amplitude * b[0],
                    d1: c.d1 + amplitude * b[1],
                    d2: c.d2 + amplitude * b[2],
                    d3: c.d3 + amplitude * b[3],
                }
            }
            Repr::OdeDerived { table } => {
                let w = table.w_at(&self.params, tau)?;
                let w1 = table.slope(&self.params, w);
                let lam = gt * gt * table.k2;
                let w2 = -lam * w;
                let w3 = -lam * w1;
                let d1 = w1 / (gt * w);
                let d2 = w2 / (gt * w) - gt * d1 * d1;
                let d3 = (w3 * w - w2 * w1) / (gt * w * w) - 2.0 * gt * d1 * d2;
                FDerivs {
                    f: w.ln() / gt,
                    d1,
                    d2,
                    d3,
                }
            }
        };
        if [out.f, out.d1, out.d2, out.d3].iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::NonFinite(format!("scale factor at τ = {tau}")))
        }
    }

    pub fn f(&self, tau: f64) -> Result<f64> {
        Ok(self.eval(tau)?.f)
    }

    /// `(w, w')` with `w = e^{γ̃ f}`.
    pub fn conformal(&self, tau: f64) -> Result<(f64, f64)> {
        self.check_domain(tau)?;
        let gt = self.params.gamma_tilde;
        let c = gt * self.params.m.sqrt();
        Ok(match &self.repr {
            Repr::Canonical => (-c * tau, -c),
            Repr::Perturbed { amplitude } => {
                let b = bump(tau);
                let w = (-c * tau) * (gt * amplitude * b[0]).exp();
                let d1 = 1.0 / (gt * tau) + amplitude * b[1];
                (w, gt * d1 * w)
            }
            Repr::OdeDerived { table } => {
                let w = table.w_at(&self.params, tau)?;
                (w, table.slope(&self.params, w))
            }
        })
    }

    /// `γ̃ f'(τ) τ − 1`, which vanishes like `τ²` at the singularity.
    pub fn time_function_residual(&self, tau: f64) -> Result<f64> {
        self.check_domain(tau)?;
        let gt = self.params.gamma_tilde;
        Ok(match &self.repr {
            Repr::Canonical => 0.0,
            Repr::Perturbed { amplitude } => gt * amplitude * bump(tau)[1] * tau,
            Repr::OdeDerived { .. } => {
                let (w, w1) = self.conformal(tau)?;
                w1 * tau / w - 1.0
            }
        })
    }
}

fn canonical(gt: f64, m: f64, tau: f64) -> FDerivs {
    let c = gt * m.sqrt();
    FDerivs {
        f: (-c * tau).ln() / gt,
        d1: 1.0 / (gt * tau),
        d2: -1.0 / (gt * tau * tau),
        d3: 2.0 / (gt * tau * tau * tau),
    }
}

/// Geometric ladder `τ_k → 0⁻` on which the limits are estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauLadder {
    points: Vec<f64>,
}

impl TauLadder {
    /// `count` points with ratio `ratio`, ending at `end < 0`.
    pub fn geometric(end: f64, ratio: f64, count: usize) -> Result<Self> {
        if !(end < 0.0) || !(ratio > 0.0 && ratio < 1.0) || count < 8 {
            return Err(Error::InvalidParams(format!(
                "ladder needs end < 0, ratio in (0,1) and at least 8 points \
                 (got end = {end}, ratio = {ratio}, count = {count})"
            )));
        }
        let points = (0..count)
            .map(|k| end * ratio.powi(-((count - 1 - k) as i32)))
            .collect();
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }
}

impl Default for TauLadder {
    fn default() -> Self {
        Self::geometric(-1e-4, 0.5, 12).expect("default ladder is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCheck {
    /// `min −f'` over the ladder.
    pub c_lower: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitCheck {
    pub estimate: f64,
    /// Difference of the last two extrapolants.
    pub error_estimate: f64,
    pub predicted: f64,
    pub residual: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioCheck {
    pub order: u32,
    /// `max |D^k f| / |f'|^k` over the ladder.
    pub max_ratio: f64,
    pub tail_ratio: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCheck {
    /// `|residual|` on the ladder.
    pub residuals: Vec<f64>,
    /// Fitted power `p` of `|residual| ~ c|τ|^p`, when the residual is above roundoff.
    pub fitted_power: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArwCertificate {
    pub tol: f64,
    pub ladder: Vec<f64>,
    pub monotone: MonotoneCheck,
    pub mass_limit: LimitCheck,
    pub phi_limit: LimitCheck,
    pub ratio_bounds: Vec<RatioCheck>,
    /// `e^{γ̃f}/τ + γ̃√m → 0`.
    pub singularity_rate: RateCheck,
    /// `f' e^{γ̃f} + √m ~ cτ²`.
    pub mass_rate: RateCheck,
    /// `γ̃ f' τ − 1 ~ cτ²`.
    pub time_function_rate: RateCheck,
    pub all_pass: bool,
}

/// Richardson extrapolation for `q(τ) = L + cτ² + …` on consecutive ladder pairs.
/// Returns the last extrapolant and its distance to the previous one.
fn richardson(taus: &[f64], q: &[f64]) -> (f64, f64) {
    let ext: Vec<f64> = (1..q.len())
        .map(|k| {
            let r2 = (taus[k] / taus[k - 1]).powi(2);
            (q[k] - r2 * q[k - 1]) / (1.0 - r2)
        })
        .collect();
    let last = ext[ext.len() - 1];
    let prev = ext[ext.len() - 2];
    (last, (last - prev).abs())
}

/// Roundoff floor below which a residual counts as identically zero.
const RESIDUAL_FLOOR: f64 = 1e-13;

fn rate_check(taus: &[f64], residuals: Vec<f64>, scale: f64, tol: f64) -> RateCheck {
    let floor = RESIDUAL_FLOOR * scale.max(1.0);
    let (lx, ly): (Vec<f64>, Vec<f64>) = taus
        .iter()
        .zip(&residuals)
        .filter(|(_, r)| **r > floor)
        .map(|(t, r)| (t.abs().ln(), r.ln()))
        .unzip();
    let fitted_power = if lx.len() >= 3 {
        fit_line(&lx, &ly).map(|f| f.slope)
    } else {
        None
    };
    let last = *residuals.last().unwrap_or(&f64::NAN);
    let decaying = fitted_power.is_none_or(|p| p > 0.0);
    RateCheck {
        pass: last.is_finite() && last <= tol * scale.max(1.0) && decaying,
        residuals,
        fitted_power,
    }
}

/// Estimates the limits of the ARW conditions on a `τ`-ladder and reports a verdict
/// per condition at relative tolerance `tol`.
pub fn certify_arw(sf: &ScaleFactor, ladder: &TauLadder, tol: f64) -> Result<ArwCertificate> {
    let taus = ladder.points();
    if taus[0] <= sf.start() {
        return Err(Error::OutOfDomain {
            tau: taus[0],
            start: sf.start(),
        });
    }
    let p = sf.params();
    let gt = p.gamma_tilde();
    let sqrt_m = p.m().sqrt();

    let mut derivs = Vec::with_capacity(taus.len());
    let mut conf = Vec::with_capacity(taus.len());
    let mut tf = Vec::with_capacity(taus.len());
    for &tau in taus {
        derivs.push(sf.eval(tau)?);
        conf.push(sf.conformal(tau)?);
        tf.push(sf.time_function_residual(tau)?);
    }

    let c_lower = derivs.iter().map(|d| -d.d1).fold(f64::INFINITY, f64::min);
    let monotone = MonotoneCheck {
        c_lower,
        pass: c_lower > 0.0,
    };

    let mass: Vec<f64> = conf.iter().map(|(_, w1)| (w1 / gt).powi(2)).collect();
    let (estimate, error_estimate) = richardson(taus, &mass);
    let residual = (estimate - p.m()).abs();
    let mass_limit = LimitCheck {
        estimate,
        error_estimate,
        predicted: p.m(),
        residual,
        pass: residual <= tol * p.m() && error_estimate <= tol * p.m(),
    };

    let phi: Vec<f64> = derivs.iter().map(|d| d.d2 + gt * d.d1 * d.d1).collect();
    let (estimate, error_estimate) = richardson(taus, &phi);
    let predicted = sf.predicted_phi_limit();
    let residual = (estimate - predicted).abs();
    let scale = predicted.abs().max(1.0);
    let phi_limit = LimitCheck {
        estimate,
        error_estimate,
        predicted,
        residual,
        pass: residual <= tol * scale && error_estimate <= tol * scale,
    };

    let half = taus.len() / 2;
    let ratio_bounds = [2u32, 3]
        .iter()
        .map(|&order| {
            let ratios: Vec<f64> = derivs
                .iter()
                .map(|d| {
                    let dk = if order == 2 { d.d2 } else { d.d3 };
                    dk.abs() / d.d1.abs().powi(order as i32)
                })
                .collect();
            let head = max_abs(&ratios[..half]);
            let tail = max_abs(&ratios[half..]);
            RatioCheck {
                order,
                max_ratio: head.max(tail),
                tail_ratio: tail,
                pass: ratios.iter().all(|r| r.is_finite()) && tail <= 1.5 * head + tol,
            }
        })
        .collect::<Vec<_>>();

    let singular: Vec<f64> = taus
        .iter()
        .zip(&conf)
        .map(|(tau, (w, _))| (w / tau + gt * sqrt_m).abs())
        .collect();
    let singularity_rate = rate_check(taus, singular, gt * sqrt_m, tol);

    let mass_res: Vec<f64> = conf.iter().map(|(_, w1)| (w1 / gt + sqrt_m).abs()).collect();
    let mass_rate = rate_check(taus, mass_res, sqrt_m, tol);

    let time_function_rate = rate_check(taus, tf.iter().map(|r| r.abs()).collect(), 1.0, tol);

    let all_pass = monotone.pass
        && mass_limit.pass
        && phi_limit.pass
        && ratio_bounds.iter().all(|r| r.pass)
        && singularity_rate.pass
        && mass_rate.pass
        && time_function_rate.pass;

    let cert = ArwCertificate {
        tol,
        ladder: taus.to_vec(),
        monotone,
        mass_limit,
        phi_limit,
        ratio_bounds,
        singularity_rate,
        mass_rate,
        time_function_rate,
        all_pass,
    };
    for v in [
        cert.mass_limit.residual,
        cert.mass_limit.error_estimate,
        cert.phi_limit.residual,
        cert.phi_limit.error_estimate,
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite("certificate residual".into()));
        }
    }
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p222() -> ArwParams {
        ArwParams::new(2, 2.0, 1.0).unwrap()
    }

    #[test]
    fn params_derived_exponents() {
        let p = ArwParams::new(2, 3.0, 0.7).unwrap();
        assert_eq!(p.gamma_tilde(), 1.5);
        assert_eq!(p.gamma(), 0.75);
        assert!(ArwParams::new(1, 1.0, 1.0).is_err());
        assert!(ArwParams::new(2, 2.0, 0.0).is_err());
        assert!(ArwParams::new(0, 5.0, 1.0).is_err());
    }

    #[test]
    fn params_reject_unknown_keys_and_invalid_values() {
        let ok: ArwParams = serde_json::from_str(r#"{"n":2,"omega":2.0,"m":1.0}"#).unwrap();
        assert_eq!(ok, p222());
        assert!(serde_json::from_str::<ArwParams>(r#"{"n":2,"omega":2.0,"m":1.0,"x":1}"#).is_err());
        assert!(serde_json::from_str::<ArwParams>(r#"{"n":1,"omega":0.5,"m":1.0}"#).is_err());
    }

    #[test]
    fn canonical_hand_values() {
        let sf = make_canonical(p222(), -2.0).unwrap();
        let d = sf.eval(-1.0).unwrap();
        assert_eq!(d.f, 0.0);
        assert_eq!(d.d1, -1.0);
        assert_eq!(d.d2, -1.0);
        assert_eq!(d.d3, -2.0);
        let d = sf.eval(-0.5).unwrap();
        assert!((d.d1 * d.d1 * (2.0 * d.f).exp() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn canonical_identities_hold_everywhere() {
        for (n, omega, m) in [(1, 2.5, 0.3), (2, 2.0, 1.0), (2, 3.0, 2.0), (3, 4.0, 0.9)] {
            let p = ArwParams::new(n, omega, m).unwrap();
            let sf = make_canonical(p, -3.0).unwrap();
            let gt = p.gamma_tilde();
            for k in 1..60 {
                let tau = -3.0 * 0.8_f64.powi(k);
                let d = sf.eval(tau).unwrap();
                let mass = d.d1 * d.d1 * (2.0 * gt * d.f).exp();
                assert!((mass - m).abs() <= 1e-13 * m, "mass at {tau}");
                let phi = d.d2 + gt * d.d1 * d.d1;
                assert!(phi.abs() <= 1e-15 * d.d2.abs(), "phi at {tau}");
                assert_eq!(sf.time_function_residual(tau).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn eval_outside_domain_fails() {
        let sf = make_canonical(p222(), -1.0).unwrap();
        assert!(matches!(sf.eval(0.0), Err(Error::OutOfDomain { .. })));
        assert!(matches!(sf.eval(-1.0), Err(Error::OutOfDomain { .. })));
        assert!(sf.eval(-0.999).is_ok());
        assert!(make_canonical(p222(), 0.5).is_err());
    }

    #[test]
    fn bump_derivatives_match_finite_differences() {
        for tau in [-0.9, -0.6, -0.4] {
            let h = 1e-5;
            let b = bump(tau);
            let bp = bump(tau + h);
            let bm = bump(tau - h);
            for k in 0..3 {
                let fd = (bp[k] - bm[k]) / (2.0 * h);
                assert!((fd - b[k + 1]).abs() < 1e-6 * b[k + 1].abs().max(1e-3), "order {k} at {tau}");
            }
        }
        assert_eq!(bump(-1e-3), [0.0; 4]);
        assert_eq!(bump(-1e-200), [0.0; 4]);
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let base = make_canonical(p222(), -1.0).unwrap();
        let pert = make_perturbed(&base, 0.0).unwrap();
        let mut tau: f64 = -0.97;
        for _ in 0..20 {
            assert_eq!(base.eval(tau).unwrap(), pert.eval(tau).unwrap());
            tau *= 0.71;
        }
    }

    #[test]
    fn perturbation_bound_near_singularity() {
        let base = make_canonical(p222(), -1.0).unwrap();
        let pert = make_perturbed(&base, 0.1).unwrap();
        let diff = (pert.f(-0.05).unwrap() - base.f(-0.05).unwrap()).abs();
        assert!(diff <= 0.1 * (-400.0_f64).exp());
        assert!(diff < 1e-170);
    }

    #[test]
    fn perturbation_breaking_monotonicity_is_rejected() {
        let base = make_canonical(p222(), -1.0).unwrap();
        // −f' = 1/|τ| + 2A|τ|⁻³e^{−1/τ²} turns negative near τ = −1 for A ≪ −1.
        match make_perturbed(&base, -50.0) {
            Err(Error::NotMonotone { tau, value }) => {
                assert!(tau < 0.0 && value <= 0.0);
            }
            other => panic!("expected NotMonotone, got {other:?}"),
        }
    }

    #[test]
    fn default_ladder() {
        let l = TauLadder::default();
        assert_eq!(l.points().len(), 12);
        assert_eq!(*l.points().last().unwrap(), -1e-4);
        assert!((l.points()[0] + 0.2048).abs() < 1e-15);
        assert!(TauLadder::geometric(-1e-4, 0.5, 7).is_err());
        assert!(TauLadder::geometric(-1e-4, 1.0, 12).is_err());
    }

    #[test]
    fn canonical_certificate_all_pass() {
        let sf = make_canonical(p222(), -1.0).unwrap();
        let cert = certify_arw(&sf, &TauLadder::default(), 1e-8).unwrap();
        assert!(cert.all_pass, "{cert:#?}");
        assert!((cert.mass_limit.estimate - 1.0).abs() <= 1e-12);
        assert!(cert.phi_limit.estimate.abs() <= 1e-6);
        assert!(cert.time_function_rate.residuals.iter().all(|r| *r == 0.0));
        assert!(cert.time_function_rate.fitted_power.is_none());
        // |f''|/|f'|² = γ̃ and |f'''|/|f'|³ = 2γ̃² for the canonical family.
        assert!((cert.ratio_bounds[0].max_ratio - 1.0).abs() < 1e-12);
        assert!((cert.ratio_bounds[1].max_ratio - 2.0).abs() < 1e-12);
    }

    #[test]
    fn canonical_ratio_constants_general() {
        let p = ArwParams::new(2, 3.0, 1.3).unwrap();
        let sf = make_canonical(p, -1.0).unwrap();
        let cert = certify_arw(&sf, &TauLadder::default(), 1e-8).unwrap();
        assert!(cert.all_pass);
        assert!((cert.ratio_bounds[0].max_ratio - 1.5).abs() < 1e-12);
        assert!((cert.ratio_bounds[1].max_ratio - 4.5).abs() < 1e-12);
    }

    #[test]
    fn canonical_singularity_residual_non_increasing() {
        let sf = make_canonical(ArwParams::new(2, 3.0, 0.4).unwrap(), -1.0).unwrap();
        let cert = certify_arw(&sf, &TauLadder::default(), 1e-8).unwrap();
        let r = &cert.singularity_rate.residuals;
        for k in r.len() - 4..r.len() - 1 {
            assert!(r[k + 1] <= r[k] + 1e-15);
        }
    }

    #[test]
    fn perturbed_certificate_matches_base() {
        let base = make_canonical(p222(), -1.0).unwrap();
        let pert = make_perturbed(&base, 0.1).unwrap();
        let ladder = TauLadder::default();
        let a = certify_arw(&base, &ladder, 1e-8).unwrap();
        let b = certify_arw(&pert, &ladder, 1e-8).unwrap();
        assert!(b.all_pass);
        assert!((a.mass_limit.residual - b.mass_limit.residual).abs() < 1e-8);
    }

    #[test]
    fn ladder_outside_domain_errors() {
        let sf = make_canonical(p222(), -0.1).unwrap();
        assert!(matches!(
            certify_arw(&sf, &TauLadder::default(), 1e-6),
            Err(Error::OutOfDomain { .. })
        ));
    }

    #[test]
    fn scale_factor_serde_roundtrip() {
        let base = make_canonical(p222(), -1.0).unwrap();
        let pert = make_perturbed(&base, 0.1).unwrap();
        for sf in [base, pert] {
            let text = serde_json::to_string(&sf).unwrap();
            let back: ScaleFactor = serde_json::from_str(&text).unwrap();
            assert_eq!(back, sf);
        }
    }
}

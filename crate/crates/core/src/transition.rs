//! The rescaled flow `y(s)` with `s = −γ⁻¹e^{−γt}`, followed along Lagrangian
//! markers, and the one-sided limits that glue it to its mirror image across `s = 0`.
//!
//! Frame components are taken with respect to the past-directed normal `ν` and the
//! tangent vectors `x_i = ∂y/∂ξ^i` of the marker parametrisation. Tensor indices
//! use `[i][j]`; entries beyond `n` are absent.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::background::ScaleFactor;
use crate::flow::{Frame, FlowTrajectory};
use crate::geometry::{curvature_bundle, CurvatureBundle, GraphState, SpatialDomain};
use crate::integrator::{integrate, StepControl};
use crate::stats::fit_line;
use crate::{Error, Result};

type Mat = [[f64; 2]; 2];
type Tensor3 = [[[f64; 2]; 2]; 2];

/// Step in `t` used for the Gateaux derivative `∂_t F = DF[u]·(v/F)`.
const GATEAUX_EPS: f64 = 5e-3;

#[cfg(feature = "parallel")]
fn par_collect<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_collect<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    F: Fn(usize) -> Result<T>,
{
    (0..n).map(f).collect()
}

fn inverse(j: &Mat, n: usize) -> Result<Mat> {
    if n == 1 {
        if j[0][0] == 0.0 {
            return Err(Error::NonFinite("singular marker Jacobian".into()));
        }
        return Ok([[1.0 / j[0][0], 0.0], [0.0, 1.0]]);
    }
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    if !(det.abs() > 0.0) || !det.is_finite() {
        return Err(Error::NonFinite("singular marker Jacobian".into()));
    }
    Ok([[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]])
}

/// Marker velocity `V^a = ṽ σ^{ab}u_b / F` on the grid.
fn velocity_field(bundle: &CurvatureBundle) -> Result<[Vec<f64>; 2]> {
    if let Some(index) = bundle.barrier_violation {
        return Err(Error::BarrierViolated {
            index,
            value: bundle.speed[index],
        });
    }
    let len = bundle.len();
    let mut out = [vec![0.0; len], vec![0.0; len]];
    for k in 0..len {
        let scale = bundle.v_tilde[k] / (bundle.sigma[k] * bundle.speed[k]);
        for (a, comp) in out.iter_mut().enumerate().take(bundle.n) {
            comp[k] = scale * bundle.du[k][a];
        }
    }
    Ok(out)
}

struct VelocitySnapshots<'a> {
    domain: &'a SpatialDomain,
    times: Vec<f64>,
    fields: Vec<[Vec<f64>; 2]>,
}

impl VelocitySnapshots<'_> {
    /// First snapshot index and cubic Lagrange weights in time.
    fn window(&self, t: f64) -> Result<(usize, [f64; 4])> {
        let count = self.times.len();
        let (t0, t1) = (self.times[0], self.times[count - 1]);
        let slack = 1e-12 * (1.0 + t1.abs());
        if !(t >= t0 - slack && t <= t1 + slack) {
            return Err(Error::OutOfRange(format!("t = {t} outside snapshots [{t0}, {t1}]")));
        }
        let k = self.times.partition_point(|&tk| tk <= t).saturating_sub(1);
        let start = k.saturating_sub(1).min(count - 4);
        let nodes = &self.times[start..start + 4];
        let mut w = [0.0; 4];
        for (a, wa) in w.iter_mut().enumerate() {
            let mut p = 1.0;
            for (b, tb) in nodes.iter().enumerate() {
                if a != b {
                    p *= (t - tb) / (nodes[a] - tb);
                }
            }
            *wa = p;
        }
        Ok((start, w))
    }

    /// `V^a` and `∂_b V^a` at `(t, x)`.
    fn eval(&self, t: f64, x: [f64; 2]) -> Result<([f64; 2], Mat)> {
        let (start, w) = self.window(t)?;
        let mut v = [0.0; 2];
        let mut dv = [[0.0; 2]; 2];
        for (j, wj) in w.iter().enumerate() {
            for a in 0..self.domain.n() {
                let (val, grad) = self.domain.interpolate_with_gradient(&self.fields[start + j][a], x);
                v[a] += wj * val;
                dv[a][0] += wj * grad[0];
                dv[a][1] += wj * grad[1];
            }
        }
        Ok((v, dv))
    }
}

/// Trajectory of one marker, sampled at the record times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerTrack {
    /// Grid index of the seed.
    pub seed: usize,
    pub xi: [f64; 2],
    /// Unwrapped positions; see [`LagrangianMarkers::wrapped`].
    pub positions: Vec<[f64; 2]>,
    /// `jacobians[k][a][i] = ∂x^a/∂ξ^i`.
    pub jacobians: Vec<Mat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangianMarkers {
    pub n: usize,
    pub times: Vec<f64>,
    pub tracks: Vec<MarkerTrack>,
}

impl LagrangianMarkers {
    /// Position folded back into the periodic cell `[0, 2π)ⁿ`.
    pub fn wrapped(p: [f64; 2]) -> [f64; 2] {
        p.map(|c| c.rem_euclid(2.0 * PI))
    }

    /// Distance travelled by marker `m` between records `from` and `to`.
    pub fn displacement(&self, m: usize, from: usize, to: usize) -> f64 {
        let tr = &self.tracks[m];
        let (a, b) = (tr.positions[from], tr.positions[to]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    /// Largest displacement from the seed over all markers and records.
    pub fn max_displacement(&self) -> f64 {
        (0..self.tracks.len())
            .flat_map(|m| (0..self.times.len()).map(move |k| (m, k)))
            .map(|(m, k)| self.displacement(m, 0, k))
            .fold(0.0, f64::max)
    }

    /// Record index closest to time `t`.
    pub fn record_near(&self, t: f64) -> usize {
        (0..self.times.len())
            .min_by(|&a, &b| (self.times[a] - t).abs().total_cmp(&(self.times[b] - t).abs()))
            .unwrap_or(0)
    }
}

fn check_trajectory(traj: &FlowTrajectory) -> Result<()> {
    if traj.termination.is_error() {
        return Err(Error::InvalidParams(format!(
            "trajectory ended with an error ({}); markers need a healthy run",
            traj.termination.label()
        )));
    }
    if traj.config.record_every > 0.1 + 1e-12 {
        return Err(Error::InvalidParams(format!(
            "record_every = {} is too coarse for marker advection (need ≤ 0.1)",
            traj.config.record_every
        )));
    }
    if traj.frames.len() < 4 {
        return Err(Error::MissingData(format!(
            "{} frames recorded, at least 4 needed",
            traj.frames.len()
        )));
    }
    Ok(())
}

/// Integrates `dx/dt = V(t, x)` and `dJ/dt = DV·J` from each seed through all
/// recorded frames, with velocities interpolated cubically in space and time.
pub fn advect_markers(traj: &FlowTrajectory, seeds: &[usize]) -> Result<LagrangianMarkers> {
    check_trajectory(traj)?;
    let cfg = &traj.config;
    let domain = &cfg.domain;
    if let Some(bad) = seeds.iter().find(|&&s| s >= domain.len()) {
        return Err(Error::InvalidParams(format!(
            "marker seed {bad} outside the grid of {} points",
            domain.len()
        )));
    }
    let fields = par_collect(traj.frames.len(), |k| {
        let fr = &traj.frames[k];
        let state = GraphState { t: fr.t, u: fr.u.clone() };
        velocity_field(&curvature_bundle(&state, &cfg.scale_factor, domain)?)
    })?;
    let snaps = VelocitySnapshots {
        domain,
        times: traj.frames.iter().map(|f| f.t).collect(),
        fields,
    };
    let ctl = StepControl::new(1e-10, 1e-12);
    let tracks = par_collect(seeds.len(), |m| {
        let xi = domain.coords(seeds[m]);
        let mut y = vec![xi[0], xi[1], 1.0, 0.0, 0.0, 1.0];
        let mut rhs = |t: f64, y: &[f64]| -> Result<Vec<f64>> {
            let (v, dv) = snaps.eval(t, [y[0], y[1]])?;
            let j = [[y[2], y[3]], [y[4], y[5]]];
            let mut out = vec![v[0], v[1], 0.0, 0.0, 0.0, 0.0];
            for a in 0..2 {
                for i in 0..2 {
                    out[2 + 2 * a + i] = dv[a][0] * j[0][i] + dv[a][1] * j[1][i];
                }
            }
            Ok(out)
        };
        let mut positions = vec![xi];
        let mut jacobians = vec![[[1.0, 0.0], [0.0, 1.0]]];
        for w in snaps.times.windows(2) {
            let nodes = integrate(&mut rhs, w[0], &y, w[1], w[1] - w[0], &ctl)?;
            y = nodes.last().map(|(_, y)| y.clone()).unwrap_or(y);
            if y.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite(format!("marker {} at t = {}", seeds[m], w[1])));
            }
            positions.push([y[0], y[1]]);
            jacobians.push([[y[2], y[3]], [y[4], y[5]]]);
        }
        Ok(MarkerTrack {
            seed: seeds[m],
            xi,
            positions,
            jacobians,
        })
    })?;
    Ok(LagrangianMarkers {
        n: domain.n(),
        times: snaps.times,
        tracks,
    })
}

/// Grid fields of one record needed by the frame components.
struct RecordFields {
    bundle: CurvatureBundle,
    velocity: [Vec<f64>; 2],
    /// `∂_a F`.
    df: [Vec<f64>; 2],
    /// Eulerian `∂_t F`.
    dt_f: Vec<f64>,
    /// `hc[k][a][b][c] = h_ab;c`.
    hc: Vec<Tensor3>,
}

fn record_fields(frame: &Frame, sf: &ScaleFactor, domain: &SpatialDomain) -> Result<RecordFields> {
    let n = domain.n();
    let len = domain.len();
    let state = GraphState {
        t: frame.t,
        u: frame.u.clone(),
    };
    let bundle = curvature_bundle(&state, sf, domain)?;
    let velocity = velocity_field(&bundle)?;
    let ut = bundle.normal_speed()?;

    let speed_at = |e: f64| -> Result<Vec<f64>> {
        let u: Vec<f64> = frame.u.iter().zip(&ut).map(|(u, d)| u + e * d).collect();
        Ok(curvature_bundle(&GraphState { t: frame.t, u }, sf, domain)?.speed)
    };
    let central = |e: f64| -> Result<Vec<f64>> {
        let (p, m) = (speed_at(e)?, speed_at(-e)?);
        Ok(p.iter().zip(&m).map(|(p, m)| (p - m) / (2.0 * e)).collect())
    };
    // Two Richardson levels over ε, 2ε, 4ε remove the ε² and ε⁴ terms.
    let d1 = central(GATEAUX_EPS)?;
    let d2 = central(2.0 * GATEAUX_EPS)?;
    let d4 = central(4.0 * GATEAUX_EPS)?;
    let dt_f: Vec<f64> = (0..len)
        .map(|k| (64.0 * d1[k] - 20.0 * d2[k] + d4[k]) / 45.0)
        .collect();

    let mut df = [vec![0.0; len], vec![0.0; len]];
    for (a, slot) in df.iter_mut().enumerate().take(n) {
        *slot = domain.d1(&bundle.speed, a);
    }

    // dh[a][b][c] = ∂_c h_ab over the grid.
    let mut dh: Vec<Vec<Vec<Vec<f64>>>> = vec![vec![vec![Vec::new(); n]; n]; n];
    for a in 0..n {
        for b in a..n {
            let comp: Vec<f64> = bundle.h.iter().map(|m| m[a][b]).collect();
            for c in 0..n {
                let d = domain.d1(&comp, c);
                dh[b][a][c] = d.clone();
                dh[a][b][c] = d;
            }
        }
    }
    let mut hc = vec![[[[0.0; 2]; 2]; 2]; len];
    for (k, slot) in hc.iter_mut().enumerate() {
        let gam = &bundle.christoffel[k];
        let h = &bundle.h[k];
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let mut val = dh[a][b][c][k];
                    for m in 0..n {
                        val -= gam[m][c][a] * h[m][b] + gam[m][c][b] * h[a][m];
                    }
                    slot[a][b][c] = val;
                }
            }
        }
    }
    Ok(RecordFields {
        bundle,
        velocity,
        df,
        dt_f,
        hc,
    })
}

/// Analytic frame quantities of one marker at one record, in the `ξ` frame.
#[derive(Debug, Clone, Copy, Default)]
struct PointSample {
    u: f64,
    y0_prime: f64,
    yi_prime: [f64; 2],
    a1: [f64; 2],
    b1: Mat,
    h: Mat,
    h_mixed: Mat,
    a2: f64,
    b2: [f64; 2],
    /// `D_s ν = c^l x_l`.
    c: [f64; 2],
    hc: Tensor3,
}

fn sample_point(
    fields: &RecordFields,
    domain: &SpatialDomain,
    t: f64,
    gamma: f64,
    x: [f64; 2],
    jac: &Mat,
) -> Result<PointSample> {
    let n = domain.n();
    let b = &fields.bundle;
    let w = domain.interpolation_weights(x);
    let at = |get: &dyn Fn(usize) -> f64| -> f64 { w.iter().map(|&(k, wk)| wk * get(k)).sum() };

    let e = (gamma * t).exp();
    let vt = at(&|k| b.v_tilde[k]);
    let f = at(&|k| b.speed[k]);
    if !(f > 0.0) {
        return Err(Error::BarrierViolated { index: w[0].0, value: f });
    }
    let mut fa = [0.0; 2];
    let mut vel = [0.0; 2];
    let mut g_inv = [[0.0; 2]; 2];
    let mut h = [[0.0; 2]; 2];
    let mut hm = [[0.0; 2]; 2];
    let mut hc = [[[0.0; 2]; 2]; 2];
    for a in 0..n {
        fa[a] = at(&|k| fields.df[a][k]);
        vel[a] = at(&|k| fields.velocity[a][k]);
        for c in 0..n {
            g_inv[a][c] = at(&|k| b.g_inv[k][a][c]);
            h[a][c] = at(&|k| b.h[k][a][c]);
            hm[a][c] = at(&|k| b.h_mixed[k][a][c]);
            for d in 0..n {
                hc[a][c][d] = at(&|k| fields.hc[k][a][c][d]);
            }
        }
    }
    let dt_f = at(&|k| fields.dt_f[k]);

    let jinv = inverse(jac, n)?;
    let mut f_up = [0.0; 2];
    for a in 0..n {
        f_up[a] = (0..n).map(|c| g_inv[a][c] * fa[c]).sum();
    }
    let mut s = PointSample {
        y0_prime: e * vt / f,
        ..Default::default()
    };
    for a in 0..n {
        s.yi_prime[a] = e * vel[a];
    }
    let mut f_xi = [0.0; 2];
    let mut f_up_xi = [0.0; 2];
    for i in 0..n {
        f_xi[i] = (0..n).map(|a| fa[a] * jac[a][i]).sum();
        f_up_xi[i] = (0..n).map(|a| jinv[i][a] * f_up[a]).sum();
    }
    for i in 0..n {
        for j in 0..n {
            let mut hij = 0.0;
            let mut hmij = 0.0;
            for a in 0..n {
                for c in 0..n {
                    hij += jac[a][i] * jac[c][j] * h[a][c];
                    // h^j_i in the ξ frame: (J⁻¹)^j_c h^c_a J^a_i.
                    hmij += jinv[j][c] * hm[a][c] * jac[a][i];
                }
            }
            s.h[i][j] = hij;
            s.h_mixed[i][j] = hmij;
            for l in 0..n {
                let mut v = 0.0;
                for a in 0..n {
                    for c in 0..n {
                        for d in 0..n {
                            v += jac[a][i] * jac[c][j] * jac[d][l] * hc[a][c][d];
                        }
                    }
                }
                s.hc[i][j][l] = v;
            }
        }
    }
    let f2 = f * f;
    for i in 0..n {
        s.a1[i] = e * f_xi[i] / f2;
        s.c[i] = e * f_up_xi[i] / f2;
        s.b2[i] = -e * e * f_up_xi[i] / (f2 * f);
        for k in 0..n {
            s.b1[i][k] = -e * s.h_mixed[i][k] / f;
        }
    }
    let f_dot = dt_f + (0..n).map(|a| fa[a] * vel[a]).sum::<f64>();
    s.a2 = e * e * (f_dot / f2 - gamma / f);
    Ok(s)
}

/// What a component is expected to do as `s → 0⁻`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    Converges,
    Vanishes,
}

/// One entry of the component table: a frame component of `D_s^k y` or of a
/// spatial derivative of `y`, for every marker and record in `first..last`.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemSeries {
    pub name: &'static str,
    pub expect: Expectation,
    /// Number of `s` derivatives.
    pub s_order: usize,
    /// Normal (or `x⁰`) component as opposed to tangential (or spatial).
    pub normal: bool,
    /// Component labels, e.g. `[0][1]`.
    pub components: Vec<String>,
    pub first: usize,
    /// `values[marker][k − first][component]`.
    pub values: Vec<Vec<Vec<f64>>>,
}

impl ItemSeries {
    /// Sign relating the mirrored branch at `+|s|` to the original at `−|s|`.
    pub fn parity(&self) -> f64 {
        let k = self.s_order + usize::from(self.normal);
        if k.is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }

    pub fn len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSeries {
    pub n: usize,
    pub gamma: f64,
    pub t: Vec<f64>,
    /// Negative branch, strictly increasing towards 0.
    pub s: Vec<f64>,
    pub seeds: Vec<usize>,
    pub items: Vec<ItemSeries>,
}

/// Names of the table entries in output order.
pub const ITEM_NAMES: [&str; 16] = [
    "y0",
    "y0_prime",
    "yi_prime",
    "y_prime_i.normal",
    "y_prime_i.tangential",
    "y_ij.normal",
    "y_pp.normal",
    "y_pp.tangential",
    "y_ijk.normal",
    "y_ijk.tangential",
    "ds_y_ij.normal",
    "ds_y_ij.tangential",
    "y_pp_i.normal",
    "y_pp_i.tangential",
    "y_ppp.normal",
    "y_ppp.tangential",
];

fn labels(n: usize, rank: usize) -> Vec<String> {
    if rank == 0 {
        return vec![String::new()];
    }
    let mut out = Vec::new();
    for idx in 0..n.pow(rank as u32) {
        let mut rem = idx;
        let mut digits = vec![0; rank];
        for d in digits.iter_mut().rev() {
            *d = rem % n;
            rem /= n;
        }
        out.push(digits.iter().map(|d| format!("[{d}]")).collect());
    }
    out
}

fn flat_vec(v: &[f64; 2], n: usize) -> Vec<f64> {
    v[..n].to_vec()
}

fn flat_mat(m: &Mat, n: usize) -> Vec<f64> {
    (0..n).flat_map(|i| (0..n).map(move |j| m[i][j])).collect()
}

fn flat_t3(t: &Tensor3, n: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for row in t.iter().take(n) {
        out.extend(flat_mat(row, n));
    }
    out
}

/// Derivative in `s` at interior node `k` from the three-point non-uniform stencil.
fn ds_at(s: &[f64], q: &[Vec<f64>], k: usize) -> Vec<f64> {
    let h1 = s[k] - s[k - 1];
    let h2 = s[k + 1] - s[k];
    let cm = -h2 / (h1 * (h1 + h2));
    let c0 = (h2 - h1) / (h1 * h2);
    let cp = h1 / (h2 * (h1 + h2));
    (0..q[k].len())
        .map(|c| cm * q[k - 1][c] + c0 * q[k][c] + cp * q[k + 1][c])
        .collect()
}

/// Evaluates the component table along every marker.
pub fn build_transition_series(
    traj: &FlowTrajectory,
    markers: &LagrangianMarkers,
) -> Result<TransitionSeries> {
    check_trajectory(traj)?;
    let cfg = &traj.config;
    let domain = &cfg.domain;
    let sf = &cfg.scale_factor;
    let n = domain.n();
    let gamma = sf.params().gamma();
    if markers.times.len() != traj.frames.len() {
        return Err(Error::Format(format!(
            "markers cover {} records, trajectory has {}",
            markers.times.len(),
            traj.frames.len()
        )));
    }
    let t: Vec<f64> = traj.frames.iter().map(|f| f.t).collect();
    let s: Vec<f64> = t.iter().map(|t| -(-gamma * t).exp() / gamma).collect();
    let near = s.iter().filter(|s| s.abs() < 0.1 / gamma).count();
    if near < 6 {
        return Err(Error::MissingData(format!(
            "only {near} records with |s| < 0.1/γ; at least 6 needed (run longer)"
        )));
    }

    // samples[k][m]
    let samples: Vec<Vec<PointSample>> = par_collect(traj.frames.len(), |k| {
        let fr = &traj.frames[k];
        let fields = record_fields(fr, sf, domain)?;
        markers
            .tracks
            .iter()
            .map(|tr| {
                let x = tr.positions[k];
                let mut p = sample_point(&fields, domain, fr.t, gamma, x, &tr.jacobians[k])?;
                p.u = domain.interpolate(&fr.u, x);
                Ok(p)
            })
            .collect()
    })?;
    let records = t.len();
    let nm = markers.tracks.len();

    let series = |f: &dyn Fn(&PointSample) -> Vec<f64>| -> Vec<Vec<Vec<f64>>> {
        (0..nm).map(|m| (0..records).map(|k| f(&samples[k][m])).collect()).collect()
    };
    let item = |name, expect, s_order, normal, rank, first, values| ItemSeries {
        name,
        expect,
        s_order,
        normal,
        components: labels(n, rank),
        first,
        values,
    };
    use Expectation::{Converges, Vanishes};

    let a1 = series(&|p| flat_vec(&p.a1, n));
    let b1 = series(&|p| flat_mat(&p.b1, n));
    let h = series(&|p| flat_mat(&p.h, n));
    let a2 = series(&|p| vec![p.a2]);
    let b2 = series(&|p| flat_vec(&p.b2, n));

    let interior = |m: usize, f: &dyn Fn(usize, &PointSample) -> Vec<f64>| -> Vec<Vec<f64>> {
        (1..records - 1).map(|k| f(k, &samples[k][m])).collect()
    };
    let ds_h: Vec<Vec<Vec<f64>>> = (0..nm).map(|m| interior(m, &|k, _| ds_at(&s, &h[m], k))).collect();
    let y_pp_i_n: Vec<Vec<Vec<f64>>> = (0..nm)
        .map(|m| {
            interior(m, &|k, p| {
                let d = ds_at(&s, &a1[m], k);
                (0..n)
                    .map(|i| d[i] + (0..n).map(|c| p.b1[i][c] * p.a1[c]).sum::<f64>())
                    .collect()
            })
        })
        .collect();
    let y_pp_i_t: Vec<Vec<Vec<f64>>> = (0..nm)
        .map(|m| {
            interior(m, &|k, p| {
                let d = ds_at(&s, &b1[m], k);
                let mut out = Vec::with_capacity(n * n);
                for i in 0..n {
                    for l in 0..n {
                        let mix: f64 = (0..n).map(|c| p.b1[i][c] * p.b1[c][l]).sum();
                        out.push(d[i * n + l] + p.a1[i] * p.c[l] + mix);
                    }
                }
                out
            })
        })
        .collect();
    let y_ppp_n: Vec<Vec<Vec<f64>>> = (0..nm)
        .map(|m| {
            interior(m, &|k, p| {
                let d = ds_at(&s, &a2[m], k);
                vec![d[0] + (0..n).map(|c| p.b2[c] * p.a1[c]).sum::<f64>()]
            })
        })
        .collect();
    let y_ppp_t: Vec<Vec<Vec<f64>>> = (0..nm)
        .map(|m| {
            interior(m, &|k, p| {
                let d = ds_at(&s, &b2[m], k);
                (0..n)
                    .map(|l| d[l] + p.a2 * p.c[l] + (0..n).map(|c| p.b2[c] * p.b1[c][l]).sum::<f64>())
                    .collect()
            })
        })
        .collect();

    let items = vec![
        item("y0", Vanishes, 0, true, 0, 0, series(&|p| vec![p.u])),
        item("y0_prime", Converges, 1, true, 0, 0, series(&|p| vec![p.y0_prime])),
        item("yi_prime", Vanishes, 1, false, 1, 0, series(&|p| flat_vec(&p.yi_prime, n))),
        item("y_prime_i.normal", Converges, 1, true, 1, 0, a1.clone()),
        item("y_prime_i.tangential", Vanishes, 1, false, 2, 0, b1.clone()),
        item("y_ij.normal", Vanishes, 0, true, 2, 0, h.clone()),
        item("y_pp.normal", Vanishes, 2, true, 0, 0, a2.clone()),
        item("y_pp.tangential", Converges, 2, false, 1, 0, b2.clone()),
        item("y_ijk.normal", Vanishes, 0, true, 3, 0, series(&|p| flat_t3(&p.hc, n))),
        item(
            "y_ijk.tangential",
            Vanishes,
            0,
            false,
            4,
            0,
            series(&|p| {
                let mut out = Vec::new();
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..n {
                            for l in 0..n {
                                out.push(p.h[i][j] * p.h_mixed[k][l]);
                            }
                        }
                    }
                }
                out
            }),
        ),
        item("ds_y_ij.normal", Converges, 1, true, 2, 1, ds_h),
        item(
            "ds_y_ij.tangential",
            Vanishes,
            1,
            false,
            3,
            0,
            series(&|p| {
                let mut out = Vec::new();
                for i in 0..n {
                    for j in 0..n {
                        for l in 0..n {
                            out.push(p.h[i][j] * p.c[l]);
                        }
                    }
                }
                out
            }),
        ),
        item("y_pp_i.normal", Vanishes, 2, true, 1, 1, y_pp_i_n),
        item("y_pp_i.tangential", Converges, 2, false, 2, 1, y_pp_i_t),
        item("y_ppp.normal", Converges, 3, true, 0, 1, y_ppp_n),
        item("y_ppp.tangential", Vanishes, 3, false, 1, 1, y_ppp_t),
    ];
    debug_assert!(items.iter().map(|i| i.name).eq(ITEM_NAMES));

    Ok(TransitionSeries {
        n,
        gamma,
        t,
        s,
        seeds: markers.tracks.iter().map(|t| t.seed).collect(),
        items,
    })
}

impl TransitionSeries {
    pub fn item(&self, name: &str) -> Option<&ItemSeries> {
        self.items.iter().find(|i| i.name == name)
    }

    /// `(s, value)` pairs of one component along one marker on the negative branch.
    pub fn component(&self, name: &str, marker: usize, comp: usize) -> Option<Vec<(f64, f64)>> {
        let it = self.item(name)?;
        let vals = it.values.get(marker)?;
        Some(
            vals.iter()
                .enumerate()
                .map(|(k, v)| (self.s[it.first + k], v[comp]))
                .collect(),
        )
    }

    /// The reflected branch: the same component at `+|s|`, multiplied by the item parity.
    pub fn mirrored(&self, name: &str, marker: usize, comp: usize) -> Option<Vec<(f64, f64)>> {
        let parity = self.item(name)?.parity();
        let mut out: Vec<(f64, f64)> = self
            .component(name, marker, comp)?
            .into_iter()
            .map(|(s, v)| (-s, parity * v))
            .collect();
        out.reverse();
        Some(out)
    }

    /// CSV with columns `s, marker, component, value`; negative branch first, then the
    /// mirrored branch in increasing `s`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["s", "marker", "component", "value"])?;
        for branch in [false, true] {
            for it in &self.items {
                for (m, seed) in self.seeds.iter().enumerate() {
                    for (c, label) in it.components.iter().enumerate() {
                        let name = format!("{}{label}", it.name);
                        let rows = if branch {
                            self.mirrored(it.name, m, c)
                        } else {
                            self.component(it.name, m, c)
                        };
                        for (s, v) in rows.unwrap_or_default() {
                            w.write_record([
                                format!("{s:e}"),
                                seed.to_string(),
                                name.clone(),
                                format!("{v:e}"),
                            ])?;
                        }
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct C3Tolerance {
    /// Extrapolated `|value|` of a vanishing item relative to its value at `s = −0.5/γ`.
    pub vanish_rel: f64,
    /// Spread of the last points of a converging item relative to its magnitude.
    pub converge_spread: f64,
    pub tail_points: usize,
    /// Magnitudes below this count as exactly zero.
    pub zero_floor: f64,
}

impl Default for C3Tolerance {
    fn default() -> Self {
        Self {
            vanish_rel: 1e-3,
            converge_spread: 0.05,
            tail_points: 5,
            zero_floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C3Item {
    pub name: String,
    pub expect: Expectation,
    pub parity: i8,
    /// Largest extrapolated norm at `s = 0⁻` over markers.
    pub extrapolated: f64,
    /// Largest norm at `s = −0.5/γ` over markers.
    pub reference: f64,
    /// Largest relative tail spread over markers (converging items).
    pub spread: f64,
    /// Largest gap between the two one-sided extrapolations at `s = 0`.
    pub jump: f64,
    pub monotone: bool,
    pub pass: bool,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C3Report {
    pub tolerance: C3Tolerance,
    pub items: Vec<C3Item>,
    /// Mirrored branch equals the parity image of the original, bit for bit.
    pub parity_exact: bool,
    /// Every converging item has even parity, so the gluing can be continuous.
    pub parity_consistent: bool,
    /// `y⁰'` agrees from both sides and `y^i'` vanishes at `s = 0`.
    pub c1_matching: bool,
    /// Fitted decay rate in `t` of the tangential part of `y'`.
    pub tangential_y_prime_rate: Option<f64>,
    pub all_pass: bool,
}

impl C3Report {
    pub fn item(&self, name: &str) -> Option<&C3Item> {
        self.items.iter().find(|i| i.name == name)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Linear extrapolation to `s = 0` of every component over the given points.
fn extrapolate(s: &[f64], vals: &[Vec<f64>]) -> Result<Vec<f64>> {
    let comps = vals.first().map_or(0, Vec::len);
    (0..comps)
        .map(|c| {
            let y: Vec<f64> = vals.iter().map(|v| v[c]).collect();
            let fit = fit_line(s, &y).ok_or_else(|| Error::MissingData("too few points to extrapolate".into()))?;
            if !fit.intercept.is_finite() {
                return Err(Error::NonFinite("extrapolated component".into()));
            }
            Ok(fit.intercept)
        })
        .collect()
}

/// Checks every item of the table by extrapolating the negative branch to `s = 0⁻`.
pub fn check_c3_matching(series: &TransitionSeries, tol: &C3Tolerance) -> Result<C3Report> {
    let tail = tol.tail_points.max(2);
    let s_ref = -0.5 / series.gamma;
    let mut items = Vec::new();
    let mut parity_exact = true;
    let mut parity_consistent = true;
    for it in &series.items {
        let len = it.len();
        if len < tail + 1 {
            return Err(Error::MissingData(format!("{}: {len} points, need {}", it.name, tail + 1)));
        }
        let s: Vec<f64> = series.s[it.first..it.first + len].to_vec();
        let k_ref = (0..len)
            .min_by(|&a, &b| (s[a] - s_ref).abs().total_cmp(&(s[b] - s_ref).abs()))
            .unwrap_or(0);
        let parity = it.parity();
        if it.expect == Expectation::Converges && parity < 0.0 {
            parity_consistent = false;
        }
        let mut extrapolated: f64 = 0.0;
        let mut reference: f64 = 0.0;
        let mut spread: f64 = 0.0;
        let mut jump: f64 = 0.0;
        let mut monotone = true;
        let mut pass = true;
        let mut notes = Vec::new();
        for (m, vals) in it.values.iter().enumerate() {
            let s_tail = &s[len - tail..];
            let v_tail = &vals[len - tail..];
            let ext = match extrapolate(s_tail, v_tail) {
                Ok(e) => e,
                Err(e) => {
                    pass = false;
                    notes.push(format!("marker {}: {e}", series.seeds[m]));
                    continue;
                }
            };
            // The mirrored branch is fitted independently on its own points.
            let mirror: Vec<Vec<f64>> = v_tail.iter().map(|v| v.iter().map(|x| parity * x).collect()).collect();
            let s_mirror: Vec<f64> = s_tail.iter().map(|s| -s).collect();
            let ext_mirror = extrapolate(&s_mirror, &mirror)?;
            for c in 0..it.components.len() {
                let series_c = series.component(it.name, m, c).unwrap_or_default();
                let mirrored_c = series.mirrored(it.name, m, c).unwrap_or_default();
                let exact = series_c
                    .iter()
                    .rev()
                    .zip(&mirrored_c)
                    .all(|(a, b)| b.0 == -a.0 && b.1 == parity * a.1);
                parity_exact &= exact;
            }
            let gap: Vec<f64> = ext.iter().zip(&ext_mirror).map(|(a, b)| a - b).collect();
            jump = jump.max(norm(&gap));
            let e_norm = norm(&ext);
            let r_norm = norm(&vals[k_ref]);
            extrapolated = extrapolated.max(e_norm);
            reference = reference.max(r_norm);
            match it.expect {
                Expectation::Vanishes => {
                    let quarter = (len / 4).max(2);
                    let norms: Vec<f64> = vals[len - quarter..].iter().map(|v| norm(v)).collect();
                    let all_zero = vals.iter().all(|v| norm(v) <= tol.zero_floor);
                    let mono = all_zero || norms.windows(2).all(|w| w[1] <= w[0]);
                    monotone &= mono;
                    if !all_zero && e_norm > tol.vanish_rel * r_norm {
                        pass = false;
                        notes.push(format!(
                            "marker {}: extrapolated {e_norm:.3e} > {:.0e}·{r_norm:.3e}",
                            series.seeds[m], tol.vanish_rel
                        ));
                    }
                    if !mono {
                        pass = false;
                        notes.push(format!("marker {}: not monotone on the last quarter", series.seeds[m]));
                    }
                }
                Expectation::Converges => {
                    let mag = norm(&vals[len - 1]);
                    let mut worst: f64 = 0.0;
                    for c in 0..it.components.len() {
                        let (lo, hi) = v_tail
                            .iter()
                            .map(|v| v[c])
                            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
                        worst = worst.max(hi - lo);
                    }
                    if mag <= tol.zero_floor {
                        if worst > tol.zero_floor {
                            pass = false;
                            notes.push(format!("marker {}: zero limit with spread {worst:.3e}", series.seeds[m]));
                        }
                        continue;
                    }
                    let rel = worst / mag;
                    spread = spread.max(rel);
                    if rel > tol.converge_spread {
                        pass = false;
                        notes.push(format!(
                            "marker {}: spread {rel:.3e} > {}",
                            series.seeds[m], tol.converge_spread
                        ));
                    }
                }
            }
        }
        items.push(C3Item {
            name: it.name.to_string(),
            expect: it.expect,
            parity: parity as i8,
            extrapolated,
            reference,
            spread,
            jump,
            monotone,
            pass,
            note: notes.join("; "),
        });
    }

    let c1_matching = ["y0_prime", "yi_prime"].iter().all(|name| {
        items
            .iter()
            .find(|i| i.name == *name)
            .is_some_and(|i| i.jump <= 2.0 * tol.vanish_rel * i.reference.max(tol.zero_floor))
    });
    let tangential_y_prime_rate = tangential_rate(series);
    let all_pass = parity_exact && parity_consistent && c1_matching && items.iter().all(|i| i.pass);
    Ok(C3Report {
        tolerance: *tol,
        items,
        parity_exact,
        parity_consistent,
        c1_matching,
        tangential_y_prime_rate,
        all_pass,
    })
}

/// Decay rate of `max_m |y^i'|` in `t` over the second half of the records.
fn tangential_rate(series: &TransitionSeries) -> Option<f64> {
    let it = series.item("yi_prime")?;
    let len = it.len();
    let mut t = Vec::new();
    let mut y = Vec::new();
    for k in len / 2..len {
        let mag = it.values.iter().map(|v| norm(&v[k])).fold(0.0, f64::max);
        if mag > 1e-13 {
            t.push(series.t[it.first + k]);
            y.push(mag.ln());
        }
    }
    if t.len() < 3 {
        return None;
    }
    fit_line(&t, &y).map(|f| -f.slope)
}

/// Measured normal part of `y'_i` against the two candidate limits `γũ_i` and `γũũ_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalLimitComparison {
    pub seed: usize,
    pub measured: Vec<f64>,
    pub gamma_u_i: Vec<f64>,
    pub gamma_u_u_i: Vec<f64>,
    pub rel_err: f64,
    pub rel_err_alt: f64,
}

/// Compares `normal(y'_i)` at the last record with limits formed from the final `ũ` field.
pub fn normal_limit_comparison(
    traj: &FlowTrajectory,
    markers: &LagrangianMarkers,
    series: &TransitionSeries,
) -> Result<Vec<NormalLimitComparison>> {
    let it = series
        .item("y_prime_i.normal")
        .ok_or_else(|| Error::MissingData("y_prime_i.normal".into()))?;
    let last = traj.last_frame();
    let n = series.n;
    let e = (series.gamma * last.t).exp();
    let ut: Vec<f64> = last.u.iter().map(|u| e * u).collect();
    let k = markers.times.len() - 1;
    markers
        .tracks
        .iter()
        .enumerate()
        .map(|(m, tr)| {
            let (uv, grad) = traj.config.domain.interpolate_with_gradient(&ut, tr.positions[k]);
            let j = &tr.jacobians[k];
            let gu: Vec<f64> = (0..n)
                .map(|i| series.gamma * (0..n).map(|a| grad[a] * j[a][i]).sum::<f64>())
                .collect();
            let guu: Vec<f64> = gu.iter().map(|g| g * uv).collect();
            let measured = it.values[m].last().cloned().unwrap_or_default();
            let err = |p: &[f64]| {
                let d: Vec<f64> = measured.iter().zip(p).map(|(a, b)| a - b).collect();
                let scale = norm(p).max(norm(&measured));
                if scale < 1e-12 {
                    0.0
                } else {
                    norm(&d) / scale
                }
            };
            Ok(NormalLimitComparison {
                seed: tr.seed,
                rel_err: err(&gu),
                rel_err_alt: err(&guu),
                measured,
                gamma_u_i: gu,
                gamma_u_u_i: guu,
            })
        })
        .collect()
}

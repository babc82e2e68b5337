use serde::{Deserialize, Serialize};

use super::domain::SpatialDomain;
use crate::background::ScaleFactor;
use crate::{Error, Result};

/// Lower bound on `v` below which a graph is treated as null.
pub const V_MIN: f64 = 1e-6;

type Mat = [[f64; 2]; 2];

/// A graph `x⁰ = u(x)` at flow time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphState {
    pub t: f64,
    pub u: Vec<f64>,
}

/// Pointwise geometry of a graph. Tensor fields use `[i][j]` indexing; unused
/// entries are zero when n = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureBundle {
    pub n: usize,
    pub du: Vec<[f64; 2]>,
    pub v: Vec<f64>,
    pub v_tilde: Vec<f64>,
    /// Conformal factor `s` of `σ_ij = s δ_ij` at `(u(x), x)`.
    pub sigma: Vec<f64>,
    pub g: Vec<Mat>,
    pub g_inv: Vec<Mat>,
    /// `christoffel[k][m][i][j] = Γ^m_ij` of the induced metric.
    pub christoffel: Vec<[Mat; 2]>,
    pub hbar: Vec<Mat>,
    pub h: Vec<Mat>,
    /// `h_mixed[k][i][j] = h^j_i`.
    pub h_mixed: Vec<Mat>,
    pub mean: Vec<f64>,
    pub norm_a2: Vec<f64>,
    /// `F = H − n ṽ f'(u)`.
    pub speed: Vec<f64>,
    pub f: Vec<f64>,
    pub fprime: Vec<f64>,
    /// Past-directed unit normal `(−ṽ, −ṽ σ^{ij}u_j)`.
    pub nu: Vec<[f64; 3]>,
    /// First grid index where `F ≤ 0`, if any.
    pub barrier_violation: Option<usize>,
}

impl CurvatureBundle {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Normal speed `v/F` of the flow.
    pub fn normal_speed(&self) -> Result<Vec<f64>> {
        if let Some(index) = self.barrier_violation {
            return Err(Error::BarrierViolated {
                index,
                value: self.speed[index],
            });
        }
        Ok(self.v.iter().zip(&self.speed).map(|(v, f)| v / f).collect())
    }

    /// `min F² v`, the inverse diffusion coefficient of the linearised flow.
    pub fn min_inverse_diffusion(&self) -> f64 {
        self.speed
            .iter()
            .zip(&self.v)
            .map(|(f, v)| f * f * v)
            .fold(f64::INFINITY, f64::min)
    }

    /// `|h^j_i − (H/n) δ^j_i|` in the Frobenius norm of the mixed tensor.
    pub fn trace_free_norm(&self, k: usize) -> f64 {
        let n = self.n;
        let hm = &self.h_mixed[k];
        let third = self.mean[k] / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let tij = hm[i][j] - if i == j { third } else { 0.0 };
                let tji = hm[j][i] - if i == j { third } else { 0.0 };
                acc += tij * tji;
            }
        }
        acc.max(0.0).sqrt()
    }
}

/// Builds every pointwise curvature quantity of `graph u` from grid derivatives.
pub fn curvature_bundle(
    state: &GraphState,
    sf: &ScaleFactor,
    domain: &SpatialDomain,
) -> Result<CurvatureBundle> {
    let u = &state.u;
    let n = domain.n();
    let len = domain.len();
    if let Some(index) = u.iter().position(|x| !(*x < 0.0)) {
        return Err(Error::NonNegativeGraph { index, u: u[index] });
    }
    let der = domain.differentiate(u)?;

    let mut du = vec![[0.0; 2]; len];
    let mut sigma = vec![0.0; len];
    let mut dsigma = vec![0.0; len];
    let mut v = vec![0.0; len];
    let mut f = vec![0.0; len];
    let mut fprime = vec![0.0; len];
    for k in 0..len {
        for a in 0..n {
            du[k][a] = der.d1[a][k];
        }
        let (s, ds) = domain.sigma(u[k], domain.coords(k)[0]);
        sigma[k] = s;
        dsigma[k] = ds;
        let grad2 = (du[k][0] * du[k][0] + du[k][1] * du[k][1]) / s;
        let v2 = 1.0 - grad2;
        if !(v2 > V_MIN * V_MIN) {
            return Err(Error::NotSpacelike { index: k, v2 });
        }
        v[k] = v2.sqrt();
        let d = sf.eval(u[k])?;
        f[k] = d.f;
        fprime[k] = d.d1;
    }

    // Induced metric and its grid derivatives.
    let mut g = vec![[[0.0; 2]; 2]; len];
    let mut g_inv = vec![[[0.0; 2]; 2]; len];
    for k in 0..len {
        let s = sigma[k];
        let up = [du[k][0] / s, du[k][1] / s];
        let iv2 = 1.0 / (v[k] * v[k]);
        for i in 0..n {
            for j in 0..n {
                let delta = if i == j { 1.0 } else { 0.0 };
                g[k][i][j] = s * delta - du[k][i] * du[k][j];
                g_inv[k][i][j] = delta / s + up[i] * up[j] * iv2;
            }
        }
    }
    // dg[l][i][j] holds ∂_l g_ij over the grid.
    let mut dg = vec![[[Vec::new(), Vec::new()], [Vec::new(), Vec::new()]]; n];
    for i in 0..n {
        for j in i..n {
            let comp: Vec<f64> = g.iter().map(|m| m[i][j]).collect();
            for (l, slot) in dg.iter_mut().enumerate() {
                let d = domain.d1(&comp, l);
                if i != j {
                    slot[j][i] = d.clone();
                }
                slot[i][j] = d;
            }
        }
    }

    let mut hbar = vec![[[0.0; 2]; 2]; len];
    let mut h = vec![[[0.0; 2]; 2]; len];
    let mut h_mixed = vec![[[0.0; 2]; 2]; len];
    let mut mean = vec![0.0; len];
    let mut norm_a2 = vec![0.0; len];
    let mut speed = vec![0.0; len];
    let mut v_tilde = vec![0.0; len];
    let mut nu = vec![[0.0; 3]; len];
    let mut christoffel = vec![[[[0.0; 2]; 2]; 2]; len];
    let mut barrier_violation = None;
    for k in 0..len {
        let gi = &g_inv[k];
        // Γ^m_ij = ½ g^{ml}(∂_i g_jl + ∂_j g_il − ∂_l g_ij)
        let mut hess = [[0.0; 2]; 2];
        for i in 0..n {
            for j in 0..n {
                let mut gamma_u = 0.0;
                for m in 0..n {
                    let mut gam = 0.0;
                    for l in 0..n {
                        gam += gi[m][l] * (dg[i][j][l][k] + dg[j][i][l][k] - dg[l][i][j][k]);
                    }
                    christoffel[k][m][i][j] = 0.5 * gam;
                    gamma_u += 0.5 * gam * du[k][m];
                }
                hess[i][j] = der.second(i, j)[k] - gamma_u;
            }
        }
        for i in 0..n {
            hbar[k][i][i] = -0.5 * dsigma[k];
        }
        for i in 0..n {
            for j in 0..n {
                h[k][i][j] = v[k] * (-hess[i][j] + hbar[k][i][j]);
            }
        }
        for i in 0..n {
            for j in 0..n {
                h_mixed[k][i][j] = (0..n).map(|l| gi[j][l] * h[k][l][i]).sum();
            }
        }
        mean[k] = (0..n).map(|i| h_mixed[k][i][i]).sum();
        let mut a2 = 0.0;
        for i in 0..n {
            for j in 0..n {
                a2 += h_mixed[k][i][j] * h_mixed[k][j][i];
            }
        }
        norm_a2[k] = a2;
        v_tilde[k] = 1.0 / v[k];
        speed[k] = mean[k] - n as f64 * v_tilde[k] * fprime[k];
        if !speed[k].is_finite() {
            return Err(Error::NonFinite(format!("F at grid index {k}")));
        }
        if speed[k] <= 0.0 && barrier_violation.is_none() {
            barrier_violation = Some(k);
        }
        let s = sigma[k];
        nu[k] = [-v_tilde[k], -v_tilde[k] * du[k][0] / s, -v_tilde[k] * du[k][1] / s];
    }

    Ok(CurvatureBundle {
        n,
        du,
        v,
        v_tilde,
        sigma,
        g,
        g_inv,
        christoffel,
        hbar,
        h,
        h_mixed,
        mean,
        norm_a2,
        speed,
        f,
        fprime,
        nu,
        barrier_violation,
    })
}

/// Pointwise umbilicity: `F⁻¹|T|` and `e^{−f(u)}|T|` with `T` the trace-free part of `h^j_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Umbilicity {
    pub ratio: Vec<f64>,
    pub breve: Vec<f64>,
}

pub fn umbilicity(bundle: &CurvatureBundle) -> Result<Umbilicity> {
    if let Some(index) = bundle.barrier_violation {
        return Err(Error::BarrierViolated {
            index,
            value: bundle.speed[index],
        });
    }
    let (ratio, breve) = (0..bundle.len())
        .map(|k| {
            let t = bundle.trace_free_norm(k);
            (t / bundle.speed[k], (-bundle.f[k]).exp() * t)
        })
        .unzip();
    Ok(Umbilicity { ratio, breve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::{make_canonical, ArwParams};
    use crate::geometry::StencilOrder;

    fn canon(n: usize) -> ScaleFactor {
        make_canonical(ArwParams::new(n, 2.0, 1.0).unwrap(), -10.0).unwrap()
    }

    fn state(u: Vec<f64>) -> GraphState {
        GraphState { t: 0.0, u }
    }

    #[test]
    fn flat_slice() {
        let d = SpatialDomain::new(1, 32, StencilOrder::Second, 0.0).unwrap();
        let sf = canon(1);
        let b = curvature_bundle(&state(vec![-0.5; 32]), &sf, &d).unwrap();
        let fp = sf.eval(-0.5).unwrap().d1;
        for k in 0..32 {
            assert_eq!(b.mean[k], 0.0);
            assert_eq!(b.h_mixed[k][0][0], 0.0);
            assert_eq!(b.speed[k], -fp);
            assert_eq!(b.v[k], 1.0);
        }
        let um = umbilicity(&b).unwrap();
        assert!(um.ratio.iter().chain(&um.breve).all(|x| *x == 0.0));
    }

    fn closed_form_h(x: f64) -> f64 {
        let u1 = 0.1 * x.cos();
        let u2 = -0.1 * x.sin();
        -u2 * (1.0 - u1 * u1).powf(-1.5)
    }

    fn n1_error(points: usize, order: StencilOrder) -> f64 {
        let d = SpatialDomain::new(1, points, order, 0.0).unwrap();
        let u = d.sample(|x| -0.6 + 0.1 * x[0].sin());
        let b = curvature_bundle(&state(u), &canon(1), &d).unwrap();
        (0..d.len())
            .map(|k| (b.mean[k] - closed_form_h(d.coords(k)[0])).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn one_dimensional_closed_form_and_order() {
        for order in [StencilOrder::Second, StencilOrder::Fourth] {
            let coarse = n1_error(64, order);
            let fine = n1_error(128, order);
            assert!(fine < if order == StencilOrder::Second { 1e-3 } else { 1e-6 });
            let measured = (coarse / fine).log2();
            assert!(
                (measured / order.nominal() - 1.0).abs() < 0.2,
                "{order:?}: measured order {measured}"
            );
        }
    }

    #[test]
    fn perturbed_sigma_hbar_matches_analytic() {
        let d = SpatialDomain::new(2, 32, StencilOrder::Fourth, 0.1).unwrap();
        let b = curvature_bundle(&state(vec![-0.5; d.len()]), &canon(2), &d).unwrap();
        let bump = (-4.0f64).exp();
        for k in 0..d.len() {
            let x1 = d.coords(k)[0];
            // −½ ∂_τ(1 + β e^{−1/τ²} cos x¹) at τ = −1/2.
            let exact = -0.5 * 0.1 * (-16.0 * bump) * x1.cos();
            assert!((b.hbar[k][0][0] - exact).abs() <= 1e-12);
            assert!((b.hbar[k][1][1] - exact).abs() <= 1e-12);
            assert_eq!(b.hbar[k][0][1], 0.0);
        }
    }

    #[test]
    fn trace_and_v_invariants() {
        let d = SpatialDomain::new(2, 32, StencilOrder::Fourth, 0.2).unwrap();
        let u = d.sample(|x| -0.5 + 0.05 * x[0].cos() + 0.03 * (x[0] + 2.0 * x[1]).sin());
        let b = curvature_bundle(&state(u), &canon(2), &d).unwrap();
        for k in 0..d.len() {
            let tr: f64 = (0..2)
                .flat_map(|i| (0..2).map(move |j| (i, j)))
                .map(|(i, j)| b.g_inv[k][i][j] * b.h[k][i][j])
                .sum();
            assert!((tr - b.mean[k]).abs() <= 1e-10 * (1.0 + b.mean[k].abs()));
            assert!(b.v[k] > 0.0 && b.v[k] <= 1.0);
            if b.v[k] == 1.0 {
                assert!(b.du[k][0].hypot(b.du[k][1]) < 1e-7);
            }
            // g g⁻¹ = I
            for i in 0..2 {
                for j in 0..2 {
                    let p: f64 = (0..2).map(|l| b.g[k][i][l] * b.g_inv[k][l][j]).sum();
                    assert!((p - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn spacelike_violation_reports_index() {
        let d = SpatialDomain::new(1, 32, StencilOrder::Second, 0.0).unwrap();
        let u = d.sample(|x| -3.0 + 1.5 * x[0].sin());
        match curvature_bundle(&state(u), &canon(1), &d) {
            Err(Error::NotSpacelike { index, v2 }) => {
                assert!(index < 32 && v2 <= V_MIN * V_MIN);
            }
            other => panic!("expected NotSpacelike, got {other:?}"),
        }
    }

    #[test]
    fn positive_graph_rejected() {
        let d = SpatialDomain::new(1, 16, StencilOrder::Second, 0.0).unwrap();
        let mut u = vec![-0.5; 16];
        u[7] = 0.0;
        assert!(matches!(
            curvature_bundle(&state(u), &canon(1), &d),
            Err(Error::NonNegativeGraph { index: 7, .. })
        ));
    }

    #[test]
    fn barrier_is_flagged_not_fatal() {
        let d = SpatialDomain::new(1, 32, StencilOrder::Second, 0.0).unwrap();
        // Strongly concave-up data makes H very negative near x = π/2.
        let u = d.sample(|x| -5.0 + 0.9 * x[0].sin());
        let b = curvature_bundle(&state(u), &canon(1), &d).unwrap();
        let idx = b.barrier_violation.expect("barrier violated");
        assert!(b.speed[idx] <= 0.0);
        assert!(matches!(b.normal_speed(), Err(Error::BarrierViolated { .. })));
        assert!(umbilicity(&b).is_err());
    }

    #[test]
    fn one_dimensional_umbilicity_vanishes() {
        let d = SpatialDomain::new(1, 32, StencilOrder::Fourth, 0.0).unwrap();
        let u = d.sample(|x| -0.6 + 0.1 * x[0].sin());
        let b = curvature_bundle(&state(u), &canon(1), &d).unwrap();
        assert!(umbilicity(&b).unwrap().ratio.iter().all(|x| *x == 0.0));
    }
}

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::background::bump;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum StencilOrder {
    Second,
    Fourth,
}

impl TryFrom<u8> for StencilOrder {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            2 => Ok(Self::Second),
            4 => Ok(Self::Fourth),
            _ => Err(Error::InvalidParams(format!("stencil order must be 2 or 4, got {v}"))),
        }
    }
}

impl From<StencilOrder> for u8 {
    fn from(o: StencilOrder) -> u8 {
        match o {
            StencilOrder::Second => 2,
            StencilOrder::Fourth => 4,
        }
    }
}

impl StencilOrder {
    pub fn nominal(self) -> f64 {
        u8::from(self) as f64
    }
}

/// Uniform periodic grid on `[0, 2π)^n`, `n ∈ {1, 2}`, with the spatial metric
/// `σ_ij(τ, x) = (1 + β e^{−1/τ²} cos x¹) δ_ij`.
///
/// Grid values are stored with `x¹` fastest: index `i + N j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDomain", into = "RawDomain")]
pub struct SpatialDomain {
    n: usize,
    points: usize,
    order: StencilOrder,
    beta: f64,
    h: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    n: usize,
    points: usize,
    stencil_order: StencilOrder,
    #[serde(default)]
    sigma_beta: f64,
}

impl TryFrom<RawDomain> for SpatialDomain {
    type Error = Error;

    fn try_from(r: RawDomain) -> Result<Self> {
        SpatialDomain::new(r.n, r.points, r.stencil_order, r.sigma_beta)
    }
}

impl From<SpatialDomain> for RawDomain {
    fn from(d: SpatialDomain) -> Self {
        RawDomain {
            n: d.n,
            points: d.points,
            stencil_order: d.order,
            sigma_beta: d.beta,
        }
    }
}

/// First and second partial derivatives of a grid field.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivatives {
    pub d1: Vec<Vec<f64>>,
    /// `d2[a * n + b]`, symmetric.
    pub d2: Vec<Vec<f64>>,
    n: usize,
}

impl Derivatives {
    pub fn second(&self, a: usize, b: usize) -> &[f64] {
        &self.d2[a * self.n + b]
    }
}

impl SpatialDomain {
    pub fn new(n: usize, points: usize, order: StencilOrder, beta: f64) -> Result<Self> {
        if n != 1 && n != 2 {
            return Err(Error::InvalidParams(format!("spatial dimension must be 1 or 2, got {n}")));
        }
        if points < 16 || !points.is_multiple_of(2) {
            return Err(Error::InvalidParams(format!(
                "grid size must be even and at least 16, got {points}"
            )));
        }
        if !(beta.abs() < 1.0) {
            return Err(Error::InvalidParams(format!("|β| must be below 1, got {beta}")));
        }
        Ok(Self {
            n,
            points,
            order,
            beta,
            h: 2.0 * PI / points as f64,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Points per axis.
    pub fn points(&self) -> usize {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn order(&self) -> StencilOrder {
        self.order
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn is_static(&self) -> bool {
        self.beta == 0.0
    }

    /// Same geometry at a different resolution.
    pub fn with_points(&self, points: usize) -> Result<Self> {
        Self::new(self.n, points, self.order, self.beta)
    }

    /// Coordinates of grid point `idx` (second entry 0 when n = 1).
    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let i = idx % self.points;
        let j = idx / self.points;
        [i as f64 * self.h, j as f64 * self.h]
    }

    /// Evaluates `g(x)` on the grid.
    pub fn sample(&self, g: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|k| g(self.coords(k))).collect()
    }

    /// Conformal factor `s` of `σ_ij = s δ_ij` and `∂s/∂τ`, at time `tau` over `x¹`.
    pub fn sigma(&self, tau: f64, x1: f64) -> (f64, f64) {
        if self.beta == 0.0 {
            return (1.0, 0.0);
        }
        let b = bump(tau);
        let c = x1.cos();
        (1.0 + self.beta * b[0] * c, self.beta * b[1] * c)
    }

    #[inline]
    fn neighbour(&self, idx: usize, axis: usize, off: isize) -> usize {
        let np = self.points as isize;
        let (i, j) = ((idx % self.points) as isize, (idx / self.points) as isize);
        if axis == 0 {
            ((i + off).rem_euclid(np) + j * np) as usize
        } else {
            (i + (j + off).rem_euclid(np) * np) as usize
        }
    }

    /// Central first derivative along `axis`.
    pub fn d1(&self, f: &[f64], axis: usize) -> Vec<f64> {
        let h = self.h;
        (0..f.len())
            .map(|k| {
                let p1 = f[self.neighbour(k, axis, 1)];
                let m1 = f[self.neighbour(k, axis, -1)];
                match self.order {
                    StencilOrder::Second => (p1 - m1) / (2.0 * h),
                    StencilOrder::Fourth => {
                        let p2 = f[self.neighbour(k, axis, 2)];
                        let m2 = f[self.neighbour(k, axis, -2)];
                        (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
                    }
                }
            })
            .collect()
    }

    /// Central pure second derivative along `axis`.
    pub fn d2(&self, f: &[f64], axis: usize) -> Vec<f64> {
        let h2 = self.h * self.h;
        (0..f.len())
            .map(|k| {
                let p1 = f[self.neighbour(k, axis, 1)];
                let m1 = f[self.neighbour(k, axis, -1)];
                match self.order {
                    StencilOrder::Second => ((p1 - f[k]) + (m1 - f[k])) / h2,
                    StencilOrder::Fourth => {
                        let p2 = f[self.neighbour(k, axis, 2)];
                        let m2 = f[self.neighbour(k, axis, -2)];
                        let c = f[k];
                        (16.0 * ((p1 - c) + (m1 - c)) - ((p2 - c) + (m2 - c))) / (12.0 * h2)
                    }
                }
            })
            .collect()
    }

    /// Gradient and Hessian by periodic central differences.
    pub fn differentiate(&self, f: &[f64]) -> Result<Derivatives> {
        if f.len() != self.len() {
            return Err(Error::InvalidParams(format!(
                "field has {} values, grid has {}",
                f.len(),
                self.len()
            )));
        }
        if let Some(k) = f.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field value at grid index {k}")));
        }
        let n = self.n;
        let d1: Vec<Vec<f64>> = (0..n).map(|a| self.d1(f, a)).collect();
        let mut d2 = vec![Vec::new(); n * n];
        for a in 0..n {
            d2[a * n + a] = self.d2(f, a);
        }
        if n == 2 {
            let mixed = self.d1(&d1[0], 1);
            d2[1] = mixed.clone();
            d2[2] = mixed;
        }
        Ok(Derivatives { d1, d2, n })
    }

    /// Periodic cubic Hermite interpolation of a grid field at `x`, with nodal slopes
    /// from the fourth-order centred difference. The interpolant is C¹.
    pub fn interpolate(&self, f: &[f64], x: [f64; 2]) -> f64 {
        self.interpolation_weights(x).iter().map(|&(k, w)| w * f[k]).sum()
    }

    /// Interpolated value and gradient at `x`.
    pub fn interpolate_with_gradient(&self, f: &[f64], x: [f64; 2]) -> (f64, [f64; 2]) {
        let (i0, w0, dw0) = self.stencil(x[0]);
        if self.n == 1 {
            let v = (0..6).map(|a| w0[a] * f[i0[a]]).sum();
            let d = (0..6).map(|a| dw0[a] * f[i0[a]]).sum();
            return (v, [d, 0.0]);
        }
        let (j0, w1, dw1) = self.stencil(x[1]);
        let (mut v, mut dx, mut dy) = (0.0, 0.0, 0.0);
        for b in 0..6 {
            let mut row = 0.0;
            let mut drow = 0.0;
            for a in 0..6 {
                let fv = f[i0[a] + j0[b] * self.points];
                row += w0[a] * fv;
                drow += dw0[a] * fv;
            }
            v += w1[b] * row;
            dx += w1[b] * drow;
            dy += dw1[b] * row;
        }
        (v, [dx, dy])
    }

    /// Grid indices and weights of the interpolant at `x`.
    pub fn interpolation_weights(&self, x: [f64; 2]) -> Vec<(usize, f64)> {
        let (i0, w0, _) = self.stencil(x[0]);
        if self.n == 1 {
            return (0..6).map(|a| (i0[a], w0[a])).collect();
        }
        let (j0, w1, _) = self.stencil(x[1]);
        let mut out = Vec::with_capacity(36);
        for b in 0..6 {
            for a in 0..6 {
                out.push((i0[a] + j0[b] * self.points, w0[a] * w1[b]));
            }
        }
        out
    }

    /// Nodes `−2..=3` around the cell containing `x`, value weights and slope weights.
    fn stencil(&self, x: f64) -> ([usize; 6], [f64; 6], [f64; 6]) {
        let s = x.rem_euclid(2.0 * PI) / self.h;
        let base = s.floor();
        let r = s - base;
        let np = self.points as isize;
        let b = base as isize;
        let idx = [-2isize, -1, 0, 1, 2, 3].map(|o| (b + o).rem_euclid(np) as usize);
        // h·slope at nodes 0 and 1 as weights on the six nodes.
        const M0: [f64; 6] = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0, 0.0];
        const M1: [f64; 6] = [0.0, 1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
        let (r2, r3) = (r * r, r * r * r);
        let h = [2.0 * r3 - 3.0 * r2 + 1.0, r3 - 2.0 * r2 + r, -2.0 * r3 + 3.0 * r2, r3 - r2];
        let dh = [6.0 * r2 - 6.0 * r, 3.0 * r2 - 4.0 * r + 1.0, -6.0 * r2 + 6.0 * r, 3.0 * r2 - 2.0 * r];
        let mut w = [0.0; 6];
        let mut dw = [0.0; 6];
        for a in 0..6 {
            w[a] = h[1] * M0[a] + h[3] * M1[a];
            dw[a] = (dh[1] * M0[a] + dh[3] * M1[a]) / self.h;
        }
        w[2] += h[0];
        w[3] += h[2];
        dw[2] += dh[0] / self.h;
        dw[3] += dh[2] / self.h;
        (idx, w, dw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(SpatialDomain::new(3, 32, StencilOrder::Second, 0.0).is_err());
        assert!(SpatialDomain::new(1, 15, StencilOrder::Second, 0.0).is_err());
        assert!(SpatialDomain::new(1, 14, StencilOrder::Second, 0.0).is_err());
        assert!(SpatialDomain::new(2, 32, StencilOrder::Fourth, 1.0).is_err());
        assert!(StencilOrder::try_from(3).is_err());
    }

    #[test]
    fn constant_has_zero_derivatives() {
        let d = SpatialDomain::new(2, 16, StencilOrder::Fourth, 0.0).unwrap();
        let f = vec![-0.3; d.len()];
        let der = d.differentiate(&f).unwrap();
        for comp in der.d1.iter().chain(der.d2.iter()) {
            assert!(comp.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn sine_derivative_bounds() {
        for (order, bound) in [(StencilOrder::Second, 1e-3), (StencilOrder::Fourth, 1e-7)] {
            let d = SpatialDomain::new(1, 256, order, 0.0).unwrap();
            let du = d.d1(&d.sample(|x| x[0].sin()), 0);
            assert!(max_err(&du, &d.sample(|x| x[0].cos())) <= bound);
        }
    }

    #[test]
    fn refinement_order() {
        for order in [StencilOrder::Second, StencilOrder::Fourth] {
            let errs: Vec<(f64, f64)> = [32usize, 64]
                .iter()
                .map(|&np| {
                    let d = SpatialDomain::new(1, np, order, 0.0).unwrap();
                    let f = d.sample(|x| (x[0].sin()).exp());
                    let e1 = max_err(&d.d1(&f, 0), &d.sample(|x| x[0].cos() * x[0].sin().exp()));
                    let e2 = max_err(
                        &d.d2(&f, 0),
                        &d.sample(|x| (x[0].cos().powi(2) - x[0].sin()) * x[0].sin().exp()),
                    );
                    (e1, e2)
                })
                .collect();
            let want = 2f64.powf(order.nominal());
            for (coarse, fine) in [(errs[0].0, errs[1].0), (errs[0].1, errs[1].1)] {
                let ratio = coarse / fine;
                assert!((ratio / want - 1.0).abs() < 0.2, "{order:?}: ratio {ratio}");
            }
        }
    }

    #[test]
    fn mixed_derivative_2d() {
        let d = SpatialDomain::new(2, 128, StencilOrder::Fourth, 0.0).unwrap();
        let f = d.sample(|x| x[0].sin() * (2.0 * x[1]).cos());
        let der = d.differentiate(&f).unwrap();
        let exact = d.sample(|x| -2.0 * x[0].cos() * (2.0 * x[1]).sin());
        assert!(max_err(der.second(0, 1), &exact) < 1e-4);
        assert_eq!(der.second(0, 1), der.second(1, 0));
    }

    #[test]
    fn non_finite_input_rejected() {
        let d = SpatialDomain::new(1, 16, StencilOrder::Second, 0.0).unwrap();
        let mut f = vec![0.0; 16];
        f[3] = f64::NAN;
        assert!(matches!(d.differentiate(&f), Err(Error::NonFinite(_))));
    }

    #[test]
    fn interpolation_reproduces_nodes_and_cubics() {
        let d = SpatialDomain::new(2, 32, StencilOrder::Second, 0.0).unwrap();
        let f = d.sample(|x| x[0].sin() + x[1].cos());
        for k in [0usize, 5, 100, 1023] {
            assert!((d.interpolate(&f, d.coords(k)) - f[k]).abs() < 1e-14);
        }
        let x: [f64; 2] = [1.234, 4.321];
        let exact = x[0].sin() + x[1].cos();
        assert!((d.interpolate(&f, x) - exact).abs() < 1e-4);
        let (v, g) = d.interpolate_with_gradient(&f, x);
        assert!((v - d.interpolate(&f, x)).abs() < 1e-14);
        assert!((g[0] - x[0].cos()).abs() < 1e-3);
        assert!((g[1] + x[1].sin()).abs() < 1e-3);
    }

    #[test]
    fn interpolant_gradient_is_continuous_at_nodes() {
        let d = SpatialDomain::new(1, 16, StencilOrder::Fourth, 0.0).unwrap();
        let f = d.sample(|x| (2.0 * x[0]).sin() + 0.3 * x[0].cos());
        let node = d.coords(5)[0];
        let (_, left) = d.interpolate_with_gradient(&f, [node - 1e-9, 0.0]);
        let (_, right) = d.interpolate_with_gradient(&f, [node + 1e-9, 0.0]);
        assert!((left[0] - right[0]).abs() < 1e-7);
    }

    #[test]
    fn sigma_profile() {
        let d = SpatialDomain::new(2, 16, StencilOrder::Second, 0.1).unwrap();
        let (s, ds) = d.sigma(-0.5, 0.0);
        let b = (-4.0f64).exp();
        assert!((s - (1.0 + 0.1 * b)).abs() < 1e-16);
        // b'(τ) = 2τ⁻³b = −16b at τ = −1/2.
        assert!((ds + 0.1 * 16.0 * b).abs() < 1e-15);
        assert_eq!(d.sigma(-1e-4, 0.3), (1.0, 0.0));
    }

    #[test]
    fn serde_roundtrip() {
        let d = SpatialDomain::new(2, 32, StencilOrder::Fourth, 0.2).unwrap();
        let text = serde_json::to_string(&d).unwrap();
        assert!(text.contains("\"stencil_order\":4"));
        let back: SpatialDomain = serde_json::from_str(&text).unwrap();
        assert_eq!(back, d);
    }
}

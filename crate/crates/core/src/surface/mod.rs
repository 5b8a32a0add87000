//! Explicit spherical B-spline surface `rho = psi(theta, phi)`.
//!
//! Coefficients live on an `n_theta x n_phi` knot lattice. The azimuth is periodic with
//! `n_theta` knots over `2*pi`; the zenith spans `[0, pi]` with `n_phi` knots and repeats
//! its end coefficients beyond the lattice. With spacing `h = 2^scale` each knot carries
//! the dilated basis `beta(t / h) / h`, so the expansion is still a partition of unity.

pub mod bspline;
mod mesh;
mod raster;
mod sampling;

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Point3, Vec3};

pub use mesh::TriangleMesh;
pub use sampling::{AngularGrid, BasisTable};

pub const MAX_SCALE: u32 = 3;
pub const MAX_DEGREE: u32 = 5;
const MAX_TAPS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MeshParams {
    pub n_theta: usize,
    pub n_phi: usize,
    pub scale: u32,
    pub degree: u32,
}

impl MeshParams {
    pub fn new(n_theta: usize, n_phi: usize, scale: u32) -> Result<Self> {
        Self::with_degree(n_theta, n_phi, scale, 3)
    }

    pub fn with_degree(n_theta: usize, n_phi: usize, scale: u32, degree: u32) -> Result<Self> {
        let p = MeshParams {
            n_theta,
            n_phi,
            scale,
            degree,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_theta < 4 || self.n_phi < 4 {
            return Err(Error::InvalidParameter(format!(
                "mesh {}x{} below the 4x4 minimum",
                self.n_theta, self.n_phi
            )));
        }
        if self.scale > MAX_SCALE {
            return Err(Error::InvalidParameter(format!(
                "scale {} above {MAX_SCALE}",
                self.scale
            )));
        }
        if !(1..=MAX_DEGREE).contains(&self.degree) {
            return Err(Error::InvalidParameter(format!(
                "degree {} outside 1..={MAX_DEGREE}",
                self.degree
            )));
        }
        Ok(())
    }

    /// Knot spacing `h = 2^scale`.
    pub fn spacing(&self) -> f64 {
        f64::from(1u32 << self.scale)
    }

    pub fn knot_count(&self) -> usize {
        self.n_theta * self.n_phi
    }

    /// Knot-index units per radian of azimuth.
    pub fn theta_rate(&self) -> f64 {
        self.n_theta as f64 / TAU
    }

    /// Knot-index units per radian of zenith.
    pub fn phi_rate(&self) -> f64 {
        (self.n_phi - 1) as f64 / PI
    }

    /// Half-width of the pole caps excluded from curvature and region sampling.
    pub fn pole_cap(&self) -> f64 {
        PI / (2.0 * self.n_phi as f64)
    }

    #[inline]
    pub fn coeff_index(&self, k_theta: usize, k_phi: usize) -> usize {
        k_theta * self.n_phi + k_phi
    }
}

/// Basis weights along one parametric axis: `(coefficient index, [w, dw, d2w])`.
#[derive(Clone)]
pub(crate) struct AxisStencil {
    len: usize,
    idx: [usize; MAX_TAPS],
    w: [[f64; 3]; MAX_TAPS],
}

impl AxisStencil {
    fn build(param: f64, rate: f64, p: &MeshParams, periodic: bool, n: usize, derivs: bool) -> Self {
        let h = p.spacing();
        let d = p.degree;
        let half = h * f64::from(d + 1) / 2.0;
        let lo = (param - half).ceil() as i64;
        let hi = (param + half).floor() as i64;
        let mut s = AxisStencil {
            len: 0,
            idx: [0; MAX_TAPS],
            w: [[0.0; 3]; MAX_TAPS],
        };
        for k in lo..=hi {
            let t = (param - k as f64) / h;
            let b = bspline::basis(d, t);
            if b == 0.0 && !derivs {
                continue;
            }
            let i = if periodic {
                k.rem_euclid(n as i64) as usize
            } else {
                k.clamp(0, n as i64 - 1) as usize
            };
            s.idx[s.len] = i;
            s.w[s.len] = if derivs {
                [
                    b / h,
                    bspline::basis_d1(d, t) / (h * h) * rate,
                    bspline::basis_d2(d, t) / (h * h * h) * rate * rate,
                ]
            } else {
                [b / h, 0.0, 0.0]
            };
            s.len += 1;
        }
        s
    }

    pub(crate) fn theta(p: &MeshParams, theta: f64, derivs: bool) -> Self {
        let rate = p.theta_rate();
        let u = theta.rem_euclid(TAU) * rate;
        Self::build(u, rate, p, true, p.n_theta, derivs)
    }

    pub(crate) fn phi(p: &MeshParams, phi: f64, derivs: bool) -> Self {
        let rate = p.phi_rate();
        Self::build(phi * rate, rate, p, false, p.n_phi, derivs)
    }

    pub(crate) fn taps(&self) -> impl Iterator<Item = (usize, [f64; 3])> + '_ {
        (0..self.len).map(move |i| (self.idx[i], self.w[i]))
    }
}

/// Radius and its first and second angular partials.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Partials {
    pub rho: f64,
    pub d_theta: f64,
    pub d_phi: f64,
    pub d_theta_theta: f64,
    pub d_theta_phi: f64,
    pub d_phi_phi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngularSample {
    pub theta: f64,
    pub phi: f64,
    pub rho: f64,
    pub position: Point3,
    pub normal: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeasSurface {
    origin: Point3,
    params: MeshParams,
    coeffs: Vec<f64>,
}

/// Serialized surface state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceState {
    pub origin_mm: Point3,
    pub n_theta: usize,
    pub n_phi: usize,
    pub scale: u32,
    pub degree: u32,
    pub coeffs: Vec<f64>,
}

impl BeasSurface {
    /// Sphere of the given radius: every coefficient equals `radius`.
    pub fn init_sphere(origin: Point3, radius: f64, params: MeshParams) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sphere radius must be positive, got {radius}"
            )));
        }
        params.validate()?;
        Ok(BeasSurface {
            origin,
            params,
            coeffs: vec![radius; params.knot_count()],
        })
    }

    pub fn from_coeffs(origin: Point3, params: MeshParams, coeffs: Vec<f64>) -> Result<Self> {
        params.validate()?;
        if coeffs.len() != params.knot_count() {
            return Err(Error::InvalidParameter(format!(
                "expected {} coefficients, got {}",
                params.knot_count(),
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("non-finite coefficient".into()));
        }
        Ok(BeasSurface {
            origin,
            params,
            coeffs,
        })
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn params(&self) -> &MeshParams {
        &self.params
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff_range(&self) -> (f64, f64) {
        self.coeffs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| (lo.min(c), hi.max(c)))
    }

    /// Radius `psi(theta, phi)` in mm.
    pub fn evaluate(&self, theta: f64, phi: f64) -> f64 {
        let st = AxisStencil::theta(&self.params, theta, false);
        let sp = AxisStencil::phi(&self.params, phi, false);
        let n_phi = self.params.n_phi;
        let mut acc = 0.0;
        for (it, wt) in st.taps() {
            let row = &self.coeffs[it * n_phi..(it + 1) * n_phi];
            let mut inner = 0.0;
            for (ip, wp) in sp.taps() {
                inner += row[ip] * wp[0];
            }
            acc += wt[0] * inner;
        }
        acc
    }

    /// Analytic angular partials of the expansion.
    pub fn partials(&self, theta: f64, phi: f64) -> Partials {
        let st = AxisStencil::theta(&self.params, theta, true);
        let sp = AxisStencil::phi(&self.params, phi, true);
        let n_phi = self.params.n_phi;
        let mut out = Partials::default();
        for (it, wt) in st.taps() {
            let row = &self.coeffs[it * n_phi..(it + 1) * n_phi];
            let mut g = [0.0f64; 3];
            for (ip, wp) in sp.taps() {
                let c = row[ip];
                g[0] += c * wp[0];
                g[1] += c * wp[1];
                g[2] += c * wp[2];
            }
            out.rho += wt[0] * g[0];
            out.d_theta += wt[1] * g[0];
            out.d_phi += wt[0] * g[1];
            out.d_theta_theta += wt[2] * g[0];
            out.d_theta_phi += wt[1] * g[1];
            out.d_phi_phi += wt[0] * g[2];
        }
        out
    }

    /// Tensor-product basis weights `(coefficient index, weight)` at an angle.
    pub fn basis_weights(&self, theta: f64, phi: f64) -> Vec<(usize, f64)> {
        let st = AxisStencil::theta(&self.params, theta, false);
        let sp = AxisStencil::phi(&self.params, phi, false);
        let mut out = Vec::with_capacity(st.len * sp.len);
        for (it, wt) in st.taps() {
            for (ip, wp) in sp.taps() {
                out.push((self.params.coeff_index(it, ip), wt[0] * wp[0]));
            }
        }
        out
    }

    pub fn position(&self, theta: f64, phi: f64) -> Point3 {
        let rho = self.evaluate(theta, phi);
        geom::add(self.origin, geom::scale(geom::direction(theta, phi), rho))
    }

    /// Tangents `x_theta`, `x_phi` and second derivatives of the embedding.
    fn embedding_derivatives(&self, theta: f64, phi: f64) -> (Partials, [Vec3; 5]) {
        let p = self.partials(theta, phi);
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        let u = [sp * ct, sp * st, cp];
        let u_t = [-sp * st, sp * ct, 0.0];
        let u_p = [cp * ct, cp * st, -sp];
        let u_tt = [-sp * ct, -sp * st, 0.0];
        let u_tp = [-cp * st, cp * ct, 0.0];
        let u_pp = [-u[0], -u[1], -u[2]];
        let comb = |terms: &[(f64, Vec3)]| {
            terms
                .iter()
                .fold([0.0; 3], |acc, &(s, v)| geom::add(acc, geom::scale(v, s)))
        };
        let x_t = comb(&[(p.d_theta, u), (p.rho, u_t)]);
        let x_p = comb(&[(p.d_phi, u), (p.rho, u_p)]);
        let x_tt = comb(&[(p.d_theta_theta, u), (2.0 * p.d_theta, u_t), (p.rho, u_tt)]);
        let x_tp = comb(&[
            (p.d_theta_phi, u),
            (p.d_theta, u_p),
            (p.d_phi, u_t),
            (p.rho, u_tp),
        ]);
        let x_pp = comb(&[(p.d_phi_phi, u), (2.0 * p.d_phi, u_p), (p.rho, u_pp)]);
        (p, [x_t, x_p, x_tt, x_tp, x_pp])
    }

    /// Gaussian curvature (mm^-2) from the first and second fundamental forms.
    pub fn gaussian_curvature(&self, theta: f64, phi: f64) -> Result<f64> {
        let (p, [x_t, x_p, x_tt, x_tp, x_pp]) = self.embedding_derivatives(theta, phi);
        let e = geom::dot(x_t, x_t);
        let f = geom::dot(x_t, x_p);
        let g = geom::dot(x_p, x_p);
        let det = e * g - f * f;
        let scale = (p.rho * p.rho).max(f64::MIN_POSITIVE);
        if !(det > 1e-12 * scale * scale) {
            return Err(Error::PoleDegenerate);
        }
        let n = geom::cross(x_t, x_p);
        let n = geom::scale(n, 1.0 / geom::norm(n));
        let l = geom::dot(x_tt, n);
        let m = geom::dot(x_tp, n);
        let nn = geom::dot(x_pp, n);
        Ok((l * nn - m * m) / det)
    }

    pub fn sample(&self, theta: f64, phi: f64) -> AngularSample {
        let (p, [x_t, x_p, ..]) = self.embedding_derivatives(theta, phi);
        let dir = geom::direction(theta, phi);
        let n = geom::cross(x_t, x_p);
        let len = geom::norm(n);
        let mut normal = if len > 1e-12 { geom::scale(n, 1.0 / len) } else { dir };
        if geom::dot(normal, dir) < 0.0 {
            normal = geom::scale(normal, -1.0);
        }
        AngularSample {
            theta: theta.rem_euclid(TAU),
            phi,
            rho: p.rho,
            position: geom::add(self.origin, geom::scale(dir, p.rho)),
            normal,
        }
    }

    /// Voxel mask of the region enclosed by the surface.
    pub fn rasterize(&self, grid: &crate::volume::Grid) -> crate::volume::VoxelVolume {
        raster::rasterize(self, grid)
    }

    /// Latitude-longitude triangulation with one vertex per pole.
    pub fn to_mesh(&self, m_theta: usize, m_phi: usize) -> TriangleMesh {
        mesh::build(self, m_theta, m_phi)
    }

    pub fn to_state(&self) -> SurfaceState {
        SurfaceState {
            origin_mm: self.origin,
            n_theta: self.params.n_theta,
            n_phi: self.params.n_phi,
            scale: self.params.scale,
            degree: self.params.degree,
            coeffs: self.coeffs.clone(),
        }
    }

    pub fn from_state(state: &SurfaceState) -> Result<Self> {
        let params = MeshParams::with_degree(state.n_theta, state.n_phi, state.scale, state.degree)?;
        BeasSurface::from_coeffs(state.origin_mm, params, state.coeffs.clone())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_state()).expect("surface state serializes")
    }
}

/// Spherical coordinates `(r, theta, phi)` of `p` about `origin`,
/// with `theta` in `[0, 2*pi)` and `phi` in `[0, pi]`.
pub fn spherical_of(origin: Point3, p: Point3) -> Result<(f64, f64, f64)> {
    let d = geom::sub(p, origin);
    let r = geom::norm(d);
    if !(r > 1e-12) {
        return Err(Error::PointAtOrigin);
    }
    let phi = (d[2] / r).clamp(-1.0, 1.0).acos();
    let theta = d[1].atan2(d[0]).rem_euclid(TAU);
    // rem_euclid can round a tiny negative angle up to exactly TAU
    let theta = if theta >= TAU { 0.0 } else { theta };
    Ok((r, theta, phi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_surface(rng: &mut ChaCha8Rng, params: MeshParams) -> BeasSurface {
        let coeffs = (0..params.knot_count()).map(|_| rng.random_range(8.0..12.0)).collect();
        BeasSurface::from_coeffs([1.0, 2.0, 3.0], params, coeffs).unwrap()
    }

    /// Direct O(N_k) summation over every coefficient, independent of the stencil path.
    fn direct_sum(s: &BeasSurface, theta: f64, phi: f64) -> f64 {
        let p = s.params();
        let h = p.spacing();
        let d = p.degree;
        let u = theta.rem_euclid(TAU) * p.theta_rate();
        let v = phi * p.phi_rate();
        let mut acc = 0.0;
        // unrolled periodic copies in theta, replicated end knots in phi
        for kt in -(p.n_theta as i64) * 2..(p.n_theta as i64) * 3 {
            let bt = bspline::basis(d, (u - kt as f64) / h) / h;
            if bt == 0.0 {
                continue;
            }
            for kp in -40..(p.n_phi as i64 + 40) {
                let bp = bspline::basis(d, (v - kp as f64) / h) / h;
                if bp == 0.0 {
                    continue;
                }
                let it = kt.rem_euclid(p.n_theta as i64) as usize;
                let ip = kp.clamp(0, p.n_phi as i64 - 1) as usize;
                acc += s.coeffs()[p.coeff_index(it, ip)] * bt * bp;
            }
        }
        acc
    }

    #[test]
    fn sphere_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for scale in 0..=1 {
            let s = BeasSurface::init_sphere([5.0; 3], 10.0, MeshParams::new(12, 16, scale).unwrap()).unwrap();
            for _ in 0..1000 {
                let t = rng.random_range(0.0..TAU);
                let p = rng.random_range(0.0..PI);
                assert!((s.evaluate(t, p) - 10.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sphere_curvature_and_embedding() {
        let params = MeshParams::new(12, 16, 0).unwrap();
        let s = BeasSurface::init_sphere([5.0, 5.0, 5.0], 10.0, params).unwrap();
        let p = s.position(0.0, PI / 2.0);
        for (a, b) in p.iter().zip([15.0, 5.0, 5.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let t = rng.random_range(0.0..TAU);
            let ph = rng.random_range(0.2..PI - 0.2);
            let k = s.gaussian_curvature(t, ph).unwrap();
            assert!((k - 0.01).abs() < 1e-6, "K = {k}");
        }
        let big = BeasSurface::init_sphere([5.0; 3], 25.0, params).unwrap();
        let k = big.gaussian_curvature(1.0, 1.0).unwrap();
        assert!((k - 0.01 / 6.25).abs() < 1e-9);
    }

    #[test]
    fn curvature_degenerate_at_pole() {
        let s = BeasSurface::init_sphere([0.0; 3], 10.0, MeshParams::new(12, 16, 0).unwrap()).unwrap();
        assert!(matches!(s.gaussian_curvature(0.3, 0.0), Err(Error::PoleDegenerate)));
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = MeshParams::new(12, 16, 0).unwrap();
        assert!(BeasSurface::init_sphere([0.0; 3], 0.0, p).is_err());
        assert!(BeasSurface::init_sphere([0.0; 3], -1.0, p).is_err());
        assert!(MeshParams::new(3, 16, 0).is_err());
        assert!(MeshParams::new(12, 16, 4).is_err());
        assert!(BeasSurface::from_coeffs([0.0; 3], p, vec![1.0; 5]).is_err());
    }

    #[test]
    fn evaluation_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for &(nt, np, s) in &[(12, 16, 0), (6, 6, 1), (9, 7, 0), (24, 24, 1)] {
            let surf = random_surface(&mut rng, MeshParams::new(nt, np, s).unwrap());
            for _ in 0..50 {
                let t = rng.random_range(-1.0..7.0);
                let p = rng.random_range(0.0..PI);
                assert!((surf.evaluate(t, p) - direct_sum(&surf, t, p)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn single_coefficient_perturbation_is_basis_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = MeshParams::new(12, 16, 0).unwrap();
        let base = random_surface(&mut rng, params);
        let k = params.coeff_index(5, 7);
        let delta = 0.37;
        let mut coeffs = base.coeffs().to_vec();
        coeffs[k] += delta;
        let pert = BeasSurface::from_coeffs(base.origin(), params, coeffs).unwrap();
        for _ in 0..100 {
            let t = rng.random_range(0.0..TAU);
            let p = rng.random_range(0.0..PI);
            let u = t * params.theta_rate();
            let v = p * params.phi_rate();
            // coefficient 5 is also reached through periodic copies 5 +- 12
            let bt: f64 = [-12.0, 0.0, 12.0]
                .iter()
                .map(|o| bspline::basis(3, u - 5.0 - o))
                .sum();
            let expected = delta * bt * bspline::basis(3, v - 7.0);
            let got = pert.evaluate(t, p) - base.evaluate(t, p);
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn partials_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let params = MeshParams::new(12, 16, 0).unwrap();
        let s = random_surface(&mut rng, params);
        let h = 1e-4;
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-2);
        for _ in 0..100 {
            let t = rng.random_range(0.0..TAU);
            let p = rng.random_range(0.3..PI - 0.3);
            let d = s.partials(t, p);
            let fd_t = (s.evaluate(t + h, p) - s.evaluate(t - h, p)) / (2.0 * h);
            let fd_p = (s.evaluate(t, p + h) - s.evaluate(t, p - h)) / (2.0 * h);
            let pt = |tt, pp| s.partials(tt, pp);
            let fd_tt = (pt(t + h, p).d_theta - pt(t - h, p).d_theta) / (2.0 * h);
            let fd_tp = (pt(t, p + h).d_theta - pt(t, p - h).d_theta) / (2.0 * h);
            let fd_pt = (pt(t + h, p).d_phi - pt(t - h, p).d_phi) / (2.0 * h);
            let fd_pp = (pt(t, p + h).d_phi - pt(t, p - h).d_phi) / (2.0 * h);
            assert!(rel(d.d_theta, fd_t) < 1e-4);
            assert!(rel(d.d_phi, fd_p) < 1e-4);
            assert!(rel(d.d_theta_theta, fd_tt) < 1e-4);
            assert!(rel(d.d_theta_phi, fd_tp) < 1e-4);
            assert!(rel(d.d_phi_phi, fd_pp) < 1e-4);
            assert!(rel(fd_tp, fd_pt) < 1e-4);
        }
        let sphere = BeasSurface::init_sphere([0.0; 3], 3.0, params).unwrap();
        let d = sphere.partials(1.0, 1.0);
        assert!(d.d_theta.abs() < 1e-12 && d.d_phi_phi.abs() < 1e-12 && d.d_theta_phi.abs() < 1e-12);
    }

    #[test]
    fn spherical_coordinates() {
        let o = [1.0, 2.0, 3.0];
        assert_eq!(spherical_of(o, [1.0, 2.0, 8.0]).unwrap(), (5.0, 0.0, 0.0));
        let (r, t, p) = spherical_of(o, [4.0, 2.0, 3.0]).unwrap();
        assert_eq!((r, t), (3.0, 0.0));
        assert!((p - PI / 2.0).abs() < 1e-15);
        assert!(matches!(spherical_of(o, o), Err(Error::PointAtOrigin)));

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let r = rng.random_range(0.5..50.0);
            let t = rng.random_range(0.0..TAU);
            let p = rng.random_range(0.05..PI - 0.05);
            let x = geom::add(o, geom::scale(geom::direction(t, p), r));
            let (r2, t2, p2) = spherical_of(o, x).unwrap();
            assert!((r - r2).abs() < 1e-9 && (t - t2).abs() < 1e-9 && (p - p2).abs() < 1e-9);
        }
    }

    #[test]
    fn sample_normal_is_unit_and_outward() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let s = random_surface(&mut rng, MeshParams::new(12, 16, 0).unwrap());
        for _ in 0..50 {
            let smp = s.sample(rng.random_range(0.0..TAU), rng.random_range(0.1..PI - 0.1));
            assert!((geom::norm(smp.normal) - 1.0).abs() < 1e-12);
            let dir = geom::direction(smp.theta, smp.phi);
            assert!(geom::dot(smp.normal, dir) > 0.0);
            let expect = geom::add(s.origin(), geom::scale(dir, smp.rho));
            assert!(geom::norm(geom::sub(expect, smp.position)) < 1e-12);
        }
    }

    #[test]
    fn state_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let s = random_surface(&mut rng, MeshParams::new(8, 6, 1).unwrap());
        let state: SurfaceState = serde_json::from_str(&s.to_json()).unwrap();
        assert_eq!(BeasSurface::from_state(&state).unwrap(), s);
    }

    proptest! {
        #[test]
        fn partition_of_unity_any_params(
            nt in 4usize..25, np in 4usize..25, scale in 0u32..=2, degree in 1u32..=5,
            r in 0.5f64..50.0, t in -10.0f64..10.0, p in 0.0f64..PI,
        ) {
            let params = MeshParams::with_degree(nt, np, scale, degree).unwrap();
            let s = BeasSurface::init_sphere([0.0; 3], r, params).unwrap();
            prop_assert!((s.evaluate(t, p) - r).abs() < 1e-9);
        }

        #[test]
        fn azimuthal_periodicity(seed in any::<u64>(), t in 0.0f64..TAU, p in 0.0f64..PI, scale in 0u32..=1) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_surface(&mut rng, MeshParams::new(10, 12, scale).unwrap());
            prop_assert!((s.evaluate(t, p) - s.evaluate(t + TAU, p)).abs() < 1e-12);
        }

        #[test]
        fn locality_of_coefficients(seed in any::<u64>(), kt in 0usize..16, kp in 0usize..16, scale in 0u32..=1) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = MeshParams::new(16, 16, scale).unwrap();
            let base = random_surface(&mut rng, params);
            let mut coeffs = base.coeffs().to_vec();
            coeffs[params.coeff_index(kt, kp)] += 1.0;
            let pert = BeasSurface::from_coeffs(base.origin(), params, coeffs).unwrap();
            let half = params.spacing() * 2.0;
            for _ in 0..50 {
                let t = rng.random_range(0.0..TAU);
                let p = rng.random_range(0.0..PI);
                let u = t * params.theta_rate();
                let v = p * params.phi_rate();
                let du = (u - kt as f64).rem_euclid(16.0);
                let du = du.min(16.0 - du);
                // zenith end knots are replicated, so boundary coefficients reach past the lattice
                let outside_phi = if kp == 0 {
                    v >= half
                } else if kp == 15 {
                    v <= 15.0 - half
                } else {
                    (v - kp as f64).abs() >= half
                };
                if du >= half || outside_phi {
                    prop_assert_eq!(pert.evaluate(t, p), base.evaluate(t, p));
                }
            }
        }
    }
}

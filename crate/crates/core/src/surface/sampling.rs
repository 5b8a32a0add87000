use std::f64::consts::{PI, TAU};

use super::{AxisStencil, MeshParams};
use crate::geom::{self, Vec3};

/// Regular angular sample grid over `[0, 2*pi) x [cap, pi - cap]` with solid-angle weights.
#[derive(Clone, Debug)]
pub struct AngularGrid {
    pub m_theta: usize,
    pub m_phi: usize,
    pub pole_cap: f64,
    thetas: Vec<f64>,
    phis: Vec<f64>,
    weights: Vec<f64>,
    dirs: Vec<Vec3>,
}

impl AngularGrid {
    pub fn new(m_theta: usize, m_phi: usize, pole_cap: f64) -> Self {
        let m_theta = m_theta.max(1);
        let m_phi = m_phi.max(1);
        let d_theta = TAU / m_theta as f64;
        let span = PI - 2.0 * pole_cap;
        let d_phi = span / m_phi as f64;
        let mut thetas = Vec::with_capacity(m_theta * m_phi);
        let mut phis = Vec::with_capacity(m_theta * m_phi);
        let mut weights = Vec::with_capacity(m_theta * m_phi);
        let mut dirs = Vec::with_capacity(m_theta * m_phi);
        for i in 0..m_theta {
            let theta = i as f64 * d_theta;
            for j in 0..m_phi {
                let phi = pole_cap + (j as f64 + 0.5) * d_phi;
                thetas.push(theta);
                phis.push(phi);
                weights.push(phi.sin() * d_theta * d_phi);
                dirs.push(geom::direction(theta, phi));
            }
        }
        AngularGrid {
            m_theta,
            m_phi,
            pole_cap,
            thetas,
            phis,
            weights,
            dirs,
        }
    }

    /// Grid for a mesh, excluding that mesh's pole caps.
    pub fn for_params(m_theta: usize, m_phi: usize, params: &MeshParams) -> Self {
        Self::new(m_theta, m_phi, params.pole_cap())
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn theta(&self, i: usize) -> f64 {
        self.thetas[i]
    }

    pub fn phi(&self, i: usize) -> f64 {
        self.phis[i]
    }

    /// Solid-angle weight `sin(phi) dtheta dphi`.
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn direction(&self, i: usize) -> Vec3 {
        self.dirs[i]
    }
}

/// Precomputed tensor-product basis weights for every sample of an [`AngularGrid`].
#[derive(Clone, Debug)]
pub struct BasisTable {
    offsets: Vec<usize>,
    index: Vec<u32>,
    weight: Vec<f64>,
    n_coeffs: usize,
}

impl BasisTable {
    pub fn new(params: &MeshParams, grid: &AngularGrid) -> Self {
        let mut offsets = Vec::with_capacity(grid.len() + 1);
        let mut index = Vec::new();
        let mut weight = Vec::new();
        offsets.push(0);
        for i in 0..grid.len() {
            let st = AxisStencil::theta(params, grid.theta(i), false);
            let sp = AxisStencil::phi(params, grid.phi(i), false);
            for (it, wt) in st.taps() {
                for (ip, wp) in sp.taps() {
                    index.push(params.coeff_index(it, ip) as u32);
                    weight.push(wt[0] * wp[0]);
                }
            }
            offsets.push(index.len());
        }
        BasisTable {
            offsets,
            index,
            weight,
            n_coeffs: params.knot_count(),
        }
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }

    #[inline]
    pub fn evaluate(&self, sample: usize, coeffs: &[f64]) -> f64 {
        let (a, b) = (self.offsets[sample], self.offsets[sample + 1]);
        self.index[a..b]
            .iter()
            .zip(&self.weight[a..b])
            .map(|(&k, &w)| coeffs[k as usize] * w)
            .sum()
    }

    /// Adds `value * basis` of one sample into a coefficient-shaped buffer.
    #[inline]
    pub fn scatter(&self, sample: usize, value: f64, out: &mut [f64]) {
        let (a, b) = (self.offsets[sample], self.offsets[sample + 1]);
        for (&k, &w) in self.index[a..b].iter().zip(&self.weight[a..b]) {
            out[k as usize] += value * w;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::BeasSurface;

    #[test]
    fn weights_integrate_to_sphere_area_without_caps() {
        let g = AngularGrid::new(64, 32, 0.0);
        let total: f64 = (0..g.len()).map(|i| g.weight(i)).sum();
        assert!((total - 4.0 * PI).abs() < 1e-2);
        let capped = AngularGrid::new(64, 32, 0.1);
        assert!((0..capped.len()).all(|i| capped.phi(i) > 0.1 && capped.phi(i) < PI - 0.1));
    }

    #[test]
    fn table_matches_direct_evaluation() {
        let params = MeshParams::new(12, 16, 0).unwrap();
        let coeffs: Vec<f64> = (0..params.knot_count()).map(|i| 5.0 + (i % 7) as f64).collect();
        let s = BeasSurface::from_coeffs([0.0; 3], params, coeffs).unwrap();
        let g = AngularGrid::for_params(16, 8, &params);
        let t = BasisTable::new(&params, &g);
        for i in 0..g.len() {
            assert!((t.evaluate(i, s.coeffs()) - s.evaluate(g.theta(i), g.phi(i))).abs() < 1e-12);
        }
    }
}

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use super::BeasSurface;
use crate::geom::{self, Point3};

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[usize; 3]>,
}

pub(super) fn build(s: &BeasSurface, m_theta: usize, m_phi: usize) -> TriangleMesh {
    let m_theta = m_theta.max(8);
    let m_phi = m_phi.max(8);
    let origin = s.origin();
    let thetas: Vec<f64> = (0..m_theta).map(|i| TAU * i as f64 / m_theta as f64).collect();

    // the explicit function need not agree across theta at a pole; use the mean radius
    let pole = |phi: f64| {
        let rho = thetas.iter().map(|&t| s.evaluate(t, phi)).sum::<f64>() / m_theta as f64;
        geom::add(origin, geom::scale([0.0, 0.0, phi.cos()], rho))
    };

    let mut vertices = Vec::with_capacity(m_theta * (m_phi - 2) + 2);
    vertices.push(pole(0.0));
    for j in 1..m_phi - 1 {
        let phi = PI * j as f64 / (m_phi - 1) as f64;
        for &t in &thetas {
            vertices.push(s.position(t, phi));
        }
    }
    vertices.push(pole(PI));

    let ring = |j: usize, i: usize| 1 + (j - 1) * m_theta + (i % m_theta);
    let south = vertices.len() - 1;
    let mut triangles = Vec::with_capacity(2 * m_theta * (m_phi - 2));
    for i in 0..m_theta {
        triangles.push([0, ring(1, i), ring(1, i + 1)]);
    }
    for j in 1..m_phi - 2 {
        for i in 0..m_theta {
            let (a, b) = (ring(j, i), ring(j, i + 1));
            let (c, d) = (ring(j + 1, i), ring(j + 1, i + 1));
            triangles.push([a, c, d]);
            triangles.push([a, d, b]);
        }
    }
    for i in 0..m_theta {
        triangles.push([south, ring(m_phi - 2, i + 1), ring(m_phi - 2, i)]);
    }
    TriangleMesh {
        vertices,
        triangles,
    }
}

impl TriangleMesh {
    pub fn edge_count(&self) -> usize {
        let mut edges = std::collections::BTreeSet::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.triangles.len() as i64
    }

    /// Enclosed volume by the divergence theorem (positive for outward winding).
    pub fn volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i]);
                geom::dot(a, geom::cross(b, c)) / 6.0
            })
            .sum()
    }

    pub fn to_obj(&self) -> String {
        let mut out = String::with_capacity(self.vertices.len() * 40 + self.triangles.len() * 24);
        for v in &self.vertices {
            let _ = writeln!(out, "v {:.6} {:.6} {:.6}", v[0], v[1], v[2]);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        out
    }
}

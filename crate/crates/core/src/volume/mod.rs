//! Scalar voxel volumes with physical spacing.
//!
//! Voxel `(x, y, z)` lives at `data[(z * ny + y) * nx + x]` and its center sits at
//! `(index + 0.5) * spacing` millimetres from the grid corner.

pub mod io;
mod phantom;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point3;

pub use io::{load_volume, save_volume, VolumeHeader};
pub use phantom::{generate_phantom, Phantom, PhantomShape, PhantomSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeKind {
    Image,
    Probability,
    Mask,
}

impl VolumeKind {
    pub fn name(self) -> &'static str {
        match self {
            VolumeKind::Image => "image",
            VolumeKind::Probability => "probability",
            VolumeKind::Mask => "mask",
        }
    }
}

/// Grid extent and voxel spacing (mm).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidVolume(format!("zero dimension in {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidVolume(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        Ok(Grid { dims, spacing })
    }

    pub fn isotropic(n: usize, spacing: f64) -> Self {
        Grid {
            dims: [n; 3],
            spacing: [spacing; 3],
        }
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let y = (idx / self.dims[0]) % self.dims[1];
        let z = idx / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    /// Physical position of a voxel center.
    #[inline]
    pub fn center(&self, x: usize, y: usize, z: usize) -> Point3 {
        [
            (x as f64 + 0.5) * self.spacing[0],
            (y as f64 + 0.5) * self.spacing[1],
            (z as f64 + 0.5) * self.spacing[2],
        ]
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Physical extent of the grid along each axis.
    pub fn extent(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.spacing[0],
            self.dims[1] as f64 * self.spacing[1],
            self.dims[2] as f64 * self.spacing[2],
        ]
    }

    pub fn contains(&self, p: Point3) -> bool {
        let e = self.extent();
        (0..3).all(|a| p[a] >= 0.0 && p[a] <= e[a])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelVolume {
    grid: Grid,
    kind: VolumeKind,
    data: Vec<f32>,
}

impl VoxelVolume {
    pub fn new(grid: Grid, kind: VolumeKind, data: Vec<f32>) -> Result<Self> {
        let grid = Grid::new(grid.dims, grid.spacing)?;
        if data.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                actual: data.len(),
            });
        }
        validate_values(kind, &data)?;
        Ok(VoxelVolume { grid, kind, data })
    }

    pub fn zeros(grid: Grid, kind: VolumeKind) -> Self {
        VoxelVolume {
            data: vec![0.0; grid.len()],
            grid,
            kind,
        }
    }

    /// Builds a mask from a per-voxel predicate.
    pub fn mask_from_fn(grid: Grid, mut inside: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for z in 0..grid.dims[2] {
            for y in 0..grid.dims[1] {
                for x in 0..grid.dims[0] {
                    data.push(if inside(x, y, z) { 1.0 } else { 0.0 });
                }
            }
        }
        VoxelVolume {
            grid,
            kind: VolumeKind::Mask,
            data,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.grid.spacing
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.grid.index(x, y, z)]
    }

    /// Number of voxels with a non-zero value.
    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn expect_kind(&self, expected: VolumeKind) -> Result<()> {
        if self.kind != expected {
            return Err(Error::WrongKind {
                expected: expected.name(),
                actual: self.kind.name(),
            });
        }
        Ok(())
    }

    /// Reinterprets a mask as a (binary) probability map.
    pub fn to_probability(&self) -> Result<VoxelVolume> {
        match self.kind {
            VolumeKind::Probability => Ok(self.clone()),
            VolumeKind::Mask => Ok(VoxelVolume {
                grid: self.grid,
                kind: VolumeKind::Probability,
                data: self.data.clone(),
            }),
            VolumeKind::Image => Err(Error::WrongKind {
                expected: "probability or mask",
                actual: "image",
            }),
        }
    }

    /// Binarizes a probability map: voxel is 1 iff its value is at least `t`.
    pub fn threshold(&self, t: f64) -> Result<VoxelVolume> {
        self.expect_kind(VolumeKind::Probability)?;
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "threshold must lie in (0,1), got {t}"
            )));
        }
        let data = self
            .data
            .iter()
            .map(|&v| if f64::from(v) >= t { 1.0 } else { 0.0 })
            .collect();
        Ok(VoxelVolume {
            grid: self.grid,
            kind: VolumeKind::Mask,
            data,
        })
    }

    /// Mean physical position of the foreground voxel centers.
    pub fn center_of_mass(&self) -> Result<Point3> {
        self.expect_kind(VolumeKind::Mask)?;
        let mut sum = [0.0f64; 3];
        let mut count = 0usize;
        for (idx, &v) in self.data.iter().enumerate() {
            if v != 0.0 {
                let [x, y, z] = self.grid.coords(idx);
                let c = self.grid.center(x, y, z);
                for a in 0..3 {
                    sum[a] += c[a];
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::EmptyMask);
        }
        Ok(sum.map(|s| s / count as f64))
    }

    /// Radius of the sphere with the same volume as the foreground.
    pub fn equivalent_radius(&self) -> Result<f64> {
        self.expect_kind(VolumeKind::Mask)?;
        let count = self.count_nonzero();
        if count == 0 {
            return Err(Error::EmptyMask);
        }
        let volume = count as f64 * self.grid.voxel_volume();
        Ok((3.0 * volume / (4.0 * std::f64::consts::PI)).cbrt())
    }

    #[inline]
    fn value_or_zero(&self, x: isize, y: isize, z: isize) -> f64 {
        let [nx, ny, nz] = self.grid.dims;
        if x < 0 || y < 0 || z < 0 || x >= nx as isize || y >= ny as isize || z >= nz as isize {
            0.0
        } else {
            f64::from(self.data[self.grid.index(x as usize, y as usize, z as usize)])
        }
    }

    /// Trilinear interpolation at a physical point. Voxels outside the grid read as 0.
    #[inline]
    pub fn sample_trilinear(&self, p: Point3) -> f64 {
        self.sample_with_gradient(p).0
    }

    /// Trilinear value and its spatial gradient (per mm) at `p`.
    pub fn sample_with_gradient(&self, p: Point3) -> (f64, [f64; 3]) {
        let s = self.grid.spacing;
        let n = self.grid.dims;
        let q = [p[0] / s[0] - 0.5, p[1] / s[1] - 0.5, p[2] / s[2] - 0.5];
        for a in 0..3 {
            if !(q[a] > -1.0 && q[a] < n[a] as f64) {
                return (0.0, [0.0; 3]);
            }
        }
        let i0 = q.map(|v| v.floor());
        let f = [q[0] - i0[0], q[1] - i0[1], q[2] - i0[2]];
        let (x0, y0, z0) = (i0[0] as isize, i0[1] as isize, i0[2] as isize);

        let interior = x0 >= 0
            && y0 >= 0
            && z0 >= 0
            && x0 + 1 < n[0] as isize
            && y0 + 1 < n[1] as isize
            && z0 + 1 < n[2] as isize;
        let mut c = [0.0f64; 8];
        if interior {
            let base = self.grid.index(x0 as usize, y0 as usize, z0 as usize);
            let sy = n[0];
            let sz = n[0] * n[1];
            let d = &self.data;
            c[0] = f64::from(d[base]);
            c[1] = f64::from(d[base + 1]);
            c[2] = f64::from(d[base + sy]);
            c[3] = f64::from(d[base + sy + 1]);
            c[4] = f64::from(d[base + sz]);
            c[5] = f64::from(d[base + sz + 1]);
            c[6] = f64::from(d[base + sz + sy]);
            c[7] = f64::from(d[base + sz + sy + 1]);
        } else {
            for (k, ck) in c.iter_mut().enumerate() {
                let dx = (k & 1) as isize;
                let dy = ((k >> 1) & 1) as isize;
                let dz = ((k >> 2) & 1) as isize;
                *ck = self.value_or_zero(x0 + dx, y0 + dy, z0 + dz);
            }
        }
        let [fx, fy, fz] = f;
        // interpolate along x, then y, then z
        let c00 = c[0] + (c[1] - c[0]) * fx;
        let c10 = c[2] + (c[3] - c[2]) * fx;
        let c01 = c[4] + (c[5] - c[4]) * fx;
        let c11 = c[6] + (c[7] - c[6]) * fx;
        let c0 = c00 + (c10 - c00) * fy;
        let c1 = c01 + (c11 - c01) * fy;
        let value = c0 + (c1 - c0) * fz;

        let dx0 = (c[1] - c[0]) + ((c[3] - c[2]) - (c[1] - c[0])) * fy;
        let dx1 = (c[5] - c[4]) + ((c[7] - c[6]) - (c[5] - c[4])) * fy;
        let gx = dx0 + (dx1 - dx0) * fz;
        let gy = (c10 - c00) + ((c11 - c01) - (c10 - c00)) * fz;
        let gz = c1 - c0;
        (value, [gx / s[0], gy / s[1], gz / s[2]])
    }

    pub fn same_grid(&self, other: &VoxelVolume) -> bool {
        self.grid == other.grid
    }
}

fn validate_values(kind: VolumeKind, data: &[f32]) -> Result<()> {
    if let Some(v) = data.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidVolume(format!("non-finite value {v}")));
    }
    match kind {
        VolumeKind::Image => Ok(()),
        VolumeKind::Probability => match data.iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
            Some(v) => Err(Error::InvalidVolume(format!(
                "probability value {v} outside [0,1]"
            ))),
            None => Ok(()),
        },
        VolumeKind::Mask => match data.iter().find(|&&v| v != 0.0 && v != 1.0) {
            Some(v) => Err(Error::InvalidVolume(format!("mask value {v} not in {{0,1}}"))),
            None => Ok(()),
        },
    }
}

//! Synthetic image / probability / ground-truth triples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Grid, VolumeKind, VoxelVolume};
use crate::error::{Error, Result};
use crate::geom::{self, Point3};

const IMAGE_BACKGROUND: f64 = 0.2;
const IMAGE_FOREGROUND: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomShape {
    Sphere,
    Ellipsoid,
    LobedBlob,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub shape: PhantomShape,
    pub center: Point3,
    pub radii: [f64; 3],
    pub lobe_amplitude: f64,
    /// Azimuthal lobe count of the lobed blob.
    pub azimuthal_lobes: u32,
    /// Zenith lobe count of the lobed blob.
    pub zenith_lobes: u32,
    pub blur_sigma_mm: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            shape: PhantomShape::Sphere,
            center: [32.0; 3],
            radii: [10.0; 3],
            lobe_amplitude: 0.0,
            azimuthal_lobes: 3,
            zenith_lobes: 3,
            blur_sigma_mm: 0.0,
            noise_sigma: 0.0,
            seed: 0,
            dims: [64; 3],
            spacing_mm: [1.0; 3],
        }
    }
}

pub struct Phantom {
    pub image: VoxelVolume,
    pub prob: VoxelVolume,
    pub truth: VoxelVolume,
}

/// Lobe pattern in [-1, 1] for a unit direction:
/// `0.6 sin^m(phi) cos(m theta) + 0.4 cos(k phi)`, both terms polynomial in `(x, y, z)`.
fn lobe_pattern(dir: [f64; 3], m: u32, k: u32) -> f64 {
    let [x, y, z] = dir;
    // Re((x + iy)^m)
    let (mut re, mut im) = (1.0f64, 0.0f64);
    for _ in 0..m {
        (re, im) = (re * x - im * y, re * y + im * x);
    }
    // Chebyshev T_k(z) = cos(k phi)
    let (mut t0, mut t1) = (1.0f64, z);
    let cheb = if k == 0 {
        1.0
    } else {
        for _ in 1..k {
            (t0, t1) = (t1, 2.0 * z * t1 - t0);
        }
        t1
    };
    0.6 * re + 0.4 * cheb
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<Grid> {
        let grid = Grid::new(self.dims, self.spacing_mm)?;
        if self.radii.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "radii must be positive, got {:?}",
                self.radii
            )));
        }
        if !(0.0..=0.5).contains(&self.lobe_amplitude) {
            return Err(Error::InvalidParameter(format!(
                "lobe amplitude {} outside [0, 0.5]",
                self.lobe_amplitude
            )));
        }
        if self.blur_sigma_mm < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::InvalidParameter("negative blur or noise sigma".into()));
        }
        let reach = 1.0 + self.effective_lobe();
        let extent = grid.extent();
        for a in 0..3 {
            let r = self.effective_radii()[a] * reach;
            if self.center[a] - r < 0.0 || self.center[a] + r > extent[a] {
                return Err(Error::InvalidParameter(format!(
                    "shape exceeds the volume extent along axis {a}"
                )));
            }
        }
        Ok(grid)
    }

    fn effective_radii(&self) -> [f64; 3] {
        match self.shape {
            PhantomShape::Sphere => [self.radii[0]; 3],
            _ => self.radii,
        }
    }

    fn effective_lobe(&self) -> f64 {
        match self.shape {
            PhantomShape::LobedBlob => self.lobe_amplitude,
            _ => 0.0,
        }
    }

    /// Analytic boundary distance (mm) from the center along a unit direction.
    pub fn boundary_radius(&self, dir: [f64; 3]) -> f64 {
        let radii = self.effective_radii();
        let v = [dir[0] / radii[0], dir[1] / radii[1], dir[2] / radii[2]];
        let len = geom::norm(v);
        let vhat = geom::scale(v, 1.0 / len);
        (1.0 + self.effective_lobe() * lobe_pattern(vhat, self.azimuthal_lobes, self.zenith_lobes)) / len
    }

    pub fn contains(&self, p: Point3) -> bool {
        let radii = self.effective_radii();
        let d = [
            (p[0] - self.center[0]) / radii[0],
            (p[1] - self.center[1]) / radii[1],
            (p[2] - self.center[2]) / radii[2],
        ];
        let r = geom::norm(d);
        if r == 0.0 {
            return true;
        }
        r <= 1.0 + self.effective_lobe() * lobe_pattern(geom::scale(d, 1.0 / r), self.azimuthal_lobes, self.zenith_lobes)
    }
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    let grid = spec.validate()?;
    let truth = VoxelVolume::mask_from_fn(grid, |x, y, z| spec.contains(grid.center(x, y, z)));

    let blurred = if spec.blur_sigma_mm > 0.0 {
        gaussian_blur(&grid, truth.data(), spec.blur_sigma_mm)
    } else {
        truth.data().to_vec()
    };
    let prob_data: Vec<f32> = blurred.iter().map(|v| v.clamp(0.0, 1.0)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma).expect("validated sigma"));
    let image_data: Vec<f32> = prob_data
        .iter()
        .map(|&p| {
            let base = IMAGE_BACKGROUND + (IMAGE_FOREGROUND - IMAGE_BACKGROUND) * f64::from(p);
            let n = noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
            (base + n) as f32
        })
        .collect();

    Ok(Phantom {
        image: VoxelVolume::new(grid, VolumeKind::Image, image_data)?,
        prob: VoxelVolume::new(grid, VolumeKind::Probability, prob_data)?,
        truth,
    })
}

fn gaussian_kernel(sigma_vox: f64) -> Vec<f64> {
    let radius = (3.0 * sigma_vox).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma_vox * sigma_vox)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with zero padding outside the grid.
fn gaussian_blur(grid: &Grid, data: &[f32], sigma_mm: f64) -> Vec<f32> {
    let mut cur: Vec<f64> = data.iter().map(|&v| f64::from(v)).collect();
    let dims = grid.dims;
    let strides = [1, dims[0], dims[0] * dims[1]];
    for axis in 0..3 {
        let kernel = gaussian_kernel(sigma_mm / grid.spacing[axis]);
        let r = (kernel.len() / 2) as isize;
        let n = dims[axis] as isize;
        let stride = strides[axis];
        let mut out = vec![0.0; cur.len()];
        for (idx, o) in out.iter_mut().enumerate() {
            let pos = grid.coords(idx)[axis] as isize;
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let q = pos + k as isize - r;
                if q >= 0 && q < n {
                    let j = (idx as isize + (q - pos) * stride as isize) as usize;
                    acc += w * cur[j];
                }
            }
            *o = acc;
        }
        cur = out;
    }
    cur.into_iter().map(|v| v as f32).collect()
}

use rayon::prelude::*;

use super::{spherical_of, BeasSurface};
use crate::geom;
use crate::volume::{Grid, VolumeKind, VoxelVolume};

/// A voxel is foreground iff its center lies within `psi` of the origin along its direction.
pub(super) fn rasterize(s: &BeasSurface, grid: &Grid) -> VoxelVolume {
    // psi is a convex combination of coefficients, so these bounds skip most evaluations
    let (c_min, c_max) = s.coeff_range();
    let origin = s.origin();
    let [nx, ny, _] = grid.dims;
    let slab = nx * ny;
    let mut data = vec![0.0f32; grid.len()];
    data.par_chunks_mut(slab).enumerate().for_each(|(z, plane)| {
        for y in 0..ny {
            for x in 0..nx {
                let p = grid.center(x, y, z);
                let r = geom::norm(geom::sub(p, origin));
                let inside = if r > c_max {
                    false
                } else if r <= c_min {
                    true
                } else {
                    match spherical_of(origin, p) {
                        Ok((r, theta, phi)) => r <= s.evaluate(theta, phi),
                        Err(_) => s.evaluate(0.0, 0.0) >= 0.0,
                    }
                };
                if inside {
                    plane[y * nx + x] = 1.0;
                }
            }
        }
    });
    VoxelVolume::new(*grid, VolumeKind::Mask, data).expect("binary mask on a valid grid")
}

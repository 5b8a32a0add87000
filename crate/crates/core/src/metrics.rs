//! Overlap, distance and topology measures on binary masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Grid, VoxelVolume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceUnits {
    Voxel,
    Mm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub dice: f64,
    pub hausdorff: f64,
    /// Directed distances `a -> b` and `b -> a`.
    pub directed: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub components: usize,
    pub cavities: usize,
    pub volume_mm3: f64,
}

fn check_grids(a: &VoxelVolume, b: &VoxelVolume) -> Result<()> {
    if a.same_grid(b) {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// `2|A and B| / (|A| + |B|)`, with two empty masks scoring 1.
pub fn dice(a: &VoxelVolume, b: &VoxelVolume) -> Result<f64> {
    check_grids(a, b)?;
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x != 0.0, y != 0.0);
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Foreground voxels with at least one background (or off-grid) face neighbour.
pub fn boundary_voxels(m: &VoxelVolume) -> Vec<[usize; 3]> {
    let [nx, ny, nz] = m.dims();
    let fg = |x: isize, y: isize, z: isize| {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < nx
            && (y as usize) < ny
            && (z as usize) < nz
            && m.get(x as usize, y as usize, z as usize) != 0.0
    };
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if m.get(x, y, z) == 0.0 {
                    continue;
                }
                let (xi, yi, zi) = (x as isize, y as isize, z as isize);
                let interior = fg(xi - 1, yi, zi)
                    && fg(xi + 1, yi, zi)
                    && fg(xi, yi - 1, zi)
                    && fg(xi, yi + 1, zi)
                    && fg(xi, yi, zi - 1)
                    && fg(xi, yi, zi + 1);
                if !interior {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

/// Lower envelope of parabolas `w (q - p)^2 + f[p]` (Felzenszwalb and Huttenlocher).
fn edt_1d(f: &[f64], w: f64, out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    let mut first = None;
    for q in 0..n {
        if f[q].is_finite() {
            first = Some(q);
            break;
        }
    }
    let Some(q0) = first else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    v[0] = q0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in q0 + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + w * (q * q) as f64) - (f[p] + w * (p * p) as f64)) / (2.0 * w * (q - p) as f64);
            if s <= z[k] {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = w * d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every voxel center to the nearest seed.
fn squared_distance_transform(grid: &Grid, seeds: &[[usize; 3]], weights: [f64; 3]) -> Vec<f64> {
    let [nx, ny, nz] = grid.dims;
    let mut d = vec![f64::INFINITY; grid.len()];
    for &[x, y, z] in seeds {
        d[grid.index(x, y, z)] = 0.0;
    }
    let n_max = nx.max(ny).max(nz);
    let (mut f, mut out) = (vec![0.0; n_max], vec![0.0; n_max]);
    let (mut v, mut zb) = (vec![0usize; n_max], vec![0.0; n_max + 1]);
    let dims = [nx, ny, nz];
    for axis in 0..3 {
        let n = dims[axis];
        let (o1, o2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for b in 0..dims[o2] {
            for a in 0..dims[o1] {
                let idx = |i: usize| {
                    let mut c = [0; 3];
                    c[axis] = i;
                    c[o1] = a;
                    c[o2] = b;
                    grid.index(c[0], c[1], c[2])
                };
                for i in 0..n {
                    f[i] = d[idx(i)];
                }
                edt_1d(&f[..n], weights[axis], &mut out[..n], &mut v, &mut zb);
                for i in 0..n {
                    d[idx(i)] = out[i];
                }
            }
        }
    }
    d
}

fn axis_weights(grid: &Grid, units: DistanceUnits) -> [f64; 3] {
    match units {
        DistanceUnits::Voxel => [1.0; 3],
        DistanceUnits::Mm => grid.spacing.map(|s| s * s),
    }
}

/// Directed Hausdorff distance between boundary voxel centers of `a` and `b`.
pub fn directed_hausdorff(a: &VoxelVolume, b: &VoxelVolume, units: DistanceUnits) -> Result<f64> {
    check_grids(a, b)?;
    let ba = boundary_voxels(a);
    let bb = boundary_voxels(b);
    if ba.is_empty() || bb.is_empty() {
        return Err(Error::EmptyMask);
    }
    let grid = a.grid();
    let dt = squared_distance_transform(grid, &bb, axis_weights(grid, units));
    let worst = ba
        .iter()
        .map(|&[x, y, z]| dt[grid.index(x, y, z)])
        .fold(0.0f64, f64::max);
    Ok(worst.sqrt())
}

/// Symmetric Hausdorff distance between boundary voxel centers.
pub fn hausdorff(a: &VoxelVolume, b: &VoxelVolume, units: DistanceUnits) -> Result<f64> {
    Ok(directed_hausdorff(a, b, units)?.max(directed_hausdorff(b, a, units)?))
}

pub fn compare(a: &VoxelVolume, b: &VoxelVolume, units: DistanceUnits) -> Result<MetricResult> {
    let ab = directed_hausdorff(a, b, units)?;
    let ba = directed_hausdorff(b, a, units)?;
    Ok(MetricResult {
        dice: dice(a, b)?,
        hausdorff: ab.max(ba),
        directed: [ab, ba],
    })
}

/// Labels connected sets of voxels where `member` holds; returns the label count and
/// whether each label touches the grid border.
fn label_components(grid: &Grid, member: impl Fn(usize) -> bool, full: bool) -> Vec<bool> {
    let [nx, ny, nz] = grid.dims;
    let mut seen = vec![false; grid.len()];
    let mut touches = Vec::new();
    let mut stack = Vec::new();
    let offsets: Vec<[isize; 3]> = if full {
        let mut o = Vec::with_capacity(26);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if (dx, dy, dz) != (0, 0, 0) {
                        o.push([dx, dy, dz]);
                    }
                }
            }
        }
        o
    } else {
        vec![[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]
    };
    for start in 0..grid.len() {
        if seen[start] || !member(start) {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut border = false;
        while let Some(i) = stack.pop() {
            let [x, y, z] = grid.coords(i);
            if x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz {
                border = true;
            }
            for o in &offsets {
                let (qx, qy, qz) = (x as isize + o[0], y as isize + o[1], z as isize + o[2]);
                if qx < 0 || qy < 0 || qz < 0 || qx as usize >= nx || qy as usize >= ny || qz as usize >= nz {
                    continue;
                }
                let j = grid.index(qx as usize, qy as usize, qz as usize);
                if !seen[j] && member(j) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        touches.push(border);
    }
    touches
}

/// 6-connected foreground components, 26-connected enclosed background cavities,
/// and foreground volume.
pub fn component_stats(m: &VoxelVolume) -> ComponentStats {
    let grid = m.grid();
    let data = m.data();
    let components = label_components(grid, |i| data[i] != 0.0, false).len();
    let cavities = label_components(grid, |i| data[i] == 0.0, true)
        .into_iter()
        .filter(|touches| !touches)
        .count();
    ComponentStats {
        components,
        cavities,
        volume_mm3: m.count_nonzero() as f64 * grid.voxel_volume(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VolumeKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_mask(rng: &mut ChaCha8Rng, n: usize, p: f64) -> VoxelVolume {
        let grid = Grid::isotropic(n, 1.0);
        VoxelVolume::mask_from_fn(grid, |_, _, _| rng.random_bool(p))
    }

    fn brute_hausdorff(a: &VoxelVolume, b: &VoxelVolume) -> f64 {
        let (ba, bb) = (boundary_voxels(a), boundary_voxels(b));
        let directed = |from: &[[usize; 3]], to: &[[usize; 3]]| {
            from.iter()
                .map(|p| {
                    to.iter()
                        .map(|q| (0..3).map(|k| (p[k] as f64 - q[k] as f64).powi(2)).sum::<f64>())
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0f64, f64::max)
                .sqrt()
        };
        directed(&ba, &bb).max(directed(&bb, &ba))
    }

    #[test]
    fn dice_cases() {
        let grid = Grid::isotropic(8, 1.0);
        let a = VoxelVolume::mask_from_fn(grid, |x, _, _| x < 4);
        let b = VoxelVolume::mask_from_fn(grid, |x, _, _| x >= 4);
        let e = VoxelVolume::zeros(grid, VolumeKind::Mask);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        let other = VoxelVolume::zeros(Grid::isotropic(9, 1.0), VolumeKind::Mask);
        assert!(matches!(dice(&a, &other), Err(Error::GridMismatch)));
    }

    #[test]
    fn hausdorff_two_single_voxels() {
        let grid = Grid::new([8, 8, 8], [1.0, 1.0, 2.0]).unwrap();
        let a = VoxelVolume::mask_from_fn(grid, |x, y, z| (x, y, z) == (1, 2, 2));
        let b = VoxelVolume::mask_from_fn(grid, |x, y, z| (x, y, z) == (1, 2, 5));
        assert_eq!(hausdorff(&a, &b, DistanceUnits::Voxel).unwrap(), 3.0);
        assert_eq!(hausdorff(&a, &b, DistanceUnits::Mm).unwrap(), 6.0);
        assert_eq!(hausdorff(&a, &a, DistanceUnits::Voxel).unwrap(), 0.0);
        let e = VoxelVolume::zeros(grid, VolumeKind::Mask);
        assert!(matches!(hausdorff(&a, &e, DistanceUnits::Voxel), Err(Error::EmptyMask)));
    }

    #[test]
    fn hausdorff_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let p = rng.random_range(0.05..0.6);
            let a = random_mask(&mut rng, 12, p);
            let b = random_mask(&mut rng, 12, 0.3);
            let r = compare(&a, &b, DistanceUnits::Voxel).unwrap();
            assert_eq!(r.hausdorff, brute_hausdorff(&a, &b));
            assert_eq!(r.hausdorff, r.directed[0].max(r.directed[1]));
        }
    }

    #[test]
    fn component_cases() {
        let grid = Grid::isotropic(32, 1.0);
        let ball = VoxelVolume::mask_from_fn(grid, |x, y, z| {
            let d = [x, y, z].map(|c| c as f64 + 0.5 - 16.0);
            d.iter().map(|v| v * v).sum::<f64>() <= 100.0
        });
        let cs = component_stats(&ball);
        assert_eq!((cs.components, cs.cavities), (1, 0));
        let analytic = 4.0 / 3.0 * PI * 1000.0;
        assert!((cs.volume_mm3 - analytic).abs() / analytic < 0.02);

        let shell = VoxelVolume::mask_from_fn(grid, |x, y, z| {
            let r2: f64 = [x, y, z].map(|c| c as f64 + 0.5 - 16.0).iter().map(|v| v * v).sum();
            (36.0..=100.0).contains(&r2)
        });
        let cs = component_stats(&shell);
        assert_eq!((cs.components, cs.cavities), (1, 1));
        assert_eq!(cs.volume_mm3, shell.count_nonzero() as f64);

        let two = VoxelVolume::mask_from_fn(grid, |x, y, z| {
            let r = |c: [f64; 3]| -> f64 {
                [x, y, z]
                    .iter()
                    .zip(c)
                    .map(|(&v, c)| (v as f64 + 0.5 - c).powi(2))
                    .sum()
            };
            r([8.0; 3]) <= 16.0 || r([24.0; 3]) <= 16.0
        });
        let cs = component_stats(&two);
        assert_eq!((cs.components, cs.cavities), (2, 0));
    }

    #[test]
    fn diagonal_voxels_are_separate_foreground_components() {
        let grid = Grid::isotropic(4, 1.0);
        let m = VoxelVolume::mask_from_fn(grid, |x, y, z| (x, y, z) == (1, 1, 1) || (x, y, z) == (2, 2, 2));
        assert_eq!(component_stats(&m).components, 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn metrics_are_symmetric(seed in any::<u64>(), pa in 0.05f64..0.7, pb in 0.05f64..0.7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_mask(&mut rng, 8, pa);
            let b = random_mask(&mut rng, 8, pb);
            prop_assume!(a.count_nonzero() > 0 && b.count_nonzero() > 0);
            prop_assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
            let h1 = hausdorff(&a, &b, DistanceUnits::Voxel).unwrap();
            let h2 = hausdorff(&b, &a, DistanceUnits::Voxel).unwrap();
            prop_assert_eq!(h1, h2);
            prop_assert!(h1 >= 0.0);
            prop_assert_eq!(h1 == 0.0, boundary_voxels(&a) == boundary_voxels(&b));
        }
    }
}

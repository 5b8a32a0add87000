//! Mesh and scale selection from simulated clicks.
//!
//! Each candidate mesh is fitted to a label, then receives a few simulated boundary
//! clicks. A good mesh fits the label closely, reacts to a click without spiking near it
//! (curvature change in the foreground cap) and without dragging unrelated parts of the
//! surface along (radial change in the background). The tuning energy is
//! `1/dsc + hd + 2 dK_fg + dr_bg`, in voxel units.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::EnergyConfig;
use crate::error::{Error, Result};
use crate::geom;
use crate::metrics::{dice, hausdorff, DistanceUnits};
use crate::session::{Session, UserPoint};
use crate::surface::{AngularGrid, BeasSurface, MeshParams};
use crate::volume::VoxelVolume;

/// Inclusive integer range with a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRange {
    pub start: usize,
    pub end: usize,
    pub step: usize,
}

impl StepRange {
    pub fn new(start: usize, end: usize, step: usize) -> Self {
        StepRange { start, end, step }
    }

    pub fn values(&self) -> Vec<usize> {
        (self.start..=self.end).step_by(self.step.max(1)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningProtocol {
    pub n_points: usize,
    /// Relative radial offset range of simulated clicks.
    pub offset: [f64; 2],
    /// Angular radius (rad) of the foreground cap around a click.
    pub tau_fg: f64,
    /// Angular radius (rad) beyond which samples count as background.
    pub tau_bg: f64,
    pub seed: u64,
    pub theta_range: StepRange,
    pub phi_range: StepRange,
    pub scales: Vec<u32>,
    /// Relative band above the minimum energy that defines the refined set.
    pub refine_threshold: f64,
    /// Measure DSC and HD after the clicks instead of on the initial fit.
    pub after_interaction: bool,
    /// Angular samples `[m_theta, m_phi]` used to measure responses.
    pub response_samples: [usize; 2],
    pub energy: EnergyConfig,
}

impl Default for TuningProtocol {
    fn default() -> Self {
        // two zenith knot spacings of a [12, 16] mesh
        let tau_fg = 2.0 * PI / 15.0;
        TuningProtocol {
            n_points: 5,
            offset: [0.10, 0.20],
            tau_fg,
            tau_bg: 2.0 * tau_fg,
            seed: 0,
            theta_range: StepRange::new(6, 24, 2),
            phi_range: StepRange::new(6, 24, 2),
            scales: vec![0, 1],
            refine_threshold: 0.10,
            after_interaction: false,
            response_samples: [64, 32],
            energy: EnergyConfig::interactive(),
        }
    }
}

impl TuningProtocol {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        let [lo, hi] = self.offset;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return bad("offset range must satisfy 0 < lo < hi < 1");
        }
        if !(0.0 < self.tau_fg && self.tau_fg < self.tau_bg && self.tau_bg < PI) {
            return bad("angular radii must satisfy 0 < tau_fg < tau_bg < pi");
        }
        if self.theta_range.values().is_empty() || self.phi_range.values().is_empty() || self.scales.is_empty() {
            return bad("search ranges must be non-empty");
        }
        if !(self.refine_threshold >= 0.0) {
            return bad("refine threshold must be non-negative");
        }
        self.energy.validate()
    }

    /// Every `(n_theta, n_phi, scale)` on the coarse grid, scale-major.
    pub fn coarse_grid(&self) -> Result<Vec<MeshParams>> {
        let mut out = Vec::new();
        for &s in &self.scales {
            for t in self.theta_range.values() {
                for p in self.phi_range.values() {
                    out.push(MeshParams::new(t, p, s)?);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshKey {
    pub n_theta: usize,
    pub n_phi: usize,
    pub scale: u32,
}

impl From<&MeshParams> for MeshKey {
    fn from(p: &MeshParams) -> Self {
        MeshKey {
            n_theta: p.n_theta,
            n_phi: p.n_phi,
            scale: p.scale,
        }
    }
}

impl MeshKey {
    pub fn knot_count(&self) -> usize {
        self.n_theta * self.n_phi
    }

    pub fn params(&self) -> Result<MeshParams> {
        MeshParams::new(self.n_theta, self.n_phi, self.scale)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningCandidate {
    pub params: MeshKey,
    pub dsc: f64,
    pub hd: f64,
    #[serde(rename = "dK_fg")]
    pub dk_fg: f64,
    pub dr_bg: f64,
    #[serde(rename = "E")]
    pub energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub params: MeshKey,
    pub reason: String,
}

/// Coarse search over one label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseResult {
    pub candidates: Vec<TuningCandidate>,
    pub excluded: Vec<Excluded>,
    pub global_minimum: TuningCandidate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub seed: u64,
    pub protocol: TuningProtocol,
    pub coarse: CoarseResult,
    /// Refined grid with energies averaged over the refinement labels.
    pub refined_candidates: Vec<TuningCandidate>,
    pub refined_set: Vec<MeshKey>,
    pub chosen: MeshKey,
    /// True when every refined candidate failed and the coarse winner was kept.
    pub fell_back: bool,
}

impl TuningReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Energy landscape of the coarse search as CSV.
    pub fn landscape_csv(&self) -> String {
        let mut out = String::from("n_theta,n_phi,scale,dsc,hd,dK_fg,dr_bg,E\n");
        for c in &self.coarse.candidates {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                c.params.n_theta, c.params.n_phi, c.params.scale, c.dsc, c.hd, c.dk_fg, c.dr_bg, c.energy
            ));
        }
        out
    }
}

/// Simulated clicks: uniform directions, radius `psi * (1 +/- U[lo, hi])`.
pub fn simulate_points(s: &BeasSurface, proto: &TuningProtocol) -> Vec<UserPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(proto.seed);
    let [lo, hi] = proto.offset;
    (0..proto.n_points)
        .map(|i| {
            let theta = rng.random_range(0.0..TAU);
            let phi = rng.random_range(-1.0f64..=1.0).acos();
            let offset = rng.random_range(lo..=hi);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let rho = s.evaluate(theta, phi) * (1.0 + sign * offset);
            UserPoint::from_spherical(i as u64 + 1, s.origin(), theta, phi, rho)
                .expect("simulated radius is positive")
        })
        .collect()
}

/// Mean curvature change near a click and mean radial change away from it, in voxel units.
///
/// Both are solid-angle weighted means over a pole-capped sample grid; samples where the
/// curvature is undefined are skipped. An empty region contributes zero.
pub fn interaction_response(
    before: &BeasSurface,
    after: &BeasSurface,
    pt: &UserPoint,
    proto: &TuningProtocol,
    voxel_mm: f64,
) -> Result<(f64, f64)> {
    if before.params() != after.params() || before.origin() != after.origin() {
        return Err(Error::InvalidParameter("surfaces differ in mesh or origin".into()));
    }
    let grid = AngularGrid::for_params(proto.response_samples[0], proto.response_samples[1], before.params());
    let (mut k_sum, mut k_w, mut r_sum, mut r_w) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..grid.len() {
        let (theta, phi, w) = (grid.theta(i), grid.phi(i), grid.weight(i));
        let angle = geom::angular_distance(theta, phi, pt.theta, pt.phi);
        if angle <= proto.tau_fg {
            if let (Ok(kb), Ok(ka)) = (before.gaussian_curvature(theta, phi), after.gaussian_curvature(theta, phi)) {
                k_sum += w * (ka - kb).abs();
                k_w += w;
            }
        } else if angle > proto.tau_bg {
            r_sum += w * (after.evaluate(theta, phi) - before.evaluate(theta, phi)).abs();
            r_w += w;
        }
    }
    let dk = if k_w > 0.0 { k_sum / k_w * voxel_mm * voxel_mm } else { 0.0 };
    let dr = if r_w > 0.0 { r_sum / r_w / voxel_mm } else { 0.0 };
    Ok((dk, dr))
}

/// `1/dsc + hd + 2 dK_fg + dr_bg`.
pub fn tuning_energy(dsc: f64, hd: f64, dk_fg: f64, dr_bg: f64) -> Result<f64> {
    if !(dsc > 0.0) {
        return Err(Error::InvalidParameter("dice must be positive".into()));
    }
    Ok(1.0 / dsc + hd + 2.0 * dk_fg + dr_bg)
}

/// Smallest label radius (voxels) a candidate fit is attempted on.
const MIN_LABEL_RADIUS_VOXELS: f64 = 2.0;

/// Fits `params` to the label, adds the simulated clicks one by one and scores the result.
pub fn evaluate_candidate(label: &VoxelVolume, params: MeshParams, proto: &TuningProtocol) -> Result<TuningCandidate> {
    let voxel_mm = label.grid().min_spacing();
    if label.count_nonzero() == 0 {
        return Err(Error::EmptyMask);
    }
    let radius = label.equivalent_radius()?;
    if radius < MIN_LABEL_RADIUS_VOXELS * voxel_mm {
        return Err(Error::FitDiverged(format!("label radius {radius:.3} mm is too small to fit")));
    }
    let prob = Arc::new(label.to_probability()?);
    let mut session = Session::create(None, prob, params, proto.energy.clone())?;
    let fit_quality = |s: &Session| -> Result<(f64, f64)> {
        let mask = s.mask();
        if mask.count_nonzero() == 0 {
            return Err(Error::FitDiverged("fitted surface rasterizes to nothing".into()));
        }
        Ok((dice(&mask, label)?, hausdorff(&mask, label, DistanceUnits::Voxel)?))
    };
    let initial = fit_quality(&session)?;

    let points = simulate_points(session.surface(), proto);
    let (mut dk_sum, mut dr_sum) = (0.0, 0.0);
    for pt in &points {
        let before = session.surface().clone();
        let (added, _) = session.add_point(pt.cartesian)?;
        let (dk, dr) = interaction_response(&before, session.surface(), &added, proto, voxel_mm)?;
        dk_sum += dk;
        dr_sum += dr;
    }
    let n = points.len().max(1) as f64;
    let (dsc, hd) = if proto.after_interaction {
        fit_quality(&session)?
    } else {
        initial
    };
    let (dk_fg, dr_bg) = (dk_sum / n, dr_sum / n);
    let energy = tuning_energy(dsc, hd, dk_fg, dr_bg)?;
    if !energy.is_finite() {
        return Err(Error::FitDiverged("non-finite tuning energy".into()));
    }
    Ok(TuningCandidate {
        params: MeshKey::from(&params),
        dsc,
        hd,
        dk_fg,
        dr_bg,
        energy,
    })
}

fn evaluate_all(label: &VoxelVolume, grid: &[MeshParams], proto: &TuningProtocol) -> Vec<Result<TuningCandidate>> {
    grid.par_iter().map(|p| evaluate_candidate(label, *p, proto)).collect()
}

fn argmin(cands: &[TuningCandidate]) -> Option<TuningCandidate> {
    cands
        .iter()
        .copied()
        .reduce(|best, c| if c.energy < best.energy { c } else { best })
}

/// Evaluates every mesh of the coarse grid on one label.
pub fn brute_force_search(label: &VoxelVolume, proto: &TuningProtocol) -> Result<CoarseResult> {
    proto.validate()?;
    let grid = proto.coarse_grid()?;
    let mut candidates = Vec::new();
    let mut excluded = Vec::new();
    for (p, r) in grid.iter().zip(evaluate_all(label, &grid, proto)) {
        match r {
            Ok(c) => candidates.push(c),
            Err(e) => excluded.push(Excluded {
                params: MeshKey::from(p),
                reason: e.to_string(),
            }),
        }
    }
    let global_minimum =
        argmin(&candidates).ok_or_else(|| Error::FitDiverged("every coarse candidate failed".into()))?;
    Ok(CoarseResult {
        candidates,
        excluded,
        global_minimum,
    })
}

/// Meshes at the winner's scale within `threshold` of the minimum, expanded to their
/// bounding box on the coarse step.
pub fn refined_grid(coarse: &CoarseResult, proto: &TuningProtocol) -> Result<Vec<MeshParams>> {
    let best = coarse.global_minimum;
    let limit = best.energy * (1.0 + proto.refine_threshold);
    let band: Vec<&TuningCandidate> = coarse
        .candidates
        .iter()
        .filter(|c| c.params.scale == best.params.scale && c.energy <= limit)
        .collect();
    let t_lo = band.iter().map(|c| c.params.n_theta).min().unwrap_or(best.params.n_theta);
    let t_hi = band.iter().map(|c| c.params.n_theta).max().unwrap_or(best.params.n_theta);
    let p_lo = band.iter().map(|c| c.params.n_phi).min().unwrap_or(best.params.n_phi);
    let p_hi = band.iter().map(|c| c.params.n_phi).max().unwrap_or(best.params.n_phi);
    let mut out = Vec::new();
    for t in StepRange::new(t_lo, t_hi, proto.theta_range.step).values() {
        for p in StepRange::new(p_lo, p_hi, proto.phi_range.step).values() {
            out.push(MeshParams::new(t, p, best.params.scale)?);
        }
    }
    Ok(out)
}

/// Smallest knot count, then smaller `n_theta`, then smaller `n_phi`.
pub fn smallest_mesh(keys: &[MeshKey]) -> Option<MeshKey> {
    keys.iter()
        .copied()
        .min_by_key(|k| (k.knot_count(), k.n_theta, k.n_phi))
}

/// Re-evaluates the refined grid on every label, averages energies, and picks the
/// smallest mesh within the threshold of the averaged minimum.
pub fn refined_search(labels: &[&VoxelVolume], coarse: CoarseResult, proto: &TuningProtocol) -> Result<TuningReport> {
    proto.validate()?;
    if labels.is_empty() {
        return Err(Error::InvalidParameter("refined search needs at least one label".into()));
    }
    let grid = refined_grid(&coarse, proto)?;
    let per_label: Vec<Vec<Result<TuningCandidate>>> =
        labels.iter().map(|l| evaluate_all(l, &grid, proto)).collect();

    let mut refined_candidates = Vec::new();
    for (i, p) in grid.iter().enumerate() {
        let runs: Option<Vec<TuningCandidate>> = per_label.iter().map(|r| r[i].as_ref().ok().copied()).collect();
        let Some(runs) = runs else { continue };
        let n = runs.len() as f64;
        let mean = |f: fn(&TuningCandidate) -> f64| runs.iter().map(f).sum::<f64>() / n;
        refined_candidates.push(TuningCandidate {
            params: MeshKey::from(p),
            dsc: mean(|c| c.dsc),
            hd: mean(|c| c.hd),
            dk_fg: mean(|c| c.dk_fg),
            dr_bg: mean(|c| c.dr_bg),
            energy: mean(|c| c.energy),
        });
    }

    let (refined_set, chosen, fell_back) = match argmin(&refined_candidates) {
        Some(best) => {
            let limit = best.energy * (1.0 + proto.refine_threshold);
            let set: Vec<MeshKey> = refined_candidates
                .iter()
                .filter(|c| c.energy <= limit)
                .map(|c| c.params)
                .collect();
            let chosen = smallest_mesh(&set).expect("refined set holds its minimum");
            (set, chosen, false)
        }
        None => {
            let w = coarse.global_minimum.params;
            (vec![w], w, true)
        }
    };
    Ok(TuningReport {
        seed: proto.seed,
        protocol: proto.clone(),
        coarse,
        refined_candidates,
        refined_set,
        chosen,
        fell_back,
    })
}

/// Coarse search on the first label, refinement on the rest (or on the first label when
/// it is the only one).
pub fn tune(labels: &[VoxelVolume], proto: &TuningProtocol) -> Result<TuningReport> {
    let (first, rest) = labels
        .split_first()
        .ok_or_else(|| Error::InvalidParameter("no labels given".into()))?;
    let coarse = brute_force_search(first, proto)?;
    let refine: Vec<&VoxelVolume> = if rest.is_empty() {
        vec![first]
    } else {
        rest.iter().collect()
    };
    refined_search(&refine, coarse, proto)
}

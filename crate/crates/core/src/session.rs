//! Interactive editing sessions.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::energy::{evolve, EnergyConfig, EvolutionResult};
use crate::error::{Error, Result};
use crate::geom::{self, Point3};
use crate::surface::{spherical_of, BeasSurface, MeshParams, TriangleMesh};
use crate::volume::{VolumeKind, VoxelVolume};

/// Default bound on the undo stack.
pub const HISTORY_DEPTH: usize = 32;

/// Threshold that turns the probability map into the initialization mask.
pub const INIT_THRESHOLD: f64 = 0.5;

/// Angular resolution of exported meshes.
pub const EXPORT_MESH: (usize, usize) = (96, 48);

/// One boundary click, stored in the session's spherical frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserPoint {
    pub id: u64,
    pub cartesian: Point3,
    pub theta: f64,
    pub phi: f64,
    pub rho: f64,
}

impl UserPoint {
    pub fn from_cartesian(id: u64, origin: Point3, cartesian: Point3) -> Result<Self> {
        let (rho, theta, phi) = spherical_of(origin, cartesian)?;
        Ok(UserPoint {
            id,
            cartesian,
            theta,
            phi,
            rho,
        })
    }

    pub fn from_spherical(id: u64, origin: Point3, theta: f64, phi: f64, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::PointAtOrigin);
        }
        let cartesian = geom::add(origin, geom::scale(geom::direction(theta, phi), rho));
        Ok(UserPoint {
            id,
            cartesian,
            theta,
            phi,
            rho,
        })
    }
}

/// A recorded mutation; replaying the log on a fresh session reproduces it exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum SessionOp {
    Add { x_mm: f64, y_mm: f64, z_mm: f64 },
    Remove { id: u64 },
    Undo,
}

#[derive(Clone, Debug, PartialEq)]
struct Snapshot {
    surface: BeasSurface,
    points: Vec<UserPoint>,
}

#[derive(Clone, Debug)]
pub struct Session {
    image: Option<Arc<VoxelVolume>>,
    prob: Arc<VoxelVolume>,
    surface: BeasSurface,
    points: Vec<UserPoint>,
    cfg: EnergyConfig,
    history: VecDeque<Snapshot>,
    history_depth: usize,
    next_id: u64,
    log: Vec<SessionOp>,
    init: EvolutionResult,
}

/// Everything a session writes out.
#[derive(Clone, Debug, PartialEq)]
pub struct Export {
    pub mask: VoxelVolume,
    pub mesh: TriangleMesh,
    pub obj: String,
    pub surface_json: String,
}

/// Initial-fit weights derived from an interactive configuration: probability map only.
pub fn fit_config(cfg: &EnergyConfig) -> EnergyConfig {
    let base = EnergyConfig::initial_fit();
    EnergyConfig {
        alpha: base.alpha,
        eta: base.eta,
        gamma: base.gamma,
        max_iters: base.max_iters,
        ..cfg.clone()
    }
}

/// Sphere at the center of mass of the thresholded map, with the equal-volume radius.
pub fn initial_sphere(prob: &VoxelVolume, params: MeshParams) -> Result<BeasSurface> {
    let mask = prob.threshold(INIT_THRESHOLD)?;
    if mask.count_nonzero() == 0 {
        return Err(Error::EmptyMask);
    }
    let origin = mask.center_of_mass()?;
    let radius = mask.equivalent_radius()?;
    BeasSurface::init_sphere(origin, radius, params)
}

impl Session {
    /// Fits a surface to `prob` and returns a session ready for clicks.
    pub fn create(
        image: Option<Arc<VoxelVolume>>,
        prob: Arc<VoxelVolume>,
        params: MeshParams,
        cfg: EnergyConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        prob.expect_kind(VolumeKind::Probability)?;
        if let Some(img) = &image {
            if !img.same_grid(&prob) {
                return Err(Error::GridMismatch);
            }
        }
        let sphere = initial_sphere(&prob, params)?;
        let init = evolve(&sphere, None, Some(&prob), &[], &fit_config(&cfg))?;
        Ok(Session {
            image,
            prob,
            surface: init.surface.clone(),
            points: Vec::new(),
            cfg,
            history: VecDeque::new(),
            history_depth: HISTORY_DEPTH,
            next_id: 1,
            log: Vec::new(),
            init,
        })
    }

    pub fn with_history_depth(mut self, depth: usize) -> Self {
        self.history_depth = depth.max(1);
        while self.history.len() > self.history_depth {
            self.history.pop_front();
        }
        self
    }

    pub fn surface(&self) -> &BeasSurface {
        &self.surface
    }

    pub fn points(&self) -> &[UserPoint] {
        &self.points
    }

    pub fn config(&self) -> &EnergyConfig {
        &self.cfg
    }

    pub fn origin(&self) -> Point3 {
        self.surface.origin()
    }

    pub fn prob(&self) -> &VoxelVolume {
        &self.prob
    }

    pub fn image(&self) -> Option<&VoxelVolume> {
        self.image.as_deref()
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// The recorded operations since creation.
    pub fn log(&self) -> &[SessionOp] {
        &self.log
    }

    /// Result of the initial probability-map fit.
    pub fn initial_fit(&self) -> &EvolutionResult {
        &self.init
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            surface: self.surface.clone(),
            points: self.points.clone(),
        }
    }

    fn restore(&mut self, snap: Snapshot) {
        self.surface = snap.surface;
        self.points = snap.points;
    }

    /// Re-converges under the current points; on failure the prior state is restored.
    fn commit(&mut self, before: Snapshot, op: SessionOp) -> Result<EvolutionResult> {
        let res = evolve(
            &self.surface,
            self.image.as_deref(),
            Some(&self.prob),
            &self.points,
            &self.cfg,
        );
        match res {
            Ok(res) => {
                self.surface = res.surface.clone();
                if self.history.len() == self.history_depth {
                    self.history.pop_front();
                }
                self.history.push_back(before);
                self.log.push(op);
                Ok(res)
            }
            Err(e) => {
                self.restore(before);
                Err(e)
            }
        }
    }

    /// Adds a boundary point and re-converges with every point active.
    pub fn add_point(&mut self, cartesian: Point3) -> Result<(UserPoint, EvolutionResult)> {
        let point = UserPoint::from_cartesian(self.next_id, self.origin(), cartesian)?;
        let before = self.snapshot();
        self.points.push(point);
        let op = SessionOp::Add {
            x_mm: cartesian[0],
            y_mm: cartesian[1],
            z_mm: cartesian[2],
        };
        let res = self.commit(before, op)?;
        self.next_id += 1;
        Ok((point, res))
    }

    /// Drops a point and re-converges from the current surface.
    pub fn remove_point(&mut self, id: u64) -> Result<EvolutionResult> {
        let idx = self
            .points
            .iter()
            .position(|p| p.id == id)
            .ok_or(Error::UnknownPoint(id))?;
        let before = self.snapshot();
        self.points.remove(idx);
        self.commit(before, SessionOp::Remove { id })
    }

    /// Restores the surface and point list from before the last mutation.
    pub fn undo(&mut self) -> Result<()> {
        let snap = self.history.pop_back().ok_or(Error::EmptyHistory)?;
        self.restore(snap);
        self.log.push(SessionOp::Undo);
        Ok(())
    }

    /// Applies a recorded operation.
    pub fn apply(&mut self, op: &SessionOp) -> Result<()> {
        match *op {
            SessionOp::Add { x_mm, y_mm, z_mm } => self.add_point([x_mm, y_mm, z_mm]).map(|_| ()),
            SessionOp::Remove { id } => self.remove_point(id).map(|_| ()),
            SessionOp::Undo => self.undo(),
        }
    }

    pub fn replay(&mut self, ops: &[SessionOp]) -> Result<()> {
        ops.iter().try_for_each(|op| self.apply(op))
    }

    /// Residual `|psi(theta_u, phi_u) - rho_u|` of every active point.
    pub fn residuals(&self) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| (self.surface.evaluate(p.theta, p.phi) - p.rho).abs())
            .collect()
    }

    /// The surface rasterized on the probability-map grid.
    pub fn mask(&self) -> VoxelVolume {
        self.surface.rasterize(self.prob.grid())
    }

    pub fn export(&self) -> Export {
        let mesh = self.surface.to_mesh(EXPORT_MESH.0, EXPORT_MESH.1);
        Export {
            mask: self.mask(),
            obj: mesh.to_obj(),
            mesh,
            surface_json: self.surface.to_json(),
        }
    }
}

//! Interactive 3D segmentation with B-spline explicit active surfaces.
//!
//! A segmentation is a star-shaped surface `rho = psi(theta, phi)` about a fixed origin,
//! expanded in tensor-product B-splines. It is fitted to a probability map with a localized
//! region energy, edited through boundary clicks, and its mesh size can be tuned
//! automatically from simulated clicks.

pub mod energy;
pub mod error;
pub mod geom;
pub mod metrics;
pub mod service;
pub mod session;
pub mod surface;
pub mod tuner;
pub mod volume;

pub use energy::{evolve, EnergyConfig, EvolutionResult};
pub use error::{Error, Result};
pub use metrics::{component_stats, dice, hausdorff, DistanceUnits};
pub use session::{Session, SessionOp, UserPoint};
pub use surface::{spherical_of, BeasSurface, MeshParams};
pub use volume::{Grid, VolumeKind, VoxelVolume};

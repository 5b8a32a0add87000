//! C ABI over `beas-core`.
//!
//! Volumes and sessions are opaque heap handles created by `beas_*_create`/`load`
//! functions and released with the matching `*_free`. Every fallible call returns a
//! [`BeasStatus`]; on failure a message is available from [`beas_last_error_message`]
//! on the same thread until the next failing call.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use beas_core::volume::{generate_phantom, load_volume, save_volume, PhantomSpec};
use beas_core::{
    dice, hausdorff, DistanceUnits, EnergyConfig, Error, Grid, MeshParams, Session, VolumeKind, VoxelVolume,
};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BeasStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    EmptyMask = 4,
    UnknownPoint = 5,
    EmptyHistory = 6,
    NonFinite = 7,
    Diverged = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BeasVolumeKind {
    Image = 0,
    Probability = 1,
    Mask = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BeasUnits {
    Voxel = 0,
    Millimetre = 1,
}

/// Opaque voxel volume.
pub struct BeasVolume {
    inner: VoxelVolume,
}

/// Opaque interactive segmentation session.
pub struct BeasSession {
    inner: Session,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    let c = CString::new(msg).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn status_of(e: &Error) -> BeasStatus {
    match e {
        Error::Io { .. } | Error::Header(_) | Error::LengthMismatch { .. } => BeasStatus::Io,
        Error::EmptyMask => BeasStatus::EmptyMask,
        Error::UnknownPoint(_) => BeasStatus::UnknownPoint,
        Error::EmptyHistory => BeasStatus::EmptyHistory,
        Error::NonFiniteGradient => BeasStatus::NonFinite,
        Error::FitDiverged(_) => BeasStatus::Diverged,
        _ => BeasStatus::InvalidArgument,
    }
}

struct Failure(BeasStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(BeasStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(BeasStatus::InvalidArgument, msg.into())
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> BeasStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => BeasStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            BeasStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn mut_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn boxed_volume(v: VoxelVolume) -> *mut BeasVolume {
    Box::into_raw(Box::new(BeasVolume { inner: v }))
}

fn kind_to_core(k: BeasVolumeKind) -> VolumeKind {
    match k {
        BeasVolumeKind::Image => VolumeKind::Image,
        BeasVolumeKind::Probability => VolumeKind::Probability,
        BeasVolumeKind::Mask => VolumeKind::Mask,
    }
}

fn kind_from_core(k: VolumeKind) -> BeasVolumeKind {
    match k {
        VolumeKind::Image => BeasVolumeKind::Image,
        VolumeKind::Probability => BeasVolumeKind::Probability,
        VolumeKind::Mask => BeasVolumeKind::Mask,
    }
}

/// Message of the last failing call on this thread; empty if none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn beas_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Loads a volume from a JSON header path (the `.json` suffix is optional).
#[no_mangle]
pub unsafe extern "C" fn beas_volume_load(path: *const c_char, out: *mut *mut BeasVolume) -> BeasStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = mut_arg(out, "out")?;
        *out = boxed_volume(load_volume(path)?);
        Ok(())
    })
}

/// Writes `<path>.json` and `<path>.raw`.
#[no_mangle]
pub unsafe extern "C" fn beas_volume_save(volume: *const BeasVolume, path: *const c_char) -> BeasStatus {
    guard(|| {
        let v = ref_arg(volume, "volume")?;
        let path = str_arg(path, "path")?;
        save_volume(&v.inner, PathBuf::from(path))?;
        Ok(())
    })
}

/// Copies `len` x-fastest samples into a new volume.
#[no_mangle]
pub unsafe extern "C" fn beas_volume_create(
    dims: *const usize,
    spacing_mm: *const f64,
    kind: BeasVolumeKind,
    data: *const f32,
    len: usize,
    out: *mut *mut BeasVolume,
) -> BeasStatus {
    guard(|| {
        if dims.is_null() {
            return Err(null("dims"));
        }
        if spacing_mm.is_null() {
            return Err(null("spacing_mm"));
        }
        if data.is_null() && len > 0 {
            return Err(null("data"));
        }
        let out = mut_arg(out, "out")?;
        let dims = [*dims, *dims.add(1), *dims.add(2)];
        let spacing = [*spacing_mm, *spacing_mm.add(1), *spacing_mm.add(2)];
        let grid = Grid::new(dims, spacing)?;
        let samples = if len == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(data, len).to_vec()
        };
        *out = boxed_volume(VoxelVolume::new(grid, kind_to_core(kind), samples)?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn beas_volume_dims(volume: *const BeasVolume, dims_out: *mut usize) -> BeasStatus {
    guard(|| {
        let v = ref_arg(volume, "volume")?;
        if dims_out.is_null() {
            return Err(null("dims_out"));
        }
        for (i, d) in v.inner.dims().into_iter().enumerate() {
            *dims_out.add(i) = d;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn beas_volume_kind(volume: *const BeasVolume, kind_out: *mut BeasVolumeKind) -> BeasStatus {
    guard(|| {
        let v = ref_arg(volume, "volume")?;
        *mut_arg(kind_out, "kind_out")? = kind_from_core(v.inner.kind());
        Ok(())
    })
}

/// Borrowed view of the samples; valid while the volume lives.
#[no_mangle]
pub unsafe extern "C" fn beas_volume_data(
    volume: *const BeasVolume,
    data_out: *mut *const f32,
    len_out: *mut usize,
) -> BeasStatus {
    guard(|| {
        let v = ref_arg(volume, "volume")?;
        let data = v.inner.data();
        *mut_arg(data_out, "data_out")? = data.as_ptr();
        *mut_arg(len_out, "len_out")? = data.len();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn beas_volume_free(volume: *mut BeasVolume) {
    if !volume.is_null() {
        drop(Box::from_raw(volume));
    }
}

/// Generates a phantom from a JSON spec (null for defaults). Any output pointer may be
/// null to discard that volume.
#[no_mangle]
pub unsafe extern "C" fn beas_phantom_generate(
    spec_json: *const c_char,
    image_out: *mut *mut BeasVolume,
    prob_out: *mut *mut BeasVolume,
    truth_out: *mut *mut BeasVolume,
) -> BeasStatus {
    guard(|| {
        let spec: PhantomSpec = if spec_json.is_null() {
            PhantomSpec::default()
        } else {
            serde_json::from_str(str_arg(spec_json, "spec_json")?).map_err(|e| invalid(e.to_string()))?
        };
        let ph = generate_phantom(&spec)?;
        for (slot, v) in [(image_out, ph.image), (prob_out, ph.prob), (truth_out, ph.truth)] {
            if let Some(slot) = slot.as_mut() {
                *slot = boxed_volume(v);
            }
        }
        Ok(())
    })
}

/// Creates a session and runs the initial fit. `image` may be null; `config_json` may
/// be null for the interactive defaults. A mask given as `prob` is used as a 0/1 map.
#[no_mangle]
pub unsafe extern "C" fn beas_session_create(
    image: *const BeasVolume,
    prob: *const BeasVolume,
    n_theta: usize,
    n_phi: usize,
    scale: u32,
    config_json: *const c_char,
    out: *mut *mut BeasSession,
) -> BeasStatus {
    guard(|| {
        let prob = ref_arg(prob, "prob")?;
        let out = mut_arg(out, "out")?;
        let image = image.as_ref().map(|v| Arc::new(v.inner.clone()));
        let prob = match prob.inner.kind() {
            VolumeKind::Mask => prob.inner.to_probability()?,
            _ => prob.inner.clone(),
        };
        let cfg: EnergyConfig = if config_json.is_null() {
            EnergyConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?).map_err(|e| invalid(e.to_string()))?
        };
        let params = MeshParams::new(n_theta, n_phi, scale)?;
        let session = Session::create(image, Arc::new(prob), params, cfg)?;
        *out = Box::into_raw(Box::new(BeasSession { inner: session }));
        Ok(())
    })
}

/// Adds a point (world mm) and re-evolves; writes the new point id.
#[no_mangle]
pub unsafe extern "C" fn beas_session_add_point(
    session: *mut BeasSession,
    x_mm: f64,
    y_mm: f64,
    z_mm: f64,
    id_out: *mut u64,
) -> BeasStatus {
    guard(|| {
        let s = mut_arg(session, "session")?;
        let (pt, _) = s.inner.add_point([x_mm, y_mm, z_mm])?;
        if let Some(id) = id_out.as_mut() {
            *id = pt.id;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn beas_session_remove_point(session: *mut BeasSession, id: u64) -> BeasStatus {
    guard(|| {
        mut_arg(session, "session")?.inner.remove_point(id)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn beas_session_undo(session: *mut BeasSession) -> BeasStatus {
    guard(|| {
        mut_arg(session, "session")?.inner.undo()?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn beas_session_point_count(session: *const BeasSession, count_out: *mut usize) -> BeasStatus {
    guard(|| {
        let s = ref_arg(session, "session")?;
        *mut_arg(count_out, "count_out")? = s.inner.points().len();
        Ok(())
    })
}

/// Surface radius (mm) at azimuth `theta` and zenith `phi` (radians).
#[no_mangle]
pub unsafe extern "C" fn beas_session_evaluate(
    session: *const BeasSession,
    theta: f64,
    phi: f64,
    rho_out: *mut f64,
) -> BeasStatus {
    guard(|| {
        let s = ref_arg(session, "session")?;
        if !(theta.is_finite() && phi.is_finite()) {
            return Err(invalid("angles must be finite"));
        }
        *mut_arg(rho_out, "rho_out")? = s.inner.surface().evaluate(theta, phi);
        Ok(())
    })
}

/// Rasterizes the surface on the probability grid into a new mask volume.
#[no_mangle]
pub unsafe extern "C" fn beas_session_mask(session: *const BeasSession, out: *mut *mut BeasVolume) -> BeasStatus {
    guard(|| {
        let s = ref_arg(session, "session")?;
        *mut_arg(out, "out")? = boxed_volume(s.inner.mask());
        Ok(())
    })
}

/// Writes `<prefix>_mask.json/.raw`, `<prefix>.obj` and `<prefix>_surface.json`.
#[no_mangle]
pub unsafe extern "C" fn beas_session_export(session: *const BeasSession, prefix: *const c_char) -> BeasStatus {
    guard(|| {
        let s = ref_arg(session, "session")?;
        let prefix = str_arg(prefix, "prefix")?;
        let export = s.inner.export();
        save_volume(&export.mask, format!("{prefix}_mask"))?;
        for (path, text) in [
            (format!("{prefix}.obj"), &export.obj),
            (format!("{prefix}_surface.json"), &export.surface_json),
        ] {
            std::fs::write(&path, text).map_err(|e| Failure(BeasStatus::Io, format!("{path}: {e}")))?;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn beas_session_free(session: *mut BeasSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

#[no_mangle]
pub unsafe extern "C" fn beas_dice(a: *const BeasVolume, b: *const BeasVolume, out: *mut f64) -> BeasStatus {
    guard(|| {
        let (a, b) = (ref_arg(a, "a")?, ref_arg(b, "b")?);
        *mut_arg(out, "out")? = dice(&a.inner, &b.inner)?;
        Ok(())
    })
}

/// Symmetric Hausdorff distance between mask boundaries.
#[no_mangle]
pub unsafe extern "C" fn beas_hausdorff(
    a: *const BeasVolume,
    b: *const BeasVolume,
    units: BeasUnits,
    out: *mut f64,
) -> BeasStatus {
    guard(|| {
        let (a, b) = (ref_arg(a, "a")?, ref_arg(b, "b")?);
        let units = match units {
            BeasUnits::Voxel => DistanceUnits::Voxel,
            BeasUnits::Millimetre => DistanceUnits::Mm,
        };
        *mut_arg(out, "out")? = hausdorff(&a.inner, &b.inner, units)?;
        Ok(())
    })
}

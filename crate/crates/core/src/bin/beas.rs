use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use beas_core::service::{serve, ServiceConfig};
use beas_core::tuner::{brute_force_search, refined_search, TuningProtocol};
use beas_core::volume::{generate_phantom, load_volume, save_volume, PhantomSpec};
use beas_core::{EnergyConfig, Error, MeshParams, Session, SessionOp, VolumeKind, VoxelVolume};
use clap::{Parser, Subcommand};
use serde::Deserialize;

const EXIT_FAILURE: u8 = 1;
const EXIT_BAD_ARGS: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_EMPTY_FOREGROUND: u8 = 4;

#[derive(Parser)]
#[command(name = "beas", version, about = "B-spline explicit active surface segmentation")]
struct Cli {
    /// Seed for simulated clicks (tune) and phantom noise (phantom).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file with optional `energy`, `tuning` and `service` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a surface to a probability map and write mask, mesh and surface.
    Segment {
        #[arg(long)]
        prob: PathBuf,
        #[arg(long)]
        image: Option<PathBuf>,
        /// Knot lattice as `TxP`, e.g. `12x16`.
        #[arg(long, default_value = "12x16", value_parser = parse_mesh)]
        mesh: (usize, usize),
        #[arg(long, default_value_t = 0)]
        scale: u32,
        /// Output prefix.
        #[arg(long)]
        out: PathBuf,
        /// Session log or list of `[x, y, z]` points (mm) to replay.
        #[arg(long)]
        points: Option<PathBuf>,
    },
    /// Select mesh size and scale from a directory of labels.
    Tune {
        #[arg(long)]
        labels: PathBuf,
        /// Label used for the coarse search; defaults to the first label by name.
        #[arg(long)]
        coarse_label: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV of the coarse energy landscape.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write a synthetic image / probability / truth triple.
    Phantom {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP session service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        max_sessions: Option<usize>,
        /// Allowed CORS origin; repeatable, `*` for any.
        #[arg(long = "cors")]
        cors: Vec<String>,
    },
}

#[derive(Default, Deserialize)]
#[serde(default)]
struct FileConfig {
    energy: Option<EnergyConfig>,
    tuning: Option<TuningProtocol>,
    service: Option<ServiceConfig>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PointsFile {
    Log(Vec<SessionOp>),
    Points(Vec<[f64; 3]>),
}

fn parse_mesh(s: &str) -> Result<(usize, usize), String> {
    let (t, p) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected TxP, got {s:?}"))?;
    let t = t.trim().parse().map_err(|_| format!("bad theta knot count in {s:?}"))?;
    let p = p.trim().parse().map_err(|_| format!("bad phi knot count in {s:?}"))?;
    Ok((t, p))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn as_probability(v: VoxelVolume) -> Result<VoxelVolume> {
    Ok(match v.kind() {
        VolumeKind::Mask => v.to_probability()?,
        _ => v,
    })
}

fn segment(
    cfg: EnergyConfig,
    prob: &Path,
    image: Option<&Path>,
    mesh: (usize, usize),
    scale: u32,
    out: &Path,
    points: Option<&Path>,
) -> Result<()> {
    let prob = as_probability(load_volume(prob)?)?;
    let image = image.map(load_volume).transpose()?;
    let ops = match points {
        Some(p) => match read_json::<PointsFile>(p)? {
            PointsFile::Log(ops) => ops,
            PointsFile::Points(pts) => pts
                .into_iter()
                .map(|[x_mm, y_mm, z_mm]| SessionOp::Add { x_mm, y_mm, z_mm })
                .collect(),
        },
        None => Vec::new(),
    };
    let params = MeshParams::new(mesh.0, mesh.1, scale)?;
    let mut session = Session::create(image.map(Arc::new), Arc::new(prob), params, cfg)?;
    session.replay(&ops)?;
    let export = session.export();
    save_volume(&export.mask, with_suffix(out, "_mask"))?;
    write_file(&with_suffix(out, ".obj"), &export.obj)?;
    write_file(&with_suffix(out, "_surface.json"), &export.surface_json)?;
    Ok(())
}

fn load_label(path: &Path) -> Result<VoxelVolume> {
    let v = load_volume(path)?;
    Ok(match v.kind() {
        VolumeKind::Probability => v.threshold(0.5)?,
        _ => v,
    })
}

fn tune(proto: TuningProtocol, labels: &Path, coarse_label: Option<&Path>, out: &Path, csv: Option<&Path>) -> Result<()> {
    let entries = fs::read_dir(labels).map_err(|e| Error::Io {
        path: labels.to_path_buf(),
        source: e,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let coarse_path = match coarse_label {
        Some(c) => c.to_path_buf(),
        None => match files.first() {
            Some(f) => f.clone(),
            None => {
                return Err(Error::Io {
                    path: labels.to_path_buf(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "no label headers (*.json) found"),
                }
                .into())
            }
        },
    };
    let coarse_canon = fs::canonicalize(&coarse_path).ok();
    let rest: Vec<PathBuf> = files
        .into_iter()
        .filter(|f| fs::canonicalize(f).ok() != coarse_canon)
        .collect();

    let coarse_label = load_label(&coarse_path)?;
    let mut refine = Vec::with_capacity(rest.len());
    for f in &rest {
        refine.push(load_label(f)?);
    }
    let coarse = brute_force_search(&coarse_label, &proto)?;
    let refs: Vec<&VoxelVolume> = if refine.is_empty() {
        vec![&coarse_label]
    } else {
        refine.iter().collect()
    };
    let report = refined_search(&refs, coarse, &proto)?;
    write_file(out, report.to_json())?;
    if let Some(csv) = csv {
        write_file(csv, report.landscape_csv())?;
    }
    let c = report.chosen;
    println!("chosen mesh {}x{} scale {}", c.n_theta, c.n_phi, c.scale);
    Ok(())
}

fn phantom(spec: PhantomSpec, out: &Path) -> Result<()> {
    let ph = generate_phantom(&spec)?;
    save_volume(&ph.image, with_suffix(out, "_image"))?;
    save_volume(&ph.prob, with_suffix(out, "_prob"))?;
    save_volume(&ph.truth, with_suffix(out, "_truth"))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let file_cfg: FileConfig = match &cli.config {
        Some(p) => read_json(p)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Segment {
            prob,
            image,
            mesh,
            scale,
            out,
            points,
        } => segment(
            file_cfg.energy.unwrap_or_default(),
            &prob,
            image.as_deref(),
            mesh,
            scale,
            &out,
            points.as_deref(),
        ),
        Command::Tune {
            labels,
            coarse_label,
            out,
            csv,
        } => {
            let mut proto = file_cfg.tuning.unwrap_or_default();
            if let Some(energy) = file_cfg.energy {
                proto.energy = energy;
            }
            if let Some(seed) = cli.seed {
                proto.seed = seed;
            }
            tune(proto, &labels, coarse_label.as_deref(), &out, csv.as_deref())
        }
        Command::Phantom { spec, out } => {
            let mut spec: PhantomSpec = match spec {
                Some(p) => read_json(&p)?,
                None => PhantomSpec::default(),
            };
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            phantom(spec, &out)
        }
        Command::Serve {
            port,
            data_dir,
            max_sessions,
            cors,
        } => {
            let mut cfg = file_cfg.service.unwrap_or_default();
            if let Some(energy) = file_cfg.energy {
                cfg.energy = energy;
            }
            cfg.port = port.unwrap_or(cfg.port);
            cfg.data_dir = data_dir.unwrap_or(cfg.data_dir);
            cfg.max_sessions = max_sessions.unwrap_or(cfg.max_sessions);
            if !cors.is_empty() {
                cfg.cors_allowlist = cors;
            }
            let rt = tokio::runtime::Runtime::new().context("starting the async runtime")?;
            eprintln!("listening on 0.0.0.0:{}", cfg.port);
            rt.block_on(serve(cfg)).map_err(|e| {
                Error::Io {
                    path: PathBuf::from("<service>"),
                    source: e,
                }
                .into()
            })
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Io { .. } | Error::Header(_) | Error::LengthMismatch { .. }) => EXIT_IO,
        Some(Error::EmptyMask) => EXIT_EMPTY_FOREGROUND,
        Some(Error::InvalidParameter(_)) => EXIT_BAD_ARGS,
        _ if err.downcast_ref::<serde_json::Error>().is_some() => EXIT_BAD_ARGS,
        _ => EXIT_FAILURE,
    }
}

/// Joins the error chain, skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if out.ends_with(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

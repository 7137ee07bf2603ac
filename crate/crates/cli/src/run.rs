//! Problem construction and the time loop with output and checkpoints.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use polyfrac::fem::{Discretization, FemError};
use polyfrac::microstructure::{
    duplicate_grain_boundary_nodes, grain_regions, load_mesh, remove_cells, structured_box, structured_rectangle,
    voronoi_grains, MeshError, PolyMesh,
};
use polyfrac::simulation::{Simulation, Snapshot};
use polyfrac::solver::{Driver, RefinementExhausted, SolverLog};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{parse_config, ConfigError, GeneratedMesh, MeshSource, SimulationConfig};
use crate::output::{FrameWriter, OutputError, OutputFrame};

pub const CHECKPOINT_NAME: &str = "checkpoint.json";
pub const SOLVER_LOG_NAME: &str = "solver_log.jsonl";
pub const FAILURE_NAME: &str = "failure.json";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot read {path}: {source}")]
    Input { path: PathBuf, source: io::Error },
    #[error("mesh: {0}")]
    Mesh(#[from] MeshError),
    #[error("setup: {0}")]
    Fem(#[from] FemError),
    #[error("{0}")]
    Setup(String),
    #[error(transparent)]
    Refinement(#[from] RefinementExhausted),
    #[error("output: {0}")]
    Output(#[from] OutputError),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
}

impl RunError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Input { .. } | Self::Mesh(_) => 3,
            Self::Refinement(_) => 4,
            Self::Output(_) => 5,
            Self::Fem(_) | Self::Setup(_) | Self::Checkpoint { .. } => 1,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub output_dir: PathBuf,
    /// Stop after this many accepted steps in this invocation.
    pub max_steps: Option<usize>,
    pub resume: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub time: f64,
    pub frames: usize,
    pub finished: bool,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    driver: Driver,
    snapshot: Snapshot,
}

#[derive(Serialize)]
struct FailureReport<'a> {
    error: String,
    time: f64,
    dt: f64,
    step: usize,
    driver: &'a Driver,
}

pub fn load_config(path: &Path) -> Result<SimulationConfig, RunError> {
    let text = fs::read_to_string(path).map_err(|source| RunError::Input {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(parse_config(&text)?)
}

fn generate(g: &GeneratedMesh) -> Result<PolyMesh, MeshError> {
    let mut mesh = match g.divisions[..] {
        [nx, ny] => structured_rectangle(nx, ny, g.size[0], g.size[1]),
        [nx, ny, nz] => structured_box(nx, ny, nz, g.size[0], g.size[1], g.size[2]),
        _ => return Err(MeshError::Invalid("generated meshes are 2D or 3D".into())),
    };
    if !g.seeds.is_empty() {
        voronoi_grains(&mut mesh, &g.seeds)?;
    }
    if !g.holes.is_empty() {
        let dim = mesh.dim;
        mesh = remove_cells(&mesh, |x| {
            g.holes.iter().any(|h| {
                let r2: f64 = (0..dim).map(|i| (x[i] - h.center[i]).powi(2)).sum();
                r2 < h.radius * h.radius
            })
        })?;
    }
    Ok(mesh)
}

/// Builds the discretized problem. Relative mesh paths resolve against `base`.
pub fn build(cfg: &SimulationConfig, base: &Path) -> Result<Simulation, RunError> {
    let mesh = match &cfg.mesh {
        MeshSource::Path(p) => {
            let path = if p.is_absolute() { p.clone() } else { base.join(p) };
            let bytes = fs::read(&path).map_err(|source| RunError::Input { path, source })?;
            load_mesh(&bytes)?
        }
        MeshSource::Generate(g) => generate(g)?,
    };
    if mesh.dim != cfg.preset.dim() {
        return Err(ConfigError::invalid(
            "preset",
            format!("mesh is {}D but the preset is {}D", mesh.dim, cfg.preset.dim()),
        )
        .into());
    }
    if cfg.orientations.rodrigues.len() < mesh.n_grains() {
        return Err(ConfigError::invalid(
            "orientations.rodrigues",
            format!(
                "{} vectors given for {} grains",
                cfg.orientations.rodrigues.len(),
                mesh.n_grains()
            ),
        )
        .into());
    }
    for name in &cfg.load.driven {
        if !mesh.facet_sets.contains_key(name) {
            return Err(ConfigError::invalid("load.driven", format!("mesh has no facet set `{name}`")).into());
        }
    }
    for (name, labels) in &cfg.output.regions {
        if let Some(l) = labels.iter().find(|l| !mesh.grain_labels.contains(l)) {
            return Err(ConfigError::invalid(format!("output.regions.{name}"), format!("no grain {l}")).into());
        }
    }
    let (mesh, constraints) = duplicate_grain_boundary_nodes(&mesh);
    let grains = grain_regions(&mesh, &cfg.orientations.rodrigues, cfg.orientations.convention);
    let disc = Discretization::new(
        mesh,
        constraints,
        grains,
        cfg.material.clone(),
        cfg.boundary.inner,
        cfg.boundary.void,
    )?;
    Ok(Simulation::new(disc, cfg.load.clone())?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let fail = |message: String| RunError::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    let tmp = path.with_extension("json.tmp");
    let file = File::create(&tmp).map_err(|e| fail(e.to_string()))?;
    serde_json::to_writer(BufWriter::new(file), value).map_err(|e| fail(e.to_string()))?;
    fs::rename(&tmp, path).map_err(|e| fail(e.to_string()))
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint, RunError> {
    let file = File::open(path).map_err(|source| RunError::Input {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_reader(io::BufReader::new(file)).map_err(|e| RunError::Checkpoint {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Runs (or resumes) a simulation, writing frames, checkpoints and the solver log.
pub fn run(cfg: &SimulationConfig, base: &Path, opts: &RunOptions) -> Result<RunSummary, RunError> {
    let mut sim = build(cfg, base)?;
    let dir = &opts.output_dir;
    fs::create_dir_all(dir).map_err(|source| OutputError::Io {
        path: dir.clone(),
        source,
    })?;
    let ckpt_path = dir.join(CHECKPOINT_NAME);
    let log_path = dir.join(SOLVER_LOG_NAME);

    let (mut driver, mut frames) = if opts.resume {
        let ck = read_checkpoint(&ckpt_path)?;
        sim.restore(ck.snapshot, ck.driver.time)?;
        log::info!("resuming at step {} (t = {})", ck.driver.step, ck.driver.time);
        (ck.driver.clone(), FrameWriter::resume(dir, &cfg.output.regions, ck.driver.step)?)
    } else {
        let mut w = FrameWriter::create(dir, &cfg.output.regions)?;
        w.write(&OutputFrame::capture(&sim, 0, &cfg.output.regions)?)?;
        (Driver::new(&cfg.solver, cfg.load.horizon), w)
    };
    let log_file = OpenOptions::new()
        .create(true)
        .append(opts.resume)
        .write(true)
        .truncate(!opts.resume)
        .open(&log_path)
        .map_err(|source| OutputError::Io {
            path: log_path.clone(),
            source,
        })?;
    let mut log = SolverLog::to_writer(Box::new(BufWriter::new(log_file)), false);

    let mut written = 0;
    let mut taken = 0;
    let checkpoint = |driver: &Driver, sim: &Simulation| {
        write_json(
            &ckpt_path,
            &Checkpoint {
                driver: driver.clone(),
                snapshot: sim.snapshot(),
            },
        )
    };
    while !driver.finished() && opts.max_steps.is_none_or(|m| taken < m) {
        match driver.advance(&mut sim, &cfg.solver, &mut log) {
            Ok(outcome) => {
                taken += 1;
                log::info!(
                    "step {} t = {:.6e} dt = {:.3e} field iterations {}",
                    driver.step,
                    driver.time,
                    outcome.dt,
                    outcome.field_iters_used
                );
                if driver.step % cfg.output.every == 0 || driver.finished() {
                    frames.write(&OutputFrame::capture(&sim, driver.step, &cfg.output.regions)?)?;
                    written += 1;
                }
                if driver.step % cfg.output.checkpoint_every == 0 {
                    checkpoint(&driver, &sim)?;
                }
            }
            Err(e) => {
                log.flush();
                let report = FailureReport {
                    error: e.to_string(),
                    time: e.time,
                    dt: e.dt,
                    step: driver.step,
                    driver: &driver,
                };
                write_json(&dir.join(FAILURE_NAME), &report)?;
                let last = OutputFrame::capture(&sim, driver.step, &cfg.output.regions)?;
                last.to_vtk()
                    .export(dir.join("failure_state.vtu"))
                    .map_err(|err| OutputError::Vtk {
                        path: dir.join("failure_state.vtu"),
                        message: err.to_string(),
                    })?;
                return Err(e.into());
            }
        }
    }
    log.flush();
    checkpoint(&driver, &sim)?;
    Ok(RunSummary {
        steps: driver.step,
        time: driver.time,
        frames: written,
        finished: driver.finished(),
    })
}

/// Config validation plus problem construction, without time stepping.
pub fn check(cfg: &SimulationConfig, base: &Path) -> Result<String, RunError> {
    let sim = build(cfg, base)?;
    let d = &sim.disc;
    Ok(format!(
        "{}D mesh: {} nodes ({} after duplication), {} cells, {} grains; unknowns u {} g {} d {}",
        d.mesh.dim,
        d.layout.n_master,
        d.layout.n_nodes,
        d.n_cells(),
        d.mesh.n_grains(),
        d.layout.n_u(),
        d.layout.n_g(),
        d.layout.n_d()
    ))
}

//! TOML run configuration with reference defaults.

use std::collections::BTreeMap;
use std::path::PathBuf;

use polyfrac::constitutive::{MaterialParams, ParamError};
use polyfrac::fem::{LoadProgram, MicroBoundaryCondition};
use polyfrac::microstructure::RodriguesConvention;
use polyfrac::solver::{ConfigError as SolverConfigError, StaggeredConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed config: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("`{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

impl ConfigError {
    pub(crate) fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Invalid {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[default]
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "3d")]
    ThreeD,
}

impl Preset {
    pub fn dim(self) -> usize {
        match self {
            Self::TwoD => 2,
            Self::ThreeD => 3,
        }
    }
}

/// Circular (2D) or spherical (3D) hole cut from a generated mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hole {
    pub center: [f64; 3],
    pub radius: f64,
}

/// Structured simplex mesh with Voronoi grains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratedMesh {
    /// Cells per axis.
    pub divisions: Vec<usize>,
    /// Edge lengths in mm.
    pub size: Vec<f64>,
    /// Voronoi seeds in mm; one grain when empty.
    #[serde(default)]
    pub seeds: Vec<[f64; 3]>,
    #[serde(default)]
    pub holes: Vec<Hole>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshSource {
    /// MSH 4.1 file, relative paths resolved against the config directory.
    Path(PathBuf),
    Generate(GeneratedMesh),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Orientations {
    /// One vector per grain, in ascending grain-label order.
    pub rodrigues: Vec<[f64; 3]>,
    pub convention: RodriguesConvention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Boundary {
    pub inner: MicroBoundaryCondition,
    pub void: MicroBoundaryCondition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Write a frame every this many accepted steps.
    pub every: usize,
    /// Write a checkpoint every this many accepted steps.
    pub checkpoint_every: usize,
    /// Named grain-label sets for averaged stress columns.
    pub regions: BTreeMap<String, Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Structure size `L` in mm.
    pub length_scale: f64,
    pub preset: Preset,
    pub mesh: MeshSource,
    pub material: MaterialParams,
    pub orientations: Orientations,
    pub boundary: Boundary,
    pub load: LoadProgram,
    pub solver: StaggeredConfig,
    pub output: OutputConfig,
}

/// Keys whose tables are taken verbatim instead of merged key by key.
const REPLACED: [&str; 4] = ["mesh", "boundary.inner", "boundary.void", "output.regions"];

fn defaults_table(length_scale: f64, preset: Preset, material: Option<&MaterialParams>) -> Table {
    let material = material.cloned().unwrap_or(match preset {
        Preset::TwoD => MaterialParams::reference(length_scale),
        Preset::ThreeD => MaterialParams::reference_3d(length_scale),
    });
    let t_star = material.relax_time;
    let mut regions = BTreeMap::new();
    regions.insert("all".to_string(), Vec::new());
    let mut t = Table::new();
    let put = |t: &mut Table, k: &str, v: Value| {
        t.insert(k.to_string(), v);
    };
    put(&mut t, "length_scale", Value::Float(length_scale));
    put(&mut t, "preset", Value::try_from(preset).expect("serializable"));
    put(
        &mut t,
        "boundary",
        Value::try_from(Boundary {
            inner: MicroBoundaryCondition::reference_flexible(&material),
            void: MicroBoundaryCondition::MicroFree,
        })
        .expect("serializable"),
    );
    put(
        &mut t,
        "orientations",
        Value::try_from(Orientations {
            rodrigues: Vec::new(),
            convention: RodriguesConvention::default(),
        })
        .expect("serializable"),
    );
    put(
        &mut t,
        "load",
        Value::try_from(LoadProgram::reference(length_scale, t_star, 10.0 * t_star)).expect("serializable"),
    );
    put(
        &mut t,
        "solver",
        Value::try_from(StaggeredConfig::reference(length_scale, t_star)).expect("serializable"),
    );
    put(
        &mut t,
        "output",
        Value::try_from(OutputConfig {
            every: 1,
            checkpoint_every: 10,
            regions,
        })
        .expect("serializable"),
    );
    put(&mut t, "material", Value::try_from(material).expect("serializable"));
    t
}

fn merge(base: &mut Table, user: Table, prefix: &str) -> Result<(), ConfigError> {
    for (k, v) in user {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (base.get_mut(&k), v) {
            (None, _) if path != "mesh" => return Err(ConfigError::invalid(path, "unknown key")),
            (Some(Value::Table(b)), Value::Table(u)) if !REPLACED.contains(&path.as_str()) => merge(b, u, &path)?,
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    Ok(())
}

fn float(doc: &Table, key: &str) -> Result<Option<f64>, ConfigError> {
    match doc.get(key) {
        None => Ok(None),
        Some(Value::Float(f)) => Ok(Some(*f)),
        Some(Value::Integer(i)) => Ok(Some(*i as f64)),
        Some(_) => Err(ConfigError::invalid(key, "expected a number")),
    }
}

/// Fills in a micro-flexible condition given without explicit flexibilities.
fn complete_flexible(doc: &mut Table, params: &MaterialParams) {
    let Some(Value::Table(b)) = doc.get_mut("boundary") else {
        return;
    };
    for side in ["inner", "void"] {
        if let Some(Value::Table(bc)) = b.get_mut(side) {
            if bc.get("kind").and_then(Value::as_str) == Some("micro_flexible") {
                if let MicroBoundaryCondition::MicroFlexible { c0, cd } = MicroBoundaryCondition::reference_flexible(params) {
                    bc.entry("c0").or_insert(Value::Float(c0));
                    bc.entry("cd").or_insert(Value::Float(cd));
                }
            }
        }
    }
}

fn param_error(e: ParamError) -> ConfigError {
    match e {
        ParamError::NotPositive { name, value } => {
            ConfigError::invalid(format!("material.{name}"), format!("must be strictly positive (got {value})"))
        }
        ParamError::RateExponent(v) => ConfigError::invalid("material.rate_exponent", format!("must be >= 1 (got {v})")),
    }
}

/// Parses and validates a configuration. Omitted keys take reference values.
pub fn parse_config(text: &str) -> Result<SimulationConfig, ConfigError> {
    let mut doc: Table = text.parse()?;
    let length_scale = float(&doc, "length_scale")?.unwrap_or(1.0);
    if !(length_scale > 0.0 && length_scale.is_finite()) {
        return Err(ConfigError::invalid("length_scale", "must be strictly positive"));
    }
    let preset = match doc.get("preset") {
        None => Preset::default(),
        Some(v) => v
            .clone()
            .try_into()
            .map_err(|_| ConfigError::invalid("preset", "expected \"2d\" or \"3d\""))?,
    };
    if !doc.contains_key("mesh") {
        return Err(ConfigError::invalid("mesh", "missing; give `path` or a `generate` table"));
    }

    // material first: its relaxation time sets the default rate and step
    let mut material_table = match defaults_table(length_scale, preset, None).remove("material") {
        Some(Value::Table(t)) => t,
        _ => unreachable!("defaults contain a material table"),
    };
    if let Some(user) = doc.remove("material") {
        let Value::Table(user) = user else {
            return Err(ConfigError::invalid("material", "expected a table"));
        };
        merge(&mut material_table, user, "material")?;
    }
    let material: MaterialParams = Value::Table(material_table.clone())
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::invalid("material", e.message()))?;
    material.validate().map_err(param_error)?;

    complete_flexible(&mut doc, &material);
    let mut merged = defaults_table(length_scale, preset, Some(&material));
    merge(&mut merged, doc, "")?;
    let cfg: SimulationConfig = Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::invalid("config", e.message()))?;
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &SimulationConfig) -> Result<(), ConfigError> {
    cfg.material.validate().map_err(param_error)?;
    cfg.solver.validate().map_err(|e| match e {
        SolverConfigError::BackupTighter(f) => {
            ConfigError::invalid("solver.tolerances", format!("back-up tolerance of {f:?} is tighter than final"))
        }
        SolverConfigError::NotPositive(k) => ConfigError::invalid(format!("solver.{k}"), "must be positive"),
    })?;
    for (side, bc) in [("inner", cfg.boundary.inner), ("void", cfg.boundary.void)] {
        bc.validate()
            .map_err(|e| ConfigError::invalid(format!("boundary.{side}"), e.to_string()))?;
    }
    if !cfg.load.shear_rate.is_finite() {
        return Err(ConfigError::invalid("load.shear_rate", "must be finite"));
    }
    if !(cfg.load.horizon > 0.0 && cfg.load.horizon.is_finite()) {
        return Err(ConfigError::invalid("load.horizon", "must be strictly positive"));
    }
    if cfg.load.driven.is_empty() {
        return Err(ConfigError::invalid("load.driven", "needs at least one facet set"));
    }
    if cfg.output.every == 0 {
        return Err(ConfigError::invalid("output.every", "must be positive"));
    }
    if cfg.output.checkpoint_every == 0 {
        return Err(ConfigError::invalid("output.checkpoint_every", "must be positive"));
    }
    if let MeshSource::Generate(g) = &cfg.mesh {
        let dim = cfg.preset.dim();
        if g.divisions.len() != dim || g.size.len() != dim {
            return Err(ConfigError::invalid("mesh.generate", format!("needs {dim} divisions and sizes")));
        }
        if g.divisions.contains(&0) || g.size.iter().any(|&s| !(s > 0.0)) {
            return Err(ConfigError::invalid("mesh.generate", "divisions and sizes must be positive"));
        }
        if g.holes.iter().any(|h| !(h.radius > 0.0)) {
            return Err(ConfigError::invalid("mesh.generate.holes", "radius must be positive"));
        }
    }
    Ok(())
}

/// Serializes a configuration with every key spelled out.
pub fn to_toml(cfg: &SimulationConfig) -> String {
    toml::to_string(cfg).expect("configuration is serializable")
}

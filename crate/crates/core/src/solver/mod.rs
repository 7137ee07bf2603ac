//! Staggered Newton driver for the `u`–`g` and `d` blocks with field-wise
//! final and back-up tolerances, line search and adaptive time stepping.

mod staggered;
mod timestep;

use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::LocalDivergence;
use crate::fem::Triplets;

pub use staggered::{check_block, newton_block_solve, staggered_step, BlockOutcome, CheckOutcome, SolveHistory};
pub use timestep::{adapt_timestep, Driver, RefinementExhausted, TimeStepController};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Ug,
    D,
}

impl Block {
    pub fn other(self) -> Self {
        match self {
            Self::Ug => Self::D,
            Self::D => Self::Ug,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    U,
    G,
    D,
}

impl Field {
    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldTolerance {
    pub residual: f64,
    pub update: f64,
}

/// Final and back-up tolerances indexed by [`Field`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub final_tol: [FieldTolerance; 3],
    pub backup_tol: [FieldTolerance; 3],
}

impl Tolerances {
    /// Reference tolerances for a structure of size `l` (mm).
    pub fn reference(l: f64) -> Self {
        let ft = |residual, update| FieldTolerance { residual, update };
        Self {
            final_tol: [
                ft(l * l * 1e-6, l * 1e-8),
                ft(l * l * 1e-11, 1e-6 / l),
                ft(l.powi(3) * 1e-10, 1e-8),
            ],
            backup_tol: [
                ft(l * l * 1e-3, l * 1e-8),
                ft(l * l * 1e-8, 1e-6 / l),
                ft(l.powi(3) * 1e-10, 1e-8),
            ],
        }
    }

    pub fn get(&self, regime: Regime, field: Field) -> FieldTolerance {
        match regime {
            Regime::Final => self.final_tol[field.index()],
            Regime::Backup => self.backup_tol[field.index()],
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("back-up tolerance of {0:?} is tighter than its final tolerance")]
    BackupTighter(Field),
    #[error("`{0}` must be positive")]
    NotPositive(&'static str),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaggeredConfig {
    pub tolerances: Tolerances,
    pub max_field_iter: usize,
    pub max_iter: usize,
    pub iter_backuptol: usize,
    /// Indexed by [`Block`].
    pub n_iter_backuptols: [usize; 2],
    pub max_field_div: usize,
    pub max_divergence_count: usize,
    pub max_time_refinement_level: usize,
    pub n_field_iter_coarsen: usize,
    pub n_timesteps_recoarsen: usize,
    pub line_search_factor: f64,
    pub initial_dt: f64,
}

impl StaggeredConfig {
    pub fn reference(length_scale: f64, relax_time: f64) -> Self {
        Self {
            tolerances: Tolerances::reference(length_scale),
            max_field_iter: 500,
            max_iter: 25,
            iter_backuptol: 8,
            n_iter_backuptols: [25, 2],
            max_field_div: 2,
            max_divergence_count: 5,
            max_time_refinement_level: 20,
            n_field_iter_coarsen: 20,
            n_timesteps_recoarsen: 5,
            line_search_factor: 0.7,
            initial_dt: 0.1 * relax_time,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for f in [Field::U, Field::G, Field::D] {
            let (a, b) = (self.tolerances.final_tol[f.index()], self.tolerances.backup_tol[f.index()]);
            if b.residual < a.residual || b.update < a.update {
                return Err(ConfigError::BackupTighter(f));
            }
            if !(a.residual > 0.0 && a.update > 0.0) {
                return Err(ConfigError::NotPositive("tolerances"));
            }
        }
        let counters = [
            ("max_field_iter", self.max_field_iter),
            ("max_iter", self.max_iter),
            ("iter_backuptol", self.iter_backuptol),
            ("n_iter_backuptols", self.n_iter_backuptols[0].min(self.n_iter_backuptols[1])),
            ("max_field_div", self.max_field_div),
            ("max_divergence_count", self.max_divergence_count),
            ("max_time_refinement_level", self.max_time_refinement_level),
            ("n_field_iter_coarsen", self.n_field_iter_coarsen),
            ("n_timesteps_recoarsen", self.n_timesteps_recoarsen),
        ];
        for (name, v) in counters {
            if v == 0 {
                return Err(ConfigError::NotPositive(name));
            }
        }
        if !(self.line_search_factor > 0.0 && self.line_search_factor < 1.0) {
            return Err(ConfigError::NotPositive("line_search_factor"));
        }
        if !(self.initial_dt > 0.0) {
            return Err(ConfigError::NotPositive("initial_dt"));
        }
        Ok(())
    }
}

/// Residual and (optionally) tangent of one block over its free dofs.
#[derive(Clone, Debug, Default)]
pub struct BlockSystem {
    pub residual: Vec<f64>,
    pub fields: Vec<(Field, Range<usize>)>,
    /// Tangent in free-dof numbering.
    pub tangent: Option<Triplets>,
}

impl BlockSystem {
    pub fn field_norms(&self, v: &[f64]) -> Vec<(Field, f64)> {
        self.fields
            .iter()
            .map(|(f, r)| (*f, v[r.clone()].iter().map(|x| x * x).sum::<f64>().sqrt()))
            .collect()
    }
}

/// A coupled problem solvable by [`staggered_step`].
///
/// `assemble` re-solves the local variables belonging to `block` against the
/// current global iterate and keeps them; the other block's local variables
/// stay frozen.
pub trait StaggeredProblem {
    fn assemble(&mut self, block: Block, want_tangent: bool) -> Result<BlockSystem, LocalDivergence>;
    /// Free-dof values of `block`.
    fn values(&self, block: Block) -> Vec<f64>;
    fn set_values(&mut self, block: Block, values: &[f64]);
    /// Prepares the step ending at `time` (boundary data, predictors).
    fn begin_step(&mut self, time: f64, dt: f64);
    fn accept_step(&mut self);
    /// Restores the last accepted state.
    fn reject_step(&mut self);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Final,
    Backup,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackupTrigger {
    /// Residual above the back-up tolerance at iteration `iter_backuptol`.
    SlowConvergence,
    /// A previous solve needed more than `n_iter_backuptols` iterations.
    PreviousSolve,
    /// `max_iter` reached with only the back-up tolerances met.
    IterationCap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Residual,
    FieldUpdate,
    Backup,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepFailure {
    #[error(transparent)]
    Local(#[from] LocalDivergence),
    #[error("{block:?} block diverged after {iterations} iterations")]
    BlockDiverged { block: Block, iterations: usize },
    #[error("singular tangent in {0:?} block")]
    Singular(Block),
    #[error("field iterations diverged on the {0:?} block")]
    FieldLoopDiverged(Block),
    #[error("field iteration limit reached")]
    FieldIterExhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub converged: bool,
    pub field_iters_used: usize,
    pub termination: Vec<(Field, Termination)>,
    pub dt: f64,
}

/// One line of the solver log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogRecord {
    BlockSolve {
        step: usize,
        time: f64,
        dt: f64,
        field_iter: usize,
        block: Block,
        iterations: usize,
        first_residual: Vec<(Field, f64)>,
        residual: Vec<(Field, f64)>,
        regime: Regime,
        backup_trigger: Option<BackupTrigger>,
        /// Iteration at which back-up tolerances were engaged.
        backup_iter: Option<usize>,
        line_search_shrinks: usize,
        converged: bool,
    },
    Check {
        step: usize,
        field_iter: usize,
        block: Block,
        residual: Vec<(Field, f64)>,
        passed: bool,
    },
    StepAccepted {
        step: usize,
        time: f64,
        dt: f64,
        field_iters: usize,
    },
    StepFailed {
        step: usize,
        time: f64,
        dt: f64,
        reason: String,
    },
    TimeStep {
        step: usize,
        from: f64,
        to: f64,
        level: usize,
    },
}

/// Collects log records and optionally streams them as JSON lines.
#[derive(Default)]
pub struct SolverLog {
    pub records: Vec<LogRecord>,
    keep: bool,
    sink: Option<Box<dyn Write + Send>>,
}

impl std::fmt::Debug for SolverLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SolverLog").field("records", &self.records.len()).finish()
    }
}

impl SolverLog {
    /// Keeps every record in memory.
    pub fn in_memory() -> Self {
        Self {
            records: Vec::new(),
            keep: true,
            sink: None,
        }
    }

    /// Streams records to `sink`; `keep` also retains them in memory.
    pub fn to_writer(sink: Box<dyn Write + Send>, keep: bool) -> Self {
        Self {
            records: Vec::new(),
            keep,
            sink: Some(sink),
        }
    }

    pub fn push(&mut self, record: LogRecord) {
        if let Some(sink) = self.sink.as_mut() {
            if let Ok(line) = serde_json::to_string(&record) {
                if writeln!(sink, "{line}").is_err() {
                    log::warn!("solver log write failed");
                }
            }
        }
        log::debug!("{record:?}");
        if self.keep {
            self.records.push(record);
        }
    }

    pub fn flush(&mut self) {
        if let Some(sink) = self.sink.as_mut() {
            let _ = sink.flush();
        }
    }
}

/// Solves `A x = b` for a square sparse `A` given as triplets (duplicates summed).
pub fn solve_sparse(n: usize, triplets: &[(usize, usize, f64)], rhs: &[f64]) -> Option<Vec<f64>> {
    use faer::prelude::*;
    use faer::sparse::{SparseColMat, Triplet};
    if n == 0 {
        return Some(Vec::new());
    }
    let t: Vec<Triplet<usize, usize, f64>> = triplets.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &t).ok()?;
    let lu = a.sp_lu().ok()?;
    let b = Col::<f64>::from_fn(n, |i| rhs[i]);
    let x = lu.solve(&b);
    let out: Vec<f64> = (0..n).map(|i| x[i]).collect();
    out.iter().all(|v| v.is_finite()).then_some(out)
}

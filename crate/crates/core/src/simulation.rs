//! The coupled boundary value problem: global fields, material-point history
//! and Dirichlet data, exposed to the staggered solver.

use serde::{Deserialize, Serialize};

use crate::constitutive::{
    dissipation_increment, work_conjugates, DamageStageResult, LocalDivergence, MaterialPointState,
    PlasticStageResult,
};
use crate::fem::{
    apply_shear_loading, assemble_d, assemble_ug, boundary_dissipation, cell_kinematics, Discretization, FemError,
    Fields, LoadProgram,
};
use crate::solver::{Block, BlockSystem, Field, StaggeredProblem};

/// Cellwise output quantities.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CellOutputs {
    /// In-plane shear component of the second Piola-Kirchhoff stress.
    pub s12: Vec<f64>,
    pub eps_p: Vec<f64>,
    pub g_e: Vec<f64>,
    pub phi: Vec<f64>,
}

/// Bulk and grain-boundary dissipation of the last accepted step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDissipation {
    /// Per-cell minimum of the volume-weighted bulk increment.
    pub bulk_min: f64,
    pub bulk_total: f64,
    pub boundary: f64,
}

/// Accepted state, sufficient to resume a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub fields: Fields,
    pub states: Vec<MaterialPointState>,
}

pub struct Simulation {
    pub disc: Discretization,
    pub program: LoadProgram,
    /// Optional piecewise-linear map from time to loading time, for
    /// non-monotone paths. Points must be sorted by time.
    pub load_curve: Option<Vec<(f64, f64)>>,
    pub fields: Fields,
    fields_n: Fields,
    states_n: Vec<MaterialPointState>,
    plastic: Vec<PlasticStageResult>,
    damage: Vec<DamageStageResult>,
    phi: Vec<f64>,
    dt: f64,
    time: f64,
    free_ug: Vec<usize>,
    pos_ug: Vec<usize>,
    n_free_u: usize,
    pub last_dissipation: Option<StepDissipation>,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("cells", &self.disc.n_cells())
            .field("time", &self.time)
            .finish()
    }
}

fn interpolate(curve: &[(f64, f64)], t: f64) -> f64 {
    match curve.iter().position(|p| p.0 >= t) {
        None => curve.last().map_or(t, |p| p.1),
        Some(0) => curve[0].1,
        Some(i) => {
            let (a, b) = (curve[i - 1], curve[i]);
            a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
        }
    }
}

impl Simulation {
    pub fn new(disc: Discretization, program: LoadProgram) -> Result<Self, FemError> {
        let fields = Fields::zeros(&disc.layout);
        let n_cells = disc.n_cells();
        let mut sim = Self {
            disc,
            program,
            load_curve: None,
            fields_n: fields.clone(),
            fields,
            states_n: vec![MaterialPointState::default(); n_cells],
            plastic: Vec::new(),
            damage: Vec::new(),
            phi: vec![0.0; n_cells],
            dt: 0.0,
            time: 0.0,
            free_ug: Vec::new(),
            pos_ug: Vec::new(),
            n_free_u: 0,
            last_dissipation: None,
        };
        sim.apply_dirichlet(0.0)?;
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Working cell damage of the current iterate.
    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn states(&self) -> &[MaterialPointState] {
        &self.states_n
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            fields: self.fields_n.clone(),
            states: self.states_n.clone(),
        }
    }

    pub fn restore(&mut self, snap: Snapshot, time: f64) -> Result<(), FemError> {
        self.fields_n = snap.fields.clone();
        self.fields = snap.fields;
        self.phi = snap.states.iter().map(|s| s.phi).collect();
        self.states_n = snap.states;
        self.plastic.clear();
        self.damage.clear();
        self.time = time;
        self.apply_dirichlet_values(time)
    }

    /// Loading time used for the boundary data at `t`.
    pub fn loading_time(&self, t: f64) -> f64 {
        self.load_curve.as_deref().map_or(t, |c| interpolate(c, t))
    }

    /// Top-boundary shear displacement at `t`.
    pub fn boundary_displacement(&self, t: f64) -> f64 {
        self.program.shear_rate * self.loading_time(t)
    }

    fn apply_dirichlet_values(&mut self, t: f64) -> Result<(), FemError> {
        let lt = self.loading_time(t);
        for (dof, v) in apply_shear_loading(&self.disc.layout, &self.disc.mesh, lt, &self.program)? {
            self.fields.u[dof] = v;
        }
        Ok(())
    }

    fn apply_dirichlet(&mut self, t: f64) -> Result<(), FemError> {
        let l = &self.disc.layout;
        let lt = self.loading_time(t);
        let fixed = apply_shear_loading(l, &self.disc.mesh, lt, &self.program)?;
        let n = l.n_u() + l.n_g();
        let mut is_fixed = vec![false; n];
        for &(dof, v) in &fixed {
            is_fixed[dof] = true;
            self.fields.u[dof] = v;
        }
        self.free_ug = (0..n).filter(|&i| !is_fixed[i]).collect();
        self.n_free_u = self.free_ug.iter().filter(|&&i| i < l.n_u()).count();
        self.pos_ug = vec![usize::MAX; n];
        for (k, &i) in self.free_ug.iter().enumerate() {
            self.pos_ug[i] = k;
        }
        Ok(())
    }

    fn ensure_plastic(&mut self) -> Result<(), LocalDivergence> {
        if self.plastic.is_empty() {
            let a = assemble_ug(&self.disc, &self.fields, &self.states_n, &self.phi, self.dt, false)?;
            self.plastic = a.local;
        }
        Ok(())
    }

    /// Cellwise outputs of the last accepted state.
    pub fn cell_outputs(&self) -> Result<CellOutputs, LocalDivergence> {
        let a = assemble_ug(&self.disc, &self.fields_n, &self.states_n, &self.phi_n(), 0.0, false)?;
        let mut out = CellOutputs::default();
        for (c, pl) in a.local.iter().enumerate() {
            let (f, _, _) = cell_kinematics(&self.disc, &self.fields_n, c);
            let s = f.inverse() * pl.outputs.p;
            out.s12.push(s.0[0][1]);
            out.eps_p.push(self.states_n[c].eps_p);
            out.g_e.push(pl.outputs.g_e);
            out.phi.push(self.states_n[c].phi);
        }
        Ok(out)
    }

    fn phi_n(&self) -> Vec<f64> {
        self.states_n.iter().map(|s| s.phi).collect()
    }
}

impl StaggeredProblem for Simulation {
    fn assemble(&mut self, block: Block, want_tangent: bool) -> Result<BlockSystem, LocalDivergence> {
        match block {
            Block::Ug => {
                let a = assemble_ug(&self.disc, &self.fields, &self.states_n, &self.phi, self.dt, want_tangent)?;
                self.plastic = a.local;
                let residual = self.free_ug.iter().map(|&i| a.residual[i]).collect();
                let tangent = want_tangent.then(|| {
                    a.triplets
                        .iter()
                        .filter_map(|&(r, c, v)| {
                            let (pr, pc) = (self.pos_ug[r], self.pos_ug[c]);
                            (pr != usize::MAX && pc != usize::MAX).then_some((pr, pc, v))
                        })
                        .collect()
                });
                Ok(BlockSystem {
                    residual,
                    fields: vec![(Field::U, 0..self.n_free_u), (Field::G, self.n_free_u..self.free_ug.len())],
                    tangent,
                })
            }
            Block::D => {
                self.ensure_plastic()?;
                let a = assemble_d(&self.disc, &self.fields, &self.states_n, &self.plastic, want_tangent)?;
                self.phi = a.damage.iter().map(|r| r.phi_new).collect();
                self.damage = a.damage;
                let n = a.residual.len();
                Ok(BlockSystem {
                    residual: a.residual,
                    fields: vec![(Field::D, 0..n)],
                    tangent: want_tangent.then_some(a.triplets),
                })
            }
        }
    }

    fn values(&self, block: Block) -> Vec<f64> {
        match block {
            Block::Ug => {
                let n_u = self.disc.layout.n_u();
                self.free_ug
                    .iter()
                    .map(|&i| if i < n_u { self.fields.u[i] } else { self.fields.g[i - n_u] })
                    .collect()
            }
            Block::D => self.fields.d.clone(),
        }
    }

    fn set_values(&mut self, block: Block, values: &[f64]) {
        match block {
            Block::Ug => {
                let n_u = self.disc.layout.n_u();
                for (&i, &v) in self.free_ug.iter().zip(values) {
                    if i < n_u {
                        self.fields.u[i] = v;
                    } else {
                        self.fields.g[i - n_u] = v;
                    }
                }
            }
            Block::D => self.fields.d.copy_from_slice(values),
        }
    }

    fn begin_step(&mut self, time: f64, dt: f64) {
        self.dt = dt;
        self.fields = self.fields_n.clone();
        self.phi = self.phi_n();
        self.plastic.clear();
        self.damage.clear();
        if let Err(e) = self.apply_dirichlet_values(time) {
            log::error!("boundary data: {e}");
        }
    }

    fn accept_step(&mut self) {
        let p = &self.disc.params;
        let mut diss = StepDissipation {
            bulk_min: f64::INFINITY,
            ..Default::default()
        };
        let mut new_states = Vec::with_capacity(self.plastic.len());
        for (c, pl) in self.plastic.iter().enumerate() {
            let mut s = pl.state.clone();
            s.phi = self.phi[c];
            let y_phi = self.damage.get(c).map_or(0.0, |d| d.y_phi);
            let conj = work_conjugates(p, &pl.outputs, s.eps_p, s.phi, y_phi);
            let inc = self.disc.geometry[c].volume * dissipation_increment(&self.states_n[c], &s, &conj);
            diss.bulk_min = diss.bulk_min.min(inc);
            diss.bulk_total += inc;
            new_states.push(s);
        }
        let k_n: Vec<f64> = self.states_n.iter().map(|s| s.k_sum()).collect();
        let k_np1: Vec<f64> = new_states.iter().map(|s| s.k_sum()).collect();
        diss.boundary = boundary_dissipation(&self.disc, &self.fields.d, &k_n, &k_np1);
        self.last_dissipation = Some(diss);
        self.states_n = new_states;
        self.fields_n = self.fields.clone();
        self.time += self.dt;
        self.plastic.clear();
        self.damage.clear();
    }

    fn reject_step(&mut self) {
        self.fields = self.fields_n.clone();
        self.phi = self.phi_n();
        self.plastic.clear();
        self.damage.clear();
    }
}

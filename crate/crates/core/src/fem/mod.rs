//! Linear-simplex discretization of the coupled equilibrium, dual-mixed
//! gradient-plasticity and phase-field equations.

mod assembly;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::{MaterialParams, SlipSystem, TangentMode};
use crate::microstructure::{ConstraintSet, PolyMesh, GrainRegion, INNER, OUTER, VOID};
use crate::tensor::{dot, Vec3};

pub use assembly::{
    assemble_d, assemble_ug, boundary_dissipation, cell_kinematics, DAssembly, Fields, Triplets, UgAssembly,
};

/// Flexibility used to realize micro-free conditions, in units of `1/(Hg·lg²)`.
pub const MICRO_FREE_FLEXIBILITY: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("volume average over an empty region")]
    EmptyRegion,
    #[error("unknown facet set `{0}`")]
    UnknownFacetSet(String),
    #[error("micro-flexibility must satisfy C0 > 0 and Cd >= 0 (got {c0}, {cd})")]
    InvalidFlexibility { c0: f64, cd: f64 },
}

/// Grain-boundary condition for the gradient field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MicroBoundaryCondition {
    MicroFree,
    MicroHard,
    /// `C_Γ(d) = c0 + cd·d`, in units of `1/(MPa·mm²)`.
    MicroFlexible { c0: f64, cd: f64 },
}

impl MicroBoundaryCondition {
    /// Damage-coupled flexibility with `C_Γ0 = 1/(Hg lg²)` and slope `20/(Hg lg²)`.
    pub fn reference_flexible(params: &MaterialParams) -> Self {
        let s = params.gradient_stiffness();
        Self::MicroFlexible {
            c0: 1.0 / s,
            cd: 20.0 / s,
        }
    }

    pub fn validate(&self) -> Result<(), FemError> {
        match *self {
            Self::MicroFlexible { c0, cd } if !(c0 > 0.0 && cd >= 0.0) => {
                Err(FemError::InvalidFlexibility { c0, cd })
            }
            _ => Ok(()),
        }
    }

    /// `C_Γ(d)`, or `None` when the boundary term is dropped.
    pub fn flexibility(&self, d: f64, params: &MaterialParams) -> Option<f64> {
        match *self {
            Self::MicroHard => None,
            Self::MicroFree => Some(MICRO_FREE_FLEXIBILITY / params.gradient_stiffness()),
            Self::MicroFlexible { c0, cd } => Some(c0 + cd * d),
        }
    }
}

/// Flux conjugate to `N·δg` on a grain boundary: `C_Γ(d)·Hg·lg²·(N·g)`.
pub fn micro_bc_surface_term(
    bc: &MicroBoundaryCondition,
    g: &Vec3,
    normal: &Vec3,
    d: f64,
    params: &MaterialParams,
) -> f64 {
    match bc.flexibility(d, params) {
        Some(c) => c * params.gradient_stiffness() * dot(normal, g),
        None => 0.0,
    }
}

/// Constant shape-function gradients and measure of a linear simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct CellGeometry {
    pub grads: Vec<Vec3>,
    pub volume: f64,
}

impl CellGeometry {
    pub fn new(mesh: &PolyMesh, cell: usize) -> Self {
        let dim = mesh.dim;
        let c = &mesh.cells[cell];
        let x0 = mesh.nodes[c[0]];
        // J = [x1 - x0, ..., x_dim - x0] (columns)
        let mut j = nalgebra::DMatrix::<f64>::zeros(dim, dim);
        for k in 0..dim {
            for i in 0..dim {
                j[(i, k)] = mesh.nodes[c[k + 1]][i] - x0[i];
            }
        }
        let det = j.determinant();
        let jinv = j.try_inverse().expect("non-degenerate cell");
        let mut grads = vec![[0.0; 3]; dim + 1];
        for a in 1..=dim {
            for i in 0..dim {
                grads[a][i] = jinv[(a - 1, i)];
                grads[0][i] -= jinv[(a - 1, i)];
            }
        }
        let fact = if dim == 2 { 2.0 } else { 6.0 };
        Self {
            grads,
            volume: det.abs() / fact,
        }
    }

    /// Consistent mass entry `∫ N_a N_b dV`.
    pub fn mass(&self, a: usize, b: usize) -> f64 {
        let n = self.grads.len() as f64;
        let base = self.volume / (n * (n + 1.0));
        if a == b {
            2.0 * base
        } else {
            base
        }
    }
}

/// Degree-of-freedom numbering for `u`, `g` and `d`.
///
/// `u` and `d` live on master nodes (replicas share their master's
/// equations); `g` lives on every node, numbered grain by grain.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldLayout {
    pub dim: usize,
    pub n_nodes: usize,
    pub n_master: usize,
    pub master: Vec<usize>,
    pub grain_of_node: Vec<usize>,
    g_rank: Vec<usize>,
    pub g_grain_ranges: Vec<Range<usize>>,
}

impl FieldLayout {
    pub fn new(mesh: &PolyMesh, constraints: &ConstraintSet) -> Self {
        let n_nodes = mesh.nodes.len();
        let master = constraints.master_map(n_nodes);
        let n_master = master.iter().enumerate().filter(|&(i, &m)| i == m).count();
        debug_assert!(master.iter().all(|&m| m < n_master));
        let grain_of_node: Vec<usize> = mesh
            .grain_of_node()
            .into_iter()
            .map(|g| g.expect("every node belongs to exactly one grain after duplication"))
            .collect();
        let mut order: Vec<usize> = (0..n_nodes).collect();
        order.sort_by_key(|&n| (grain_of_node[n], n));
        let mut g_rank = vec![0; n_nodes];
        let mut g_grain_ranges = vec![0..0; mesh.n_grains()];
        for (r, &n) in order.iter().enumerate() {
            g_rank[n] = r;
            let g = grain_of_node[n];
            let range = &mut g_grain_ranges[g];
            if range.start == range.end {
                *range = mesh.dim * r..mesh.dim * (r + 1);
            } else {
                range.end = mesh.dim * (r + 1);
            }
        }
        Self {
            dim: mesh.dim,
            n_nodes,
            n_master,
            master,
            grain_of_node,
            g_rank,
            g_grain_ranges,
        }
    }

    pub fn n_u(&self) -> usize {
        self.dim * self.n_master
    }

    pub fn n_g(&self) -> usize {
        self.dim * self.n_nodes
    }

    pub fn n_d(&self) -> usize {
        self.n_master
    }

    /// Dof count counting every replica separately.
    pub fn n_dofs_with_replicas(&self) -> usize {
        self.n_nodes * (2 * self.dim + 1)
    }

    pub fn u_dof(&self, node: usize, comp: usize) -> usize {
        self.dim * self.master[node] + comp
    }

    /// Index into the `g` vector.
    pub fn g_dof(&self, node: usize, comp: usize) -> usize {
        self.dim * self.g_rank[node] + comp
    }

    pub fn d_dof(&self, node: usize) -> usize {
        self.master[node]
    }
}

/// Displacement-controlled simple shear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadProgram {
    /// Top-boundary displacement rate (mm per s).
    pub shear_rate: f64,
    /// End time of the run.
    pub horizon: f64,
    /// Facet sets whose nodes are driven.
    pub driven: Vec<String>,
}

impl LoadProgram {
    pub fn reference(length_scale: f64, relax_time: f64, horizon: f64) -> Self {
        Self {
            shear_rate: 0.05 * length_scale / relax_time,
            horizon,
            driven: vec![OUTER.to_string()],
        }
    }
}

/// Prescribed displacement components at time `t` as `(u dof, value)` pairs.
///
/// The shear direction is `x`; the height axis is `y` in 2D and `z` in 3D.
/// Every driven node gets `u_x = rate·t·(h − h_min)/H` and a zero height
/// component. In 3D, nodes on the `y` faces are additionally rollers
/// (`u_y = 0`); the in-plane load is not applied to nodes that only touch
/// those faces.
pub fn apply_shear_loading(
    layout: &FieldLayout,
    mesh: &PolyMesh,
    t: f64,
    program: &LoadProgram,
) -> Result<Vec<(usize, f64)>, FemError> {
    let dim = mesh.dim;
    let (lo, hi) = mesh.bounding_box();
    let h_axis = dim - 1;
    let height = hi[h_axis] - lo[h_axis];
    let tol = 1e-10 * mesh.length_scale();
    let on = |x: &Vec3, axis: usize| (x[axis] - lo[axis]).abs() <= tol || (x[axis] - hi[axis]).abs() <= tol;
    let mut driven = vec![false; layout.n_master];
    for name in &program.driven {
        let facets = mesh
            .facet_sets
            .get(name)
            .ok_or_else(|| FemError::UnknownFacetSet(name.clone()))?;
        for f in facets {
            for n in mesh.facet_nodes(f.cell, f.local) {
                driven[layout.master[n]] = true;
            }
        }
    }
    let mut out = Vec::new();
    for m in 0..layout.n_master {
        if !driven[m] {
            continue;
        }
        let x = mesh.nodes[m];
        let sheared = dim == 2 || on(&x, 0) || on(&x, 2);
        if sheared {
            let u1 = program.shear_rate * t * (x[h_axis] - lo[h_axis]) / height;
            out.push((layout.u_dof(m, 0), u1));
            out.push((layout.u_dof(m, h_axis), 0.0));
        }
        if dim == 3 && on(&x, 1) {
            out.push((layout.u_dof(m, 1), 0.0));
        }
    }
    out.sort_by_key(|p| p.0);
    out.dedup_by_key(|p| p.0);
    Ok(out)
}

/// A grain-boundary or void facet carrying a surface term.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceFacet {
    pub cell: usize,
    /// Cell-local vertex indices of the facet.
    pub local_nodes: Vec<usize>,
    pub normal: Vec3,
    pub measure: f64,
    pub bc: MicroBoundaryCondition,
    /// True for grain boundaries, false for voids.
    pub inner: bool,
}

/// Everything needed to assemble: mesh, numbering, materials and boundary data.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub mesh: PolyMesh,
    pub constraints: ConstraintSet,
    pub layout: FieldLayout,
    pub geometry: Vec<CellGeometry>,
    pub grains: Vec<GrainRegion>,
    pub params: MaterialParams,
    pub surface: Vec<SurfaceFacet>,
    pub tangent_mode: TangentMode,
}

impl Discretization {
    /// `mesh` must already have its grain-boundary nodes duplicated.
    pub fn new(
        mesh: PolyMesh,
        constraints: ConstraintSet,
        grains: Vec<GrainRegion>,
        params: MaterialParams,
        inner_bc: MicroBoundaryCondition,
        void_bc: MicroBoundaryCondition,
    ) -> Result<Self, FemError> {
        inner_bc.validate()?;
        void_bc.validate()?;
        let layout = FieldLayout::new(&mesh, &constraints);
        let geometry = (0..mesh.cells.len()).map(|c| CellGeometry::new(&mesh, c)).collect();
        let mut surface = Vec::new();
        for (name, bc, inner) in [(INNER, inner_bc, true), (VOID, void_bc, false)] {
            if bc == MicroBoundaryCondition::MicroHard {
                continue;
            }
            for f in mesh.facet_sets.get(name).map(Vec::as_slice).unwrap_or(&[]) {
                let (_, measure) = mesh.facet_normal(f.cell, f.local).expect("classified facets are valid");
                surface.push(SurfaceFacet {
                    cell: f.cell,
                    local_nodes: (0..=mesh.dim).filter(|&i| i != f.local).collect(),
                    normal: f.normal,
                    measure,
                    bc,
                    inner,
                });
            }
        }
        Ok(Self {
            mesh,
            constraints,
            layout,
            geometry,
            grains,
            params,
            surface,
            tangent_mode: TangentMode::Algorithmic,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.mesh.cells.len()
    }

    pub fn slip_systems(&self, cell: usize) -> &[SlipSystem] {
        &self.grains[self.mesh.grain_of_cell[cell]].slip_systems
    }

    /// Cell volumes.
    pub fn volumes(&self) -> Vec<f64> {
        self.geometry.iter().map(|g| g.volume).collect()
    }

    /// Cells of the grains with the given labels.
    pub fn cells_of_grains(&self, labels: &[usize]) -> Vec<usize> {
        (0..self.n_cells())
            .filter(|&c| labels.contains(&self.mesh.grain_labels[self.mesh.grain_of_cell[c]]))
            .collect()
    }
}

/// Quantities available for volume averaging.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// In-plane shear component of the second Piola-Kirchhoff stress.
    S12,
    EpsP,
    Ge,
    D,
}

/// `∫Q dV / ∫dV` over `cells` for a cellwise-constant `values` field.
pub fn volume_average(volumes: &[f64], values: &[f64], cells: &[usize]) -> Result<f64, FemError> {
    if cells.is_empty() {
        return Err(FemError::EmptyRegion);
    }
    let (num, den) = cells
        .iter()
        .fold((0.0, 0.0), |(n, d), &c| (n + values[c] * volumes[c], d + volumes[c]));
    if den <= 0.0 {
        return Err(FemError::EmptyRegion);
    }
    Ok(num / den)
}

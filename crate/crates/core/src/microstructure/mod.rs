//! Grain topology: meshes with grain tags, boundary facet sets, grain-boundary
//! node duplication and per-grain slip-system orientation.

mod generate;
mod msh;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::{fcc_slip_systems, SlipSystem};
use crate::tensor::{cross, dot, norm, Tensor2, Vec3};

pub use generate::{assign_grains, remove_cells, structured_box, structured_rectangle, voronoi_grains};
pub use msh::{load_mesh, write_msh};

/// Facet set names produced by [`PolyMesh::new`].
pub const OUTER: &str = "outer";
pub const INNER: &str = "inner";
pub const VOID: &str = "void";

/// Relative facet-measure threshold below which a facet is degenerate.
pub const DEGENERATE_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("parse error in section `{section}` at line {line}: {message}")]
    Parse {
        section: String,
        line: usize,
        message: String,
    },
    #[error("cell {cell} has no grain tag")]
    Topology { cell: usize },
    #[error("degenerate facet {local} of cell {cell} (measure {measure:e})")]
    DegenerateFacet { cell: usize, local: usize, measure: f64 },
    #[error("invalid mesh: {0}")]
    Invalid(String),
}

/// One side of a boundary facet, seen from `cell`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFacet {
    pub cell: usize,
    /// Local facet index: the facet opposite local vertex `local`.
    pub local: usize,
    /// Unit outward normal in the reference configuration.
    pub normal: Vec3,
}

/// Simplex mesh with one grain per cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyMesh {
    pub dim: usize,
    pub nodes: Vec<Vec3>,
    /// Node ids per cell, `dim + 1` entries each.
    pub cells: Vec<Vec<usize>>,
    /// Compact grain index per cell.
    pub grain_of_cell: Vec<usize>,
    /// User-facing label per compact grain index (the `i` in `grain<i>`).
    pub grain_labels: Vec<usize>,
    pub facet_sets: BTreeMap<String, Vec<BoundaryFacet>>,
    /// Original node id for every node; identity before duplication.
    pub origin: Vec<usize>,
}

impl PolyMesh {
    /// Builds a mesh and classifies its boundary facets.
    ///
    /// Facets with a single neighbouring cell lying on the bounding box go to
    /// [`OUTER`], other single-neighbour facets to [`VOID`]; facets between
    /// cells of different grains go to [`INNER`] once per side.
    pub fn new(
        dim: usize,
        nodes: Vec<Vec3>,
        cells: Vec<Vec<usize>>,
        grain_of_cell: Vec<usize>,
    ) -> Result<Self, MeshError> {
        if dim != 2 && dim != 3 {
            return Err(MeshError::Invalid(format!("dimension {dim} not supported")));
        }
        if grain_of_cell.len() != cells.len() {
            return Err(MeshError::Topology {
                cell: grain_of_cell.len().min(cells.len()),
            });
        }
        for (c, cell) in cells.iter().enumerate() {
            if cell.len() != dim + 1 || cell.iter().any(|&n| n >= nodes.len()) {
                return Err(MeshError::Invalid(format!("cell {c} has bad connectivity")));
            }
        }
        let (grain_of_cell, grain_labels) = compact_grains(&grain_of_cell);
        let origin = (0..nodes.len()).collect();
        let mut mesh = Self {
            dim,
            nodes,
            cells,
            grain_of_cell,
            grain_labels,
            facet_sets: BTreeMap::new(),
            origin,
        };
        mesh.classify_facets()?;
        Ok(mesh)
    }

    pub fn n_grains(&self) -> usize {
        self.grain_labels.len()
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for x in &self.nodes {
            for i in 0..3 {
                lo[i] = lo[i].min(x[i]);
                hi[i] = hi[i].max(x[i]);
            }
        }
        (lo, hi)
    }

    /// Characteristic length: the largest bounding-box extent.
    pub fn length_scale(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (0..self.dim).map(|i| hi[i] - lo[i]).fold(0.0, f64::max)
    }

    pub fn cell_volume(&self, cell: usize) -> f64 {
        let c = &self.cells[cell];
        let x0 = self.nodes[c[0]];
        let e = |k: usize| -> Vec3 { std::array::from_fn(|i| self.nodes[c[k]][i] - x0[i]) };
        if self.dim == 2 {
            let (a, b) = (e(1), e(2));
            0.5 * (a[0] * b[1] - a[1] * b[0]).abs()
        } else {
            dot(&e(1), &cross(&e(2), &e(3))).abs() / 6.0
        }
    }

    pub fn centroid(&self, cell: usize) -> Vec3 {
        let c = &self.cells[cell];
        let mut x = [0.0; 3];
        for &n in c {
            for i in 0..3 {
                x[i] += self.nodes[n][i];
            }
        }
        x.map(|v| v / c.len() as f64)
    }

    /// Node ids of local facet `local` (all vertices except `local`).
    pub fn facet_nodes(&self, cell: usize, local: usize) -> Vec<usize> {
        self.cells[cell]
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != local)
            .map(|(_, &n)| n)
            .collect()
    }

    /// Unit outward normal and measure of a cell facet.
    pub fn facet_normal(&self, cell: usize, local: usize) -> Result<(Vec3, f64), MeshError> {
        let fnodes = self.facet_nodes(cell, local);
        let x: Vec<Vec3> = fnodes.iter().map(|&n| self.nodes[n]).collect();
        let sub = |a: &Vec3, b: &Vec3| -> Vec3 { std::array::from_fn(|i| a[i] - b[i]) };
        let (mut n, measure) = if self.dim == 2 {
            let t = sub(&x[1], &x[0]);
            ([t[1], -t[0], 0.0], norm(&t))
        } else {
            let c = cross(&sub(&x[1], &x[0]), &sub(&x[2], &x[0]));
            (c, 0.5 * norm(&c))
        };
        let scale = self.length_scale().powi(self.dim as i32 - 1);
        if !(measure > DEGENERATE_TOL * scale) {
            return Err(MeshError::DegenerateFacet { cell, local, measure });
        }
        let len = norm(&n);
        n = n.map(|v| v / len);
        let opposite = self.nodes[self.cells[cell][local]];
        if dot(&n, &sub(&x[0], &opposite)) < 0.0 {
            n = n.map(|v| -v);
        }
        Ok((n, measure))
    }

    /// Outward unit normals of every classified facet, keyed by facet set.
    pub fn facet_normals(&self) -> Result<BTreeMap<String, Vec<Vec3>>, MeshError> {
        let mut out = BTreeMap::new();
        for (name, facets) in &self.facet_sets {
            let normals = facets
                .iter()
                .map(|f| self.facet_normal(f.cell, f.local).map(|(n, _)| n))
                .collect::<Result<Vec<_>, _>>()?;
            out.insert(name.clone(), normals);
        }
        Ok(out)
    }

    fn classify_facets(&mut self) -> Result<(), MeshError> {
        let mut owners: HashMap<Vec<usize>, Vec<(usize, usize)>> = HashMap::new();
        for c in 0..self.cells.len() {
            for l in 0..=self.dim {
                let mut key: Vec<usize> = self.facet_nodes(c, l).iter().map(|&n| self.origin[n]).collect();
                key.sort_unstable();
                owners.entry(key).or_default().push((c, l));
            }
        }
        let (lo, hi) = self.bounding_box();
        let tol = 1e-10 * self.length_scale();
        let mut sets: BTreeMap<String, Vec<BoundaryFacet>> =
            [OUTER, INNER, VOID].iter().map(|s| (s.to_string(), Vec::new())).collect();
        let mut keys: Vec<_> = owners.into_iter().collect();
        keys.sort();
        for (key, sides) in keys {
            match sides.as_slice() {
                [(c, l)] => {
                    let on_box = (0..self.dim).any(|i| {
                        key.iter().all(|&n| (self.nodes[n][i] - lo[i]).abs() <= tol)
                            || key.iter().all(|&n| (self.nodes[n][i] - hi[i]).abs() <= tol)
                    });
                    let (normal, _) = self.facet_normal(*c, *l)?;
                    let set = if on_box { OUTER } else { VOID };
                    sets.get_mut(set).unwrap().push(BoundaryFacet { cell: *c, local: *l, normal });
                }
                [(c1, l1), (c2, l2)] => {
                    if self.grain_of_cell[*c1] != self.grain_of_cell[*c2] {
                        for (c, l) in [(*c1, *l1), (*c2, *l2)] {
                            let (normal, _) = self.facet_normal(c, l)?;
                            sets.get_mut(INNER).unwrap().push(BoundaryFacet { cell: c, local: l, normal });
                        }
                    }
                }
                _ => {
                    return Err(MeshError::Invalid(format!(
                        "facet {key:?} shared by {} cells",
                        sides.len()
                    )))
                }
            }
        }
        self.facet_sets = sets;
        Ok(())
    }

    /// Cells of each compact grain index.
    pub fn grain_cells(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_grains()];
        for (c, &g) in self.grain_of_cell.iter().enumerate() {
            out[g].push(c);
        }
        out
    }

    /// Grain of each node, `None` for nodes shared by several grains or unused.
    pub fn grain_of_node(&self) -> Vec<Option<usize>> {
        let mut out: Vec<Option<Option<usize>>> = vec![None; self.nodes.len()];
        for (c, cell) in self.cells.iter().enumerate() {
            let g = self.grain_of_cell[c];
            for &n in cell {
                out[n] = match out[n] {
                    None => Some(Some(g)),
                    Some(Some(h)) if h == g => Some(Some(g)),
                    _ => Some(None),
                };
            }
        }
        out.into_iter().map(|x| x.flatten()).collect()
    }
}

fn compact_grains(tags: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut labels: Vec<usize> = tags.to_vec();
    labels.sort_unstable();
    labels.dedup();
    let index: HashMap<usize, usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    (tags.iter().map(|t| index[t]).collect(), labels)
}

/// Replica-to-master ties for fields continuous across grain boundaries.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    /// `(slave, master)` node pairs; masters are never slaves.
    pub pairs: Vec<(usize, usize)>,
}

impl ConstraintSet {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    /// Master node of every node of a mesh with `n_nodes` nodes.
    pub fn master_map(&self, n_nodes: usize) -> Vec<usize> {
        let mut m: Vec<usize> = (0..n_nodes).collect();
        for &(s, ma) in &self.pairs {
            m[s] = ma;
        }
        m
    }
}

/// Replicates every node shared by `k > 1` grains so that each grain owns its
/// own copy. The lowest grain keeps the original node.
pub fn duplicate_grain_boundary_nodes(mesh: &PolyMesh) -> (PolyMesh, ConstraintSet) {
    let mut grains_of_node: Vec<Vec<usize>> = vec![Vec::new(); mesh.nodes.len()];
    for (c, cell) in mesh.cells.iter().enumerate() {
        for &n in cell {
            let g = mesh.grain_of_cell[c];
            if !grains_of_node[n].contains(&g) {
                grains_of_node[n].push(g);
            }
        }
    }
    let mut out = mesh.clone();
    let mut constraints = ConstraintSet::default();
    let mut replica: HashMap<(usize, usize), usize> = HashMap::new();
    for (n, gs) in grains_of_node.iter_mut().enumerate() {
        gs.sort_unstable();
        for &g in gs.iter().skip(1) {
            let id = out.nodes.len();
            out.nodes.push(mesh.nodes[n]);
            out.origin.push(mesh.origin[n]);
            replica.insert((n, g), id);
            constraints.pairs.push((id, n));
        }
    }
    for (c, cell) in out.cells.iter_mut().enumerate() {
        let g = mesh.grain_of_cell[c];
        for n in cell.iter_mut() {
            if let Some(&r) = replica.get(&(*n, g)) {
                *n = r;
            }
        }
    }
    (out, constraints)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RodriguesConvention {
    /// `r = tan(θ/2)·axis`.
    #[default]
    TanHalfAngle,
    /// `|r|` is the rotation angle in degrees about `r/|r|`.
    AxisAngleDegrees,
}

/// Active rotation tensor for a Rodrigues vector.
pub fn rodrigues_rotation(r: &Vec3, convention: RodriguesConvention) -> Tensor2 {
    let r = match convention {
        RodriguesConvention::TanHalfAngle => *r,
        RodriguesConvention::AxisAngleDegrees => {
            let deg = norm(r);
            if deg == 0.0 {
                return Tensor2::identity();
            }
            let t = (0.5 * deg.to_radians()).tan();
            r.map(|v| v / deg * t)
        }
    };
    let w = Tensor2([[0.0, -r[2], r[1]], [r[2], 0.0, -r[0]], [-r[1], r[0], 0.0]]);
    let c = 2.0 / (1.0 + dot(&r, &r));
    Tensor2::identity() + (w + w * w).scale(c)
}

/// FCC slip systems rotated into the sample frame.
pub fn rotate_slip_systems(rodrigues: &Vec3, convention: RodriguesConvention) -> Vec<SlipSystem> {
    let rot = rodrigues_rotation(rodrigues, convention);
    fcc_slip_systems()
        .iter()
        .map(|s| SlipSystem {
            direction: rot.apply(&s.direction),
            plane_normal: rot.apply(&s.plane_normal),
        })
        .collect()
}

/// A grain with its cells and oriented slip systems.
#[derive(Clone, Debug, PartialEq)]
pub struct GrainRegion {
    pub id: usize,
    pub cells: Vec<usize>,
    pub slip_systems: Vec<SlipSystem>,
    pub rodrigues: Vec3,
}

/// Builds one region per grain; `rodrigues` is indexed by compact grain index.
pub fn grain_regions(mesh: &PolyMesh, rodrigues: &[Vec3], convention: RodriguesConvention) -> Vec<GrainRegion> {
    mesh.grain_cells()
        .into_iter()
        .enumerate()
        .map(|(g, cells)| {
            let r = rodrigues.get(g).copied().unwrap_or([0.0; 3]);
            GrainRegion {
                id: mesh.grain_labels[g],
                cells,
                slip_systems: rotate_slip_systems(&r, convention),
                rodrigues: r,
            }
        })
        .collect()
}

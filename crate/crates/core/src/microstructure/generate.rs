//! Structured simplex meshes and simple grain/void assignment for fixtures and
//! scaled-down runs.

use super::{MeshError, PolyMesh};
use crate::tensor::Vec3;

/// `nx × ny` quads over `[0,lx]×[0,ly]`, each split into two triangles with
/// alternating diagonals. Single grain.
pub fn structured_rectangle(nx: usize, ny: usize, lx: f64, ly: f64) -> PolyMesh {
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push([lx * i as f64 / nx as f64, ly * j as f64 / ny as f64, 0.0]);
        }
    }
    let mut cells = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            if (i + j) % 2 == 0 {
                cells.push(vec![a, b, c]);
                cells.push(vec![a, c, d]);
            } else {
                cells.push(vec![a, b, d]);
                cells.push(vec![b, c, d]);
            }
        }
    }
    let n = cells.len();
    PolyMesh::new(2, nodes, cells, vec![0; n]).expect("structured rectangle is valid")
}

/// `nx × ny × nz` hexahedra over `[0,lx]×[0,ly]×[0,lz]`, each split into six
/// tetrahedra sharing the main diagonal. Single grain.
pub fn structured_box(nx: usize, ny: usize, nz: usize, lx: f64, ly: f64, lz: f64) -> PolyMesh {
    let id = |i: usize, j: usize, k: usize| (k * (ny + 1) + j) * (nx + 1) + i;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push([
                    lx * i as f64 / nx as f64,
                    ly * j as f64 / ny as f64,
                    lz * k as f64 / nz as f64,
                ]);
            }
        }
    }
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut cells = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                for p in PERMS {
                    let mut corner = [i, j, k];
                    let mut tet = vec![id(i, j, k)];
                    for axis in p {
                        corner[axis] += 1;
                        tet.push(id(corner[0], corner[1], corner[2]));
                    }
                    cells.push(tet);
                }
            }
        }
    }
    let n = cells.len();
    PolyMesh::new(3, nodes, cells, vec![0; n]).expect("structured box is valid")
}

/// Re-tags every cell with `grain(centroid)` and reclassifies facets.
pub fn assign_grains(mesh: &mut PolyMesh, grain: impl Fn(&Vec3) -> usize) -> Result<(), MeshError> {
    let tags = (0..mesh.cells.len()).map(|c| grain(&mesh.centroid(c))).collect();
    *mesh = PolyMesh::new(mesh.dim, std::mem::take(&mut mesh.nodes), std::mem::take(&mut mesh.cells), tags)?;
    Ok(())
}

/// Voronoi grains: each cell joins the grain of the nearest seed to its centroid.
pub fn voronoi_grains(mesh: &mut PolyMesh, seeds: &[Vec3]) -> Result<(), MeshError> {
    if seeds.is_empty() {
        return Err(MeshError::Invalid("no Voronoi seeds".into()));
    }
    let dim = mesh.dim;
    assign_grains(mesh, |x| {
        let dist = |s: &Vec3| (0..dim).map(|i| (x[i] - s[i]).powi(2)).sum::<f64>();
        (0..seeds.len())
            .min_by(|&a, &b| dist(&seeds[a]).total_cmp(&dist(&seeds[b])))
            .unwrap()
    })
}

/// Removes cells whose centroid satisfies `remove`, drops orphaned nodes and
/// reclassifies facets (new holes become void boundaries).
pub fn remove_cells(mesh: &PolyMesh, remove: impl Fn(&Vec3) -> bool) -> Result<PolyMesh, MeshError> {
    let keep: Vec<usize> = (0..mesh.cells.len()).filter(|&c| !remove(&mesh.centroid(c))).collect();
    let mut new_id = vec![usize::MAX; mesh.nodes.len()];
    let mut nodes = Vec::new();
    let mut cells = Vec::with_capacity(keep.len());
    for &c in &keep {
        let cell = mesh.cells[c]
            .iter()
            .map(|&n| {
                if new_id[n] == usize::MAX {
                    new_id[n] = nodes.len();
                    nodes.push(mesh.nodes[n]);
                }
                new_id[n]
            })
            .collect();
        cells.push(cell);
    }
    let tags = keep.iter().map(|&c| mesh.grain_labels[mesh.grain_of_cell[c]]).collect();
    PolyMesh::new(mesh.dim, nodes, cells, tags)
}

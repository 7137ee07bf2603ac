use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CellGeometry, Discretization};
use crate::constitutive::{
    integrate_damage_stage, integrate_plastic_stage, DamageStageResult, LocalDivergence, MaterialPointState,
    PlasticStageResult, PointInputs, TangentMode,
};
use crate::tensor::{dot, Tensor2};

/// Nodal unknowns. `u` and `d` are indexed by master equation, `g` by the
/// grain-blocked numbering of [`super::FieldLayout`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fields {
    pub u: Vec<f64>,
    pub g: Vec<f64>,
    pub d: Vec<f64>,
}

impl Fields {
    pub fn zeros(layout: &super::FieldLayout) -> Self {
        Self {
            u: vec![0.0; layout.n_u()],
            g: vec![0.0; layout.n_g()],
            d: vec![0.0; layout.n_d()],
        }
    }
}

pub type Triplets = Vec<(usize, usize, f64)>;

/// Residual and tangent of the combined `[u, g]` block, full numbering
/// (`u` first, then `g`).
#[derive(Clone, Debug)]
pub struct UgAssembly {
    pub residual: Vec<f64>,
    pub triplets: Triplets,
    pub local: Vec<PlasticStageResult>,
}

#[derive(Clone, Debug)]
pub struct DAssembly {
    pub residual: Vec<f64>,
    pub triplets: Triplets,
    pub damage: Vec<DamageStageResult>,
}

/// Deformation gradient, `∇·g` and centroid phase field of a cell.
pub fn cell_kinematics(disc: &Discretization, fields: &Fields, cell: usize) -> (Tensor2, f64, f64) {
    let l = &disc.layout;
    let geo = &disc.geometry[cell];
    let nodes = &disc.mesh.cells[cell];
    let mut f = Tensor2::identity();
    let mut div_g = 0.0;
    let mut d = 0.0;
    for (a, &n) in nodes.iter().enumerate() {
        for i in 0..l.dim {
            let ua = fields.u[l.u_dof(n, i)];
            for j in 0..l.dim {
                f.0[i][j] += ua * geo.grads[a][j];
            }
            div_g += fields.g[l.g_dof(n, i)] * geo.grads[a][i];
        }
        d += fields.d[l.d_dof(n)];
    }
    (f, div_g, d / nodes.len() as f64)
}

struct CellUg {
    result: PlasticStageResult,
    dofs: Vec<usize>,
    r: Vec<f64>,
    k: Vec<f64>,
}

fn cell_ug(
    disc: &Discretization,
    fields: &Fields,
    state_n: &MaterialPointState,
    phi: f64,
    dt: f64,
    cell: usize,
    want_tangent: bool,
) -> Result<CellUg, LocalDivergence> {
    let l = &disc.layout;
    let dim = l.dim;
    let geo: &CellGeometry = &disc.geometry[cell];
    let nodes = &disc.mesh.cells[cell];
    let nn = nodes.len();
    let (f, div_g, d) = cell_kinematics(disc, fields, cell);
    let mode = if want_tangent { disc.tangent_mode } else { TangentMode::ValuesOnly };
    let inputs = PointInputs { f, div_g, d, dt };
    let result = integrate_plastic_stage(state_n, phi, &inputs, &disc.params, disc.slip_systems(cell), mode)?;
    let out = &result.outputs;
    let v = geo.volume;
    let nu = nn * dim;
    let nloc = 2 * nu;
    let mut dofs = Vec::with_capacity(nloc);
    for &n in nodes {
        for i in 0..dim {
            dofs.push(l.u_dof(n, i));
        }
    }
    for &n in nodes {
        for i in 0..dim {
            dofs.push(l.n_u() + l.g_dof(n, i));
        }
    }
    let gradn = &geo.grads;
    let mut r = vec![0.0; nloc];
    for a in 0..nn {
        for i in 0..dim {
            r[a * dim + i] = v * (0..dim).map(|j| out.p.0[i][j] * gradn[a][j]).sum::<f64>();
            let mut rg = v * out.k_sum * gradn[a][i];
            for b in 0..nn {
                rg += geo.mass(a, b) * fields.g[l.g_dof(nodes[b], i)];
            }
            r[nu + a * dim + i] = rg;
        }
    }
    let mut k = Vec::new();
    if want_tangent {
        let t = &out.tangents;
        k = vec![0.0; nloc * nloc];
        for a in 0..nn {
            for i in 0..dim {
                let ru = a * dim + i;
                let rg = nu + a * dim + i;
                for b in 0..nn {
                    for kk in 0..dim {
                        let cu = b * dim + kk;
                        let cg = nu + b * dim + kk;
                        let mut kuu = 0.0;
                        let mut kug = 0.0;
                        for j in 0..dim {
                            let row = 3 * i + j;
                            for ll in 0..dim {
                                kuu += gradn[a][j] * t.dp_df[row][3 * kk + ll] * gradn[b][ll];
                            }
                            kug += gradn[a][j] * t.dp_ddivg[row];
                        }
                        k[ru * nloc + cu] = v * kuu;
                        k[ru * nloc + cg] = v * kug * gradn[b][kk];
                        let dk_du: f64 = (0..dim).map(|ll| t.dk_df[3 * kk + ll] * gradn[b][ll]).sum();
                        k[rg * nloc + cu] = v * gradn[a][i] * dk_du;
                        let mass = if i == kk { geo.mass(a, b) } else { 0.0 };
                        k[rg * nloc + cg] = mass + v * gradn[a][i] * t.dk_ddivg * gradn[b][kk];
                    }
                }
            }
        }
    }
    Ok(CellUg { result, dofs, r, k })
}

/// Facet quadrature: barycentric weights over the facet vertices and weights
/// summing to one.
fn facet_rule(dim: usize) -> Vec<(Vec<f64>, f64)> {
    if dim == 2 {
        let s = 0.5 * (0.6f64).sqrt();
        vec![
            (vec![0.5 - s, 0.5 + s], 5.0 / 18.0),
            (vec![0.5, 0.5], 8.0 / 18.0),
            (vec![0.5 + s, 0.5 - s], 5.0 / 18.0),
        ]
    } else {
        vec![
            (vec![1.0 / 3.0; 3], -27.0 / 48.0),
            (vec![0.6, 0.2, 0.2], 25.0 / 48.0),
            (vec![0.2, 0.6, 0.2], 25.0 / 48.0),
            (vec![0.2, 0.2, 0.6], 25.0 / 48.0),
        ]
    }
}

/// Assembles the `u`–`g` block with the local damage `phi` frozen.
///
/// `states_n` are the last accepted point states; the returned `local`
/// results hold the plastic stage at the current iterate.
pub fn assemble_ug(
    disc: &Discretization,
    fields: &Fields,
    states_n: &[MaterialPointState],
    phi: &[f64],
    dt: f64,
    want_tangent: bool,
) -> Result<UgAssembly, LocalDivergence> {
    let l = &disc.layout;
    let dim = l.dim;
    let cells: Vec<CellUg> = (0..disc.n_cells())
        .into_par_iter()
        .map(|c| cell_ug(disc, fields, &states_n[c], phi[c], dt, c, want_tangent))
        .collect::<Result<_, _>>()?;
    let n = l.n_u() + l.n_g();
    let mut residual = vec![0.0; n];
    let mut triplets = Vec::new();
    if want_tangent {
        triplets.reserve(cells.iter().map(|c| c.k.len()).sum());
    }
    let mut local = Vec::with_capacity(cells.len());
    for cell in cells {
        let nloc = cell.dofs.len();
        for (i, &gi) in cell.dofs.iter().enumerate() {
            residual[gi] += cell.r[i];
            if want_tangent {
                for (j, &gj) in cell.dofs.iter().enumerate() {
                    let v = cell.k[i * nloc + j];
                    if v != 0.0 {
                        triplets.push((gi, gj, v));
                    }
                }
            }
        }
        local.push(cell.result);
    }

    let rule = facet_rule(dim);
    let stiff = disc.params.gradient_stiffness();
    for f in &disc.surface {
        let nodes: Vec<usize> = f.local_nodes.iter().map(|&a| disc.mesh.cells[f.cell][a]).collect();
        let gdofs: Vec<Vec<usize>> = nodes.iter().map(|&n| (0..dim).map(|i| l.n_u() + l.g_dof(n, i)).collect()).collect();
        for (bary, w) in &rule {
            let dq: f64 = nodes.iter().zip(bary).map(|(&n, b)| b * fields.d[l.d_dof(n)]).sum();
            let c = f.bc.flexibility(dq, &disc.params).unwrap_or(0.0) * stiff;
            let mut ng = 0.0;
            for (b, &n) in nodes.iter().enumerate() {
                for i in 0..dim {
                    ng += bary[b] * f.normal[i] * fields.g[l.g_dof(n, i)];
                }
            }
            let scale = w * f.measure * c;
            for a in 0..nodes.len() {
                for i in 0..dim {
                    residual[gdofs[a][i]] += scale * ng * f.normal[i] * bary[a];
                    if want_tangent {
                        for b in 0..nodes.len() {
                            for k in 0..dim {
                                triplets.push((
                                    gdofs[a][i],
                                    gdofs[b][k],
                                    scale * f.normal[i] * f.normal[k] * bary[a] * bary[b],
                                ));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(UgAssembly {
        residual,
        triplets,
        local,
    })
}

/// Assembles the phase-field block with the plastic state frozen.
///
/// The damage stage runs at every cell with the centroid value of `d` and the
/// energy and plastic strain of `plastic`.
pub fn assemble_d(
    disc: &Discretization,
    fields: &Fields,
    states_n: &[MaterialPointState],
    plastic: &[PlasticStageResult],
    want_tangent: bool,
) -> Result<DAssembly, LocalDivergence> {
    let l = &disc.layout;
    let p = &disc.params;
    let alpha = p.penalty;
    let gl = p.fracture_gradient_coefficient();
    type CellD = (DamageStageResult, Vec<usize>, Vec<f64>, Vec<f64>);
    let cells: Vec<CellD> = (0..disc.n_cells())
        .into_par_iter()
        .map(|c| -> Result<CellD, LocalDivergence> {
            let geo = &disc.geometry[c];
            let nodes = &disc.mesh.cells[c];
            let nn = nodes.len();
            let dn: Vec<f64> = nodes.iter().map(|&n| fields.d[l.d_dof(n)]).collect();
            let dc = dn.iter().sum::<f64>() / nn as f64;
            let pl = &plastic[c];
            let dmg = integrate_damage_stage(&states_n[c], pl.outputs.psi_e_plus, pl.state.eps_p, dc, p)?;
            let v = geo.volume;
            let mut r = vec![0.0; nn];
            let mut k = if want_tangent { vec![0.0; nn * nn] } else { Vec::new() };
            for a in 0..nn {
                let mut ra = alpha * dmg.phi_new * v / nn as f64;
                for b in 0..nn {
                    let lap = v * dot(&geo.grads[a], &geo.grads[b]);
                    ra -= alpha * geo.mass(a, b) * dn[b] + gl * lap * dn[b];
                    if want_tangent {
                        k[a * nn + b] =
                            alpha * (dmg.dphi_dd * v / (nn * nn) as f64 - geo.mass(a, b)) - gl * lap;
                    }
                }
                r[a] = ra;
            }
            let dofs = nodes.iter().map(|&n| l.d_dof(n)).collect();
            Ok((dmg, dofs, r, k))
        })
        .collect::<Result<_, _>>()?;
    let mut residual = vec![0.0; l.n_d()];
    let mut triplets = Vec::new();
    let mut damage = Vec::with_capacity(cells.len());
    for (dmg, dofs, r, k) in cells {
        let nn = dofs.len();
        for a in 0..nn {
            residual[dofs[a]] += r[a];
            if want_tangent {
                for b in 0..nn {
                    triplets.push((dofs[a], dofs[b], k[a * nn + b]));
                }
            }
        }
        damage.push(dmg);
    }
    Ok(DAssembly {
        residual,
        triplets,
        damage,
    })
}

/// Discrete grain-boundary dissipation `Σ ∫ (1/C_Γ)·Σk·ΔΣk dA` of one step
/// over the micro-flexible (and micro-free) facets.
pub fn boundary_dissipation(disc: &Discretization, d: &[f64], k_sum_n: &[f64], k_sum_np1: &[f64]) -> f64 {
    let l = &disc.layout;
    disc.surface
        .iter()
        .filter(|f| f.inner)
        .map(|f| {
            let nodes = &disc.mesh.cells[f.cell];
            let dq = f.local_nodes.iter().map(|&a| d[l.d_dof(nodes[a])]).sum::<f64>() / f.local_nodes.len() as f64;
            let c = f.bc.flexibility(dq, &disc.params).unwrap_or(f64::INFINITY);
            let k1 = k_sum_np1[f.cell];
            f.measure * k1 * (k1 - k_sum_n[f.cell]) / c
        })
        .sum()
}

//! Material-point model: split Saint-Venant elasticity with ductile degradation,
//! viscoplastic gradient-enhanced crystal plasticity, and micromorphic damage.

mod params;
mod point;

pub use params::{MaterialParams, ParamError, G_MIN};
pub use point::{
    dissipation_increment, integrate_damage_stage, integrate_plastic_stage, work_conjugates, DamageStageResult,
    LocalDivergence, MaterialPointState, PlasticStageResult, PointInputs, PointOutputs, PointTangents, TangentMode,
    WorkConjugates, LOCAL_MAX_ITER, LOCAL_TOL,
};

use serde::{Deserialize, Serialize};

use crate::dual::Real;
use crate::tensor::{dot, green_lagrange_unchecked, macaulay_neg, macaulay_pos, normalized, Tensor2, Vec3};

/// Maximum number of slip systems (FCC).
pub const MAX_SLIP: usize = 12;

/// A slip direction and slip-plane normal pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlipSystem {
    pub direction: Vec3,
    pub plane_normal: Vec3,
}

impl SlipSystem {
    pub fn new(direction: Vec3, plane_normal: Vec3) -> Self {
        Self {
            direction: normalized(&direction),
            plane_normal: normalized(&plane_normal),
        }
    }

    /// Schmid dyad `s ⊗ m`.
    pub fn dyad(&self) -> Tensor2 {
        Tensor2::outer(&self.direction, &self.plane_normal)
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        dot(&self.direction, &self.plane_normal).abs() <= tol
            && (dot(&self.direction, &self.direction) - 1.0).abs() <= tol
            && (dot(&self.plane_normal, &self.plane_normal) - 1.0).abs() <= tol
    }
}

/// The twelve {111}<110> systems of the FCC unit cell, normalized.
pub fn fcc_slip_systems() -> Vec<SlipSystem> {
    const TABLE: [([f64; 3], [f64; 3]); 12] = [
        ([-1., 1., 0.], [1., 1., 1.]),
        ([1., 0., -1.], [1., 1., 1.]),
        ([0., -1., 1.], [1., 1., 1.]),
        ([-1., -1., 0.], [1., -1., -1.]),
        ([1., 0., 1.], [1., -1., -1.]),
        ([0., 1., -1.], [1., -1., -1.]),
        ([1., 1., 0.], [-1., 1., -1.]),
        ([-1., 0., 1.], [-1., 1., -1.]),
        ([0., -1., -1.], [-1., 1., -1.]),
        ([1., -1., 0.], [-1., -1., 1.]),
        ([-1., 0., -1.], [-1., -1., 1.]),
        ([0., 1., 1.], [-1., -1., 1.]),
    ];
    TABLE.iter().map(|(s, m)| SlipSystem::new(*s, *m)).collect()
}

/// Ductile degradation `(1−φ)^(2(εp/εp_crit)^n)`, floored at [`G_MIN`].
pub fn degradation(phi: f64, eps_p: f64, params: &MaterialParams) -> f64 {
    degradation_generic(phi, eps_p, params)
}

pub(crate) fn degradation_exponent<S: Real>(eps_p: S, params: &MaterialParams) -> S {
    (eps_p / params.crit_plastic_strain).powf(params.degradation_exponent) * 2.0
}

pub(crate) fn degradation_generic<S: Real>(phi: f64, eps_p: S, params: &MaterialParams) -> S {
    if phi <= 0.0 {
        return S::one();
    }
    let expo = degradation_exponent(eps_p, params);
    if expo.value() == 0.0 {
        // (1−φ)^0 = 1, including φ = 1
        return S::one();
    }
    if phi >= 1.0 {
        return S::cst(G_MIN);
    }
    let g = (expo * (1.0 - phi).ln()).exp();
    if g.value() < G_MIN {
        S::cst(G_MIN)
    } else {
        g
    }
}

/// Tensile and compressive parts of the Saint-Venant energy of `Ee`.
pub fn elastic_energy_split(ee: &Tensor2, params: &MaterialParams) -> (f64, f64) {
    energy_split_generic(ee, params)
}

pub(crate) fn energy_split_generic<S: Real>(ee: &Tensor2<S>, params: &MaterialParams) -> (S, S) {
    let tr = ee.trace();
    let dev = ee.dev();
    let tp = macaulay_pos(tr);
    let tn = macaulay_neg(tr);
    let plus = tp * tp * (0.5 * params.bulk_modulus) + dev.ddot(&dev) * params.shear_modulus;
    let minus = tn * tn * (0.5 * params.bulk_modulus);
    (plus, minus)
}

/// Elastic second Piola-Kirchhoff stress with the tensile part degraded by `g_e`.
pub fn second_pk_stress(ce: &Tensor2, g_e: f64, params: &MaterialParams) -> Tensor2 {
    second_pk_generic(ce, g_e, params)
}

pub(crate) fn second_pk_generic<S: Real>(ce: &Tensor2<S>, g_e: S, params: &MaterialParams) -> Tensor2<S> {
    let ee = green_lagrange_unchecked(ce);
    let tr = ee.trace();
    let tp = macaulay_pos(tr) * params.bulk_modulus;
    let tn = macaulay_neg(tr) * params.bulk_modulus;
    let dev2g = ee.dev().scale_f64(2.0 * params.shear_modulus);
    let mut plus = dev2g;
    for i in 0..3 {
        plus.0[i][i] += tp;
    }
    let mut s = plus.scale(g_e);
    for i in 0..3 {
        s.0[i][i] += tn;
    }
    s
}

/// Resolved shear stresses `τα = dev(Me):(sα⊗mα)` and their effective values `τα/g_e`.
pub fn schmid_stresses(me: &Tensor2, systems: &[SlipSystem], g_e: f64) -> (Vec<f64>, Vec<f64>) {
    let dev = me.dev();
    let tau: Vec<f64> = systems.iter().map(|s| dev.ddot(&s.dyad())).collect();
    let tau_hat = tau.iter().map(|t| t / g_e).collect();
    (tau, tau_hat)
}

pub fn yield_function(tau_hat: f64, kappa: f64, params: &MaterialParams) -> f64 {
    tau_hat.abs() - (params.yield_stress + kappa)
}

/// Local hardening stress `−Hα·kα + Hg·lg²·∇·g`.
pub fn hardening_stress(k: f64, div_g: f64, params: &MaterialParams) -> f64 {
    -params.iso_hardening * k + params.grad_hardening * params.grad_length.powi(2) * div_g
}

/// Overstress rate `(1/t*)·⟨Φ/σd⟩₊^m`.
pub fn viscoplastic_rate(phi_yield: f64, params: &MaterialParams) -> f64 {
    macaulay_pos(phi_yield / params.drag_stress).powf(params.rate_exponent) / params.relax_time
}

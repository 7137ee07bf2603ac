//! Backward-Euler integration at a single quadrature point.
//!
//! The local unknowns are split in two groups that are solved in different
//! stages: the plastic multipliers `Δλα` (with the local damage frozen) and the
//! trial local damage `φ_trial` (with the plastic state frozen).

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    degradation_generic, energy_split_generic, second_pk_generic, MaterialParams, SlipSystem, G_MIN, MAX_SLIP,
};
use crate::dual::{Dual, Real};
use crate::tensor::{green_lagrange_unchecked, macaulay_pos, Tensor2};

/// Residual tolerance (∞-norm) of the local equations.
pub const LOCAL_TOL: f64 = 1e-8;
pub const LOCAL_MAX_ITER: usize = 50;

const N_EXT: usize = 10;
const N_ALL: usize = MAX_SLIP + N_EXT;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{stage} local solve failed after {iterations} iterations (residual {residual:.3e})")]
pub struct LocalDivergence {
    pub stage: &'static str,
    pub iterations: usize,
    pub residual: f64,
}

/// History variables at a quadrature point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialPointState {
    pub fp_inv: Tensor2,
    /// Hardening strains, one per slip system (`≤ 0`).
    pub k: [f64; MAX_SLIP],
    /// Accumulated plastic strain.
    pub eps_p: f64,
    /// Local damage.
    pub phi: f64,
}

impl Default for MaterialPointState {
    fn default() -> Self {
        Self {
            fp_inv: Tensor2::identity(),
            k: [0.0; MAX_SLIP],
            eps_p: 0.0,
            phi: 0.0,
        }
    }
}

impl MaterialPointState {
    pub fn k_sum(&self) -> f64 {
        self.k.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointInputs {
    pub f: Tensor2,
    /// `∇₀·g` at the point.
    pub div_g: f64,
    /// Global phase field at the point.
    pub d: f64,
    pub dt: f64,
}

/// Consistent tangents of the plastic stage. Tensor indices are flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PointTangents {
    pub dp_df: [[f64; 9]; 9],
    pub dp_ddivg: [f64; 9],
    pub dk_df: [f64; 9],
    pub dk_ddivg: f64,
}

impl PointTangents {
    fn zero() -> Self {
        Self {
            dp_df: [[0.0; 9]; 9],
            dp_ddivg: [0.0; 9],
            dk_df: [0.0; 9],
            dk_ddivg: 0.0,
        }
    }

    /// Directional derivative of `P` along `(δF, δ div g)`.
    pub fn dp_directional(&self, df: &Tensor2, ddivg: f64) -> Tensor2 {
        let dfa = df.to_array();
        let mut out = [0.0; 9];
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.dp_ddivg[r] * ddivg + (0..9).map(|c| self.dp_df[r][c] * dfa[c]).sum::<f64>();
        }
        Tensor2::from_array(&out)
    }

    pub fn dk_directional(&self, df: &Tensor2, ddivg: f64) -> f64 {
        let dfa = df.to_array();
        self.dk_ddivg * ddivg + (0..9).map(|c| self.dk_df[c] * dfa[c]).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointOutputs {
    /// First Piola-Kirchhoff stress.
    pub p: Tensor2,
    pub k_sum: f64,
    pub psi_e_plus: f64,
    pub g_e: f64,
    pub mandel: Tensor2,
    pub tau_hat: [f64; MAX_SLIP],
    pub kappa: [f64; MAX_SLIP],
    pub tangents: PointTangents,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TangentMode {
    /// Forward-mode differentiation of the local residual system.
    #[default]
    Algorithmic,
    /// Central differences of the full local solve.
    FiniteDifference,
    /// Stresses only; tangents are left at zero.
    ValuesOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlasticStageResult {
    pub dlambda: [f64; MAX_SLIP],
    /// End-of-step plastic state; `phi` carries the frozen local damage.
    pub state: MaterialPointState,
    pub outputs: PointOutputs,
    pub iterations: usize,
}

struct Frozen<'a> {
    params: &'a MaterialParams,
    dyads: Vec<Tensor2>,
    state_n: &'a MaterialPointState,
    phi: f64,
    signs: [f64; MAX_SLIP],
    dt: f64,
}

struct Eval<S> {
    residual: [S; MAX_SLIP],
    p: Tensor2<S>,
    k_sum: S,
    g_e: S,
    psi_plus: S,
    eps_p: S,
    fp_inv: Tensor2<S>,
    mandel: Tensor2<S>,
    tau: [S; MAX_SLIP],
    tau_hat: [S; MAX_SLIP],
    kappa: [S; MAX_SLIP],
}

fn eval<S: Real>(fr: &Frozen, dl: &[S; MAX_SLIP], f: &Tensor2<S>, div_g: S) -> Eval<S> {
    let p = fr.params;
    let n = fr.dyads.len();
    let mut ss = S::zero();
    for x in dl.iter().take(n) {
        ss += *x * *x;
    }
    let eps_p = ss.sqrt() + fr.state_n.eps_p;
    let g = degradation_generic(fr.phi, eps_p, p);
    let inv_g = S::one() / g;

    let mut flow = Tensor2::<S>::zero();
    for (a, dyad) in fr.dyads.iter().enumerate() {
        let c = dl[a] * inv_g * fr.signs[a];
        for i in 0..3 {
            for j in 0..3 {
                if dyad.0[i][j] != 0.0 {
                    flow.0[i][j] += c * dyad.0[i][j];
                }
            }
        }
    }
    let fp_inv = (Tensor2::identity() - flow).pre_mul_f64(&fr.state_n.fp_inv);
    let fe = *f * fp_inv;
    let ce = fe.transpose() * fe;
    let (psi_plus, _) = energy_split_generic(&green_lagrange_unchecked(&ce), p);
    let se = second_pk_generic(&ce, g, p);
    let mandel = ce * se;
    let pk1 = fe * se * fp_inv.transpose();
    let me_dev = mandel.dev();

    let grad_term = div_g * p.gradient_stiffness();
    let rate_factor = fr.dt / p.relax_time;
    let mut residual = [S::zero(); MAX_SLIP];
    let mut tau = [S::zero(); MAX_SLIP];
    let mut tau_hat = [S::zero(); MAX_SLIP];
    let mut kappa = [S::zero(); MAX_SLIP];
    let mut k_sum = S::zero();
    for a in 0..MAX_SLIP {
        if a >= n {
            residual[a] = dl[a];
            continue;
        }
        tau[a] = me_dev.ddot_f64(&fr.dyads[a]);
        tau_hat[a] = tau[a] * inv_g;
        let k = S::cst(fr.state_n.k[a]) - dl[a];
        k_sum += k;
        kappa[a] = grad_term - k * p.iso_hardening;
        let yield_fn = tau_hat[a].abs() - (kappa[a] + p.yield_stress);
        let over = macaulay_pos(yield_fn / p.drag_stress);
        residual[a] = dl[a] - over.powf(p.rate_exponent) * rate_factor;
    }
    Eval {
        residual,
        p: pk1,
        k_sum,
        g_e: g,
        psi_plus,
        eps_p,
        fp_inv,
        mandel,
        tau,
        tau_hat,
        kappa,
    }
}

fn inf_norm(r: &[f64]) -> f64 {
    r.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Solves the local plastic equations; returns the multipliers and the iteration count.
fn solve_multipliers(fr: &Frozen, f: &Tensor2, div_g: f64) -> Result<([f64; MAX_SLIP], usize), LocalDivergence> {
    let mut dl = [0.0; MAX_SLIP];
    let trial = eval(fr, &dl, f, div_g);
    let r0 = inf_norm(&trial.residual);
    if !r0.is_finite() {
        return Err(LocalDivergence {
            stage: "plastic",
            iterations: 0,
            residual: r0,
        });
    }
    if r0 == 0.0 {
        return Ok((dl, 0));
    }
    let fd = Tensor2::<Dual<MAX_SLIP>>::from_f64(f);
    let dg = Dual::constant(div_g);
    let newton_step = |dl: &[f64; MAX_SLIP]| -> Option<[f64; MAX_SLIP]> {
        let x: [Dual<MAX_SLIP>; MAX_SLIP] = std::array::from_fn(|a| Dual::variable(dl[a], a));
        let ev = eval(fr, &x, &fd, dg);
        let r = SVector::<f64, MAX_SLIP>::from_fn(|a, _| ev.residual[a].v);
        let jac = SMatrix::<f64, MAX_SLIP, MAX_SLIP>::from_fn(|a, b| ev.residual[a].d[b]);
        let step = jac.lu().solve(&(-r))?;
        Some(std::array::from_fn(|a| dl[a] + step[a]))
    };
    let polish = |dl: &mut [f64; MAX_SLIP], last: f64| {
        // one extra quadratic step drives the residual to roundoff
        if let Some(polished) = newton_step(dl) {
            if inf_norm(&eval(fr, &polished, f, div_g).residual) <= last {
                *dl = polished;
            }
        }
        for x in dl.iter_mut() {
            *x = x.max(0.0);
        }
    };
    if r0 <= LOCAL_TOL {
        polish(&mut dl, r0);
        return Ok((dl, 0));
    }
    let mut last = r0;
    for it in 1..=LOCAL_MAX_ITER {
        dl = newton_step(&dl).ok_or(LocalDivergence {
            stage: "plastic",
            iterations: it,
            residual: last,
        })?;
        last = inf_norm(&eval(fr, &dl, f, div_g).residual);
        if !last.is_finite() {
            break;
        }
        if last <= LOCAL_TOL {
            polish(&mut dl, last);
            return Ok((dl, it));
        }
    }
    Err(LocalDivergence {
        stage: "plastic",
        iterations: LOCAL_MAX_ITER,
        residual: last,
    })
}

fn frozen<'a>(
    state_n: &'a MaterialPointState,
    phi: f64,
    inputs: &PointInputs,
    params: &'a MaterialParams,
    systems: &[SlipSystem],
) -> Frozen<'a> {
    assert!(systems.len() <= MAX_SLIP, "at most {MAX_SLIP} slip systems");
    let mut fr = Frozen {
        params,
        dyads: systems.iter().map(SlipSystem::dyad).collect(),
        state_n,
        phi,
        signs: [1.0; MAX_SLIP],
        dt: inputs.dt,
    };
    // slip directions are fixed from the elastic trial state
    let trial = eval(&fr, &[0.0; MAX_SLIP], &inputs.f, inputs.div_g);
    for a in 0..systems.len() {
        fr.signs[a] = if trial.tau[a] < 0.0 { -1.0 } else { 1.0 };
    }
    fr
}

/// Plastic stage of the local update with the local damage `phi` frozen.
///
/// `state_n` is the last accepted state; `phi` is the current iterate of the
/// end-of-step local damage.
pub fn integrate_plastic_stage(
    state_n: &MaterialPointState,
    phi: f64,
    inputs: &PointInputs,
    params: &MaterialParams,
    systems: &[SlipSystem],
    mode: TangentMode,
) -> Result<PlasticStageResult, LocalDivergence> {
    let fr = frozen(state_n, phi, inputs, params, systems);
    let (dl, iterations) = solve_multipliers(&fr, &inputs.f, inputs.div_g)?;

    let elastic = dl.iter().all(|&x| x == 0.0);
    let (ev, tangents) = match mode {
        TangentMode::Algorithmic if elastic => elastic_tangents(&fr, &inputs.f, inputs.div_g),
        TangentMode::Algorithmic => plastic_tangents(&fr, &dl, &inputs.f, inputs.div_g)?,
        TangentMode::ValuesOnly => (eval(&fr, &dl, &inputs.f, inputs.div_g), PointTangents::zero()),
        TangentMode::FiniteDifference => {
            let ev = eval(&fr, &dl, &inputs.f, inputs.div_g);
            (ev, fd_tangents(state_n, phi, inputs, params, systems)?)
        }
    };

    let mut k = state_n.k;
    for a in 0..systems.len() {
        k[a] -= dl[a];
    }
    let state = MaterialPointState {
        fp_inv: ev.fp_inv,
        k,
        eps_p: ev.eps_p,
        phi,
    };
    let outputs = PointOutputs {
        p: ev.p,
        k_sum: ev.k_sum,
        psi_e_plus: ev.psi_plus,
        g_e: ev.g_e,
        mandel: ev.mandel,
        tau_hat: ev.tau_hat,
        kappa: ev.kappa,
        tangents,
    };
    Ok(PlasticStageResult {
        dlambda: dl,
        state,
        outputs,
        iterations,
    })
}

fn seed_inputs<const N: usize>(f: &Tensor2, div_g: f64, offset: usize) -> (Tensor2<Dual<N>>, Dual<N>) {
    let fd = Tensor2::from_fn(|i, j| Dual::variable(f.0[i][j], offset + 3 * i + j));
    (fd, Dual::variable(div_g, offset + 9))
}

fn values<const N: usize>(ev: &Eval<Dual<N>>) -> Eval<f64> {
    Eval {
        residual: ev.residual.map(|x| x.v),
        p: ev.p.value(),
        k_sum: ev.k_sum.v,
        g_e: ev.g_e.v,
        psi_plus: ev.psi_plus.v,
        eps_p: ev.eps_p.v,
        fp_inv: ev.fp_inv.value(),
        mandel: ev.mandel.value(),
        tau: ev.tau.map(|x| x.v),
        tau_hat: ev.tau_hat.map(|x| x.v),
        kappa: ev.kappa.map(|x| x.v),
    }
}

fn elastic_tangents(fr: &Frozen, f: &Tensor2, div_g: f64) -> (Eval<f64>, PointTangents) {
    let (fd, dg) = seed_inputs::<N_EXT>(f, div_g, 0);
    let ev = eval(fr, &[Dual::constant(0.0); MAX_SLIP], &fd, dg);
    let mut t = PointTangents::zero();
    for i in 0..3 {
        for j in 0..3 {
            let r = 3 * i + j;
            t.dp_df[r].copy_from_slice(&ev.p.0[i][j].d[..9]);
            t.dp_ddivg[r] = ev.p.0[i][j].d[9];
        }
    }
    t.dk_df.copy_from_slice(&ev.k_sum.d[..9]);
    t.dk_ddivg = ev.k_sum.d[9];
    (values(&ev), t)
}

fn plastic_tangents(
    fr: &Frozen,
    dl: &[f64; MAX_SLIP],
    f: &Tensor2,
    div_g: f64,
) -> Result<(Eval<f64>, PointTangents), LocalDivergence> {
    let (fd, dg) = seed_inputs::<N_ALL>(f, div_g, MAX_SLIP);
    let x: [Dual<N_ALL>; MAX_SLIP] = std::array::from_fn(|a| Dual::variable(dl[a], a));
    let ev = eval(fr, &x, &fd, dg);

    // implicit differentiation: dΔλ/dx = −J⁻¹ ∂R/∂x
    let jac = SMatrix::<f64, MAX_SLIP, MAX_SLIP>::from_fn(|a, b| ev.residual[a].d[b]);
    let rx = SMatrix::<f64, MAX_SLIP, N_EXT>::from_fn(|a, c| ev.residual[a].d[MAX_SLIP + c]);
    let sens = jac.lu().solve(&rx).ok_or(LocalDivergence {
        stage: "plastic tangent",
        iterations: 0,
        residual: f64::NAN,
    })?;

    let total = |x: &Dual<N_ALL>, c: usize| -> f64 {
        let mut v = x.d[MAX_SLIP + c];
        for a in 0..MAX_SLIP {
            v -= x.d[a] * sens[(a, c)];
        }
        v
    };
    let mut t = PointTangents::zero();
    for i in 0..3 {
        for j in 0..3 {
            let r = 3 * i + j;
            let pij = &ev.p.0[i][j];
            for c in 0..9 {
                t.dp_df[r][c] = total(pij, c);
            }
            t.dp_ddivg[r] = total(pij, 9);
        }
    }
    for c in 0..9 {
        t.dk_df[c] = total(&ev.k_sum, c);
    }
    t.dk_ddivg = total(&ev.k_sum, 9);
    Ok((values(&ev), t))
}

fn fd_tangents(
    state_n: &MaterialPointState,
    phi: f64,
    inputs: &PointInputs,
    params: &MaterialParams,
    systems: &[SlipSystem],
) -> Result<PointTangents, LocalDivergence> {
    let solve = |f: &Tensor2, div_g: f64| -> Result<(Tensor2, f64), LocalDivergence> {
        let inp = PointInputs { f: *f, div_g, ..*inputs };
        let fr = frozen(state_n, phi, &inp, params, systems);
        let (dl, _) = solve_multipliers(&fr, f, div_g)?;
        let ev = eval(&fr, &dl, f, div_g);
        // Σk = Σk_n − ΣΔλ; differencing ΣΔλ avoids cancellation against k_n
        Ok((ev.p, -dl.iter().sum::<f64>()))
    };
    // five-point central stencil; near the yield threshold the response is
    // too curved for the three-point one
    let stencil = |at: &dyn Fn(f64) -> Result<(Tensor2, f64), LocalDivergence>,
                   h: f64|
     -> Result<(Tensor2, f64), LocalDivergence> {
        let (p2, k2) = at(2.0 * h)?;
        let (p1, k1) = at(h)?;
        let (m1, l1) = at(-h)?;
        let (m2, l2) = at(-2.0 * h)?;
        let dp = (m2 - p2 + (p1 - m1).scale(8.0)).scale(1.0 / (12.0 * h));
        Ok((dp, (l2 - k2 + 8.0 * (k1 - l1)) / (12.0 * h)))
    };
    let mut t = PointTangents::zero();
    let h = 1e-6;
    for c in 0..9 {
        let (i, j) = (c / 3, c % 3);
        let at = |s: f64| {
            let mut f = inputs.f;
            f.0[i][j] += s;
            solve(&f, inputs.div_g)
        };
        let (dp, dk) = stencil(&at, h)?;
        let dp = dp.to_array();
        for r in 0..9 {
            t.dp_df[r][c] = dp[r];
        }
        t.dk_df[c] = dk;
    }
    let hg = 1e-6 * inputs.div_g.abs().max(1.0);
    let (dp, dk) = stencil(&|s| solve(&inputs.f, inputs.div_g + s), hg)?;
    t.dp_ddivg = dp.to_array();
    t.dk_ddivg = dk;
    Ok(t)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DamageStageResult {
    pub phi_new: f64,
    pub phi_trial: f64,
    /// `∂φ_new/∂d` at the solution (zero on the irreversibility branch).
    pub dphi_dd: f64,
    /// Driving force `Yφ` at `phi_new`.
    pub y_phi: f64,
    pub iterations: usize,
}

struct DamageResidual {
    psi_plus: f64,
    expo: f64,
    stiff: f64,
    alpha: f64,
    d: f64,
}

impl DamageResidual {
    fn floored(&self, phi: f64) -> bool {
        self.expo > 0.0 && (phi >= 1.0 || (1.0 - phi).powf(self.expo) < G_MIN)
    }

    /// `∂g/∂φ` and `∂²g/∂φ²` at fixed plastic strain.
    fn dg(&self, phi: f64) -> (f64, f64) {
        if self.expo == 0.0 || self.floored(phi) {
            return (0.0, 0.0);
        }
        let p = self.expo;
        let base = 1.0 - phi;
        (-p * base.powf(p - 1.0), p * (p - 1.0) * base.powf(p - 2.0))
    }

    fn eval(&self, phi: f64) -> (f64, f64) {
        let (g1, g2) = self.dg(phi);
        let r = -g1 * self.psi_plus - self.stiff * phi - self.alpha * (phi - self.d);
        let dr = -g2 * self.psi_plus - self.stiff - self.alpha;
        (r, dr)
    }
}

/// Damage stage: solves `Yφ(φ_trial) = 0` and applies `φ = max(φ_n, φ_trial)`.
///
/// `state_n` supplies the last accepted local damage; `psi_e_plus` and `eps_p`
/// come from the (frozen) plastic stage.
pub fn integrate_damage_stage(
    state_n: &MaterialPointState,
    psi_e_plus: f64,
    eps_p: f64,
    d: f64,
    params: &MaterialParams,
) -> Result<DamageStageResult, LocalDivergence> {
    let res = DamageResidual {
        psi_plus: psi_e_plus.max(0.0),
        expo: super::degradation_exponent(eps_p, params),
        stiff: params.fracture_energy_ratio,
        alpha: params.penalty,
        d,
    };
    let phi_n = state_n.phi;
    let linear_root = res.alpha * d / (res.stiff + res.alpha);
    // R(lo) ≥ 0 and R(hi) ≤ 0 by construction
    let mut lo = linear_root.min(0.0);
    let mut hi = linear_root.max(1.0);
    let mut x = phi_n.clamp(lo, hi);
    let mut iterations = 0;
    let mut at_jump = false;
    let phi_trial = loop {
        let (r, dr) = res.eval(x);
        if !r.is_finite() {
            return Err(LocalDivergence {
                stage: "damage",
                iterations,
                residual: r,
            });
        }
        if r.abs() <= LOCAL_TOL {
            break x;
        }
        if r > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1.0) {
            // the floor makes R jump from positive to negative here
            at_jump = true;
            break 0.5 * (lo + hi);
        }
        iterations += 1;
        if iterations > 4 * LOCAL_MAX_ITER {
            return Err(LocalDivergence {
                stage: "damage",
                iterations,
                residual: r,
            });
        }
        let newton = x - r / dr;
        x = if dr < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    };

    let (phi_new, dphi_dd, y_phi) = if phi_trial > phi_n {
        let (_, g2) = res.dg(phi_trial);
        let denom = g2 * res.psi_plus + res.stiff + res.alpha;
        let dphi = if denom > 0.0 { res.alpha / denom } else { res.alpha / (res.stiff + res.alpha) };
        let y = if at_jump { 0.0 } else { res.eval(phi_trial).0 };
        (phi_trial, dphi, y)
    } else {
        (phi_n, 0.0, res.eval(phi_n).0)
    };
    Ok(DamageStageResult {
        phi_new,
        phi_trial,
        dphi_dd,
        y_phi,
        iterations,
    })
}

/// End-of-step thermodynamic forces paired with the internal-variable increments.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkConjugates {
    pub mandel: Tensor2,
    /// `Q = −∂Ψ/∂εp`.
    pub q: f64,
    pub kappa: [f64; MAX_SLIP],
    pub y_phi: f64,
}

pub fn work_conjugates(
    params: &MaterialParams,
    outputs: &PointOutputs,
    eps_p: f64,
    phi: f64,
    y_phi: f64,
) -> WorkConjugates {
    let dg = degradation_generic(phi, Dual::<1>::variable(eps_p, 0), params).d[0];
    WorkConjugates {
        mandel: outputs.mandel,
        q: -dg * outputs.psi_e_plus,
        kappa: outputs.kappa,
        y_phi,
    }
}

/// Discrete bulk dissipation `Me:Lp·Δt + Q·Δq + Σκα·Δkα + Yφ·Δφ` of one step.
pub fn dissipation_increment(
    state_n: &MaterialPointState,
    state_np1: &MaterialPointState,
    conj: &WorkConjugates,
) -> f64 {
    let lp_dt = Tensor2::identity() - state_n.fp_inv.inverse() * state_np1.fp_inv;
    let mut d = conj.mandel.ddot(&lp_dt) + conj.q * (state_np1.eps_p - state_n.eps_p);
    for a in 0..MAX_SLIP {
        d += conj.kappa[a] * (state_np1.k[a] - state_n.k[a]);
    }
    d + conj.y_phi * (state_np1.phi - state_n.phi)
}

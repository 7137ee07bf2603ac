use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower bound on the degradation function.
pub const G_MIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("material parameter `{name}` must be strictly positive (got {value})")]
    NotPositive { name: &'static str, value: f64 },
    #[error("rate exponent must be >= 1 (got {0})")]
    RateExponent(f64),
}

/// Constitutive constants. Units: MPa, mm, s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub bulk_modulus: f64,
    pub shear_modulus: f64,
    pub yield_stress: f64,
    /// Isotropic hardening modulus, shared by all slip systems.
    pub iso_hardening: f64,
    pub grad_hardening: f64,
    pub grad_length: f64,
    pub relax_time: f64,
    pub drag_stress: f64,
    pub rate_exponent: f64,
    /// Effective fracture energy `G0d / ℓ0`.
    pub fracture_energy_ratio: f64,
    pub pf_length: f64,
    /// Micromorphic penalty `α`.
    pub penalty: f64,
    pub crit_plastic_strain: f64,
    pub degradation_exponent: f64,
}

impl MaterialParams {
    /// Base parameter set for a structure of size `length_scale` (mm).
    pub fn reference(length_scale: f64) -> Self {
        let fracture_energy_ratio = 300.0;
        Self {
            bulk_modulus: 71_660.0,
            shear_modulus: 27_260.0,
            yield_stress: 345.0,
            iso_hardening: 250.0,
            grad_hardening: 1000.0,
            grad_length: 0.0533 * length_scale,
            relax_time: 1.0,
            drag_stress: 500.0,
            rate_exponent: 8.0,
            fracture_energy_ratio,
            pf_length: 0.02 * length_scale,
            penalty: 200.0 * fracture_energy_ratio,
            crit_plastic_strain: 0.1,
            degradation_exponent: 2.0,
        }
    }

    /// Coarser length scales used for three-dimensional structures.
    pub fn reference_3d(length_scale: f64) -> Self {
        Self {
            grad_length: 0.1333 * length_scale,
            pf_length: 0.08 * length_scale,
            ..Self::reference(length_scale)
        }
    }

    /// `G0d · ℓ0`, the gradient coefficient of the phase-field equation.
    pub fn fracture_gradient_coefficient(&self) -> f64 {
        self.fracture_energy_ratio * self.pf_length * self.pf_length
    }

    /// `Hg · lg²`.
    pub fn gradient_stiffness(&self) -> f64 {
        self.grad_hardening * self.grad_length * self.grad_length
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let fields: [(&'static str, f64); 14] = [
            ("bulk_modulus", self.bulk_modulus),
            ("shear_modulus", self.shear_modulus),
            ("yield_stress", self.yield_stress),
            ("iso_hardening", self.iso_hardening),
            ("grad_hardening", self.grad_hardening),
            ("grad_length", self.grad_length),
            ("relax_time", self.relax_time),
            ("drag_stress", self.drag_stress),
            ("rate_exponent", self.rate_exponent),
            ("fracture_energy_ratio", self.fracture_energy_ratio),
            ("pf_length", self.pf_length),
            ("penalty", self.penalty),
            ("crit_plastic_strain", self.crit_plastic_strain),
            ("degradation_exponent", self.degradation_exponent),
        ];
        for (name, value) in fields {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ParamError::NotPositive { name, value });
            }
        }
        if self.rate_exponent < 1.0 {
            return Err(ParamError::RateExponent(self.rate_exponent));
        }
        Ok(())
    }
}

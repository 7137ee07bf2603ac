//! Polycrystal fracture simulation: crystal plasticity with micromorphic
//! gradient hardening, a micromorphic phase field, and grain-boundary
//! conditions on the plastic micro-deformation.

pub mod constitutive;
pub mod dual;
pub mod fem;
pub mod microstructure;
pub mod simulation;
pub mod solver;
pub mod tensor;

//! Thermal dynamics of pure quantum states on complex projective space.
//!
//! A finite-dimensional system with Hamiltonian `H` is described by a unit
//! vector `ψ` up to phase. Thermalisation is modelled as a diffusion on the
//! state space whose drift combines the Schrödinger flow with a gradient flow
//! of the energy, and whose invariant law is the canonical ensemble
//! `∝ exp(−β⟨H⟩)` with respect to the uniform measure.
//!
//! Units are `ħ = k_B = 1`; time is measured in units of `1/κ²`.

pub mod canonical;
pub mod error;
pub mod fokker_planck;
pub mod geometry;
pub mod moments;
pub mod rng;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
pub use geometry::{
    expectation, variance, DensityMatrix, HermitianOperator, PureState, SecondMoment, Spectrum, C64,
};
pub use sde::{EnsembleOptions, EnsembleSeries, InitialLaw, SdeParams};

//! Algebraic phase retrieval for point-atom crystals.
//!
//! The crate covers the forward model (structures, Patterson maps,
//! subtracted intensities), the lattice algebra behind Karle-Hauptman
//! determinants, basic-set search from intensities alone, reconstruction of
//! the full diffraction pattern from a finite set of reflections, and the
//! inversion back to Patterson centres and atomic configurations. Both
//! positive (X-ray) and signed (neutron) scattering densities are handled.

pub mod basis;
pub mod config;
pub mod error;
pub mod generate;
pub mod inversion;
pub mod io;
pub mod lattice;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod reconstruct;

pub use error::{Error, Result};
pub use model::{
    box_reflections, compute_patterson, observed_intensity, subtracted_intensity, synth_window,
    synth_window_from_patterson, Atom, Axis, Centre, CrystalStructure, IntensitySet, Mode,
    PattersonMap, Position, Reflection,
};

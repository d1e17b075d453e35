//! Simulation of randomly perturbed quasi-periodic point sets and numerical
//! recovery of their diffraction spectra.

pub mod appendix;
pub mod error;
pub mod geometry;
pub mod io;
pub mod perturb;
pub mod pointset;
pub mod recover;
pub mod rng;
pub mod special;
pub mod spectral;
pub mod stats;

pub use appendix::{CorrelatedSequenceSpec, GaussianBump, GriddedMeasure, ScalarLaw, SequenceKind, TracePoint};
pub use error::{Error, Result};
pub use perturb::{CharValue, Correlation, Distribution, PerturbationModel, PerturbedPointSet};
pub use pointset::{CutProjectScheme, DeformationSpec, Descriptor, GeneratorSpec, Lattice, PointCap, PointSet, Window};
pub use recover::{RecoveryReport, StructureFactorEstimate, DEFAULT_CLOAK_THRESHOLD};
pub use spectral::{AtomicMeasure, AutocorrEstimate, FrequencySet, SpectralEstimate, SpectralKind};

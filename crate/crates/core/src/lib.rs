#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Sparse convolutional beamforming for 3D ultrafast ultrasound.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! * [`array_geometry`]: element sets, sum co-arrays, intrinsic apodization,
//!   sparse-array checks and recursive fractal layouts.
//! * [`beam_pattern`]: closed-form far-field receive and two-way patterns.
//! * [`acoustic_sim`]: baseband IQ echoes from point-scatterer phantoms under
//!   focused or diverging-wave transmission.
//! * [`beamformers`]: coherent compounding, delay-and-sum, COBA-3D and
//!   SCOBA-3D.
//! * [`metrics`]: envelope display, contrast ratio and FWHM.
//! * [`io`]: array descriptors and the binary IQ cube / volume formats.
//!
//! Numeric kernels are generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below are what the CLI and reference tests use.

pub mod acoustic_sim;
pub mod array_geometry;
pub mod beam_pattern;
pub mod beamformers;
pub mod error;
pub mod io;
pub mod metrics;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::{Cx, Real};

pub use array_geometry::{ApodizationKind, ElementSet, Index2};

pub type ApodizationMap64 = array_geometry::ApodizationMap<f64>;
pub type BeamPattern64 = beam_pattern::BeamPattern<f64>;
pub type IqCube64 = acoustic_sim::IqCube<f64>;
pub type IqCube32 = acoustic_sim::IqCube<f32>;
pub type CompoundField64 = beamformers::CompoundField<f64>;
pub type Volume64 = beamformers::Volume<f64>;
pub type Volume32 = beamformers::Volume<f32>;

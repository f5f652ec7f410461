//! Intrinsic image decomposition built on illumination-invariant color
//! ratios: an image is split into reflectance and shading so that their
//! product reproduces the input. Ratio evidence localizes material changes,
//! a gradient classifier with least-squares reintegration recovers dense
//! log-domain estimates, and a clustering stage refined by a dense pairwise
//! model produces piecewise-constant reflectance.

pub mod cluster;
pub mod config;
pub mod crf;
pub mod error;
pub mod eval;
pub mod io;
pub mod lattice;
pub mod poisson;
pub mod raster;
pub mod ratios;
pub mod retinex;
pub mod synth;

pub use config::{KChoice, PipelineConfig};
pub use crf::{decompose, CrfDecomposition, CrfParams, EnergyBreakdown};
pub use error::{Error, Result};
pub use raster::{LinearImage, Linearization, ScalarField};
pub use ratios::{cross_ratios, ratio_field, single_ratios, RatioTriple};
pub use retinex::{retinex_decompose, RetinexDecomposition, RetinexParams};

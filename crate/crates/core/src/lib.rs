//! Sparse HDMR surrogates of random variables and random fields built from
//! scattered samples.
//!
//! The pipeline is: select interaction groups with group-LARS
//! ([`selection`]), fit their coefficients by least squares or alternating
//! least squares with cross-validated stopping ([`fitting`]), then read off
//! mean, variance and Sobol indices in closed form ([`model`]). Random fields
//! are handled by a separated spatial x stochastic expansion ([`separated`]).

pub mod basis;
pub(crate) mod design;
pub mod dataset;
pub mod error;
pub mod fitting;
pub mod model;
pub mod rng;
pub mod selection;
pub mod separated;
pub mod testbed;

pub use basis::{BasisConfig, Family};
pub use dataset::{inject_noise, load_csv, split, NoiseModel, SampleSet, SplitTag};
pub use error::{HdmrError, Result};
pub use model::{dictionary_cardinality, enumerate_dense_indices, CpMode, DenseMode, Group, HdmrModel, Mode};
pub use selection::{glars_select, SelectionConfig, SelectionPath};
pub use fitting::{fit_hdmr, relative_error, FitConfig, FitDiagnostics, RobustConfig, Surrogate};
pub use separated::{fit_separated, joint_spatial_update, AnyModel, SeparatedConfig, SeparatedModel, SpatialBasis};
pub use testbed::{generate_dataset, kl_eigendecompose, solve_diffusion, DiffusionConfig, KlField, SampleMode};

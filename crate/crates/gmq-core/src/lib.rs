//! Quantization of Gaussian mixtures with certified mean-squared transport
//! error.
//!
//! The pipeline has three stages:
//!
//! 1. **1D tables** ([`quantize1d`]): optimal quantizers of the standard
//!    normal, memoized by size and persistable to JSON.
//! 2. **Scheme generation** ([`scheme_gen`]): pick a frame (rotation,
//!    scales, offset) and a point layout for a Gaussian or a mixture, either
//!    as a product grid or as a radial cross pattern, under a support-size
//!    budget.
//! 3. **Discretization** ([`discretize`]): place probability mass on the
//!    scheme's points and report a certificate for the squared 2-Wasserstein
//!    distance between the input and the emitted discrete distribution;
//!    certificates are exact where the geometry allows it and honest upper
//!    bounds elsewhere.
//!
//! The [`oracle`] module holds slow, independent reference implementations
//! (adaptive quadrature, seeded Monte Carlo) used by the test suites to
//! validate the fast paths.

pub mod discretize;
pub mod distributions;
pub mod error;
pub mod numeric;
pub mod oracle;
pub mod quantize1d;
pub mod scheme_gen;
pub mod schemes;
pub mod special;
pub mod spectral;
pub mod wire;

pub use discretize::{
    discretize_gaussian, discretize_mixture, weighted_kmeans, DiscretizeOptions, GridDiscrete,
    McOptions, QuantizationResult, W2Certificate,
};
pub use distributions::{DiscreteDistribution, GaussianComponent, GaussianMixture};
pub use error::{Error, Result};
pub use quantize1d::{cell_cost, cell_prob, optimal_quantizer, LookupTable1D, Quantizer1D};
pub use scheme_gen::{
    cluster_modes, generate_scheme_gaussian, generate_scheme_mixture, select_layout,
    GenerateOptions, LayoutCandidate, ModeCluster, Pattern,
};
pub use schemes::{Axes, CrossScheme, GridScheme, Scheme, SchemeSet, SchemeSetEntry};
pub use spectral::SpectralDecomposition;

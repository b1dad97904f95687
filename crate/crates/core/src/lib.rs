//! 2D Gaussian image representation.
//!
//! An image is approximated by `K` anisotropic Gaussians blended with a
//! normalized weighted sum. This crate holds the primitive types
//! ([`gsmodel`]), the tile rasterizer and its analytic gradients
//! ([`raster`]), Adam fitting ([`fit`]), position initialization
//! ([`init`]), quality metrics ([`metrics`]) and file formats
//! ([`codecio`]).
//!
//! Numerical code is generic over [`Real`]; the aliases below name the
//! common instantiations.

pub mod codecio;
pub mod error;
pub mod fit;
pub mod gsmodel;
pub mod init;
pub mod metrics;
pub mod raster;
pub mod scalar;

pub use error::{InitError, ShapeError};
pub use fit::{
    density_log_scale, fit_gaussians, heuristic_attributes, AdamState, FitConfig, FitOutcome, Fitter, LrSchedule,
    TracePoint,
};
pub use gsmodel::{Covariance2x2, Gaussian2D, GaussianSet, PixelRect, ScaleBounds, PARAMS_PER_GAUSSIAN};
pub use init::Heatmap;
pub use metrics::MetricReport;
pub use raster::{render, render_backward, ImageBuffer, RasterConfig, RenderGradients, TileIndex};
pub use scalar::Real;

pub type Gaussian2Df = Gaussian2D<f32>;
pub type Gaussian2Dd = Gaussian2D<f64>;
pub type GaussianSetF = GaussianSet<f32>;
pub type GaussianSetD = GaussianSet<f64>;
pub type ImageF = ImageBuffer<f32>;
pub type ImageD = ImageBuffer<f64>;
pub type HeatmapF = Heatmap<f32>;
pub type HeatmapD = Heatmap<f64>;

//! Core algorithms for benchmarking the appeal of AI up-scaled images.
//!
//! The modules follow the benchmark pipeline: [`imaging`] provides pixels and
//! resampling, [`upscalers`] builds the stimulus set, [`features`] and
//! [`frmetrics`] measure images, [`subjective`] aggregates ratings,
//! [`forest`] learns appeal and detection models, and [`evalmetrics`]
//! scores predictions.

pub mod evalmetrics;
pub mod features;
pub mod filters;
pub mod forest;
pub mod frmetrics;
pub mod imaging;
pub mod subjective;
pub mod upscalers;

pub use evalmetrics::{ClassificationReport, CorrelationTriple};
pub use features::{FeatureName, FeatureVector};
pub use forest::{CvResult, ForestConfig, RandomForestModel};
pub use frmetrics::FrScore;
pub use imaging::{ImageBuffer, PatchGrid, PixelFormat, Plane};
pub use subjective::{MosEntry, RatingRecord, SosFit};
pub use upscalers::{DatasetManifest, ManifestEntry, PipelineConfig, UpscalerSpec};

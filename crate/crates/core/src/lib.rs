//! Transfers the photographic style (color, tone, contrast) of a reference
//! image onto an input image of the same scene.
//!
//! The two images are segmented into superpixels grown around externally
//! matched points, leftover pixels are co-clustered through a bipartite
//! spectral partition, superpixels are put in one-to-one correspondence by a
//! minimum-cost assignment, and each region's statistics are matched to its
//! counterpart in a decorrelated color space. A guided filter removes the
//! seams between regions at the end.
//!
//! The full flow lives in [`pipeline::run`]; the stages are usable on their
//! own through the individual modules.

pub mod correspondence;
pub mod error;
pub mod features;
pub mod imagecore;
pub mod matching;
pub mod partition;
pub mod pipeline;
pub mod seeds;
pub mod transfer;

pub use error::{Error, Result};
pub use imagecore::{ImagePlane, LabPlane, PixelLoc, ScalarGrid};
pub use pipeline::{PipelineConfig, RunOutput, RunReport, StopAfter};

//! Whole-slide tumor segmentation toolkit: tiled slide pyramids, tissue
//! detection and patch lattices, multi-lens augmentation, patch
//! classification backends, heatmap fusion, refinement and post-processing,
//! evaluation statistics, feature clustering and synthetic phantom slides.

pub mod augment;
pub mod bridge;
pub mod cluster;
pub mod error;
pub mod heatmap;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod postprocess;
pub mod raster;
pub mod rng;
pub mod slide;
pub mod stats;
pub mod tissue;

pub use error::{Error, Result};
pub use raster::{BinaryMask, RgbBlock, ScalarRaster};
pub use slide::TiledSlide;

//! Post-processing, filtering and evaluation of per-pixel barn probability rasters.
//!
//! The crate is organised by pipeline stage:
//!
//! 1. [`raster`] georeferenced tiles, patch grids and overlap-averaged stitching.
//! 2. [`scorer`] stand-in probability producers (noisy oracle and a matched-filter heuristic).
//! 3. [`sampler`] training patch manifests with background rejection and temporal pairing.
//! 4. [`objects`] thresholding, 4-connected components, polygon tracing and shape features.
//! 5. [`roads`] edge splitting, a k-d tree over road nodes and exact nearest-road distance.
//! 6. [`filter`] the rule-based object classifier.
//! 7. [`eval`] IoU matching, F-beta, facility-proximity validation and orientation histograms.
//! 8. [`ucb`] bucketed UCB active-validation campaigns.
//! 9. [`census`] county aggregation and Spearman comparisons.

pub mod census;
pub mod error;
pub mod eval;
pub mod filter;
pub mod geojson;
pub mod geometry;
pub mod kdtree;
pub mod objects;
pub mod raster;
pub mod roads;
pub mod sampler;
pub mod scorer;
pub mod ucb;

pub use error::{Error, Result};

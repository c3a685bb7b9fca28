//! Fundamental-diagram analysis for motorway links under variable speed
//! limits.
//!
//! The crate covers the whole single-link and cross-link workflow:
//!
//! * [`data`]: dataset ingestion, density derivation and speed-limit
//!   segmentation,
//! * [`kde`]: bivariate Gaussian kernel density estimation and mode finding,
//! * [`models`]: the seven flow–density diagrams,
//! * [`fit`]: multi-start least-squares calibration and model ranking,
//! * [`modes`]: k-medoids location of the two traffic modes,
//! * [`links`]: Ward hierarchical clustering of fitted link parameters,
//! * [`synth`]: seeded synthetic datasets with known ground truth.

pub mod data;
pub mod fit;
pub mod kde;
pub mod links;
pub mod models;
pub mod modes;
pub mod stats;
pub mod synth;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/kde.md")]
    mod kde {}
    #[doc = include_str!("../../../book/src/modes.md")]
    mod modes {}
    #[doc = include_str!("../../../book/src/links.md")]
    mod links {}
    #[doc = include_str!("../../../book/src/synth.md")]
    mod synth {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

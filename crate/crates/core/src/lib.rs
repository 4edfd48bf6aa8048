//! Explainable image retrieval over spatial feature maps.
//!
//! [`store`] reads catalogs and SFM1 tensors, [`features`] pools them into
//! embeddings under a mask, [`index`] runs exact filtered search, [`explain`]
//! decomposes a match into per-cell importance and color correspondences,
//! [`report`] keeps curated result lists, and [`metric`] is a small lab for
//! comparing triplet losses.

pub mod features;
pub mod explain;
pub mod index;
pub mod metric;
pub mod report;
pub mod store;

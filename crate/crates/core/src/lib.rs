//! Multi-view clothed-avatar reconstruction.
//!
//! The crate fits one skinned body model to every input view, integrates
//! front and back clothed normal maps into depth surfaces anchored on that
//! body, fuses the partial surfaces into a watertight mesh and scores the
//! result against ground truth. Learned components are replaced by oracle
//! providers driven from synthetic scenes (see [`synth`]).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::type_complexity)]

pub mod body;
pub mod dbini;
pub mod error;
pub mod fuse;
pub mod geometry;
pub mod jmbo;
pub mod metrics;
pub mod normals;
pub mod pipeline;
pub mod render;
pub mod synth;

pub use error::{Error, Result};

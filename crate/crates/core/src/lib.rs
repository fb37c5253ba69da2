//! Pairing and registration of front/back partial scans of flat-lying fragments.
//!
//! Front and back scans are paired by comparing cyclic turning-angle
//! descriptors of their projected outlines, initially aligned from the
//! matched contour vertices, then refined with bilateral boundary ICP: only
//! boundary points of each scan search for closest points in the other scan.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boundary;
pub mod config;
pub mod contour;
pub mod error;
pub mod geom;
pub mod index;
pub mod matching;
pub mod metrics;
pub mod pipeline;
pub mod ply;
pub mod registration;
pub mod synth;

pub use error::{Error, Result};
pub use geom::{Plane, Point2, Point3, PointCloud, RigidTransform};
pub use index::NeighborIndex;

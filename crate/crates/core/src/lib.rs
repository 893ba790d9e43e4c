//! Graph matching by adaptively transforming a source graph into the convex
//! hull of a target graph.
//!
//! A soft assignment `P` (rows sum to one, columns to at most one) maps each
//! source node to `PY`, a convex combination of target nodes. Matching
//! minimizes an edge-length discrepancy between the source graph and its
//! transform, then a convex node-shifting functional, both by Frank-Wolfe
//! with an exact linear-assignment subproblem. Unequal sizes are handled by
//! a ratio-test outlier filter driven by the transformed nodes.

pub mod affinity;
pub mod assignment;
pub mod baseline;
pub mod delaunay;
pub mod error;
pub mod experiment;
pub mod fw;
pub mod geometry;
pub mod io;
pub mod lap;
pub mod objectives;
pub mod pipeline;
pub mod shape_context;

pub use assignment::{Matching, SoftAssignment};
pub use error::{Error, Result};
pub use geometry::{EdgeSet, EdgeWeights, GraphInstance, PointSet};
pub use pipeline::{atgm, AtgmConfig, AtgmOutput, Connectivity};

//! Fully dynamic graph connectivity from ℓ0 sketches.
//!
//! The engine keeps `O(log V)` nested spanning forests. Each level is an Euler
//! tour forest whose components carry the XOR of their vertices' sketches, so a
//! component can sample an edge leaving it without storing the edge set.

pub mod arena;
pub mod cutset;
pub mod engine;
pub mod ett;
pub mod lct;
pub mod oracle;
pub mod sketch;
pub mod skiplist;
pub mod stream;

#![no_std]

//! Duration-based differential privacy for camera event traces.
//!
//! An owner publishes a `(rho, K, epsilon)` policy per camera. Analysts
//! submit split/process/select queries whose per-chunk processors are
//! untrusted; the engine bounds how many intermediate-table rows a
//! `(rho, K)`-bounded event can touch, propagates that bound through the
//! relational plan, and releases Laplace-noised aggregates while debiting a
//! per-frame budget.
//!
//! This crate holds everything that is pure computation. File formats,
//! subprocess isolation and the command line live in the `vidpriv` crate.

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod chunking;
pub mod owner;
pub mod privacy;
pub mod query;
pub mod relational;
pub mod sensitivity;
pub mod table;
pub mod trace;

pub use chunking::{apply_mask, max_chunk_span, split, Chunk, ChunkSpec, Mask, RegionScheme};
pub use query::{parse_query, QueryPlan};
pub use trace::{Detection, Event, Frame, FrameStream, Policy, Segment};

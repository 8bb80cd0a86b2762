//! Query engine, processor sandbox, owner state and experiment harness
//! around `vidpriv-core`.

pub mod config;
pub mod explain;
pub mod pipeline;
pub mod sandbox;
pub mod scene;
pub mod state;
pub mod sweep;
pub mod trace_io;

pub use pipeline::{run_query, QueryOptions, QueryReport};
pub use trace_io::{load_trace, save_trace};

//! Distributed all-node GNN inference over co-partitioned graphs.
//!
//! The engine splits both the graph and the node feature matrix across a
//! `P x M` grid of logical machines: `P` row groups each own a contiguous
//! range of destination nodes, and the `M` machines inside a row group each
//! own a contiguous slice of the feature dimension. Every machine therefore
//! holds one dense feature tile and one replicated sparse row block, which is
//! enough to run layer-wise GNN inference for *all* nodes with 1-hop graphs
//! per layer.
//!
//! Crate layout:
//!
//! * [`graph`] - edge lists, CSR construction (serial and distributed),
//!   R-MAT synthesis, and the binary CSR cache format.
//! * [`partition`] - the machine grid, node/feature ranges, tensor tiles,
//!   and the feature location table.
//! * [`transport`] - message passing between logical machines with exact
//!   traffic accounting; one concurrent implementation and one deterministic
//!   simulated implementation with logical time.
//! * [`primitives`] - distributed GEMM / SPMM / SDDMM and their
//!   communication baselines, plus the serial kernels they are checked
//!   against.
//! * [`pipeline`] - non-zero grouping, communication schedules, and the
//!   grouped SPMM/SDDMM executor used for pipelining.
//! * [`sampler`] - layer-wise fanout sampling and full-neighbor layer
//!   construction.
//! * [`model`] - GCN and GAT inference drivers, the serial reference
//!   implementations, and the on-disk feature/parameter formats.
//! * [`costmodel`] - closed-form per-machine traffic/memory models and the
//!   measured-vs-modeled comparison report.
//! * [`sharing`] - inter-ego-network computation sharing analysis.

pub mod costmodel;
pub mod dense;
pub mod error;
pub mod graph;
pub mod model;
pub mod partition;
pub mod pipeline;
pub mod primitives;
pub mod sampler;
pub mod scalar;
pub mod sharing;
pub mod transport;

pub use error::{Error, Result};
pub use scalar::Scalar;

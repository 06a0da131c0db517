//! Desk-scale simulator and library for partition-parallel GCN training with
//! historical-embedding caching and an online-trained embedding predictor
//! that reduces the staleness of cached out-of-partition embeddings.
//!
//! The crate is organized around the training pipeline:
//!
//! - [`tensor`]: dense matrices and a minimal reverse-mode tape.
//! - [`graph`]: graph ingestion, GCN normalization, balanced partitioning
//!   with 1-hop halos, and the per-partition row split of the propagation
//!   matrix.
//! - [`gnn`]: hand-written GCN forward/backward in full-graph and
//!   partitioned stale-embedding form.
//! - [`store`]: epoch-versioned historical-embedding store with sliding
//!   window retention and a lossy polyline codec.
//! - [`predictor`]: temporal halo graphs and the recurrent embedding
//!   predictor trained online against the GCN's own outputs.
//! - [`trainer`]: the epoch loop — parallel per-partition steps, commit
//!   barriers, parameter aggregation, periodic predictor updates, and
//!   metric/communication accounting.
//! - [`sbm`]: a stochastic block model generator for benchmarks.

pub mod bench;
pub mod gnn;
pub mod graph;
pub mod predictor;
pub mod sbm;
pub mod store;
pub mod tensor;
pub mod trainer;

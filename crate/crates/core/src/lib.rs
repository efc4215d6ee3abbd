//! Locality-aware execution of graph convolutional networks on a PE-array
//! accelerator: graph reordering, shared-aggregation mining, hierarchical
//! mapping, micro-instruction generation and a cycle-level simulator.

pub mod codegen;
pub mod gcn;
pub mod graph;
pub mod mapper;
pub mod reorder;
pub mod sim;
pub mod metrics;
pub mod pipeline;

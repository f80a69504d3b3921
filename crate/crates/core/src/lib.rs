//! Flow-based community detection in first-order and higher-order
//! networks with the map equation.
//!
//! Networks of every input format become a [`StateNetwork`] of physical
//! nodes and state nodes. Stationary flows come from [`stationary_visit_rates`],
//! and [`multilevel_partition`] searches for the module hierarchy with the
//! shortest description of those flows.

pub mod cli;
pub mod flow;
pub mod io;
pub mod mapeq;
pub mod metrics;
pub mod network;
pub mod search;

pub use flow::{stationary_visit_rates, FlowField, RelaxParameters};
pub use mapeq::{codelength_multilevel, codelength_two_level};
pub use network::{Hierarchy, Module, MultilevelMap, StateNetwork};
pub use search::{multilevel_partition, partition_two_level, ClusteringResult, SearchConfig};

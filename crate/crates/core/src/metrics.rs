//! Summary statistics of flows and clusterings.

use std::collections::BTreeMap;

use crate::flow::FlowField;
use crate::mapeq::{entropy, plogp};
use crate::network::{PhysicalId, StateNetwork};
use crate::search::ClusteringResult;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub entropy_rate: f64,
    pub weighted_depth: f64,
    pub module_perplexity: f64,
    pub assignment_perplexity: f64,
    pub num_physical: usize,
    pub num_states: usize,
    pub num_links: usize,
}

impl MetricsReport {
    /// `key = value` lines.
    pub fn to_key_values(&self) -> String {
        format!(
            "physical_nodes = {}\nstate_nodes = {}\nlinks = {}\nentropy_rate = {:.6}\nweighted_depth = {:.6}\nmodule_perplexity = {:.6}\nassignment_perplexity = {:.6}\n",
            self.num_physical,
            self.num_states,
            self.num_links,
            self.entropy_rate,
            self.weighted_depth,
            self.module_perplexity,
            self.assignment_perplexity,
        )
    }
}

/// Bits needed per step to predict the next state: visit-rate weighted
/// entropy of the outgoing transition probabilities.
pub fn entropy_rate(flow: &FlowField) -> f64 {
    let mut row_entropy = vec![0.0; flow.num_states()];
    for link in flow.links() {
        row_entropy[link.source] -= plogp(link.transition);
    }
    flow.visit_rates()
        .iter()
        .zip(row_entropy)
        .map(|(&pi, h)| pi * h)
        .sum()
}

/// Flow-weighted leaf depth, top-module perplexity and flow-weighted
/// perplexity of each physical node's split over finest modules.
pub fn clustering_metrics(result: &ClusteringResult, network: &StateNetwork) -> MetricsReport {
    let flow = &result.flow;
    let rate = |s| flow.visit_rate(s).unwrap_or(0.0);

    let mut depth_sum = 0.0;
    let mut flow_sum = 0.0;
    let mut split: BTreeMap<PhysicalId, BTreeMap<Vec<usize>, f64>> = BTreeMap::new();
    for (path, state) in result.map.leaf_paths() {
        let f = rate(state);
        depth_sum += f * (path.len() + 1) as f64;
        flow_sum += f;
        let physical = network.state(state).map_or(state, |s| s.physical_id);
        *split
            .entry(physical)
            .or_default()
            .entry(path)
            .or_insert(0.0) += f;
    }
    let weighted_depth = if flow_sum > 0.0 {
        depth_sum / flow_sum
    } else {
        0.0
    };

    let top: Vec<f64> = result
        .map
        .top_groups()
        .iter()
        .map(|g| g.iter().map(|&s| rate(s)).sum())
        .collect();
    let module_perplexity = entropy(&top).exp2();

    let mut weighted = 0.0;
    let mut total = 0.0;
    for modules in split.values() {
        let parts: Vec<f64> = modules.values().copied().collect();
        let f: f64 = parts.iter().sum();
        weighted += f * entropy(&parts).exp2();
        total += f;
    }
    let assignment_perplexity = if total > 0.0 { weighted / total } else { 1.0 };

    MetricsReport {
        entropy_rate: entropy_rate(flow),
        weighted_depth,
        module_perplexity,
        assignment_perplexity,
        num_physical: network.num_physical(),
        num_states: network.num_states(),
        num_links: network.num_links(),
    }
}

//! Transition probabilities and stationary visit rates on state networks,
//! including the relax-rate expansion of multilayer networks.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::io::MultilayerNetworkFile;
use crate::network::{validate, PhysicalId, StateId, StateNetwork, StateNetworkBuilder, Violation};

pub const POWER_ITERATION_TOLERANCE: f64 = 1e-12;
pub const POWER_ITERATION_MAX: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("{name} must lie in [0, 1], got {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("network has no links")]
    NoLinks,
    #[error("network is invalid: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidNetwork(Vec<Violation>),
    #[error(
        "power iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NotConverged { iterations: usize, residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxParameters {
    relax_rate: f64,
    teleportation: f64,
}

fn unit_interval(name: &'static str, value: f64) -> Result<f64, FlowError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(FlowError::InvalidParameter { name, value })
    }
}

impl RelaxParameters {
    pub fn new(relax_rate: f64, teleportation: f64) -> Result<Self, FlowError> {
        Ok(RelaxParameters {
            relax_rate: unit_interval("relax rate", relax_rate)?,
            teleportation: unit_interval("teleportation probability", teleportation)?,
        })
    }

    pub fn relax_rate(&self) -> f64 {
        self.relax_rate
    }

    pub fn teleportation(&self) -> f64 {
        self.teleportation
    }
}

impl Default for RelaxParameters {
    fn default() -> Self {
        RelaxParameters {
            relax_rate: 0.25,
            teleportation: 0.0,
        }
    }
}

/// Expands a multilayer network into a state network with one state node per
/// `(layer, physical node)` pair that takes part in an intra-layer link.
///
/// Without `*Inter` links the layers are coupled by the relax rate: the
/// walker follows a link in its current layer with probability `1 - r` and a
/// link of the same physical node in any layer with probability `r`, both
/// proportional to link weight. The generated outlink weights are already
/// normalized transition probabilities. A state without links in its own
/// layer always relaxes.
///
/// With `*Inter` links the relax rate is ignored: intra links connect states
/// within a layer and each inter link connects `(from_layer, i)` to
/// `(to_layer, i)`, all with their raw weights.
///
/// State ids are assigned in `(layer, physical id)` order starting at 1.
pub fn expand_multilayer(
    file: &MultilayerNetworkFile,
    relax_rate: f64,
) -> Result<StateNetwork, FlowError> {
    let explicit = !file.inter.is_empty();
    let relax_rate = if explicit {
        0.0
    } else {
        unit_interval("relax rate", relax_rate)?
    };

    // (layer, source) -> target -> weight
    let mut layer_out: BTreeMap<(u32, PhysicalId), BTreeMap<PhysicalId, f64>> = BTreeMap::new();
    let mut state_keys: BTreeSet<(u32, PhysicalId)> = BTreeSet::new();
    for link in &file.intra {
        *layer_out
            .entry((link.layer, link.source))
            .or_default()
            .entry(link.target)
            .or_insert(0.0) += link.weight;
        state_keys.insert((link.layer, link.source));
        state_keys.insert((link.layer, link.target));
    }
    if explicit {
        for link in &file.inter {
            state_keys.insert((link.from_layer, link.physical));
            state_keys.insert((link.to_layer, link.physical));
        }
    }

    let state_id: HashMap<(u32, PhysicalId), StateId> = state_keys
        .iter()
        .enumerate()
        .map(|(i, &key)| (key, i as StateId + 1))
        .collect();

    let mut builder = StateNetworkBuilder::new(true);
    let used_physical: BTreeSet<PhysicalId> = state_keys.iter().map(|&(_, p)| p).collect();
    let names: HashMap<PhysicalId, Option<String>> = file.vertices.iter().cloned().collect();
    for &p in &used_physical {
        builder.add_physical(p, names.get(&p).cloned().flatten());
    }
    for &(layer, physical) in &state_keys {
        builder.add_state(state_id[&(layer, physical)], physical, None);
    }

    if explicit {
        for (&(layer, source), targets) in &layer_out {
            for (&target, &w) in targets {
                builder.add_link(state_id[&(layer, source)], state_id[&(layer, target)], w);
            }
        }
        for link in &file.inter {
            builder.add_link(
                state_id[&(link.from_layer, link.physical)],
                state_id[&(link.to_layer, link.physical)],
                link.weight,
            );
        }
        return Ok(builder.build());
    }

    // Total outlink weight of each physical node over all layers, and the
    // layers in which it has outlinks.
    let mut physical_out: BTreeMap<PhysicalId, f64> = BTreeMap::new();
    let mut physical_layers: BTreeMap<PhysicalId, Vec<u32>> = BTreeMap::new();
    for (&(layer, source), targets) in &layer_out {
        *physical_out.entry(source).or_insert(0.0) += targets.values().sum::<f64>();
        physical_layers.entry(source).or_default().push(layer);
    }

    for &(layer, physical) in &state_keys {
        let source = state_id[&(layer, physical)];
        let total = physical_out.get(&physical).copied().unwrap_or(0.0);
        if total == 0.0 {
            continue;
        }
        let own = layer_out.get(&(layer, physical));
        let stay = match own {
            Some(_) => 1.0 - relax_rate,
            None => 0.0,
        };
        if let Some(targets) = own {
            let layer_total: f64 = targets.values().sum();
            for (&target, &w) in targets {
                builder.add_link(source, state_id[&(layer, target)], stay * w / layer_total);
            }
        }
        let relax = 1.0 - stay;
        for &other in &physical_layers[&physical] {
            for (&target, &w) in &layer_out[&(other, physical)] {
                builder.add_link(source, state_id[&(other, target)], relax * w / total);
            }
        }
    }
    Ok(builder.build())
}

/// Row-normalized transition probabilities over dense state indices.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    rows: Vec<Vec<(usize, f64)>>,
    out_weight: Vec<f64>,
    in_weight: Vec<f64>,
}

impl TransitionMatrix {
    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    /// Outgoing `(target index, probability)` pairs of a state.
    pub fn row(&self, index: usize) -> &[(usize, f64)] {
        &self.rows[index]
    }

    pub fn is_dangling(&self, index: usize) -> bool {
        self.rows[index].is_empty()
    }

    pub fn out_weight(&self, index: usize) -> f64 {
        self.out_weight[index]
    }

    pub fn in_weight(&self, index: usize) -> f64 {
        self.in_weight[index]
    }

    pub fn probability(&self, source: usize, target: usize) -> f64 {
        self.rows[source]
            .iter()
            .find(|&&(t, _)| t == target)
            .map_or(0.0, |&(_, p)| p)
    }
}

/// Normalizes outlink weights into transition probabilities. Undirected
/// networks use every link in both directions.
pub fn transition_matrix(network: &StateNetwork) -> Result<TransitionMatrix, FlowError> {
    let violations = validate(network);
    if !violations.is_empty() {
        return Err(FlowError::InvalidNetwork(violations));
    }
    if network.num_links() == 0 {
        return Err(FlowError::NoLinks);
    }
    let n = network.num_states();
    let mut weights: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    for link in network.links() {
        let s = network
            .state_index(link.source)
            .expect("validated endpoint");
        let t = network
            .state_index(link.target)
            .expect("validated endpoint");
        *weights[s].entry(t).or_insert(0.0) += link.weight;
        if !network.is_directed() && s != t {
            *weights[t].entry(s).or_insert(0.0) += link.weight;
        }
    }
    let mut in_weight = vec![0.0; n];
    let mut out_weight = vec![0.0; n];
    let rows = weights
        .into_iter()
        .enumerate()
        .map(|(s, row)| {
            let total: f64 = row.values().sum();
            out_weight[s] = total;
            row.into_iter()
                .map(|(t, w)| {
                    in_weight[t] += w;
                    (t, w / total)
                })
                .collect()
        })
        .collect();
    Ok(TransitionMatrix {
        rows,
        out_weight,
        in_weight,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkFlow {
    pub source: usize,
    pub target: usize,
    pub transition: f64,
    pub flow: f64,
}

/// Stationary state visit rates together with transition probabilities and
/// link flows. Indices are positions in the network's state list.
#[derive(Debug, Clone)]
pub struct FlowField {
    state_ids: Vec<StateId>,
    physical_ids: Vec<PhysicalId>,
    index: HashMap<StateId, usize>,
    visit_rate: Vec<f64>,
    links: Vec<LinkFlow>,
    dangling: Vec<bool>,
    iterations: usize,
    residual: f64,
}

impl FlowField {
    pub fn num_states(&self) -> usize {
        self.state_ids.len()
    }

    pub fn state_ids(&self) -> &[StateId] {
        &self.state_ids
    }

    pub fn physical_id(&self, index: usize) -> PhysicalId {
        self.physical_ids[index]
    }

    pub fn index_of(&self, state: StateId) -> Option<usize> {
        self.index.get(&state).copied()
    }

    pub fn visit_rates(&self) -> &[f64] {
        &self.visit_rate
    }

    pub fn visit_rate(&self, state: StateId) -> Option<f64> {
        self.index_of(state).map(|i| self.visit_rate[i])
    }

    /// Link flows, normalized so that the flows sum to one.
    pub fn links(&self) -> &[LinkFlow] {
        &self.links
    }

    pub fn is_dangling(&self, index: usize) -> bool {
        self.dangling[index]
    }

    fn find(&self, source: StateId, target: StateId) -> Option<&LinkFlow> {
        let (s, t) = (self.index_of(source)?, self.index_of(target)?);
        self.links.iter().find(|l| l.source == s && l.target == t)
    }

    pub fn transition(&self, source: StateId, target: StateId) -> f64 {
        self.find(source, target).map_or(0.0, |l| l.transition)
    }

    pub fn link_flow(&self, source: StateId, target: StateId) -> f64 {
        self.find(source, target).map_or(0.0, |l| l.flow)
    }

    /// Power iterations used; zero when the rates were computed directly.
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }
}

/// One step of the teleportation-augmented chain. Dangling states teleport
/// with probability one; teleportation targets are weighted by inlink weight.
pub fn teleport_step(matrix: &TransitionMatrix, teleportation: f64, rates: &[f64]) -> Vec<f64> {
    let n = matrix.num_states();
    let total_in: f64 = matrix.in_weight.iter().sum();
    let mut next = vec![0.0; n];
    let mut leaked = 0.0;
    for (s, row) in matrix.rows.iter().enumerate() {
        if row.is_empty() {
            leaked += rates[s];
            continue;
        }
        leaked += teleportation * rates[s];
        let stay = (1.0 - teleportation) * rates[s];
        for &(t, p) in row {
            next[t] += stay * p;
        }
    }
    for (t, value) in next.iter_mut().enumerate() {
        *value += leaked * matrix.in_weight[t] / total_in;
    }
    next
}

/// Computes ergodic state visit rates by power iteration from the uniform
/// distribution, or directly from link strengths for undirected networks
/// without teleportation. Link flows come from the plain transition matrix
/// and are renormalized to sum to one, so teleportation steps are not
/// encoded.
pub fn stationary_visit_rates(
    network: &StateNetwork,
    params: RelaxParameters,
) -> Result<FlowField, FlowError> {
    let matrix = transition_matrix(network)?;
    let n = matrix.num_states();
    let tau = params.teleportation();

    let (rates, iterations, residual) = if !network.is_directed() && tau == 0.0 {
        let total: f64 = matrix.out_weight.iter().sum();
        let rates: Vec<f64> = matrix.out_weight.iter().map(|w| w / total).collect();
        (rates, 0, 0.0)
    } else {
        let mut rates = vec![1.0 / n as f64; n];
        let mut converged = None;
        let mut residual = f64::INFINITY;
        for iteration in 1..=POWER_ITERATION_MAX {
            let mut next = teleport_step(&matrix, tau, &rates);
            let sum: f64 = next.iter().sum();
            next.iter_mut().for_each(|x| *x /= sum);
            residual = next.iter().zip(&rates).map(|(a, b)| (a - b).abs()).sum();
            rates = next;
            if residual < POWER_ITERATION_TOLERANCE {
                converged = Some(iteration);
                break;
            }
        }
        match converged {
            Some(iterations) => (rates, iterations, residual),
            None => {
                return Err(FlowError::NotConverged {
                    iterations: POWER_ITERATION_MAX,
                    residual,
                })
            }
        }
    };

    let mut links = Vec::new();
    for (s, row) in matrix.rows.iter().enumerate() {
        for &(t, p) in row {
            links.push(LinkFlow {
                source: s,
                target: t,
                transition: p,
                flow: rates[s] * p,
            });
        }
    }
    let total: f64 = links.iter().map(|l| l.flow).sum();
    if total > 0.0 {
        links.iter_mut().for_each(|l| l.flow /= total);
    }

    let state_ids: Vec<StateId> = network.state_nodes().iter().map(|s| s.id).collect();
    Ok(FlowField {
        index: state_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect(),
        physical_ids: network
            .state_nodes()
            .iter()
            .map(|s| s.physical_id)
            .collect(),
        state_ids,
        visit_rate: rates,
        links,
        dangling: (0..n).map(|i| matrix.is_dangling(i)).collect(),
        iterations,
        residual,
    })
}

/// Sums state visit rates per physical node.
pub fn physical_visit_rates(flow: &FlowField, network: &StateNetwork) -> BTreeMap<PhysicalId, f64> {
    let mut rates: BTreeMap<PhysicalId, f64> = network
        .physical_nodes()
        .iter()
        .map(|p| (p.id, 0.0))
        .collect();
    for (i, &rate) in flow.visit_rates().iter().enumerate() {
        *rates.entry(flow.physical_id(i)).or_insert(0.0) += rate;
    }
    rates
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{parse_memory, parse_multilayer, parse_sparse};

    const FIG3A: &str = include_str!("../data/fig3a.net");
    const FIG3B: &str = include_str!("../data/fig3b.net");
    const FIG3C: &str = include_str!("../data/fig3c.net");

    fn state_of(net: &StateNetwork, layer_order: usize) -> StateId {
        net.state_nodes()[layer_order].id
    }

    #[test]
    fn relax_rate_validation() {
        let file = parse_multilayer(FIG3A.as_bytes()).unwrap();
        assert!(matches!(
            expand_multilayer(&file, 1.5),
            Err(FlowError::InvalidParameter { .. })
        ));
        assert!(RelaxParameters::new(0.3, -0.1).is_err());
        assert!(RelaxParameters::new(1.0, 1.0).is_ok());
    }

    #[test]
    fn separated_layers_at_zero_relax_rate() {
        let file = parse_multilayer(FIG3A.as_bytes()).unwrap();
        let net = expand_multilayer(&file, 0.0).unwrap();
        assert_eq!(net.num_states(), 6);
        let tm = transition_matrix(&net).unwrap();
        // States ordered (1,i) (1,l) (1,m) (2,i) (2,j) (2,k).
        for s in 0..3 {
            assert!(tm.row(s).iter().all(|&(t, _)| t < 3));
        }
        for s in 3..6 {
            assert!(tm.row(s).iter().all(|&(t, _)| t >= 3));
        }
        assert_eq!(tm.probability(0, 1), 0.5);
        assert_eq!(state_of(&net, 1), 2);
    }

    #[test]
    fn aggregated_layers_at_full_relax_rate() {
        let file = parse_multilayer(FIG3A.as_bytes()).unwrap();
        let net = expand_multilayer(&file, 1.0).unwrap();
        let tm = transition_matrix(&net).unwrap();
        for t in [1, 2, 4, 5] {
            assert!((tm.probability(0, t) - 0.25).abs() < 1e-15);
            assert!((tm.probability(3, t) - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn relax_rate_point_four_matches_sparse_listing() {
        let file = parse_multilayer(FIG3A.as_bytes()).unwrap();
        let net = expand_multilayer(&file, 0.4).unwrap();
        let tm = transition_matrix(&net).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(tm.probability(0, 1), 0.4));
        assert!(close(tm.probability(0, 2), 0.4));
        assert!(close(tm.probability(0, 4), 0.1));
        assert!(close(tm.probability(0, 5), 0.1));
        assert!(close(tm.probability(1, 0), 0.5));
        assert!(close(tm.probability(1, 2), 0.5));
    }

    #[test]
    fn explicit_inter_links_ignore_relax_rate() {
        let text = format!("{FIG3A}*Inter\n1 1 2 1\n2 1 1 1\n");
        let file = parse_multilayer(text.as_bytes()).unwrap();
        let a = expand_multilayer(&file, 0.4).unwrap();
        let b = expand_multilayer(&file, 0.9).unwrap();
        assert_eq!(a.links(), b.links());
        assert_eq!(a.num_links(), 14);
        let tm = transition_matrix(&a).unwrap();
        // (1,i) has weight 1 to each of (1,l), (1,m) and (2,i).
        assert!((tm.probability(0, 3) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn sparse_listing_normalization() {
        let net = parse_sparse(FIG3C.as_bytes()).unwrap();
        let tm = transition_matrix(&net).unwrap();
        let row: Vec<f64> = tm.row(0).iter().map(|&(_, p)| p).collect();
        assert_eq!(row, vec![0.4, 0.4, 0.1, 0.1]);
    }

    #[test]
    fn self_link_and_simple_rows() {
        let mut b = StateNetwork::builder(true);
        b.add_physical(1, None)
            .add_state(1, 1, None)
            .add_link(1, 1, 5.0);
        let tm = transition_matrix(&b.build()).unwrap();
        assert_eq!(tm.row(0), &[(0, 1.0)]);

        let mut b = StateNetwork::builder(true);
        for i in 1..=4 {
            b.add_physical(i, None).add_state(i, i, None);
        }
        b.add_link(1, 2, 1.0)
            .add_link(1, 3, 1.0)
            .add_link(1, 4, 2.0);
        let tm = transition_matrix(&b.build()).unwrap();
        let row: Vec<f64> = tm.row(0).iter().map(|&(_, p)| p).collect();
        assert_eq!(row, vec![0.25, 0.25, 0.5]);
        assert!(tm.is_dangling(1));
    }

    #[test]
    fn no_links_is_an_error() {
        let mut b = StateNetwork::builder(true);
        b.add_physical(1, None).add_state(1, 1, None);
        assert_eq!(
            transition_matrix(&b.build()).unwrap_err(),
            FlowError::NoLinks
        );
    }

    #[test]
    fn invalid_network_is_an_error() {
        let mut b = StateNetwork::builder(true);
        b.add_physical(1, None)
            .add_state(1, 1, None)
            .add_link(1, 2, 1.0);
        assert!(matches!(
            transition_matrix(&b.build()),
            Err(FlowError::InvalidNetwork(_))
        ));
    }

    #[test]
    fn figure_networks_have_uniform_rates() {
        let c = parse_sparse(FIG3C.as_bytes()).unwrap();
        let flow = stationary_visit_rates(&c, RelaxParameters::new(0.4, 0.0).unwrap()).unwrap();
        for &rate in flow.visit_rates() {
            assert!((rate - 1.0 / 6.0).abs() < 1e-10);
        }
        let b = parse_memory(FIG3B.as_bytes()).unwrap();
        let flow = stationary_visit_rates(&b, RelaxParameters::default()).unwrap();
        for &rate in flow.visit_rates() {
            assert!((rate - 1.0 / 12.0).abs() < 1e-10);
        }
    }

    #[test]
    fn two_state_cycle_matches_eigenvector() {
        let mut b = StateNetwork::builder(true);
        b.add_physical(1, None).add_physical(2, None);
        b.add_state(1, 1, None).add_state(2, 2, None);
        b.add_link(1, 2, 1.0).add_link(2, 1, 3.0);
        let flow = stationary_visit_rates(&b.build(), RelaxParameters::default()).unwrap();
        // Both rows are deterministic, so P = [[0,1],[1,0]] with left
        // eigenvector (1/2, 1/2) for eigenvalue 1.
        assert!((flow.visit_rates()[0] - 0.5).abs() < 1e-12);
        assert!((flow.visit_rates()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn physical_rates_aggregate_states() {
        let c = parse_sparse(FIG3C.as_bytes()).unwrap();
        let flow = stationary_visit_rates(&c, RelaxParameters::default()).unwrap();
        let rates = physical_visit_rates(&flow, &c);
        assert!((rates[&1] - 2.0 / 6.0).abs() < 1e-10);
        for p in 2..=5 {
            assert!((rates[&p] - 1.0 / 6.0).abs() < 1e-10);
        }
        let b = parse_memory(FIG3B.as_bytes()).unwrap();
        let flow_b = stationary_visit_rates(&b, RelaxParameters::default()).unwrap();
        let rates_b = physical_visit_rates(&flow_b, &b);
        for (p, rate) in &rates {
            assert!((rate - rates_b[p]).abs() < 1e-10);
        }
    }

    #[test]
    fn dangling_state_teleports() {
        let mut b = StateNetwork::builder(true);
        for i in 1..=3 {
            b.add_physical(i, None).add_state(i, i, None);
        }
        b.add_link(1, 2, 1.0).add_link(2, 3, 1.0);
        let net = b.build();
        let flow = stationary_visit_rates(&net, RelaxParameters::new(0.25, 0.0).unwrap()).unwrap();
        let sum: f64 = flow.visit_rates().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(flow.is_dangling(2));
        // State 1 has no inlinks, so it is never a teleportation target.
        assert!(flow.visit_rates()[0] < 1e-12);
        let link_total: f64 = flow.links().iter().map(|l| l.flow).sum();
        assert!((link_total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn undirected_rates_follow_strength() {
        let mut b = StateNetwork::builder(false);
        for i in 1..=3 {
            b.add_physical(i, None).add_state(i, i, None);
        }
        b.add_link(1, 2, 1.0).add_link(2, 3, 3.0);
        let flow = stationary_visit_rates(&b.build(), RelaxParameters::default()).unwrap();
        let expected = [1.0 / 8.0, 4.0 / 8.0, 3.0 / 8.0];
        for (rate, want) in flow.visit_rates().iter().zip(expected) {
            assert!((rate - want).abs() < 1e-15);
        }
        assert_eq!(flow.links().len(), 4);
    }

    #[test]
    fn periodic_chain_with_skewed_rates_does_not_converge() {
        // Bipartite directed chain whose stationary rates are not uniform.
        let mut b = StateNetwork::builder(true);
        for i in 1..=3 {
            b.add_physical(i, None).add_state(i, i, None);
        }
        b.add_link(1, 2, 1.0)
            .add_link(1, 3, 1.0)
            .add_link(2, 1, 1.0)
            .add_link(3, 1, 1.0);
        let err = stationary_visit_rates(&b.build(), RelaxParameters::default()).unwrap_err();
        assert!(matches!(err, FlowError::NotConverged { .. }));
    }
}

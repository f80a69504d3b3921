//! Map equation optimization: local moves with repeated aggregation,
//! fine and coarse tuning, best-of-trials two-level partitioning, and
//! super- and submodule search for multilevel maps.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::flow::FlowField;
use crate::mapeq::{
    hierarchy_codelength, leaf_codelength, one_module_codelength, two_level_codelength, FlowGraph,
    PartitionState,
};
use crate::network::{Children, Hierarchy, Module, MultilevelMap, StateNetwork};

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub seed: u64,
    pub num_trials: usize,
    pub epsilon: f64,
    pub max_tune_iterations: usize,
    pub max_level_iterations: usize,
    pub max_move_iterations: usize,
    pub two_level_only: bool,
    pub parallel_submodules: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            seed: 123,
            num_trials: 10,
            epsilon: 1e-10,
            max_tune_iterations: 20,
            max_level_iterations: 100,
            max_move_iterations: 100,
            two_level_only: false,
            parallel_submodules: true,
        }
    }
}

impl SearchConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_trials(mut self, num_trials: usize) -> Self {
        self.num_trials = num_trials;
        self
    }

    fn sanitized(&self) -> SearchConfig {
        SearchConfig {
            num_trials: self.num_trials.max(1),
            max_tune_iterations: self.max_tune_iterations.max(1),
            max_level_iterations: self.max_level_iterations.max(1),
            max_move_iterations: self.max_move_iterations.max(1),
            epsilon: if self.epsilon > 0.0 {
                self.epsilon
            } else {
                1e-10
            },
            ..self.clone()
        }
    }
}

/// Random generator of one trial.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix(seed ^ splitmix(tag))
}

fn num_modules(assignment: &[usize]) -> usize {
    let mut seen: Vec<usize> = assignment.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Relabels modules `0..M` by first appearance.
fn normalize(assignment: &[usize]) -> Vec<usize> {
    let mut labels = std::collections::HashMap::new();
    assignment
        .iter()
        .map(|&m| {
            let next = labels.len();
            *labels.entry(m).or_insert(next)
        })
        .collect()
}

/// Local moving: sweeps over the nodes in random order and moves each to the
/// neighboring or fresh module with the largest code length decrease.
/// Returns the new assignment and the number of sweeps that moved a node.
pub fn optimize_moves(
    graph: &FlowGraph,
    assignment: &[usize],
    config: &SearchConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, usize) {
    let n = graph.num_nodes();
    if n <= 1 {
        return (normalize(assignment), 0);
    }
    let mut state = PartitionState::new(graph, assignment);
    let mut order: Vec<usize> = (0..n).collect();
    let mut candidates: Vec<usize> = Vec::new();
    let mut active_sweeps = 0;
    for _ in 0..config.max_move_iterations {
        order.shuffle(rng);
        let mut moved = false;
        for &node in &order {
            let current = state.module_of(node);
            candidates.clear();
            candidates.extend(
                graph
                    .out_links(node)
                    .iter()
                    .chain(graph.in_links(node))
                    .map(|&(other, _)| state.module_of(other))
                    .filter(|&m| m != current),
            );
            candidates.sort_unstable();
            candidates.dedup();
            if state.module_size(current) > 1 {
                if let Some(fresh) = state.empty_module() {
                    candidates.push(fresh);
                }
            }
            let mut best: Option<(usize, f64)> = None;
            for &to in &candidates {
                let delta = state.delta_move(node, to);
                if best.is_none_or(|(_, d)| delta < d) {
                    best = Some((to, delta));
                }
            }
            if let Some((to, delta)) = best {
                if delta < -config.epsilon {
                    state.apply_move(node, to);
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
        active_sweeps += 1;
    }
    (normalize(state.assignment()), active_sweeps)
}

/// Alternates local moving and aggregation of modules into nodes until
/// nothing merges. Starts from `initial` when given, otherwise from
/// singletons. The result assigns the nodes of `graph`.
pub fn repeated_node_aggregation(
    graph: &FlowGraph,
    initial: Option<&[usize]>,
    config: &SearchConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let n = graph.num_nodes();
    let mut membership: Vec<usize> = (0..n).collect();
    if n <= 1 {
        return vec![0; n];
    }
    let mut level_graph = graph.clone();
    let mut start: Vec<usize> = match initial {
        Some(a) => normalize(a),
        None => (0..n).collect(),
    };
    let mut codelength = two_level_codelength(graph, &start);
    for _ in 0..config.max_level_iterations {
        let (assignment, _) = optimize_moves(&level_graph, &start, config, rng);
        let new_codelength = two_level_codelength(&level_graph, &assignment);
        if new_codelength > codelength + config.epsilon {
            break;
        }
        for m in membership.iter_mut() {
            *m = assignment[*m];
        }
        let modules = num_modules(&assignment);
        let improved = new_codelength - codelength < -config.epsilon;
        codelength = new_codelength;
        if modules <= 1 || modules == level_graph.num_nodes() || !improved {
            break;
        }
        // Assignments are normalized, so module labels are the aggregated
        // node indices.
        let (next, _) = level_graph.aggregate(&assignment);
        start = (0..next.num_nodes()).collect();
        level_graph = next;
    }
    normalize(&membership)
}

/// Lets single nodes leave their modules by restarting local moving from
/// the current clustering at node level.
pub fn fine_tune(
    graph: &FlowGraph,
    assignment: &[usize],
    config: &SearchConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let before = two_level_codelength(graph, assignment);
    let tuned = repeated_node_aggregation(graph, Some(assignment), config, rng);
    if two_level_codelength(graph, &tuned) <= before + config.epsilon {
        tuned
    } else {
        normalize(assignment)
    }
}

/// Splits every module into submodules and lets whole submodules move
/// between modules.
pub fn coarse_tune(
    graph: &FlowGraph,
    assignment: &[usize],
    config: &SearchConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let assignment = normalize(assignment);
    let modules = num_modules(&assignment);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); modules];
    for (node, &m) in assignment.iter().enumerate() {
        members[m].push(node);
    }
    let mut submodule = vec![0; graph.num_nodes()];
    let mut submodule_parent = Vec::new();
    for (m, nodes) in members.iter().enumerate() {
        let sub = graph.subgraph(nodes);
        let split = repeated_node_aggregation(&sub, None, config, rng);
        let offset = submodule_parent.len();
        for (local, &node) in nodes.iter().enumerate() {
            submodule[node] = offset + split[local];
        }
        submodule_parent.extend(std::iter::repeat_n(m, num_modules(&split)));
    }
    let (sub_graph, dense) = graph.aggregate(&submodule);
    let mut initial = vec![0; sub_graph.num_nodes()];
    for (node, &s) in submodule.iter().enumerate() {
        initial[dense[node]] = submodule_parent[s];
    }
    let moved = repeated_node_aggregation(&sub_graph, Some(&initial), config, rng);
    let tuned: Vec<usize> = (0..graph.num_nodes())
        .map(|node| moved[dense[node]])
        .collect();
    let tuned = normalize(&tuned);
    let before = two_level_codelength(graph, &assignment);
    if two_level_codelength(graph, &tuned) <= before + config.epsilon {
        tuned
    } else {
        assignment
    }
}

fn two_level_trial(
    graph: &FlowGraph,
    config: &SearchConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, f64) {
    let mut assignment = repeated_node_aggregation(graph, None, config, rng);
    let mut codelength = two_level_codelength(graph, &assignment);
    for iteration in 1..=config.max_tune_iterations {
        let tuned = if iteration % 2 == 1 {
            fine_tune(graph, &assignment, config, rng)
        } else {
            coarse_tune(graph, &assignment, config, rng)
        };
        let tuned_codelength = two_level_codelength(graph, &tuned);
        let delta = tuned_codelength - codelength;
        if delta <= 0.0 {
            assignment = tuned;
            codelength = tuned_codelength;
        }
        if delta > -config.epsilon {
            break;
        }
    }
    let one = one_module_codelength(graph);
    if one < codelength - config.epsilon {
        (vec![0; graph.num_nodes()], one)
    } else {
        (assignment, codelength)
    }
}

/// Outcome of a best-of-trials two-level search over a [`FlowGraph`].
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPartition {
    pub assignment: Vec<usize>,
    pub codelength: f64,
    pub trial: usize,
}

/// Two-level partition of a flow graph, best of `num_trials` seeded trials.
pub fn partition_graph(graph: &FlowGraph, config: &SearchConfig) -> GraphPartition {
    let config = config.sanitized();
    let run = |trial: usize| {
        let mut rng = trial_rng(config.seed, trial);
        two_level_trial(graph, &config, &mut rng)
    };
    let results: Vec<(Vec<usize>, f64)> = (0..config.num_trials).into_par_iter().map(run).collect();
    let mut best: Option<GraphPartition> = None;
    for (trial, (assignment, codelength)) in results.into_iter().enumerate() {
        if best
            .as_ref()
            .is_none_or(|b| codelength < b.codelength - 1e-12)
        {
            best = Some(GraphPartition {
                assignment,
                codelength,
                trial,
            });
        }
    }
    best.expect("at least one trial")
}

/// One accepted supermodule level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelRecord {
    /// Index code length with the previous coarsest level.
    pub index_before: f64,
    /// Index code length with the new level added on top.
    pub index_after: f64,
    pub modules: usize,
}

/// Stacks levels of supermodules on top of the map's coarsest modules as
/// long as each level shortens the index code length by more than epsilon.
pub fn super_modules_graph(
    graph: &FlowGraph,
    map: &Hierarchy<usize>,
    config: &SearchConfig,
) -> (Hierarchy<usize>, Vec<LevelRecord>) {
    let config = config.sanitized();
    let top = map.top_assignment(graph.num_nodes());
    let (mut module_graph, dense) = graph.module_graph(&top);
    let mut blocks: Vec<Option<Module<usize>>> = vec![None; module_graph.num_nodes()];
    for (node, &t) in top.iter().enumerate() {
        if blocks[dense[node]].is_none() {
            blocks[dense[node]] = Some(map.modules[t].clone());
        }
    }
    let mut blocks: Vec<Module<usize>> = blocks
        .into_iter()
        .map(|b| b.expect("every module has a node"))
        .collect();
    let mut records = Vec::new();
    for level in 0..config.max_level_iterations {
        let nodes = module_graph.num_nodes();
        if nodes <= 2 {
            break;
        }
        let before = leaf_codelength(&module_graph);
        let level_config = config
            .clone()
            .with_seed(derive_seed(config.seed, level as u64 + 1));
        let partition = partition_graph(&module_graph, &level_config);
        let modules = num_modules(&partition.assignment);
        if modules <= 1 || modules >= nodes {
            break;
        }
        if partition.codelength - before >= -config.epsilon {
            break;
        }
        records.push(LevelRecord {
            index_before: before,
            index_after: partition.codelength,
            modules,
        });
        let (next, dense) = module_graph.module_graph(&partition.assignment);
        let mut grouped: Vec<Vec<Module<usize>>> = vec![Vec::new(); next.num_nodes()];
        for (j, block) in blocks.into_iter().enumerate() {
            grouped[dense[j]].push(block);
        }
        blocks = grouped.into_iter().map(Module::nested).collect();
        module_graph = next;
    }
    (Hierarchy::new(blocks), records)
}

fn trivial_split(assignment: &[usize]) -> bool {
    let modules = num_modules(assignment);
    modules <= 1 || modules >= assignment.len()
}

/// Clusters one module's subnetwork. Returns its submodule hierarchy over
/// graph nodes when that beats describing the module with one codebook.
fn split_module(
    graph: &FlowGraph,
    members: &[usize],
    config: &SearchConfig,
) -> Option<Hierarchy<usize>> {
    if members.len() <= 2 {
        return None;
    }
    let sub = graph.subgraph(members);
    let partition = partition_graph(&sub, config);
    if trivial_split(&partition.assignment) {
        return None;
    }
    let two_level = Hierarchy::from_assignment(&partition.assignment);
    let (hierarchy, _) = super_modules_graph(&sub, &two_level, config);
    if hierarchy_codelength(&sub, &hierarchy) < leaf_codelength(&sub) - config.epsilon {
        Some(hierarchy.map_leaves(|local| members[local]))
    } else {
        None
    }
}

enum Slot {
    Leaf(Vec<usize>),
    Inner(Vec<usize>),
}

fn insert_module(module: &Module<usize>, slots: &mut Vec<Slot>, queue: &mut Vec<usize>) -> usize {
    match &module.children {
        Children::Leaves(leaves) => {
            slots.push(Slot::Leaf(leaves.clone()));
            queue.push(slots.len() - 1);
            slots.len() - 1
        }
        Children::Modules(children) => {
            let ids = children
                .iter()
                .map(|c| insert_module(c, slots, queue))
                .collect();
            slots.push(Slot::Inner(ids));
            slots.len() - 1
        }
    }
}

fn build_module(slots: &[Slot], id: usize) -> Module<usize> {
    match &slots[id] {
        Slot::Leaf(members) => Module::leaves(members.clone()),
        Slot::Inner(children) => {
            Module::nested(children.iter().map(|&c| build_module(slots, c)).collect())
        }
    }
}

/// Keeps the coarsest modules of the map and recursively replaces finest
/// modules by non-trivial submodule hierarchies found in their subnetworks,
/// one breadth-first wave at a time.
pub fn sub_modules_graph(
    graph: &FlowGraph,
    map: &Hierarchy<usize>,
    config: &SearchConfig,
) -> Hierarchy<usize> {
    let config = config.sanitized();
    let mut slots: Vec<Slot> = Vec::new();
    let mut roots = Vec::new();
    let mut queue = Vec::new();
    for group in map.top_groups() {
        slots.push(Slot::Leaf(group));
        roots.push(slots.len() - 1);
        queue.push(slots.len() - 1);
    }
    while !queue.is_empty() {
        let wave = std::mem::take(&mut queue);
        let task = |&id: &usize| {
            let Slot::Leaf(members) = &slots[id] else {
                unreachable!("queued slots are leaves")
            };
            let task_config = config
                .clone()
                .with_seed(derive_seed(config.seed, id as u64));
            split_module(graph, members, &task_config)
        };
        let results: Vec<Option<Hierarchy<usize>>> = if config.parallel_submodules {
            wave.par_iter().map(task).collect()
        } else {
            wave.iter().map(task).collect()
        };
        for (id, result) in wave.into_iter().zip(results) {
            if let Some(hierarchy) = result {
                let children = hierarchy
                    .modules
                    .iter()
                    .map(|m| insert_module(m, &mut slots, &mut queue))
                    .collect();
                slots[id] = Slot::Inner(children);
            }
        }
    }
    Hierarchy::new(roots.into_iter().map(|r| build_module(&slots, r)).collect())
}

/// A clustering of a state network with its code length and the flow it
/// was computed from.
#[derive(Debug, Clone)]
pub struct ClusteringResult {
    pub map: MultilevelMap,
    pub codelength: f64,
    pub two_level_codelength: f64,
    pub flow: FlowField,
    pub seed: u64,
    pub trial: usize,
    pub levels: Vec<LevelRecord>,
}

fn state_map(hierarchy: &Hierarchy<usize>, network: &StateNetwork) -> MultilevelMap {
    let ids: Vec<_> = network.state_nodes().iter().map(|s| s.id).collect();
    hierarchy.map_leaves(|i| ids[i])
}

fn index_map(map: &MultilevelMap, network: &StateNetwork) -> Hierarchy<usize> {
    map.map_leaves(|s| network.state_index(s).expect("map covers the network"))
}

/// Best two-level map over `num_trials` trials.
pub fn partition_two_level(
    network: &StateNetwork,
    flow: &FlowField,
    config: &SearchConfig,
) -> ClusteringResult {
    let graph = FlowGraph::from_state_network(network, flow);
    let partition = partition_graph(&graph, config);
    let hierarchy = Hierarchy::from_assignment(&partition.assignment);
    let codelength = hierarchy_codelength(&graph, &hierarchy);
    ClusteringResult {
        map: state_map(&hierarchy, network),
        codelength,
        two_level_codelength: codelength,
        flow: flow.clone(),
        seed: config.seed,
        trial: partition.trial,
        levels: Vec::new(),
    }
}

/// Adds supermodule levels on top of a map of the state network.
pub fn super_modules(
    network: &StateNetwork,
    flow: &FlowField,
    map: &MultilevelMap,
    config: &SearchConfig,
) -> (MultilevelMap, Vec<LevelRecord>) {
    let graph = FlowGraph::from_state_network(network, flow);
    let (hierarchy, records) = super_modules_graph(&graph, &index_map(map, network), config);
    (state_map(&hierarchy, network), records)
}

/// Rebuilds the submodule hierarchy below the map's coarsest modules.
pub fn sub_modules(
    network: &StateNetwork,
    flow: &FlowField,
    map: &MultilevelMap,
    config: &SearchConfig,
) -> MultilevelMap {
    let graph = FlowGraph::from_state_network(network, flow);
    state_map(
        &sub_modules_graph(&graph, &index_map(map, network), config),
        network,
    )
}

/// Two-level search followed, unless `two_level_only`, by supermodule and
/// submodule search. Returns the shortest of the candidate maps.
pub fn multilevel_partition(
    network: &StateNetwork,
    flow: &FlowField,
    config: &SearchConfig,
) -> ClusteringResult {
    let two_level = partition_two_level(network, flow, config);
    if config.two_level_only {
        return two_level;
    }
    let graph = FlowGraph::from_state_network(network, flow);
    let flat = index_map(&two_level.map, network);
    let (with_super, levels) = super_modules_graph(&graph, &flat, config);
    let with_sub = sub_modules_graph(&graph, &with_super, config);

    let mut best = (flat.clone(), two_level.codelength);
    for candidate in [with_super, with_sub] {
        let codelength = hierarchy_codelength(&graph, &candidate);
        if codelength < best.1 - 1e-12 {
            best = (candidate, codelength);
        }
    }
    ClusteringResult {
        map: state_map(&best.0, network),
        codelength: best.1,
        two_level_codelength: two_level.codelength,
        flow: two_level.flow,
        seed: config.seed,
        trial: two_level.trial,
        levels,
    }
}

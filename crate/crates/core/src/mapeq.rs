//! The map equation: two-level and multilevel code lengths of module trees,
//! with state nodes of one physical node sharing a code word inside a finest
//! module, and incremental code length changes for single-node moves.

use std::collections::{BTreeMap, HashMap};

use crate::flow::FlowField;
use crate::network::{
    check_coverage, Children, Hierarchy, MapError, Module, MultilevelMap, PhysicalId, StateNetwork,
};

/// `p log2 p`, with `0 log 0 = 0`.
#[inline]
pub fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

/// Shannon entropy in bits of the normalized weights.
pub fn entropy(weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().filter(|w| **w > 0.0).sum();
    if total <= 0.0 {
        return 0.0;
    }
    -weights.iter().map(|&w| plogp(w / total)).sum::<f64>()
}

/// A node of a [`FlowGraph`]: visit flow split over the physical code words
/// it carries, plus flow exchanged with nodes outside the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowNode {
    pub flow: f64,
    /// `(physical index, flow)` pairs, sorted by index.
    pub physical: Vec<(usize, f64)>,
    pub exit_external: f64,
    pub enter_external: f64,
}

impl FlowNode {
    pub fn with_flow(flow: f64, physical: usize) -> Self {
        FlowNode {
            flow,
            physical: vec![(physical, flow)],
            exit_external: 0.0,
            enter_external: 0.0,
        }
    }

    /// Total flow of the node's physical code words.
    pub fn codeword_flow(&self) -> f64 {
        self.physical.iter().map(|&(_, f)| f).sum()
    }
}

/// Flow network the optimizer works on: the state network itself, a
/// subnetwork cut out of it, or a network of aggregated modules.
///
/// External flows let a subnetwork be clustered with the code length of its
/// enclosing module: flow leaving the subnetwork is an extra exit code word
/// in its index codebook, and flow entering it counts as module entry.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGraph {
    nodes: Vec<FlowNode>,
    out_links: Vec<Vec<(usize, f64)>>,
    in_links: Vec<Vec<(usize, f64)>>,
}

/// A network whose nodes are modules of a finer network.
pub type AggregatedNetwork = FlowGraph;

impl FlowGraph {
    /// Builds the graph from nodes and `(source, target, flow)` links.
    /// Self-links are dropped since they never cross a module boundary;
    /// parallel links are summed.
    pub fn new(nodes: Vec<FlowNode>, links: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let n = nodes.len();
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (s, t, f) in links {
            if s != t && f > 0.0 {
                *merged.entry((s, t)).or_insert(0.0) += f;
            }
        }
        let mut out_links = vec![Vec::new(); n];
        let mut in_links = vec![Vec::new(); n];
        for ((s, t), f) in merged {
            out_links[s].push((t, f));
            in_links[t].push((s, f));
        }
        FlowGraph {
            nodes,
            out_links,
            in_links,
        }
    }

    /// One node per state, carrying its visit rate as the code word of its
    /// physical node. Physical indices are positions in the network's
    /// physical node list.
    pub fn from_state_network(network: &StateNetwork, flow: &FlowField) -> Self {
        let nodes = network
            .state_nodes()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let physical = network
                    .physical_index(s.physical_id)
                    .expect("state references a declared physical node");
                FlowNode::with_flow(flow.visit_rates()[i], physical)
            })
            .collect();
        let links = flow.links().iter().map(|l| (l.source, l.target, l.flow));
        FlowGraph::new(nodes, links)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, index: usize) -> &FlowNode {
        &self.nodes[index]
    }

    pub fn nodes(&self) -> &[FlowNode] {
        &self.nodes
    }

    pub fn out_links(&self, index: usize) -> &[(usize, f64)] {
        &self.out_links[index]
    }

    pub fn in_links(&self, index: usize) -> &[(usize, f64)] {
        &self.in_links[index]
    }

    pub fn links(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.out_links
            .iter()
            .enumerate()
            .flat_map(|(s, out)| out.iter().map(move |&(t, f)| (s, t, f)))
    }

    pub fn total_link_flow(&self) -> f64 {
        self.links().map(|(_, _, f)| f).sum()
    }

    /// Flow leaving the graph as a whole.
    pub fn exit_network_flow(&self) -> f64 {
        self.nodes.iter().map(|n| n.exit_external).sum()
    }

    /// Merges nodes by module. Returns the aggregated network and the dense
    /// aggregated index of every node; modules are numbered by first
    /// appearance.
    pub fn aggregate(&self, assignment: &[usize]) -> (AggregatedNetwork, Vec<usize>) {
        let dense = dense_labels(assignment);
        let m = dense.iter().copied().max().map_or(0, |x| x + 1);
        let mut physical: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); m];
        let mut nodes: Vec<FlowNode> = (0..m)
            .map(|_| FlowNode {
                flow: 0.0,
                physical: Vec::new(),
                exit_external: 0.0,
                enter_external: 0.0,
            })
            .collect();
        for (i, node) in self.nodes.iter().enumerate() {
            let target = &mut nodes[dense[i]];
            target.flow += node.flow;
            target.exit_external += node.exit_external;
            target.enter_external += node.enter_external;
            for &(p, f) in &node.physical {
                *physical[dense[i]].entry(p).or_insert(0.0) += f;
            }
        }
        for (node, phys) in nodes.iter_mut().zip(physical) {
            node.physical = phys.into_iter().collect();
        }
        let links = self.links().map(|(s, t, f)| (dense[s], dense[t], f));
        (FlowGraph::new(nodes, links), dense)
    }

    /// The subnetwork induced by `members`, in the given order. Flow to and
    /// from non-members becomes external flow.
    pub fn subgraph(&self, members: &[usize]) -> FlowGraph {
        let local: HashMap<usize, usize> =
            members.iter().enumerate().map(|(i, &g)| (g, i)).collect();
        let mut nodes: Vec<FlowNode> = members.iter().map(|&g| self.nodes[g].clone()).collect();
        let mut links = Vec::new();
        for (i, &g) in members.iter().enumerate() {
            for &(t, f) in &self.out_links[g] {
                match local.get(&t) {
                    Some(&lt) => links.push((i, lt, f)),
                    None => nodes[i].exit_external += f,
                }
            }
            for &(s, f) in &self.in_links[g] {
                if !local.contains_key(&s) {
                    nodes[i].enter_external += f;
                }
            }
        }
        FlowGraph::new(nodes, links)
    }

    /// Network with one node per module whose visit flow is the module's
    /// entry rate, one code word per module, and links carrying the flow
    /// between modules.
    pub fn module_graph(&self, assignment: &[usize]) -> (FlowGraph, Vec<usize>) {
        let (mut graph, dense) = self.aggregate(assignment);
        for i in 0..graph.num_nodes() {
            let enter = graph.node(i).enter_external
                + graph.in_links(i).iter().map(|&(_, f)| f).sum::<f64>();
            let node = &mut graph.nodes[i];
            node.flow = enter;
            node.physical = vec![(i, enter)];
        }
        (graph, dense)
    }
}

fn dense_labels(assignment: &[usize]) -> Vec<usize> {
    let mut labels: HashMap<usize, usize> = HashMap::new();
    assignment
        .iter()
        .map(|&m| {
            let next = labels.len();
            *labels.entry(m).or_insert(next)
        })
        .collect()
}

/// Code-length contribution of a finest module codebook.
fn finest_codelength(exit: f64, physical: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut plogp_sum = 0.0;
    for f in physical {
        sum += f;
        plogp_sum += plogp(f);
    }
    plogp(exit + sum) - plogp(exit) - plogp_sum
}

/// Code-length contribution of an index codebook with an exit code word.
fn index_codelength(exit: f64, enters: impl Iterator<Item = f64>) -> f64 {
    finest_codelength(exit, enters)
}

/// Two-level code length of a node-to-module assignment, recomputed from
/// scratch.
pub fn two_level_codelength(graph: &FlowGraph, assignment: &[usize]) -> f64 {
    let dense = dense_labels(assignment);
    let m = dense.iter().copied().max().map_or(0, |x| x + 1);
    let mut exit = vec![0.0; m];
    let mut enter = vec![0.0; m];
    let mut physical: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); m];
    for (i, node) in graph.nodes.iter().enumerate() {
        exit[dense[i]] += node.exit_external;
        enter[dense[i]] += node.enter_external;
        for &(p, f) in &node.physical {
            *physical[dense[i]].entry(p).or_insert(0.0) += f;
        }
    }
    for (s, t, f) in graph.links() {
        if dense[s] != dense[t] {
            exit[dense[s]] += f;
            enter[dense[t]] += f;
        }
    }
    let index = index_codelength(graph.exit_network_flow(), enter.iter().copied());
    let modules: f64 = (0..m)
        .map(|k| finest_codelength(exit[k], physical[k].values().copied()))
        .sum();
    index + modules
}

/// Code length of a one-module map, the reference for trivial solutions.
pub fn one_module_codelength(graph: &FlowGraph) -> f64 {
    two_level_codelength(graph, &vec![0; graph.num_nodes()])
}

/// Length of the graph's nodes described by a single codebook that also
/// encodes leaving the graph.
pub fn leaf_codelength(graph: &FlowGraph) -> f64 {
    let mut physical: BTreeMap<usize, f64> = BTreeMap::new();
    for node in &graph.nodes {
        for &(p, f) in &node.physical {
            *physical.entry(p).or_insert(0.0) += f;
        }
    }
    finest_codelength(graph.exit_network_flow(), physical.values().copied())
}

/// Flow terms of one module of a hierarchy over a [`FlowGraph`].
#[derive(Debug, Clone, PartialEq)]
pub struct GraphModuleTerms {
    pub path: Vec<usize>,
    pub exit: f64,
    pub enter: f64,
    pub child_enters: Vec<f64>,
    /// Aggregated physical flows, finest modules only.
    pub physical: BTreeMap<usize, f64>,
    pub total_use: f64,
    pub codelength: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphTerms {
    pub modules: Vec<GraphModuleTerms>,
    pub exit_network: f64,
    pub index_enter_total: f64,
    pub index_codelength: f64,
    pub codelength: f64,
}

/// Evaluates every module of a hierarchy over graph nodes.
pub fn hierarchy_terms(graph: &FlowGraph, hierarchy: &Hierarchy<usize>) -> GraphTerms {
    // Arena of modules in walk order along with each leaf's module path.
    let mut paths: Vec<Vec<usize>> = Vec::new();
    let mut finest: Vec<bool> = Vec::new();
    let mut children: Vec<Vec<usize>> = Vec::new();
    let mut node_path: Vec<Vec<usize>> = vec![Vec::new(); graph.num_nodes()];
    let mut stack: Vec<usize> = Vec::new();

    fn visit(
        module: &Module<usize>,
        path: &mut Vec<usize>,
        stack: &mut Vec<usize>,
        paths: &mut Vec<Vec<usize>>,
        finest: &mut Vec<bool>,
        children: &mut Vec<Vec<usize>>,
        node_path: &mut [Vec<usize>],
    ) -> usize {
        let id = paths.len();
        paths.push(path.clone());
        finest.push(module.is_finest());
        children.push(Vec::new());
        stack.push(id);
        match &module.children {
            Children::Leaves(leaves) => {
                for &leaf in leaves {
                    node_path[leaf] = stack.clone();
                }
            }
            Children::Modules(modules) => {
                for (i, m) in modules.iter().enumerate() {
                    path.push(i + 1);
                    let child = visit(m, path, stack, paths, finest, children, node_path);
                    children[id].push(child);
                    path.pop();
                }
            }
        }
        stack.pop();
        id
    }

    let mut top = Vec::new();
    let mut path = Vec::new();
    for (i, m) in hierarchy.modules.iter().enumerate() {
        path.push(i + 1);
        top.push(visit(
            m,
            &mut path,
            &mut stack,
            &mut paths,
            &mut finest,
            &mut children,
            &mut node_path,
        ));
        path.pop();
    }

    let count = paths.len();
    let mut exit = vec![0.0; count];
    let mut enter = vec![0.0; count];
    let mut physical: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); count];
    for (i, node) in graph.nodes.iter().enumerate() {
        let chain = &node_path[i];
        for &m in chain {
            exit[m] += node.exit_external;
            enter[m] += node.enter_external;
        }
        if let Some(&leaf_module) = chain.last() {
            for &(p, f) in &node.physical {
                *physical[leaf_module].entry(p).or_insert(0.0) += f;
            }
        }
    }
    for (s, t, f) in graph.links() {
        let (a, b) = (&node_path[s], &node_path[t]);
        let split = a.iter().zip(b.iter()).take_while(|(x, y)| x == y).count();
        for &m in &a[split..] {
            exit[m] += f;
        }
        for &m in &b[split..] {
            enter[m] += f;
        }
    }

    let exit_network = graph.exit_network_flow();
    let index_enter_total: f64 = top.iter().map(|&m| enter[m]).sum();
    let index = index_codelength(exit_network, top.iter().map(|&m| enter[m]));
    let mut modules = Vec::with_capacity(count);
    let mut total = index;
    for id in 0..count {
        let (total_use, codelength, child_enters) = if finest[id] {
            let sum: f64 = physical[id].values().sum();
            (
                exit[id] + sum,
                finest_codelength(exit[id], physical[id].values().copied()),
                Vec::new(),
            )
        } else {
            let child_enters: Vec<f64> = children[id].iter().map(|&c| enter[c]).collect();
            (
                exit[id] + child_enters.iter().sum::<f64>(),
                index_codelength(exit[id], child_enters.iter().copied()),
                child_enters,
            )
        };
        total += codelength;
        modules.push(GraphModuleTerms {
            path: paths[id].clone(),
            exit: exit[id],
            enter: enter[id],
            child_enters,
            physical: std::mem::take(&mut physical[id]),
            total_use,
            codelength,
        });
    }
    GraphTerms {
        modules,
        exit_network,
        index_enter_total,
        index_codelength: index,
        codelength: total,
    }
}

pub fn hierarchy_codelength(graph: &FlowGraph, hierarchy: &Hierarchy<usize>) -> f64 {
    hierarchy_terms(graph, hierarchy).codelength
}

/// Code length spent above the finest modules: the root index codebook and
/// every intermediate codebook.
pub fn hierarchy_index_codelength(graph: &FlowGraph, hierarchy: &Hierarchy<usize>) -> f64 {
    let terms = hierarchy_terms(graph, hierarchy);
    terms.index_codelength
        + terms
            .modules
            .iter()
            .filter(|m| !m.child_enters.is_empty())
            .map(|m| m.codelength)
            .sum::<f64>()
}

/// Per-module terms of a multilevel map over a state network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleTerms {
    /// 1-based path of the module.
    pub path: Vec<usize>,
    pub exit_rate: f64,
    pub enter_rate: f64,
    /// Entry rates of submodules, empty for finest modules.
    pub child_enter_rates: Vec<f64>,
    /// Visit rate of each physical node within a finest module.
    pub physical_rates: BTreeMap<PhysicalId, f64>,
    /// Total code word use of the module's codebook.
    pub total_use: f64,
    /// Contribution of the module's own codebook in bits.
    pub codelength: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodelengthTerms {
    pub modules: Vec<ModuleTerms>,
    /// Total module entry rate at the coarsest level.
    pub index_enter_total: f64,
    pub index_codelength: f64,
    pub codelength: f64,
}

fn state_hierarchy(map: &MultilevelMap, network: &StateNetwork) -> Hierarchy<usize> {
    map.map_leaves(|s| network.state_index(s).expect("coverage checked"))
}

/// Exit, entry and aggregated physical rates of every module of the map,
/// all as sums of link flows and state visit rates.
pub fn module_flow_terms(
    map: &MultilevelMap,
    flow: &FlowField,
    network: &StateNetwork,
) -> Result<CodelengthTerms, MapError> {
    check_coverage(map, network)?;
    let graph = FlowGraph::from_state_network(network, flow);
    let terms = hierarchy_terms(&graph, &state_hierarchy(map, network));
    let physical_id = |p: usize| network.physical_nodes()[p].id;
    Ok(CodelengthTerms {
        modules: terms
            .modules
            .into_iter()
            .map(|m| ModuleTerms {
                path: m.path,
                exit_rate: m.exit,
                enter_rate: m.enter,
                child_enter_rates: m.child_enters,
                physical_rates: m
                    .physical
                    .into_iter()
                    .map(|(p, f)| (physical_id(p), f))
                    .collect(),
                total_use: m.total_use,
                codelength: m.codelength,
            })
            .collect(),
        index_enter_total: terms.index_enter_total,
        index_codelength: terms.index_codelength,
        codelength: terms.codelength,
    })
}

/// Two-level map equation in bits.
pub fn codelength_two_level(
    map: &MultilevelMap,
    flow: &FlowField,
    network: &StateNetwork,
) -> Result<f64, MapError> {
    check_coverage(map, network)?;
    if !map.is_two_level() {
        return Err(MapError::NotTwoLevel);
    }
    let graph = FlowGraph::from_state_network(network, flow);
    let mut assignment = vec![0; network.num_states()];
    for (m, group) in map.finest_modules().into_iter().enumerate() {
        for s in group {
            assignment[network.state_index(s).expect("coverage checked")] = m;
        }
    }
    Ok(two_level_codelength(&graph, &assignment))
}

/// Multilevel map equation in bits.
pub fn codelength_multilevel(
    map: &MultilevelMap,
    flow: &FlowField,
    network: &StateNetwork,
) -> Result<f64, MapError> {
    Ok(module_flow_terms(map, flow, network)?.codelength)
}

#[derive(Debug, Clone, Default)]
struct ModuleData {
    exit: f64,
    enter: f64,
    flow: f64,
    members: usize,
    physical: BTreeMap<usize, f64>,
}

/// Incrementally maintained two-level terms of a node-to-module assignment.
/// Module ids range over `0..num_nodes`, so an empty module always exists
/// for a node that shares its module.
#[derive(Debug, Clone)]
pub struct PartitionState<'g> {
    graph: &'g FlowGraph,
    assignment: Vec<usize>,
    modules: Vec<ModuleData>,
    exit_network: f64,
    enter_sum: f64,
    plogp_enter: f64,
    plogp_exit: f64,
    plogp_exit_flow: f64,
    plogp_physical: f64,
}

/// Flow of a node toward and from one module.
#[derive(Debug, Clone, Copy, Default)]
struct Coupling {
    out: f64,
    inflow: f64,
}

impl<'g> PartitionState<'g> {
    /// Every node in its own module.
    pub fn singletons(graph: &'g FlowGraph) -> Self {
        Self::new(graph, &(0..graph.num_nodes()).collect::<Vec<_>>())
    }

    pub fn new(graph: &'g FlowGraph, assignment: &[usize]) -> Self {
        let n = graph.num_nodes();
        assert_eq!(assignment.len(), n, "assignment must cover every node");
        let dense = dense_labels(assignment);
        let mut modules = vec![ModuleData::default(); n.max(1)];
        for (i, node) in graph.nodes.iter().enumerate() {
            let m = &mut modules[dense[i]];
            m.members += 1;
            m.exit += node.exit_external;
            m.enter += node.enter_external;
            for &(p, f) in &node.physical {
                m.flow += f;
                *m.physical.entry(p).or_insert(0.0) += f;
            }
        }
        for (s, t, f) in graph.links() {
            if dense[s] != dense[t] {
                modules[dense[s]].exit += f;
                modules[dense[t]].enter += f;
            }
        }
        let mut state = PartitionState {
            graph,
            assignment: dense,
            modules,
            exit_network: graph.exit_network_flow(),
            enter_sum: 0.0,
            plogp_enter: 0.0,
            plogp_exit: 0.0,
            plogp_exit_flow: 0.0,
            plogp_physical: 0.0,
        };
        state.recompute_sums();
        state
    }

    fn recompute_sums(&mut self) {
        self.enter_sum = 0.0;
        self.plogp_enter = 0.0;
        self.plogp_exit = 0.0;
        self.plogp_exit_flow = 0.0;
        self.plogp_physical = 0.0;
        for m in &self.modules {
            self.enter_sum += m.enter;
            self.plogp_enter += plogp(m.enter);
            self.plogp_exit += plogp(m.exit);
            self.plogp_exit_flow += plogp(m.exit + m.flow);
            self.plogp_physical += m.physical.values().map(|&f| plogp(f)).sum::<f64>();
        }
    }

    pub fn graph(&self) -> &'g FlowGraph {
        self.graph
    }

    pub fn codelength(&self) -> f64 {
        self.index_codelength() + self.module_codelength()
    }

    pub fn index_codelength(&self) -> f64 {
        plogp(self.enter_sum + self.exit_network) - self.plogp_enter - plogp(self.exit_network)
    }

    pub fn module_codelength(&self) -> f64 {
        self.plogp_exit_flow - self.plogp_exit - self.plogp_physical
    }

    pub fn module_of(&self, node: usize) -> usize {
        self.assignment[node]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn module_size(&self, module: usize) -> usize {
        self.modules[module].members
    }

    pub fn module_exit(&self, module: usize) -> f64 {
        self.modules[module].exit
    }

    pub fn module_enter(&self, module: usize) -> f64 {
        self.modules[module].enter
    }

    pub fn num_modules(&self) -> usize {
        self.modules.iter().filter(|m| m.members > 0).count()
    }

    /// Lowest id of an empty module, if any.
    pub fn empty_module(&self) -> Option<usize> {
        self.modules.iter().position(|m| m.members == 0)
    }

    fn couplings(&self, node: usize, from: usize, to: usize) -> (Coupling, Coupling, f64, f64) {
        let data = &self.graph.nodes[node];
        let (mut a, mut b) = (Coupling::default(), Coupling::default());
        let mut total_out = data.exit_external;
        let mut total_in = data.enter_external;
        for &(t, f) in self.graph.out_links(node) {
            total_out += f;
            let m = self.assignment[t];
            if m == from {
                a.out += f;
            } else if m == to {
                b.out += f;
            }
        }
        for &(s, f) in self.graph.in_links(node) {
            total_in += f;
            let m = self.assignment[s];
            if m == from {
                a.inflow += f;
            } else if m == to {
                b.inflow += f;
            }
        }
        (a, b, total_out, total_in)
    }

    /// Module terms after moving `node` to `to`: (exit, enter, flow) for the
    /// source and target modules.
    fn moved_terms(&self, node: usize, to: usize) -> ([f64; 3], [f64; 3]) {
        let from = self.assignment[node];
        let (a, b, total_out, total_in) = self.couplings(node, from, to);
        let flow = self.graph.nodes[node].codeword_flow();
        let old_a = &self.modules[from];
        let old_b = &self.modules[to];
        let new_a = [
            old_a.exit - (total_out - a.out) + a.inflow,
            old_a.enter - (total_in - a.inflow) + a.out,
            old_a.flow - flow,
        ];
        let new_b = [
            old_b.exit + (total_out - b.out) - b.inflow,
            old_b.enter + (total_in - b.inflow) - b.out,
            old_b.flow + flow,
        ];
        (new_a, new_b)
    }

    fn is_identity(&self, node: usize, to: usize) -> bool {
        let from = self.assignment[node];
        to == from || (self.modules[to].members == 0 && self.modules[from].members == 1)
    }

    /// Code length change in bits of moving `node` to module `to`, which may
    /// be empty. Only the two affected modules are evaluated, including the
    /// re-aggregation of physical visit rates.
    pub fn delta_move(&self, node: usize, to: usize) -> f64 {
        if self.is_identity(node, to) {
            return 0.0;
        }
        let from = self.assignment[node];
        let (new_a, new_b) = self.moved_terms(node, to);
        let (old_a, old_b) = (&self.modules[from], &self.modules[to]);

        let enter_sum = self.enter_sum - old_a.enter - old_b.enter + new_a[1] + new_b[1];
        let d_plogp_enter =
            plogp(new_a[1]) + plogp(new_b[1]) - plogp(old_a.enter) - plogp(old_b.enter);
        let d_plogp_exit =
            plogp(new_a[0]) + plogp(new_b[0]) - plogp(old_a.exit) - plogp(old_b.exit);
        let d_plogp_exit_flow = plogp(new_a[0] + new_a[2]) + plogp(new_b[0] + new_b[2])
            - plogp(old_a.exit + old_a.flow)
            - plogp(old_b.exit + old_b.flow);
        let mut d_plogp_physical = 0.0;
        for &(p, f) in &self.graph.nodes[node].physical {
            let in_a = old_a.physical.get(&p).copied().unwrap_or(0.0);
            let in_b = old_b.physical.get(&p).copied().unwrap_or(0.0);
            d_plogp_physical += plogp(in_a - f) - plogp(in_a) + plogp(in_b + f) - plogp(in_b);
        }

        let d_index = plogp(enter_sum + self.exit_network)
            - plogp(self.enter_sum + self.exit_network)
            - d_plogp_enter;
        d_index + d_plogp_exit_flow - d_plogp_exit - d_plogp_physical
    }

    pub fn apply_move(&mut self, node: usize, to: usize) {
        let from = self.assignment[node];
        if from == to {
            return;
        }
        let (new_a, new_b) = self.moved_terms(node, to);
        for &(idx, terms) in &[(from, new_a), (to, new_b)] {
            let m = &self.modules[idx];
            self.enter_sum += terms[1] - m.enter;
            self.plogp_enter += plogp(terms[1]) - plogp(m.enter);
            self.plogp_exit += plogp(terms[0]) - plogp(m.exit);
            self.plogp_exit_flow += plogp(terms[0] + terms[2]) - plogp(m.exit + m.flow);
        }
        for &(p, f) in &self.graph.nodes[node].physical {
            let a = self.modules[from].physical.entry(p).or_insert(0.0);
            let before_a = *a;
            *a -= f;
            let after_a = *a;
            if self.modules[from].members == 1 {
                self.modules[from].physical.remove(&p);
            }
            let b = self.modules[to].physical.entry(p).or_insert(0.0);
            let before_b = *b;
            *b += f;
            let after_b = *b;
            self.plogp_physical +=
                plogp(after_a) - plogp(before_a) + plogp(after_b) - plogp(before_b);
        }
        for &(idx, terms) in &[(from, new_a), (to, new_b)] {
            let m = &mut self.modules[idx];
            m.exit = terms[0];
            m.enter = terms[1];
            m.flow = terms[2];
        }
        self.modules[from].members -= 1;
        self.modules[to].members += 1;
        if self.modules[from].members == 0 {
            let m = &mut self.modules[from];
            m.exit = 0.0;
            m.enter = 0.0;
            m.flow = 0.0;
            m.physical.clear();
        }
        self.assignment[node] = to;
    }
}

/// Code length change of moving `node` from its current module to `to`.
pub fn delta_codelength_move(state: &PartitionState<'_>, node: usize, to: usize) -> f64 {
    state.delta_move(node, to)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{stationary_visit_rates, RelaxParameters};
    use crate::io::{parse_memory, parse_sparse};

    const FIG3B: &str = include_str!("../data/fig3b.net");
    const FIG3C: &str = include_str!("../data/fig3c.net");

    fn fig3c() -> (StateNetwork, FlowField) {
        let net = parse_sparse(FIG3C.as_bytes()).unwrap();
        let flow = stationary_visit_rates(&net, RelaxParameters::default()).unwrap();
        (net, flow)
    }

    #[test]
    fn entropy_basics() {
        assert_eq!(entropy(&[1.0, 1.0]), 1.0);
        assert_eq!(entropy(&[0.0, 3.0]), 0.0);
        assert_eq!(entropy(&[]), 0.0);
        assert!((entropy(&[1.0; 4]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn one_module_terms_on_sparse_listing() {
        let (net, flow) = fig3c();
        let map = Hierarchy::one_module(vec![1, 2, 3, 4, 5, 6]);
        let terms = module_flow_terms(&map, &flow, &net).unwrap();
        let m = &terms.modules[0];
        assert!(m.exit_rate.abs() < 1e-15);
        assert!((m.physical_rates[&1] - 2.0 / 6.0).abs() < 1e-12);
        for p in 2..=5 {
            assert!((m.physical_rates[&p] - 1.0 / 6.0).abs() < 1e-12);
        }
        assert!(
            (m.total_use - (m.exit_rate + m.physical_rates.values().sum::<f64>())).abs() < 1e-12
        );
    }

    #[test]
    fn two_module_terms_on_sparse_listing() {
        let (net, flow) = fig3c();
        let map = Hierarchy::two_level(vec![vec![1, 2, 3], vec![4, 5, 6]]);
        let terms = module_flow_terms(&map, &flow, &net).unwrap();
        for m in &terms.modules {
            assert!((m.exit_rate - 0.4 / 12.0).abs() < 1e-12);
            assert!((m.enter_rate - 0.4 / 12.0).abs() < 1e-12);
        }
        assert!((terms.index_enter_total - 0.4 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn worked_code_lengths() {
        let (net, flow) = fig3c();
        let one = codelength_two_level(&Hierarchy::one_module(vec![1, 2, 3, 4, 5, 6]), &flow, &net)
            .unwrap();
        assert!((one - 2.2516291673878226).abs() < 1e-12);
        let two = codelength_two_level(
            &Hierarchy::two_level(vec![vec![1, 2, 3], vec![4, 5, 6]]),
            &flow,
            &net,
        )
        .unwrap();
        assert!((two - 2.011405238445971).abs() < 1e-12);

        let memory = parse_memory(FIG3B.as_bytes())
            .unwrap()
            .with_unique_physical_nodes();
        let flow = stationary_visit_rates(&memory, RelaxParameters::default()).unwrap();
        let all: Vec<u32> = (1..=12).collect();
        let one = codelength_two_level(&Hierarchy::one_module(all), &flow, &memory).unwrap();
        assert!((one - 12f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn not_two_level_is_rejected() {
        let (net, flow) = fig3c();
        let map = Hierarchy::new(vec![Module::nested(vec![
            Module::leaves(vec![1, 2, 3]),
            Module::leaves(vec![4, 5, 6]),
        ])]);
        assert_eq!(
            codelength_two_level(&map, &flow, &net),
            Err(MapError::NotTwoLevel)
        );
        assert!(codelength_multilevel(&map, &flow, &net).is_ok());
    }

    #[test]
    fn incomplete_map_is_rejected() {
        let (net, flow) = fig3c();
        let map = Hierarchy::one_module(vec![1, 2, 3]);
        assert!(module_flow_terms(&map, &flow, &net).is_err());
    }

    #[test]
    fn multilevel_matches_two_level_on_flat_maps() {
        let (net, flow) = fig3c();
        for groups in [
            vec![vec![1, 2, 3], vec![4, 5, 6]],
            vec![vec![1, 2], vec![3], vec![4, 5, 6]],
        ] {
            let map = Hierarchy::two_level(groups);
            let a = codelength_two_level(&map, &flow, &net).unwrap();
            let b = codelength_multilevel(&map, &flow, &net).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_moves_cost_nothing() {
        let (net, flow) = fig3c();
        let graph = FlowGraph::from_state_network(&net, &flow);
        let state = PartitionState::singletons(&graph);
        for node in 0..6 {
            assert_eq!(state.delta_move(node, node), 0.0);
        }
        let state = PartitionState::new(&graph, &[0, 0, 0, 1, 1, 1]);
        assert_eq!(state.delta_move(2, 0), 0.0);
    }

    #[test]
    fn delta_matches_recompute_after_moves() {
        let (net, flow) = fig3c();
        let graph = FlowGraph::from_state_network(&net, &flow);
        let mut state = PartitionState::singletons(&graph);
        let moves = [(0, 1), (2, 1), (3, 4), (5, 4), (1, 3), (1, 1), (4, 0)];
        for (node, to) in moves {
            let before = state.codelength();
            let delta = state.delta_move(node, to);
            state.apply_move(node, to);
            let after = two_level_codelength(&graph, state.assignment());
            assert!((after - before - delta).abs() < 1e-12);
            assert!((state.codelength() - after).abs() < 1e-12);
        }
    }

    #[test]
    fn subgraph_external_flows_balance() {
        let (net, flow) = fig3c();
        let graph = FlowGraph::from_state_network(&net, &flow);
        let sub = graph.subgraph(&[0, 1, 2]);
        assert!((sub.exit_network_flow() - 0.4 / 12.0).abs() < 1e-12);
        let enter: f64 = sub.nodes().iter().map(|n| n.enter_external).sum();
        assert!((enter - 0.4 / 12.0).abs() < 1e-12);
        // The subnetwork's one-module length is the module's codebook plus
        // an index codebook with one entry and one exit.
        let leaf = hierarchy_terms(
            &graph,
            &Hierarchy::two_level(vec![vec![0, 1, 2], vec![3, 4, 5]]),
        )
        .modules[0]
            .codelength;
        let one = one_module_codelength(&sub);
        let q = 0.4 / 12.0;
        assert!((one - leaf - (2.0 * q) * 1.0).abs() < 1e-12);
    }

    #[test]
    fn module_graph_uses_entry_rates() {
        let (net, flow) = fig3c();
        let graph = FlowGraph::from_state_network(&net, &flow);
        let (modules, dense) = graph.module_graph(&[0, 0, 0, 1, 1, 1]);
        assert_eq!(dense, vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(modules.num_nodes(), 2);
        for node in modules.nodes() {
            assert!((node.flow - 0.4 / 12.0).abs() < 1e-12);
        }
        // One module over the module network reproduces the index length.
        let index = hierarchy_terms(
            &graph,
            &Hierarchy::two_level(vec![vec![0, 1, 2], vec![3, 4, 5]]),
        )
        .index_codelength;
        assert!((one_module_codelength(&modules) - index).abs() < 1e-12);
    }

    #[test]
    fn aggregation_preserves_link_flow() {
        let (net, flow) = fig3c();
        let graph = FlowGraph::from_state_network(&net, &flow);
        let (agg, _) = graph.aggregate(&[0, 0, 1, 1, 2, 2]);
        let internal: f64 = graph
            .links()
            .filter(|&(s, t, _)| s / 2 == t / 2)
            .map(|(_, _, f)| f)
            .sum();
        assert!((agg.total_link_flow() + internal - graph.total_link_flow()).abs() < 1e-12);
        assert!(
            (two_level_codelength(&agg, &[0, 0, 1])
                - two_level_codelength(&graph, &[0, 0, 0, 0, 1, 1]))
            .abs()
                < 1e-12
        );
    }
}

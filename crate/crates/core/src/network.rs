//! Sparse memory network model: physical nodes, state nodes and weighted
//! links between state nodes, plus the module tree used for clusterings.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

pub type PhysicalId = u32;
pub type StateId = u32;

/// Per-entry tolerance when comparing normalized outlink distributions.
pub const LUMP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalNode {
    pub id: PhysicalId,
    pub name: Option<String>,
}

impl PhysicalNode {
    /// The display name, falling back to the id.
    pub fn label(&self) -> Cow<'_, str> {
        match &self.name {
            Some(name) => Cow::Borrowed(name.as_str()),
            None => Cow::Owned(self.id.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateNode {
    pub id: StateId,
    pub physical_id: PhysicalId,
    pub name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedLink {
    pub source: StateId,
    pub target: StateId,
    pub weight: f64,
}

/// Physical nodes, state nodes and directed weighted links between state
/// nodes. A first-order network has exactly one state node per physical node.
///
/// Node lists are kept sorted by id and links by `(source, target)`. The
/// network is immutable once built; construct it with [`StateNetworkBuilder`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateNetwork {
    physical: Vec<PhysicalNode>,
    states: Vec<StateNode>,
    links: Vec<WeightedLink>,
    directed: bool,
    physical_index: HashMap<PhysicalId, usize>,
    state_index: HashMap<StateId, usize>,
}

impl StateNetwork {
    pub fn builder(directed: bool) -> StateNetworkBuilder {
        StateNetworkBuilder::new(directed)
    }

    pub fn physical_nodes(&self) -> &[PhysicalNode] {
        &self.physical
    }

    pub fn state_nodes(&self) -> &[StateNode] {
        &self.states
    }

    pub fn links(&self) -> &[WeightedLink] {
        &self.links
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn num_physical(&self) -> usize {
        self.physical.len()
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn physical(&self, id: PhysicalId) -> Option<&PhysicalNode> {
        self.physical_index.get(&id).map(|&i| &self.physical[i])
    }

    pub fn state(&self, id: StateId) -> Option<&StateNode> {
        self.state_index.get(&id).map(|&i| &self.states[i])
    }

    /// Dense position of a state node in [`StateNetwork::state_nodes`].
    pub fn state_index(&self, id: StateId) -> Option<usize> {
        self.state_index.get(&id).copied()
    }

    pub fn physical_index(&self, id: PhysicalId) -> Option<usize> {
        self.physical_index.get(&id).copied()
    }

    /// True when every physical node carries at most one state node.
    pub fn is_first_order(&self) -> bool {
        let mut seen = HashSet::new();
        self.states.iter().all(|s| seen.insert(s.physical_id))
    }

    /// Same network with a different directedness flag.
    pub fn with_directed(&self, directed: bool) -> StateNetwork {
        let mut net = self.clone();
        net.directed = directed;
        net
    }

    /// Outlinks grouped by source state id, targets ascending.
    pub fn outlinks(&self) -> BTreeMap<StateId, Vec<(StateId, f64)>> {
        let mut out: BTreeMap<StateId, Vec<(StateId, f64)>> = BTreeMap::new();
        for link in &self.links {
            out.entry(link.source)
                .or_default()
                .push((link.target, link.weight));
        }
        out
    }

    /// Copy of the network where every state node gets its own physical node,
    /// so that state nodes are encoded as if they were physical nodes.
    pub fn with_unique_physical_nodes(&self) -> StateNetwork {
        let mut builder = StateNetworkBuilder::new(self.directed);
        for state in &self.states {
            let name = state.name.clone().or_else(|| {
                self.physical(state.physical_id)
                    .map(|p| format!("{}_{}", p.label(), state.id))
            });
            builder.add_physical(state.id, name.clone());
            builder.add_state(state.id, state.id, name);
        }
        for link in &self.links {
            builder.add_link(link.source, link.target, link.weight);
        }
        builder.build()
    }
}

#[derive(Debug, Clone, Default)]
pub struct StateNetworkBuilder {
    physical: Vec<PhysicalNode>,
    states: Vec<StateNode>,
    links: BTreeMap<(StateId, StateId), f64>,
    directed: bool,
}

impl StateNetworkBuilder {
    pub fn new(directed: bool) -> Self {
        Self {
            directed,
            ..Self::default()
        }
    }

    pub fn add_physical(&mut self, id: PhysicalId, name: Option<String>) -> &mut Self {
        self.physical.push(PhysicalNode { id, name });
        self
    }

    pub fn add_state(
        &mut self,
        id: StateId,
        physical_id: PhysicalId,
        name: Option<String>,
    ) -> &mut Self {
        self.states.push(StateNode {
            id,
            physical_id,
            name,
        });
        self
    }

    /// Adds weight to the `(source, target)` link. Repeated links are summed.
    pub fn add_link(&mut self, source: StateId, target: StateId, weight: f64) -> &mut Self {
        *self.links.entry((source, target)).or_insert(0.0) += weight;
        self
    }

    pub fn has_physical(&self, id: PhysicalId) -> bool {
        self.physical.iter().any(|p| p.id == id)
    }

    pub fn has_state(&self, id: StateId) -> bool {
        self.states.iter().any(|s| s.id == id)
    }

    pub fn build(self) -> StateNetwork {
        let mut physical = self.physical;
        let mut states = self.states;
        physical.sort_by_key(|p| p.id);
        states.sort_by_key(|s| s.id);
        let links: Vec<WeightedLink> = self
            .links
            .into_iter()
            .filter(|&(_, w)| w != 0.0)
            .map(|((source, target), weight)| WeightedLink {
                source,
                target,
                weight,
            })
            .collect();

        let mut physical_index = HashMap::with_capacity(physical.len());
        for (i, p) in physical.iter().enumerate() {
            physical_index.entry(p.id).or_insert(i);
        }
        let mut state_index = HashMap::with_capacity(states.len());
        for (i, s) in states.iter().enumerate() {
            state_index.entry(s.id).or_insert(i);
        }

        StateNetwork {
            physical,
            states,
            links,
            directed: self.directed,
            physical_index,
            state_index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationKind {
    DuplicatePhysicalId,
    DuplicateStateId,
    UnknownPhysicalNode,
    DanglingEndpoint,
    NonPositiveWeight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Offending id: the physical or state id, or the link source for weights.
    pub id: u32,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            ViolationKind::DuplicatePhysicalId => "duplicate physical id",
            ViolationKind::DuplicateStateId => "duplicate state id",
            ViolationKind::UnknownPhysicalNode => "state references undeclared physical node",
            ViolationKind::DanglingEndpoint => "link endpoint is not a declared state",
            ViolationKind::NonPositiveWeight => "link weight is not positive",
        };
        write!(f, "{what}: {}", self.id)
    }
}

/// Lists every breach of the network invariants. An empty list means the
/// network is valid.
pub fn validate(network: &StateNetwork) -> Vec<Violation> {
    let mut violations = Vec::new();
    for pair in network.physical.windows(2) {
        if pair[0].id == pair[1].id {
            violations.push(Violation {
                kind: ViolationKind::DuplicatePhysicalId,
                id: pair[1].id,
            });
        }
    }
    for pair in network.states.windows(2) {
        if pair[0].id == pair[1].id {
            violations.push(Violation {
                kind: ViolationKind::DuplicateStateId,
                id: pair[1].id,
            });
        }
    }
    for state in &network.states {
        if network.physical(state.physical_id).is_none() {
            violations.push(Violation {
                kind: ViolationKind::UnknownPhysicalNode,
                id: state.id,
            });
        }
    }
    let mut dangling = Vec::new();
    for link in &network.links {
        for endpoint in [link.source, link.target] {
            if network.state(endpoint).is_none() && !dangling.contains(&endpoint) {
                dangling.push(endpoint);
            }
        }
        if !(link.weight > 0.0 && link.weight.is_finite()) {
            violations.push(Violation {
                kind: ViolationKind::NonPositiveWeight,
                id: link.source,
            });
        }
    }
    violations.extend(dangling.into_iter().map(|id| Violation {
        kind: ViolationKind::DanglingEndpoint,
        id,
    }));
    violations
}

fn normalized_outlinks(network: &StateNetwork) -> HashMap<StateId, Vec<(StateId, f64)>> {
    network
        .outlinks()
        .into_iter()
        .map(|(source, mut row)| {
            let total: f64 = row.iter().map(|&(_, w)| w).sum();
            for entry in &mut row {
                entry.1 /= total;
            }
            (source, row)
        })
        .collect()
}

fn same_distribution(a: &[(StateId, f64)], b: &[(StateId, f64)]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| x.0 == y.0 && (x.1 - y.1).abs() <= LUMP_TOLERANCE)
}

/// Merges state nodes of the same physical node whose normalized outlink
/// distributions coincide. The lumped node keeps the smallest state id and
/// the summed raw in- and outlink weights, so transition probabilities are
/// unchanged. Repeats until no further pair can be merged, since merging
/// targets can make previously different rows equal.
pub fn lump_redundant_states(network: &StateNetwork) -> StateNetwork {
    let mut current = network.clone();
    loop {
        let rows = normalized_outlinks(&current);
        let empty = Vec::new();
        let mut by_physical: BTreeMap<PhysicalId, Vec<StateId>> = BTreeMap::new();
        for state in &current.states {
            by_physical
                .entry(state.physical_id)
                .or_default()
                .push(state.id);
        }

        let mut representative: HashMap<StateId, StateId> = HashMap::new();
        let mut merged_any = false;
        for states in by_physical.values() {
            let mut reps: Vec<StateId> = Vec::new();
            for &state in states {
                let row = rows.get(&state).unwrap_or(&empty);
                let found = reps
                    .iter()
                    .copied()
                    .find(|rep| same_distribution(rows.get(rep).unwrap_or(&empty), row));
                match found {
                    Some(rep) => {
                        representative.insert(state, rep);
                        merged_any = true;
                    }
                    None => {
                        reps.push(state);
                        representative.insert(state, state);
                    }
                }
            }
        }
        if !merged_any {
            return current;
        }

        let mut builder = StateNetworkBuilder::new(current.directed);
        for p in &current.physical {
            builder.add_physical(p.id, p.name.clone());
        }
        for s in &current.states {
            if representative[&s.id] == s.id {
                builder.add_state(s.id, s.physical_id, s.name.clone());
            }
        }
        let lumped = |id: StateId| representative.get(&id).copied().unwrap_or(id);
        for link in &current.links {
            builder.add_link(lumped(link.source), lumped(link.target), link.weight);
        }
        current = builder.build();
    }
}

/// Children of a module: either submodules or leaves, never a mix.
#[derive(Debug, Clone, PartialEq)]
pub enum Children<L> {
    Modules(Vec<Module<L>>),
    Leaves(Vec<L>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Module<L> {
    pub children: Children<L>,
}

impl<L: Copy> Module<L> {
    pub fn leaves(members: Vec<L>) -> Self {
        Module {
            children: Children::Leaves(members),
        }
    }

    pub fn nested(modules: Vec<Module<L>>) -> Self {
        Module {
            children: Children::Modules(modules),
        }
    }

    pub fn is_finest(&self) -> bool {
        matches!(self.children, Children::Leaves(_))
    }

    /// All leaves below this module, depth-first.
    pub fn collect_leaves(&self) -> Vec<L> {
        let mut out = Vec::new();
        self.push_leaves(&mut out);
        out
    }

    fn push_leaves(&self, out: &mut Vec<L>) {
        match &self.children {
            Children::Leaves(leaves) => out.extend_from_slice(leaves),
            Children::Modules(modules) => modules.iter().for_each(|m| m.push_leaves(out)),
        }
    }

    fn map_leaves<M: Copy>(&self, f: &impl Fn(L) -> M) -> Module<M> {
        Module {
            children: match &self.children {
                Children::Leaves(leaves) => {
                    Children::Leaves(leaves.iter().map(|&l| f(l)).collect())
                }
                Children::Modules(modules) => {
                    Children::Modules(modules.iter().map(|m| m.map_leaves(f)).collect())
                }
            },
        }
    }

    fn max_leaf_depth(&self) -> usize {
        match &self.children {
            Children::Leaves(_) => 2,
            Children::Modules(modules) => {
                1 + modules
                    .iter()
                    .map(Module::max_leaf_depth)
                    .max()
                    .unwrap_or(1)
            }
        }
    }

    fn min_leaf_depth(&self) -> usize {
        match &self.children {
            Children::Leaves(_) => 2,
            Children::Modules(modules) => {
                1 + modules
                    .iter()
                    .map(Module::min_leaf_depth)
                    .min()
                    .unwrap_or(1)
            }
        }
    }

    fn walk(&self, path: &mut Vec<usize>, visit: &mut impl FnMut(&[usize], &Module<L>)) {
        visit(path, self);
        if let Children::Modules(modules) = &self.children {
            for (i, m) in modules.iter().enumerate() {
                path.push(i + 1);
                m.walk(path, visit);
                path.pop();
            }
        }
    }
}

/// A rooted module tree. The root itself is not a module, so leaves sit at
/// depth two or deeper; modules are addressed by 1-based sibling ordinals.
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy<L> {
    pub modules: Vec<Module<L>>,
}

/// Clustering tree over state ids.
pub type MultilevelMap = Hierarchy<StateId>;

impl<L: Copy> Hierarchy<L> {
    pub fn new(modules: Vec<Module<L>>) -> Self {
        Hierarchy { modules }
    }

    /// Two-level map with one finest module per group.
    pub fn two_level(groups: Vec<Vec<L>>) -> Self {
        Hierarchy {
            modules: groups.into_iter().map(Module::leaves).collect(),
        }
    }

    /// Every leaf in one module.
    pub fn one_module(leaves: Vec<L>) -> Self {
        Hierarchy::two_level(vec![leaves])
    }

    pub fn leaves(&self) -> Vec<L> {
        let mut out = Vec::new();
        for m in &self.modules {
            m.push_leaves(&mut out);
        }
        out
    }

    pub fn num_top_modules(&self) -> usize {
        self.modules.len()
    }

    pub fn is_two_level(&self) -> bool {
        self.modules.iter().all(Module::is_finest)
    }

    /// Deepest leaf depth; two for a two-level map.
    pub fn max_depth(&self) -> usize {
        self.modules
            .iter()
            .map(Module::max_leaf_depth)
            .max()
            .unwrap_or(0)
    }

    pub fn min_depth(&self) -> usize {
        self.modules
            .iter()
            .map(Module::min_leaf_depth)
            .min()
            .unwrap_or(0)
    }

    pub fn map_leaves<M: Copy>(&self, f: impl Fn(L) -> M) -> Hierarchy<M> {
        Hierarchy {
            modules: self.modules.iter().map(|m| m.map_leaves(&f)).collect(),
        }
    }

    /// Visits every module with its path from the root.
    pub fn walk(&self, mut visit: impl FnMut(&[usize], &Module<L>)) {
        let mut path = Vec::new();
        for (i, m) in self.modules.iter().enumerate() {
            path.push(i + 1);
            m.walk(&mut path, &mut visit);
            path.pop();
        }
    }

    /// Each leaf with the path of the finest module holding it.
    pub fn leaf_paths(&self) -> Vec<(Vec<usize>, L)> {
        let mut out = Vec::new();
        self.walk(|path, module| {
            if let Children::Leaves(leaves) = &module.children {
                out.extend(leaves.iter().map(|&l| (path.to_vec(), l)));
            }
        });
        out
    }

    /// Finest modules as leaf groups, in tree order.
    pub fn finest_modules(&self) -> Vec<Vec<L>> {
        let mut out = Vec::new();
        self.walk(|_, module| {
            if let Children::Leaves(leaves) = &module.children {
                out.push(leaves.clone());
            }
        });
        out
    }

    /// Leaves grouped by top module, nesting flattened.
    pub fn top_groups(&self) -> Vec<Vec<L>> {
        self.modules.iter().map(Module::collect_leaves).collect()
    }

    /// Keeps only the top modules, each holding its leaves directly.
    pub fn flatten_to_top(&self) -> Self {
        Hierarchy::two_level(self.top_groups())
    }

    fn has_empty_module(&self) -> bool {
        let mut empty = self.modules.is_empty();
        self.walk(|_, module| {
            empty |= match &module.children {
                Children::Leaves(l) => l.is_empty(),
                Children::Modules(m) => m.is_empty(),
            }
        });
        empty
    }
}

impl Hierarchy<usize> {
    /// Two-level map from a node-to-module assignment; modules are ordered
    /// by first appearance.
    pub fn from_assignment(assignment: &[usize]) -> Self {
        let mut order: HashMap<usize, usize> = HashMap::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (node, &module) in assignment.iter().enumerate() {
            let slot = *order.entry(module).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[slot].push(node);
        }
        Hierarchy::two_level(groups)
    }

    /// Node-to-top-module assignment for `num_nodes` leaves.
    pub fn top_assignment(&self, num_nodes: usize) -> Vec<usize> {
        let mut assignment = vec![usize::MAX; num_nodes];
        for (i, group) in self.top_groups().into_iter().enumerate() {
            for leaf in group {
                assignment[leaf] = i;
            }
        }
        assignment
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("state {0} appears in no module")]
    MissingState(StateId),
    #[error("state {0} appears more than once")]
    RepeatedState(StateId),
    #[error("leaf {0} is not a state of the network")]
    UnknownState(StateId),
    #[error("map contains an empty module")]
    EmptyModule,
    #[error("map is not two-level")]
    NotTwoLevel,
}

/// Checks that every state appears in exactly one leaf and no module is empty.
pub fn check_coverage(map: &MultilevelMap, network: &StateNetwork) -> Result<(), MapError> {
    if map.has_empty_module() {
        return Err(MapError::EmptyModule);
    }
    let mut seen = HashSet::new();
    for leaf in map.leaves() {
        if network.state(leaf).is_none() {
            return Err(MapError::UnknownState(leaf));
        }
        if !seen.insert(leaf) {
            return Err(MapError::RepeatedState(leaf));
        }
    }
    if let Some(missing) = network.state_nodes().iter().find(|s| !seen.contains(&s.id)) {
        return Err(MapError::MissingState(missing.id));
    }
    Ok(())
}

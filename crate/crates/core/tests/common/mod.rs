#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};

use flowmap::flow::{expand_multilayer, stationary_visit_rates, FlowField, RelaxParameters};
use flowmap::io::{parse_memory, parse_multilayer};
use flowmap::network::{Children, Hierarchy, Module, MultilevelMap, StateId, StateNetwork};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FIG3A: &str = include_str!("../../data/fig3a.net");
pub const FIG3B: &str = include_str!("../../data/fig3b.net");
pub const FIG3C: &str = include_str!("../../data/fig3c.net");
pub const FIG3B_SPARSE: &str = include_str!("../../data/fig3b_sparse.net");
pub const EXPECTED_TREE: &str = include_str!("../../data/fig3_expected.tree");

pub const NAMES: [&str; 5] = ["i", "j", "k", "l", "m"];

/// The six-state sparse network with relax rate `r`: states 1 and 4 in
/// physical node i keep `1 - r/2` of their flow in their own layer.
pub fn fig3c(r: f64) -> StateNetwork {
    let mut b = StateNetwork::builder(true);
    for (i, name) in NAMES.iter().enumerate() {
        b.add_physical(i as u32 + 1, Some(name.to_string()));
    }
    for (id, phys) in [(1, 1), (2, 2), (3, 3), (4, 1), (5, 4), (6, 5)] {
        b.add_state(id, phys, None);
    }
    let stay = 1.0 - r / 2.0;
    let leave = r / 2.0;
    for (s, t, w) in [
        (1, 2, stay),
        (1, 3, stay),
        (1, 5, leave),
        (1, 6, leave),
        (2, 1, 1.0),
        (2, 3, 1.0),
        (3, 1, 1.0),
        (3, 2, 1.0),
        (4, 5, stay),
        (4, 6, stay),
        (4, 2, leave),
        (4, 3, leave),
        (5, 4, 1.0),
        (5, 6, 1.0),
        (6, 4, 1.0),
        (6, 5, 1.0),
    ] {
        b.add_link(s, t, w);
    }
    b.build()
}

/// Two-module map of [`fig3c`] (and of the sparse listing).
pub fn fig3c_two_modules() -> MultilevelMap {
    Hierarchy::two_level(vec![vec![1, 2, 3], vec![4, 5, 6]])
}

pub fn all_states(network: &StateNetwork) -> Vec<StateId> {
    network.state_nodes().iter().map(|s| s.id).collect()
}

pub fn one_module(network: &StateNetwork) -> MultilevelMap {
    Hierarchy::one_module(all_states(network))
}

/// Trigram text of the memory network with relax rate `r`.
pub fn fig3b_text(r: f64) -> String {
    let stay = 1.0 - r / 2.0;
    let leave = r / 2.0;
    FIG3B
        .lines()
        .map(|line| {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() == 4 && !line.starts_with('#') {
                let w = match fields[3] {
                    "0.8" => stay.to_string(),
                    "0.2" => leave.to_string(),
                    other => other.to_string(),
                };
                format!("{} {} {} {}", fields[0], fields[1], fields[2], w)
            } else {
                line.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// State ids of the memory network by `(from, through)` in first-mention
/// order, recomputed from the trigram list.
pub fn fig3b_state_keys() -> HashMap<(u32, u32), StateId> {
    let mut keys = HashMap::new();
    for line in FIG3B.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 || line.starts_with('#') {
            continue;
        }
        let p: Vec<u32> = f[..3].iter().map(|x| x.parse().unwrap()).collect();
        for key in [(p[0], p[1]), (p[1], p[2])] {
            let next = keys.len() as StateId + 1;
            keys.entry(key).or_insert(next);
        }
    }
    keys
}

pub fn fig3b(r: f64) -> StateNetwork {
    parse_memory(fig3b_text(r).as_bytes()).unwrap()
}

/// The physical clustering {i, j, k} / {i, l, m} on the memory network:
/// states in i go with the side they came from.
pub fn fig3b_two_modules() -> MultilevelMap {
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut keys: Vec<_> = fig3b_state_keys().into_iter().collect();
    keys.sort_by_key(|&(_, id)| id);
    for ((from, through), id) in keys {
        let side = if through == 1 { from } else { through };
        if side == 2 || side == 3 {
            a.push(id);
        } else {
            b.push(id);
        }
    }
    Hierarchy::two_level(vec![a, b])
}

/// Multilayer listing expanded with relax rate `r`.
pub fn fig3a(r: f64) -> StateNetwork {
    expand_multilayer(&parse_multilayer(FIG3A.as_bytes()).unwrap(), r).unwrap()
}

/// Layer 2 (states 4..6) holds i, j, k; layer 1 holds i, l, m.
pub fn fig3a_two_modules() -> MultilevelMap {
    Hierarchy::two_level(vec![vec![4, 5, 6], vec![1, 2, 3]])
}

pub fn flow_of(network: &StateNetwork) -> FlowField {
    stationary_visit_rates(network, RelaxParameters::default()).unwrap()
}

pub fn flow_with_teleportation(network: &StateNetwork, tau: f64) -> FlowField {
    stationary_visit_rates(network, RelaxParameters::new(0.25, tau).unwrap()).unwrap()
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

/// Entropy-style codebook length for the given code word rates.
fn codebook(rates: &[f64]) -> f64 {
    let total: f64 = rates.iter().sum();
    plogp(total) - rates.iter().map(|&r| plogp(r)).sum::<f64>()
}

/// Direct recursive evaluation of the map equation from link flows and
/// visit rates, sharing code words between states of one physical node
/// inside finest modules.
pub fn oracle_codelength(network: &StateNetwork, flow: &FlowField, map: &MultilevelMap) -> f64 {
    let ids = flow.state_ids();
    let links: Vec<(StateId, StateId, f64)> = flow
        .links()
        .iter()
        .map(|l| (ids[l.source], ids[l.target], l.flow))
        .collect();
    let crossing = |inside: &HashSet<StateId>| {
        let mut exit = 0.0;
        let mut enter = 0.0;
        for &(s, t, f) in &links {
            match (inside.contains(&s), inside.contains(&t)) {
                (true, false) => exit += f,
                (false, true) => enter += f,
                _ => {}
            }
        }
        (exit, enter)
    };
    fn members(module: &Module<StateId>) -> HashSet<StateId> {
        module.collect_leaves().into_iter().collect()
    }
    fn eval(
        module: &Module<StateId>,
        network: &StateNetwork,
        flow: &FlowField,
        crossing: &dyn Fn(&HashSet<StateId>) -> (f64, f64),
    ) -> f64 {
        let (exit, _) = crossing(&members(module));
        match &module.children {
            Children::Leaves(leaves) => {
                let mut physical: BTreeMap<u32, f64> = BTreeMap::new();
                for &s in leaves {
                    *physical
                        .entry(network.state(s).unwrap().physical_id)
                        .or_insert(0.0) += flow.visit_rate(s).unwrap();
                }
                let mut rates: Vec<f64> = physical.into_values().collect();
                rates.push(exit);
                codebook(&rates)
            }
            Children::Modules(children) => {
                let mut rates: Vec<f64> =
                    children.iter().map(|c| crossing(&members(c)).1).collect();
                rates.push(exit);
                codebook(&rates)
                    + children
                        .iter()
                        .map(|c| eval(c, network, flow, crossing))
                        .sum::<f64>()
            }
        }
    }
    let top: Vec<f64> = map
        .modules
        .iter()
        .map(|m| crossing(&members(m)).1)
        .collect();
    codebook(&top)
        + map
            .modules
            .iter()
            .map(|m| eval(m, network, flow, &crossing))
            .sum::<f64>()
}

/// All set partitions of `0..n` as restricted growth strings.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = vec![0; n];
    fn extend(pos: usize, max: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos == current.len() {
            out.push(current.clone());
            return;
        }
        for label in 0..=max + 1 {
            current[pos] = label;
            extend(pos + 1, max.max(label), current, out);
        }
    }
    if n == 0 {
        return vec![Vec::new()];
    }
    extend(1, 0, &mut current, &mut out);
    out
}

pub fn groups_of<T: Copy>(items: &[T], labels: &[usize]) -> Vec<Vec<T>> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); k];
    for (&item, &l) in items.iter().zip(labels) {
        groups[l].push(item);
    }
    groups
}

/// Shortest two-level code length over every partition of the states.
pub fn exhaustive_two_level(network: &StateNetwork, flow: &FlowField) -> (f64, MultilevelMap) {
    let states = all_states(network);
    let mut best = (f64::INFINITY, one_module(network));
    for labels in set_partitions(states.len()) {
        let map = Hierarchy::two_level(groups_of(&states, &labels));
        let l = oracle_codelength(network, flow, &map);
        if l < best.0 {
            best = (l, map);
        }
    }
    best
}

/// Top groups as sorted sets, for order-free comparison.
pub fn canonical_groups(map: &MultilevelMap) -> Vec<Vec<StateId>> {
    let mut groups: Vec<Vec<StateId>> = map
        .top_groups()
        .into_iter()
        .map(|mut g| {
            g.sort_unstable();
            g
        })
        .collect();
    groups.sort();
    groups
}

/// Random directed network on at most 8 states. Odd seeds give first-order
/// networks, even seeds give several states per physical node.
pub fn random_small_network(seed: u64) -> StateNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..=8usize);
    let first_order = seed % 2 == 1;
    let num_physical = if first_order {
        n
    } else {
        rng.gen_range(n.div_ceil(2)..n)
    };
    let mut b = StateNetwork::builder(true);
    for p in 1..=num_physical {
        b.add_physical(p as u32, None);
    }
    for s in 1..=n {
        let phys = if s <= num_physical {
            s
        } else {
            rng.gen_range(1..=num_physical)
        };
        b.add_state(s as u32, phys as u32, None);
    }
    for s in 1..=n {
        let mut has_link = false;
        for t in 1..=n {
            if s != t && rng.gen_bool(0.4) {
                b.add_link(s as u32, t as u32, rng.gen_range(1..=5) as f64);
                has_link = true;
            }
        }
        if !has_link {
            let t = s % n + 1;
            b.add_link(s as u32, t as u32, 1.0);
        }
    }
    b.build()
}

/// Random directed state network with `n` states spread over `n / 2`
/// physical nodes.
pub fn random_state_network(seed: u64, n: usize) -> StateNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_physical = (n / 2).max(1);
    let mut b = StateNetwork::builder(true);
    for p in 1..=num_physical {
        b.add_physical(p as u32, None);
    }
    for s in 1..=n {
        b.add_state(s as u32, rng.gen_range(1..=num_physical) as u32, None);
    }
    for s in 1..=n {
        b.add_link(s as u32, (s % n + 1) as u32, 1.0);
        for _ in 0..3 {
            let t = rng.gen_range(1..=n);
            if t != s {
                b.add_link(s as u32, t as u32, rng.gen_range(0.1..2.0));
            }
        }
    }
    b.build()
}

/// Undirected network of `cliques` complete graphs on `size` nodes.
/// `bridges` lists `(clique, clique, weight)` links between the first
/// node of one and the last node of the other.
pub fn clique_network(
    cliques: usize,
    size: usize,
    bridges: &[(usize, usize, f64)],
) -> StateNetwork {
    let mut b = StateNetwork::builder(false);
    let id = |c: usize, k: usize| (c * size + k + 1) as u32;
    for c in 0..cliques {
        for k in 0..size {
            b.add_physical(id(c, k), None);
            b.add_state(id(c, k), id(c, k), None);
        }
        for x in 0..size {
            for y in x + 1..size {
                b.add_link(id(c, x), id(c, y), 1.0);
            }
        }
    }
    for &(a, c, w) in bridges {
        b.add_link(id(a, 0), id(c, size - 1), w);
    }
    b.build()
}

/// 16 four-cliques in 4 groups of 4: cliques in a group form a ring of
/// bridges, and groups form a ring of weaker bridges.
pub fn hierarchical_benchmark() -> StateNetwork {
    let mut bridges = Vec::new();
    for g in 0..4 {
        for k in 0..4 {
            let a = g * 4 + k;
            let c = g * 4 + (k + 1) % 4;
            bridges.push((a, c, 0.5));
            let across = g * 4 + (k + 2) % 4;
            if k < 2 {
                bridges.push((a, across, 0.5));
            }
        }
        bridges.push((g * 4, ((g + 1) % 4) * 4 + 2, 0.05));
    }
    clique_network(16, 4, &bridges)
}

/// The 16-clique partition of [`hierarchical_benchmark`].
pub fn clique_map(cliques: usize, size: usize) -> MultilevelMap {
    Hierarchy::two_level(
        (0..cliques)
            .map(|c| (0..size).map(|k| (c * size + k + 1) as u32).collect())
            .collect(),
    )
}

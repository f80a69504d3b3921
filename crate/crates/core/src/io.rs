//! Readers for the link-list, multilayer, memory (trigram) and sparse state
//! network formats, and writers for the tree output and the sparse format.
//!
//! All formats are line oriented. Lines starting with `#` and blank lines are
//! ignored, section headers start with `*` and are matched case-insensitively.

use std::collections::{BTreeSet, HashMap};
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::metrics::clustering_metrics;
use crate::network::{Children, Module, PhysicalId, StateId, StateNetwork, StateNetworkBuilder};
use crate::search::ClusteringResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InputFormat {
    LinkList,
    Multilayer,
    Memory,
    Sparse,
}

impl FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "link-list" | "linklist" | "pajek" => Ok(InputFormat::LinkList),
            "multilayer" => Ok(InputFormat::Multilayer),
            "memory" | "3gram" => Ok(InputFormat::Memory),
            "sparse" | "states" => Ok(InputFormat::Sparse),
            other => Err(format!("unknown input format '{other}'")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unknown section header '{header}'")]
    UnknownSection { line: usize, header: String },
    #[error("line {line}: undeclared state {id}")]
    UndeclaredState { line: usize, id: StateId },
    #[error("line {line}: undeclared physical node {id}")]
    UndeclaredPhysical { line: usize, id: PhysicalId },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ParseError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ParseError::Malformed { line, .. }
            | ParseError::UnknownSection { line, .. }
            | ParseError::UndeclaredState { line, .. }
            | ParseError::UndeclaredPhysical { line, .. } => Some(*line),
            ParseError::Io(_) => None,
        }
    }
}

fn malformed(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::Malformed {
        line,
        message: message.into(),
    }
}

enum Line<'a> {
    Section(String),
    Data(&'a str),
}

/// Yields numbered section headers and data lines, skipping comments.
fn read_lines(reader: impl BufRead) -> Result<Vec<(usize, String)>, ParseError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push((i + 1, trimmed.to_string()));
    }
    Ok(out)
}

fn classify(text: &str) -> Line<'_> {
    if let Some(rest) = text.strip_prefix('*') {
        let header = rest.split_whitespace().next().unwrap_or("");
        Line::Section(header.to_ascii_lowercase())
    } else {
        Line::Data(text)
    }
}

fn parse_field<T: FromStr>(line: usize, token: Option<&str>, what: &str) -> Result<T, ParseError> {
    let token = token.ok_or_else(|| malformed(line, format!("missing {what}")))?;
    token
        .parse()
        .map_err(|_| malformed(line, format!("invalid {what} '{token}'")))
}

fn parse_weight(line: usize, token: Option<&str>) -> Result<f64, ParseError> {
    let weight: f64 = match token {
        Some(_) => parse_field(line, token, "weight")?,
        None => 1.0,
    };
    if !weight.is_finite() || weight < 0.0 {
        return Err(malformed(
            line,
            format!("weight must be nonnegative, got {weight}"),
        ));
    }
    Ok(weight)
}

fn expect_end<'a>(
    line: usize,
    mut tokens: impl Iterator<Item = &'a str>,
) -> Result<(), ParseError> {
    match tokens.next() {
        Some(extra) => Err(malformed(line, format!("unexpected field '{extra}'"))),
        None => Ok(()),
    }
}

/// Splits `id rest` and reads an optional, possibly quoted, name from `rest`.
fn parse_named(
    line: usize,
    text: &str,
    ids: usize,
) -> Result<(Vec<u32>, Option<String>), ParseError> {
    let mut rest = text;
    let mut parsed = Vec::with_capacity(ids);
    for k in 0..ids {
        let trimmed = rest.trim_start();
        let end = trimmed.find(char::is_whitespace).unwrap_or(trimmed.len());
        let what = if k == 0 { "id" } else { "physical id" };
        parsed.push(parse_field(
            line,
            Some(&trimmed[..end]).filter(|t| !t.is_empty()),
            what,
        )?);
        rest = &trimmed[end..];
    }
    let rest = rest.trim();
    let name = if let Some(quoted) = rest.strip_prefix('"') {
        let close = quoted
            .find('"')
            .ok_or_else(|| malformed(line, "unterminated quoted name"))?;
        Some(quoted[..close].to_string())
    } else {
        rest.split_whitespace().next().map(str::to_string)
    };
    Ok((parsed, name))
}

struct Sections<'a> {
    allowed: &'a [&'a str],
    current: Option<String>,
    seen_other: bool,
}

impl<'a> Sections<'a> {
    fn new(allowed: &'a [&'a str]) -> Self {
        Sections {
            allowed,
            current: None,
            seen_other: false,
        }
    }

    fn enter(&mut self, line: usize, header: String) -> Result<(), ParseError> {
        if !self.allowed.contains(&header.as_str()) {
            return Err(ParseError::UnknownSection {
                line,
                header: format!("*{header}"),
            });
        }
        if header == "vertices" && self.seen_other {
            return Err(malformed(line, "*Vertices must precede the other sections"));
        }
        if header != "vertices" {
            self.seen_other = true;
        }
        self.current = Some(header);
        Ok(())
    }
}

fn vertex_line(line: usize, text: &str) -> Result<(PhysicalId, Option<String>), ParseError> {
    let (ids, name) = parse_named(line, text, 1)?;
    Ok((ids[0], name))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntraLink {
    pub layer: u32,
    pub source: PhysicalId,
    pub target: PhysicalId,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterLink {
    pub from_layer: u32,
    pub physical: PhysicalId,
    pub to_layer: u32,
    pub weight: f64,
}

/// Sections of a multilayer network file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MultilayerNetworkFile {
    pub vertices: Vec<(PhysicalId, Option<String>)>,
    pub intra: Vec<IntraLink>,
    pub inter: Vec<InterLink>,
}

pub fn parse_multilayer(reader: impl BufRead) -> Result<MultilayerNetworkFile, ParseError> {
    let mut file = MultilayerNetworkFile::default();
    let mut sections = Sections::new(&["vertices", "intra", "inter"]);
    for (line, text) in read_lines(reader)? {
        match classify(&text) {
            Line::Section(header) => sections.enter(line, header)?,
            Line::Data(data) => match sections.current.as_deref() {
                Some("vertices") => file.vertices.push(vertex_line(line, data)?),
                Some("intra") => {
                    let mut t = data.split_whitespace();
                    let layer = parse_field(line, t.next(), "layer id")?;
                    let source = parse_field(line, t.next(), "physical id")?;
                    let target = parse_field(line, t.next(), "physical id")?;
                    let weight = parse_weight(
                        line,
                        Some(t.next().ok_or_else(|| malformed(line, "missing weight"))?),
                    )?;
                    expect_end(line, t)?;
                    if weight > 0.0 {
                        file.intra.push(IntraLink {
                            layer,
                            source,
                            target,
                            weight,
                        });
                    }
                }
                Some("inter") => {
                    let mut t = data.split_whitespace();
                    let from_layer = parse_field(line, t.next(), "layer id")?;
                    let physical = parse_field(line, t.next(), "physical id")?;
                    let to_layer = parse_field(line, t.next(), "layer id")?;
                    let weight = parse_weight(
                        line,
                        Some(t.next().ok_or_else(|| malformed(line, "missing weight"))?),
                    )?;
                    expect_end(line, t)?;
                    if weight > 0.0 {
                        file.inter.push(InterLink {
                            from_layer,
                            physical,
                            to_layer,
                            weight,
                        });
                    }
                }
                _ => return Err(malformed(line, "data line outside of a section")),
            },
        }
    }
    Ok(file)
}

/// Reads a trigram file. Each line `from through to weight` becomes a link
/// from state `(from, through)` in physical node `through` to state
/// `(through, to)` in physical node `to`. State ids follow first mention.
pub fn parse_memory(reader: impl BufRead) -> Result<StateNetwork, ParseError> {
    let mut builder = StateNetworkBuilder::new(true);
    let mut states: HashMap<(PhysicalId, PhysicalId), StateId> = HashMap::new();
    let mut physical_seen = BTreeSet::new();
    let mut sections = Sections::new(&["vertices", "3grams", "memorynodes"]);

    let mut state_for = |builder: &mut StateNetworkBuilder, key: (PhysicalId, PhysicalId)| {
        let next = states.len() as StateId + 1;
        *states.entry(key).or_insert_with(|| {
            builder.add_state(next, key.1, None);
            next
        })
    };

    for (line, text) in read_lines(reader)? {
        match classify(&text) {
            Line::Section(header) => sections.enter(line, header)?,
            Line::Data(data) => match sections.current.as_deref() {
                Some("vertices") => {
                    let (id, name) = vertex_line(line, data)?;
                    if physical_seen.insert(id) {
                        builder.add_physical(id, name);
                    }
                }
                Some(_) => {
                    let mut t = data.split_whitespace();
                    let from: PhysicalId = parse_field(line, t.next(), "physical id")?;
                    let through: PhysicalId = parse_field(line, t.next(), "physical id")?;
                    let to: PhysicalId = parse_field(line, t.next(), "physical id")?;
                    let weight = parse_weight(line, t.next())?;
                    expect_end(line, t)?;
                    for p in [from, through, to] {
                        if physical_seen.insert(p) {
                            builder.add_physical(p, None);
                        }
                    }
                    let source = state_for(&mut builder, (from, through));
                    let target = state_for(&mut builder, (through, to));
                    builder.add_link(source, target, weight);
                }
                None => return Err(malformed(line, "data line outside of a section")),
            },
        }
    }
    Ok(builder.build())
}

/// Reads a sparse state network with `*Vertices`, `*States` and `*Links`.
/// States and links must reference declared ids.
pub fn parse_sparse(reader: impl BufRead) -> Result<StateNetwork, ParseError> {
    let mut builder = StateNetworkBuilder::new(true);
    let mut physical = BTreeSet::new();
    let mut states = BTreeSet::new();
    let mut sections = Sections::new(&["vertices", "states", "links", "arcs"]);
    for (line, text) in read_lines(reader)? {
        match classify(&text) {
            Line::Section(header) => sections.enter(line, header)?,
            Line::Data(data) => match sections.current.as_deref() {
                Some("vertices") => {
                    let (id, name) = vertex_line(line, data)?;
                    if physical.insert(id) {
                        builder.add_physical(id, name);
                    }
                }
                Some("states") => {
                    let (ids, name) = parse_named(line, data, 2)?;
                    if !physical.contains(&ids[1]) {
                        return Err(ParseError::UndeclaredPhysical { line, id: ids[1] });
                    }
                    if !states.insert(ids[0]) {
                        return Err(malformed(line, format!("state {} declared twice", ids[0])));
                    }
                    builder.add_state(ids[0], ids[1], name);
                }
                Some(_) => {
                    let mut t = data.split_whitespace();
                    let source: StateId = parse_field(line, t.next(), "state id")?;
                    let target: StateId = parse_field(line, t.next(), "state id")?;
                    let weight = parse_weight(line, t.next())?;
                    expect_end(line, t)?;
                    for id in [source, target] {
                        if !states.contains(&id) {
                            return Err(ParseError::UndeclaredState { line, id });
                        }
                    }
                    builder.add_link(source, target, weight);
                }
                None => return Err(malformed(line, "data line outside of a section")),
            },
        }
    }
    Ok(builder.build())
}

/// Reads `source target [weight]` lines, optionally after a `*Vertices`
/// block and an `*Edges`, `*Arcs` or `*Links` header. A missing weight means
/// 1.0. Every node gets one state node with the same id.
pub fn parse_link_list(reader: impl BufRead, directed: bool) -> Result<StateNetwork, ParseError> {
    let mut builder = StateNetworkBuilder::new(directed);
    let mut physical = BTreeSet::new();
    let mut sections = Sections::new(&["vertices", "edges", "arcs", "links"]);
    let mut declare = |builder: &mut StateNetworkBuilder, id: PhysicalId, name: Option<String>| {
        if physical.insert(id) {
            builder.add_physical(id, name);
            builder.add_state(id, id, None);
        }
    };
    for (line, text) in read_lines(reader)? {
        match classify(&text) {
            Line::Section(header) => sections.enter(line, header)?,
            Line::Data(data) => {
                if sections.current.as_deref() == Some("vertices") {
                    let (id, name) = vertex_line(line, data)?;
                    declare(&mut builder, id, name);
                    continue;
                }
                let mut t = data.split_whitespace();
                let source = parse_field(line, t.next(), "node id")?;
                let target = parse_field(line, t.next(), "node id")?;
                let weight = parse_weight(line, t.next())?;
                expect_end(line, t)?;
                declare(&mut builder, source, None);
                declare(&mut builder, target, None);
                builder.add_link(source, target, weight);
            }
        }
    }
    Ok(builder.build())
}

fn quoted(name: &str) -> String {
    format!("\"{name}\"")
}

/// Writes the network in the sparse state format.
pub fn write_sparse(mut w: impl Write, network: &StateNetwork) -> io::Result<()> {
    writeln!(w, "*Vertices {}", network.num_physical())?;
    for p in network.physical_nodes() {
        match &p.name {
            Some(name) => writeln!(w, "{} {}", p.id, quoted(name))?,
            None => writeln!(w, "{}", p.id)?,
        }
    }
    writeln!(w, "*States {}", network.num_states())?;
    for s in network.state_nodes() {
        match &s.name {
            Some(name) => writeln!(w, "{} {} {}", s.id, s.physical_id, quoted(name))?,
            None => writeln!(w, "{} {}", s.id, s.physical_id)?,
        }
    }
    writeln!(w, "*Links {}", network.num_links())?;
    for link in network.links() {
        writeln!(w, "{} {} {}", link.source, link.target, link.weight)?;
    }
    Ok(())
}

/// Sort key that treats flows equal up to 1e-10 as ties.
fn flow_key(flow: f64) -> i64 {
    -((flow * 1e10).round() as i64)
}

struct Entry {
    flow: f64,
    physical: PhysicalId,
    state: Option<StateId>,
}

struct Ordered {
    flow: f64,
    key: Vec<(PhysicalId, StateId)>,
    body: OrderedBody,
}

enum OrderedBody {
    Modules(Vec<Ordered>),
    Entries(Vec<Entry>),
}

fn order_module(
    module: &Module<StateId>,
    network: &StateNetwork,
    rate: &impl Fn(StateId) -> f64,
    expanded: bool,
) -> Ordered {
    match &module.children {
        Children::Modules(children) => {
            let mut ordered: Vec<Ordered> = children
                .iter()
                .map(|m| order_module(m, network, rate, expanded))
                .collect();
            sort_ordered(&mut ordered);
            let flow = ordered.iter().map(|o| o.flow).sum();
            let mut key: Vec<_> = ordered.iter().flat_map(|o| o.key.iter().copied()).collect();
            key.sort_unstable();
            Ordered {
                flow,
                key,
                body: OrderedBody::Modules(ordered),
            }
        }
        Children::Leaves(leaves) => {
            let physical_of = |s: StateId| network.state(s).map(|n| n.physical_id).unwrap_or(s);
            let mut key: Vec<_> = leaves.iter().map(|&s| (physical_of(s), s)).collect();
            key.sort_unstable();
            let mut entries: Vec<Entry> = if expanded {
                key.iter()
                    .map(|&(physical, state)| Entry {
                        flow: rate(state),
                        physical,
                        state: Some(state),
                    })
                    .collect()
            } else {
                let mut merged: Vec<Entry> = Vec::new();
                for &(physical, state) in &key {
                    match merged.last_mut() {
                        Some(last) if last.physical == physical => last.flow += rate(state),
                        _ => merged.push(Entry {
                            flow: rate(state),
                            physical,
                            state: None,
                        }),
                    }
                }
                merged
            };
            entries.sort_by_key(|e| (flow_key(e.flow), e.physical, e.state));
            Ordered {
                flow: entries.iter().map(|e| e.flow).sum(),
                key,
                body: OrderedBody::Entries(entries),
            }
        }
    }
}

fn physical_key(key: &[(PhysicalId, StateId)]) -> Vec<PhysicalId> {
    let mut ids: Vec<PhysicalId> = key.iter().map(|&(p, _)| p).collect();
    ids.sort_unstable();
    ids
}

fn sort_ordered(modules: &mut [Ordered]) {
    modules.sort_by(|a, b| {
        flow_key(a.flow)
            .cmp(&flow_key(b.flow))
            .then_with(|| physical_key(&a.key).cmp(&physical_key(&b.key)))
            .then_with(|| a.key.cmp(&b.key))
    });
}

fn write_ordered(
    w: &mut impl Write,
    module: &Ordered,
    path: &mut Vec<usize>,
    network: &StateNetwork,
) -> io::Result<()> {
    match &module.body {
        OrderedBody::Modules(children) => {
            for (i, child) in children.iter().enumerate() {
                path.push(i + 1);
                write_ordered(w, child, path, network)?;
                path.pop();
            }
        }
        OrderedBody::Entries(entries) => {
            for (i, entry) in entries.iter().enumerate() {
                path.push(i + 1);
                let address = path
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(":");
                path.pop();
                let physical_name = network
                    .physical(entry.physical)
                    .map(|p| p.label().into_owned())
                    .unwrap_or_else(|| entry.physical.to_string());
                match entry.state {
                    Some(state) => {
                        let name = network
                            .state(state)
                            .and_then(|s| s.name.clone())
                            .unwrap_or(physical_name);
                        writeln!(
                            w,
                            "{address} {:.6} {} {} {state}",
                            entry.flow,
                            quoted(&name),
                            entry.physical
                        )?;
                    }
                    None => writeln!(
                        w,
                        "{address} {:.6} {} {}",
                        entry.flow,
                        quoted(&physical_name),
                        entry.physical
                    )?,
                }
            }
        }
    }
    Ok(())
}

/// Writes the clustering tree: a comment header with the code length and
/// summary metrics, then one `path flow "name" physicalId` line per physical
/// node in each finest module (or per state node, with a trailing state id,
/// when `expanded`).
///
/// Modules and the entries within a module are ordered by descending flow.
/// Tied modules compare their sorted physical ids, then state ids; tied
/// entries compare physical id, then state id.
pub fn write_tree(
    mut w: impl Write,
    result: &ClusteringResult,
    network: &StateNetwork,
    expanded: bool,
) -> io::Result<()> {
    let metrics = clustering_metrics(result, network);
    writeln!(w, "# flowmap clustering tree")?;
    writeln!(
        w,
        "# codelength {:.6} bits in {} top modules",
        result.codelength,
        result.map.num_top_modules()
    )?;
    writeln!(
        w,
        "# physical nodes {} state nodes {} links {}",
        metrics.num_physical, metrics.num_states, metrics.num_links
    )?;
    writeln!(
        w,
        "# entropy rate {:.6} depth {:.6} module perplexity {:.6} assignment perplexity {:.6}",
        metrics.entropy_rate,
        metrics.weighted_depth,
        metrics.module_perplexity,
        metrics.assignment_perplexity
    )?;
    if expanded {
        writeln!(w, "# path flow name physicalId stateId:")?;
    } else {
        writeln!(w, "# path flow name physicalId:")?;
    }

    let flow = &result.flow;
    let rate = |s: StateId| flow.visit_rate(s).unwrap_or(0.0);
    let mut top: Vec<Ordered> = result
        .map
        .modules
        .iter()
        .map(|m| order_module(m, network, &rate, expanded))
        .collect();
    sort_ordered(&mut top);
    let mut path = Vec::new();
    for (i, module) in top.iter().enumerate() {
        path.push(i + 1);
        write_ordered(&mut w, module, &mut path, network)?;
        path.pop();
    }
    Ok(())
}

pub fn tree_string(result: &ClusteringResult, network: &StateNetwork, expanded: bool) -> String {
    let mut buf = Vec::new();
    write_tree(&mut buf, result, network, expanded).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("tree output is UTF-8")
}

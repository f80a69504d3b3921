//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use thiserror::Error;

use crate::flow::{expand_multilayer, stationary_visit_rates, FlowError, RelaxParameters};
use crate::io::{
    parse_link_list, parse_memory, parse_multilayer, parse_sparse, tree_string, InputFormat,
    ParseError,
};
use crate::metrics::clustering_metrics;
use crate::network::StateNetwork;
use crate::search::{multilevel_partition, ClusteringResult, SearchConfig};

/// Finds hierarchical, overlapping flow modules in first-order, memory,
/// multilayer and sparse memory networks.
#[derive(Debug, Clone, Parser)]
#[command(name = "flowmap", version)]
pub struct RunOptions {
    /// Network file.
    pub input: PathBuf,

    /// Directory for the output files.
    pub output_dir: PathBuf,

    /// One of link-list, multilayer, memory, sparse.
    #[arg(long, default_value = "link-list")]
    pub input_format: InputFormat,

    /// Probability of leaving the current layer in multilayer networks.
    #[arg(long, default_value_t = 0.25)]
    pub multilayer_relax_rate: f64,

    /// Probability of teleporting to a random state at each step.
    #[arg(long, default_value_t = 0.0)]
    pub teleportation_probability: f64,

    /// Treat link-list input as directed.
    #[arg(long)]
    pub directed: bool,

    /// Only search for two-level clusterings.
    #[arg(long)]
    pub two_level: bool,

    /// Also write a tree with one line per state node.
    #[arg(long)]
    pub expanded: bool,

    #[arg(long, default_value_t = 123)]
    pub seed: u64,

    /// Number of independent search trials; the best is kept.
    #[arg(long, default_value_t = 10)]
    pub num_trials: usize,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Parse { path: String, source: ParseError },
    #[error("{path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error("{0}")]
    Flow(FlowError),
    #[error("{path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::InvalidOption(_) => 2,
            CliError::Flow(FlowError::NotConverged { .. }) => 3,
            CliError::Flow(FlowError::InvalidParameter { .. }) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub codelength: f64,
    pub top_modules: usize,
    pub files: Vec<PathBuf>,
}

impl RunSummary {
    pub fn line(&self) -> String {
        format!(
            "codelength: {:.6} bits in {} top modules",
            self.codelength, self.top_modules
        )
    }
}

fn load(options: &RunOptions) -> Result<StateNetwork, CliError> {
    let path = options.input.display().to_string();
    let text = fs::read_to_string(&options.input).map_err(|source| CliError::Read {
        path: path.clone(),
        source,
    })?;
    let reader = text.as_bytes();
    let parsed = match options.input_format {
        InputFormat::LinkList => parse_link_list(reader, options.directed),
        InputFormat::Memory => parse_memory(reader),
        InputFormat::Sparse => parse_sparse(reader),
        InputFormat::Multilayer => {
            let file = parse_multilayer(reader).map_err(|source| CliError::Parse {
                path: path.clone(),
                source,
            })?;
            return expand_multilayer(&file, options.multilayer_relax_rate).map_err(CliError::Flow);
        }
    };
    parsed.map_err(|source| CliError::Parse { path, source })
}

fn check_options(options: &RunOptions) -> Result<(), CliError> {
    for (name, value) in [
        ("--multilayer-relax-rate", options.multilayer_relax_rate),
        (
            "--teleportation-probability",
            options.teleportation_probability,
        ),
    ] {
        if !(0.0..=1.0).contains(&value) {
            return Err(CliError::InvalidOption(format!(
                "{name} must be in [0, 1], got {value}"
            )));
        }
    }
    if options.num_trials == 0 {
        return Err(CliError::InvalidOption(
            "--num-trials must be at least 1".into(),
        ));
    }
    Ok(())
}

/// Clusters the input network. Nothing is written unless every step
/// before output succeeds.
pub fn cluster(options: &RunOptions) -> Result<(StateNetwork, ClusteringResult), CliError> {
    check_options(options)?;
    let network = load(options)?;
    let params = RelaxParameters::new(
        options.multilayer_relax_rate,
        options.teleportation_probability,
    )
    .map_err(CliError::Flow)?;
    let flow = stationary_visit_rates(&network, params).map_err(CliError::Flow)?;
    let config = SearchConfig {
        seed: options.seed,
        num_trials: options.num_trials,
        two_level_only: options.two_level,
        ..SearchConfig::default()
    };
    let result = multilevel_partition(&network, &flow, &config);
    Ok((network, result))
}

fn basename(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "network".to_string())
}

pub fn run(options: &RunOptions) -> Result<RunSummary, CliError> {
    let (network, result) = cluster(options)?;
    let name = basename(&options.input);
    let write_error = |path: &Path| {
        let path = path.display().to_string();
        move |source| CliError::Write { path, source }
    };
    fs::create_dir_all(&options.output_dir).map_err(write_error(&options.output_dir))?;

    let mut outputs = vec![(
        options.output_dir.join(format!("{name}.tree")),
        tree_string(&result, &network, false),
    )];
    if options.expanded {
        outputs.push((
            options.output_dir.join(format!("{name}_expanded.tree")),
            tree_string(&result, &network, true),
        ));
    }
    outputs.push((
        options.output_dir.join(format!("{name}.metrics")),
        format!(
            "codelength = {:.6}\ntop_modules = {}\nseed = {}\ntrial = {}\n{}",
            result.codelength,
            result.map.num_top_modules(),
            result.seed,
            result.trial,
            clustering_metrics(&result, &network).to_key_values()
        ),
    ));
    let mut files = Vec::new();
    for (path, contents) in outputs {
        fs::write(&path, contents).map_err(write_error(&path))?;
        files.push(path);
    }
    Ok(RunSummary {
        codelength: result.codelength,
        top_modules: result.map.num_top_modules(),
        files,
    })
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let options = match RunOptions::try_parse_from(args) {
        Ok(options) => options,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(&options) {
        Ok(summary) => {
            println!("{}", summary.line());
            0
        }
        Err(e) => {
            eprintln!("flowmap: {e}");
            e.exit_code()
        }
    }
}

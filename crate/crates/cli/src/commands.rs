//! Subcommand implementations. Output goes to the supplied writer so
//! tests can capture it; files are written only to explicitly given paths.

use std::fs;
use std::io::Write;
use std::path::Path;

use treekey_core::sim::{run, SimTime};
use treekey_core::topology::{build_mst, build_radio_graph, NodeId, Position};

use crate::report::{emit_metrics_csv, summary};
use crate::scenario::parse_scenario;

/// Command failure, split by exit code: input problems (bad file, parse or
/// validation error, partitioned topology) exit 1, runtime problems
/// (output I/O) exit 2.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Runtime(m) => m,
        }
    }
}

pub struct RunFlags {
    pub trace: Option<std::path::PathBuf>,
    pub metrics: Option<std::path::PathBuf>,
    pub window: SimTime,
    pub seed: Option<u64>,
}

fn load_scenario(path: &Path) -> Result<treekey_core::sim::Scenario, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    parse_scenario(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Run a scenario, write trace/metrics to the requested paths, print a
/// summary.
pub fn cmd_run(path: &Path, flags: &RunFlags, out: &mut dyn Write) -> Result<(), CliError> {
    let mut scenario = load_scenario(path)?;
    if let Some(seed) = flags.seed {
        scenario.seed = seed;
    }
    if flags.window == SimTime::ZERO {
        return Err(CliError::Input("window must be positive".into()));
    }
    let mut report = run(&scenario).map_err(|e| CliError::Input(e.to_string()))?;
    report.metrics.window = flags.window;
    if let Some(trace_path) = &flags.trace {
        fs::write(trace_path, report.trace.to_text()).map_err(|e| {
            CliError::Runtime(format!("cannot write {}: {e}", trace_path.display()))
        })?;
    }
    if let Some(metrics_path) = &flags.metrics {
        fs::write(metrics_path, emit_metrics_csv(&report.metrics)).map_err(|e| {
            CliError::Runtime(format!("cannot write {}: {e}", metrics_path.display()))
        })?;
    }
    write!(out, "{}", summary(&report)).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}

/// Print the spanning tree of the initial topology: edges by minimum
/// endpoint, total weight to six decimals, then per-node neighbor tables.
pub fn cmd_tree(path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let scenario = load_scenario(path)?;
    let nodes: Vec<(NodeId, Position)> =
        scenario.nodes.iter().map(|s| (s.id, s.position)).collect();
    let graph =
        build_radio_graph(&nodes, scenario.range).map_err(|e| CliError::Input(e.to_string()))?;
    let tree = build_mst(&graph).map_err(|e| CliError::Input(e.to_string()))?;
    let mut text = format!(
        "nodes: {}\ntree edges: {}\n",
        tree.node_count(),
        tree.edges().len()
    );
    for &(a, b) in tree.edges() {
        let weight = graph
            .edges()
            .iter()
            .find(|e| (e.a, e.b) == (a, b))
            .map(|e| e.weight)
            .unwrap_or(0.0);
        text.push_str(&format!("  {a} - {b}  {weight:.6}\n"));
    }
    text.push_str(&format!("total weight: {:.6}\n", tree.total_weight()));
    text.push_str("neighbor tables:\n");
    for id in tree.nodes() {
        let neighbors: Vec<String> = tree
            .neighbors(id)
            .unwrap()
            .iter()
            .map(|n| n.to_string())
            .collect();
        text.push_str(&format!("  {id}: {}\n", neighbors.join(" ")));
    }
    write!(out, "{text}").map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}

/// Parse and statically check a scenario, including initial connectivity.
pub fn cmd_validate(path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let scenario = load_scenario(path)?;
    scenario
        .validate()
        .map_err(|e| CliError::Input(e.to_string()))?;
    let nodes: Vec<(NodeId, Position)> =
        scenario.nodes.iter().map(|s| (s.id, s.position)).collect();
    let graph =
        build_radio_graph(&nodes, scenario.range).map_err(|e| CliError::Input(e.to_string()))?;
    build_mst(&graph).map_err(|e| CliError::Input(e.to_string()))?;
    writeln!(
        out,
        "ok: {} nodes, {} script actions",
        scenario.nodes.len(),
        scenario.script.len()
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}

//! `edgemesh`: run simulated clusters, inspect their store dumps and drive
//! task verbs against a node.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use edgemesh::crdt::NodeId;
use edgemesh::runtime::{Millis, NodeEvent};
use edgemesh::sim::scenario::Scenario;
use edgemesh::sim::{Command, MetricsFormat, World, WorldOptions};
use edgemesh::task::{visible_tasks, Scalar, TaskSpec, Targets};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "edgemesh", version, about = "Replicated edge storage and task simulator")]
struct Cli {
    #[command(subcommand)]
    command: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Run a scenario to its horizon and check its assertions.
    Run {
        #[command(flatten)]
        sim: SimArgs,
        /// Directory for metrics and per-node store dumps.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Metrics::Both)]
        metrics: Metrics,
    },
    /// Print values from a store dump written by `run`.
    Inspect {
        dump: PathBuf,
        /// Only this key name.
        #[arg(long)]
        key: Option<String>,
    },
    /// Run a scenario and print the final store of one or all nodes.
    Dump {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        node: Option<usize>,
    },
    /// Issue a task verb at one node, then run to the horizon.
    Task {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        node: usize,
        /// Simulated time at which the verb is issued.
        #[arg(long, default_value_t = 5_000)]
        at: Millis,
        #[command(subcommand)]
        verb: TaskVerb,
    },
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<Millis>,
    /// Check module invariants after every simulated event.
    #[arg(long)]
    assert: bool,
}

#[derive(Subcommand)]
enum TaskVerb {
    Add {
        #[arg(long)]
        name: String,
        #[arg(long)]
        kind: String,
        /// `all` or a comma-separated list of node indices.
        #[arg(long, default_value = "all")]
        targets: String,
        /// `key=value`; repeatable.
        #[arg(long = "param")]
        params: Vec<String>,
    },
    Remove {
        #[arg(long)]
        name: String,
    },
    Start {
        #[arg(long)]
        name: String,
    },
    StartAll,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metrics {
    Csv,
    Jsonl,
    Both,
}

impl From<Metrics> for MetricsFormat {
    fn from(m: Metrics) -> Self {
        match m {
            Metrics::Csv => MetricsFormat::Csv,
            Metrics::Jsonl => MetricsFormat::Jsonl,
            Metrics::Both => MetricsFormat::Both,
        }
    }
}

/// Errors in user input that map to exit status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Verb::Run { sim, out, metrics } => run(&sim, out.as_deref(), metrics.into()),
        Verb::Inspect { dump, key } => inspect(&dump, key.as_deref()),
        Verb::Dump { sim, node } => dump(&sim, node),
        Verb::Task { sim, node, at, verb } => task(&sim, node, at, verb),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn build_world(sim: &SimArgs) -> Result<World> {
    let mut scenario = Scenario::from_path(&sim.scenario).map_err(|e| Usage(e.to_string()))?;
    if let Some(seed) = sim.seed {
        scenario.seed = seed;
    }
    if let Some(h) = sim.horizon {
        scenario.horizon_ms = h;
    }
    let options = WorldOptions {
        check_invariants: sim.assert,
        ..WorldOptions::default()
    };
    World::with_options(scenario, options).map_err(|e| Usage(e.to_string()).into())
}

/// Runs to the horizon; an invariant violation prints its trace and fails.
fn drive(world: &mut World) -> Result<bool> {
    if let Err(e) = world.run() {
        eprintln!("invariant violated at {e}");
        return Ok(false);
    }
    Ok(true)
}

fn run(sim: &SimArgs, out: Option<&Path>, format: MetricsFormat) -> Result<ExitCode> {
    let mut world = build_world(sim)?;
    let finished = drive(&mut world)?;
    if let Some(dir) = out {
        world
            .write_outputs(dir, format)
            .with_context(|| format!("writing outputs to {}", dir.display()))?;
    }
    if !finished {
        return Ok(ExitCode::FAILURE);
    }
    let outcomes = world.evaluate_assertions();
    for o in &outcomes {
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        println!("[{verdict}] {}: {}", o.assertion, o.detail);
    }
    if outcomes.iter().all(|o| o.passed) {
        return Ok(ExitCode::SUCCESS);
    }
    eprintln!("trace tail:");
    for line in world.trace_tail() {
        eprintln!("  {line}");
    }
    Ok(ExitCode::FAILURE)
}

fn inspect(path: &Path, key: Option<&str>) -> Result<ExitCode> {
    let text = std::fs::read_to_string(path).map_err(|e| Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut values: BTreeMap<String, BTreeMap<String, Value>> = BTreeMap::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), n + 1))?;
        let (Some(k), Some(ty), Some(value)) = (v["key"].as_str(), v["type"].as_str(), v.get("value")) else {
            bail!("{}:{}: expected key, type and value fields", path.display(), n + 1);
        };
        values.entry(k.to_string()).or_default().insert(ty.to_string(), value.clone());
    }
    let collapse = |mut by_type: BTreeMap<String, Value>| match by_type.len() {
        1 => by_type.pop_first().expect("one entry").1,
        _ => Value::Object(by_type.into_iter().collect()),
    };
    let shown = match key {
        Some(k) => match values.remove(k) {
            Some(by_type) => collapse(by_type),
            None => {
                eprintln!("error: no key {k:?} in {}", path.display());
                return Ok(ExitCode::FAILURE);
            }
        },
        None => Value::Object(values.into_iter().map(|(k, t)| (k, collapse(t))).collect()),
    };
    println!("{}", serde_json::to_string_pretty(&shown)?);
    Ok(ExitCode::SUCCESS)
}

fn dump(sim: &SimArgs, node: Option<usize>) -> Result<ExitCode> {
    let mut world = build_world(sim)?;
    if let Some(i) = node {
        check_node(&world, i)?;
    }
    if !drive(&mut world)? {
        return Ok(ExitCode::FAILURE);
    }
    for (i, lines) in world.dumps() {
        if node.is_some_and(|n| n != i) {
            continue;
        }
        for line in lines {
            println!("{{\"node\":{i},{}", &line[1..]);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn check_node(world: &World, i: usize) -> Result<()> {
    if i >= world.len() {
        return Err(Usage(format!("node {i} out of range; the scenario has {} nodes", world.len())).into());
    }
    Ok(())
}

fn parse_targets(s: &str) -> Result<Targets> {
    if s == "all" {
        return Ok(Targets::All);
    }
    let ids = s
        .split(',')
        .map(|t| t.trim().parse::<u64>().map(NodeId))
        .collect::<Result<_, _>>()
        .map_err(|_| Usage(format!("targets: expected `all` or node indices, got {s:?}")))?;
    Ok(Targets::Nodes(ids))
}

fn parse_param(p: &str) -> Result<(String, Scalar)> {
    let (k, v) = p
        .split_once('=')
        .ok_or_else(|| Usage(format!("param {p:?}: expected key=value")))?;
    let value = if let Ok(b) = v.parse::<bool>() {
        Scalar::Bool(b)
    } else if let Ok(i) = v.parse::<i64>() {
        Scalar::Int(i)
    } else if let Ok(f) = v.parse::<f64>() {
        Scalar::Float(f)
    } else {
        Scalar::Str(v.to_string())
    };
    Ok((k.to_string(), value))
}

fn task(sim: &SimArgs, node: usize, at: Millis, verb: TaskVerb) -> Result<ExitCode> {
    let mut world = build_world(sim)?;
    check_node(&world, node)?;
    let (cmd, name) = match verb {
        TaskVerb::Add {
            name,
            kind,
            targets,
            params,
        } => {
            let mut spec = TaskSpec::new(name.clone(), parse_targets(&targets)?, kind);
            for p in &params {
                let (k, v) = parse_param(p)?;
                spec = spec.param(&k, v);
            }
            (Command::AddTask { node, spec }, Some(name))
        }
        TaskVerb::Remove { name } => (Command::RemoveTask { node, name: name.clone() }, Some(name)),
        TaskVerb::Start { name } => (Command::StartTask { node, name: name.clone() }, Some(name)),
        TaskVerb::StartAll => (Command::StartAll { node }, None),
    };
    world.schedule(at, cmd);
    if !drive(&mut world)? {
        return Ok(ExitCode::FAILURE);
    }
    for e in world.events().iter().filter(|e| e.at >= at) {
        let (task, what) = match &e.event {
            NodeEvent::TaskExecuted { task } => (task, json!("executed")),
            NodeEvent::TaskSkipped { task, reason } => (task, json!({ "skipped": reason })),
            NodeEvent::MeanFlushed { task, window, mean, .. } => (task, json!({ "window": window, "mean": mean })),
            _ => continue,
        };
        if name.as_ref().is_some_and(|n| n != task) {
            continue;
        }
        println!("{}", json!({ "at": e.at, "node": e.node, "task": task, "event": what }));
    }
    if let Some(n) = world.node(node) {
        let names: Vec<String> = visible_tasks(n.store()).into_keys().collect();
        println!("{}", json!({ "node": node, "visible_tasks": names }));
    }
    Ok(ExitCode::SUCCESS)
}

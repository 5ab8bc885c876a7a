//! `ldtree`: simulations, coalescent trees, distances between finite metric
//! measure spaces, and verification suites.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use ldtree_core::coalescent::{block_count_profile, external_branches, profile_csv, to_newick};
use ldtree_core::lookdown::{detect_jumps, default_tracked, evolve_marked_with, evolve_plain_with};
use ldtree_core::matrix::marked_from_text;
use ldtree_core::mmspace::{ghp_small, gromov_prohorov_small, EXACT_MAX_POINTS};
use ldtree_core::stats::mean_se;
use ldtree_core::suites::{run_suite, SUITES};
use ldtree_core::{
    equilibrium_tree, generate, DistMatrix, DistanceValue, FiniteMMSpace, MarkedState, PlainState, Scope, SeedSpec,
    XiMeasure,
};

use config::{usage, InitialSource, RunConfig, Usage};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "ldtree", version, about = "Lookdown genealogies: simulation, coalescents, distances, verification")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the lookdown distance matrices and write events, states and jump logs.
    Simulate,
    /// Sample equilibrium genealogies: Newick trees, block counts, external branches.
    Coalescent,
    /// Distance between two metric measure spaces given as JSON files.
    Distance {
        first: PathBuf,
        second: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Gp)]
        method: Method,
    },
    /// Run a named verification suite.
    Verify {
        #[arg(long)]
        suite: String,
    },
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Method {
    /// Gromov–Prohorov.
    Gp,
    /// Gromov–Prohorov with marks.
    MarkedGp,
    /// Gromov–Hausdorff–Prohorov.
    Ghp,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Simulate => cmd_simulate(&load_config(&cli)?, &out_dir(&cli)?),
        Command::Coalescent => cmd_coalescent(&load_config(&cli)?, &out_dir(&cli)?),
        Command::Distance { first, second, method } => cmd_distance(first, second, *method, cli.out.as_deref()),
        Command::Verify { suite } => cmd_verify(suite, SeedSpec::new(cli.seed.unwrap_or(0)), cli.out.as_deref()),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| usage("this command needs --config"))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn rows(m: &DistMatrix) -> Vec<Vec<f64>> {
    (0..m.n()).map(|i| m.row(i).to_vec()).collect()
}

#[derive(Serialize)]
struct StateRecord {
    time: f64,
    rho: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    u: Option<Vec<f64>>,
}

enum Initial {
    Plain(PlainState),
    Marked(MarkedState),
}

fn initial_state(cfg: &RunConfig, xi: &XiMeasure, marked: bool, seed: SeedSpec) -> Result<Initial> {
    let n = cfg.n;
    let (r, u) = match &cfg.initial {
        InitialSource::Zero => (DistMatrix::zeros(n), vec![0.0; n]),
        InitialSource::Equilibrium => {
            let tree = equilibrium_tree(xi, n, seed).context("sampling the equilibrium initial state")?;
            if marked {
                (tree.r, tree.u)
            } else {
                (tree.rho, vec![0.0; n])
            }
        }
        InitialSource::File(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
            let parsed = if marked {
                marked_from_text(&text)
            } else {
                DistMatrix::from_text(&text).map(|m| (m, vec![0.0; n]))
            };
            let (r, u) = parsed.map_err(|e| usage(format!("initial state {}: {e}", path.display())))?;
            if r.n() != n {
                return Err(usage(format!("initial state has {} levels, config asks for {n}", r.n())));
            }
            (r, u)
        }
    };
    Ok(if marked {
        Initial::Marked(MarkedState::new(&r, &u, 0.0).map_err(|e| usage(e.to_string()))?)
    } else {
        Initial::Plain(PlainState::new(&r, 0.0))
    })
}

struct SimulationOutput {
    events: String,
    states: String,
    jumps: String,
}

fn simulate_one(cfg: &RunConfig, xi: &XiMeasure, scope: Scope, seed: SeedSpec) -> Result<SimulationOutput> {
    let stream = generate(xi, cfg.n, (0.0, cfg.horizon), scope, seed.derive(1))?;
    let marked = scope == Scope::TouchesLevel;
    let mut times = cfg.times.clone();
    if times.is_empty() {
        times.push(cfg.horizon);
    }
    times.sort_by(f64::total_cmp);
    let mut records = Vec::new();
    match initial_state(cfg, xi, marked, seed.derive(2))? {
        Initial::Plain(mut s) => {
            for &t in &times {
                evolve_plain_with(&mut s, &stream, t, |_, _| {})?;
                records.push(StateRecord { time: t, rho: rows(&s.matrix()), r: None, u: None });
            }
        }
        Initial::Marked(mut s) => {
            for &t in &times {
                evolve_marked_with(&mut s, &stream, t, |_, _| {})?;
                records.push(StateRecord {
                    time: t,
                    rho: rows(&s.compose()),
                    r: Some(rows(&s.r_matrix())),
                    u: Some(s.u_vec()),
                });
            }
        }
    }
    let jumps = detect_jumps(&stream, default_tracked(cfg.n));
    Ok(SimulationOutput {
        events: stream.to_csv(),
        states: serde_json::to_string_pretty(&records)?,
        jumps: serde_json::to_string_pretty(&jumps)?,
    })
}

fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<bool> {
    cfg.validate_simulation()?;
    let xi = cfg.xi()?;
    let scope = cfg.scope(&xi)?;
    let root = SeedSpec::new(cfg.seed);
    let seeds: Vec<SeedSpec> = if cfg.replicates == 1 {
        vec![root]
    } else {
        (0..cfg.replicates as u64).map(|r| root.replicate("simulate", r)).collect()
    };
    let outputs: Vec<SimulationOutput> =
        seeds.par_iter().map(|&s| simulate_one(cfg, &xi, scope, s)).collect::<Result<_>>()?;
    for (r, o) in outputs.iter().enumerate() {
        let dir = if cfg.replicates == 1 { out.to_path_buf() } else { out.join(format!("rep_{r:04}")) };
        fs::create_dir_all(&dir)?;
        write(&dir.join("events.csv"), &o.events)?;
        write(&dir.join("states.json"), &o.states)?;
        write(&dir.join("jumps.json"), &o.jumps)?;
    }
    let run = json!({
        "version": VERSION,
        "command": "simulate",
        "seed": cfg.seed,
        "scope": scope,
        "config": cfg,
    });
    write(&out.join("run.json"), &serde_json::to_string_pretty(&run)?)?;
    Ok(true)
}

fn cmd_coalescent(cfg: &RunConfig, out: &Path) -> Result<bool> {
    cfg.validate_coalescent()?;
    let xi = cfg.xi()?;
    if xi.is_zero() {
        return Err(usage("the zero measure has no coalescent"));
    }
    let root = SeedSpec::new(cfg.seed);
    let trees = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|r| equilibrium_tree(&xi, cfg.n, root.replicate("tree", r)))
        .collect::<ldtree_core::Result<Vec<_>>>()?;
    let mut newick = String::new();
    let mut branches = String::from("replicate,level,u,branchpoint_block\n");
    for (r, tree) in trees.iter().enumerate() {
        newick.push_str(&to_newick(&tree.rho)?);
        newick.push('\n');
        let ext = external_branches(tree);
        for (i, u) in tree.u.iter().enumerate() {
            branches.push_str(&format!("{r},{},{u},{}\n", i + 1, ext.branchpoints.block_index(i) + 1));
        }
    }
    let grid = if cfg.grid.is_empty() { vec![0.1, 0.5, 1.0, 2.0] } else { cfg.grid.clone() };
    let profile = block_count_profile(&xi, &[cfg.n], &grid, cfg.replicates, root.derive(7))?;
    let rho12: Vec<f64> = trees.iter().map(|t| t.rho.get(0, 1)).collect();
    let heights: Vec<f64> = trees.iter().map(|t| t.height()).collect();
    let summary = json!({
        "version": VERSION,
        "command": "coalescent",
        "seed": cfg.seed,
        "n": cfg.n,
        "replicates": cfg.replicates,
        "rho12": mean_se(&rho12),
        "height": mean_se(&heights),
    });
    write(&out.join("trees.nwk"), &newick)?;
    write(&out.join("external_branches.csv"), &branches)?;
    write(&out.join("block_counts.csv"), &profile_csv(&profile))?;
    write(&out.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    Ok(true)
}

fn read_space(path: &Path) -> Result<FiniteMMSpace> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    FiniteMMSpace::from_json(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn cmd_distance(first: &Path, second: &Path, method: Method, out: Option<&Path>) -> Result<bool> {
    let (a, b) = (read_space(first)?, read_space(second)?);
    let value = match method {
        Method::Gp => gromov_prohorov_small(&a, &b, false),
        Method::MarkedGp => gromov_prohorov_small(&a, &b, true),
        Method::Ghp => ghp_small(&a, &b),
    }
    .map_err(|e| usage(e.to_string()))?;
    let size_gated = a.size() > EXACT_MAX_POINTS || b.size() > EXACT_MAX_POINTS;
    let report = match value {
        DistanceValue::Exact(v) => json!({
            "version": VERSION, "method": method, "mode": "exact", "value": v, "lower": v, "upper": v, "warning": false,
        }),
        DistanceValue::Bounds { lower, upper } => json!({
            "version": VERSION, "method": method, "mode": "bounds", "lower": lower, "upper": upper,
            "warning": size_gated,
            "message": format!("exact search is limited to {EXACT_MAX_POINTS} points; reporting bounds"),
        }),
    };
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write(&dir.join("distance.json"), &text)?;
    }
    Ok(true)
}

fn cmd_verify(suite: &str, seed: SeedSpec, out: Option<&Path>) -> Result<bool> {
    if !SUITES.contains(&suite) {
        return Err(usage(format!("unknown suite '{suite}'; known suites: {}", SUITES.join(", "))));
    }
    let report = run_suite(suite, seed)?;
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write(&dir.join(format!("verify_{suite}.json")), &text)?;
    }
    for r in &report.reports {
        eprintln!("{} {}", if r.pass { "PASS" } else { "FAIL" }, r.name);
    }
    Ok(report.pass)
}

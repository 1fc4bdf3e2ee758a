//! Command-line surface of the boundary detection sampler.
//!
//! ```text
//! boundary simulate  --scenario <name> --seed <n> --out <dir> [--mask <file>]
//! boundary fit       --data <csv> --adjacency <txt> --config <txt> --out <dir> [--replicates <k>]
//! boundary summarize --chain <jsonl> --gamma <g> --out <dir> [--data <csv>] [--truth <json>]
//! boundary metrics   --boundary <csv> --truth <json>
//! boundary density   --chain <jsonl> --area <i> --grid-min <x> --grid-max <x> --grid-n <n>
//! ```
//!
//! Failures print `{"error":{"kind":..,"message":..}}` on stderr and exit
//! with 2 for usage errors, 1 otherwise.

pub mod svg;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;
use sha2::{Digest, Sha256};

use boundary_core::distributions::split_seed;
use boundary_core::inference::{
    boundary_graph, check_gamma, default_grid, density_estimate, edge_inclusion, linspace,
    posterior_h, BoundaryGraph, DensityEstimate,
};
use boundary_core::io::{self, ChainFile, TruthFile};
use boundary_core::sampler::{run_chain, ChainConfig, ChainOutput};
use boundary_core::scenarios::{self, ScenarioName};
use boundary_core::{AreaDataset, Error};

#[derive(Debug, Parser)]
#[command(name = "boundary", version, about = "Bayesian boundary detection for areal data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a simulation scenario.
    Simulate {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Region labels (0/1 per area) replacing the default two-region layout.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Run the sampler.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        adjacency: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Independent chains with seeds split from the configured one.
        #[arg(long, default_value_t = 1)]
        replicates: usize,
    },
    /// Posterior summaries of a saved chain.
    Summarize {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        out: PathBuf,
        /// Observations, used for area ids and the density grid.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Scenario truth, used for the lattice geometry of the map.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Confusion metrics of an estimated boundary against the truth.
    Metrics {
        #[arg(long)]
        boundary: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Density estimate of one area on a regular grid, as CSV on stdout.
    Density {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        area: usize,
        #[arg(long = "grid-min", allow_negative_numbers = true)]
        grid_min: f64,
        #[arg(long = "grid-max", allow_negative_numbers = true)]
        grid_max: f64,
        #[arg(long = "grid-n")]
        grid_n: usize,
    },
}

/// A failure with its exit class.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(_) => 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let (kind, message) = match self {
            CliError::Usage(m) => ("usage", m.clone()),
            CliError::Core(e) => (e.kind(), e.to_string()),
        };
        json!({ "error": { "kind": kind, "message": message } })
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parse `args` (program name first), execute, and return the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let err = CliError::Usage(e.to_string().trim().to_string());
            let _ = writeln!(stderr, "{}", err.to_json());
            return err.exit_code();
        }
    };
    match execute(cli.command, stdout, stderr) {
        Ok(()) => 0,
        Err(err) => {
            let _ = writeln!(stderr, "{}", err.to_json());
            err.exit_code()
        }
    }
}

fn execute(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Simulate { scenario, seed, out, mask } => simulate(&scenario, seed, &out, mask.as_deref()),
        Command::Fit { data, adjacency, config, out, replicates } => fit(&data, &adjacency, &config, &out, replicates, stderr),
        Command::Summarize { chain, gamma, out, data, truth } => {
            summarize(&chain, gamma, &out, data.as_deref(), truth.as_deref(), stderr)
        }
        Command::Metrics { boundary, truth } => metrics(&boundary, &truth, stdout),
        Command::Density { chain, area, grid_min, grid_max, grid_n } => {
            density(&chain, area, grid_min, grid_max, grid_n, stdout)
        }
    }
}

fn simulate(name: &str, seed: u64, out: &Path, mask: Option<&Path>) -> CliResult<()> {
    let name: ScenarioName = name.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let scenario = match mask {
        None => scenarios::simulate(name, seed)?,
        Some(path) => {
            if name != ScenarioName::BdMisspec {
                return Err(CliError::Usage("--mask applies to bd-misspec only".into()));
            }
            let mask = io::parse_mask(&fs::read_to_string(path)?)?;
            let mut rng = boundary_core::distributions::RngHandle::new(seed);
            scenarios::generate_bd(&mut rng, &mask)?
        }
    };
    fs::create_dir_all(out)?;
    fs::write(out.join("data.csv"), io::format_dataset(&scenario.data))?;
    fs::write(out.join("adjacency.txt"), io::format_adjacency(&scenario.adjacency))?;
    let truth = TruthFile::from_scenario(&scenario, seed);
    fs::write(out.join("truth.json"), serde_json::to_string_pretty(&truth).map_err(Error::from)? + "\n")?;
    let config = ChainConfig { hyperparams: scenario.hyperparams(), ..ChainConfig::default() };
    fs::write(out.join("config.txt"), io::format_config(&config))?;
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn fit(data: &Path, adjacency: &Path, config: &Path, out: &Path, replicates: usize, stderr: &mut dyn Write) -> CliResult<()> {
    if replicates == 0 {
        return Err(CliError::Usage("--replicates must be at least 1".into()));
    }
    let data_bytes = fs::read(data)?;
    let adj_bytes = fs::read(adjacency)?;
    let cfg_bytes = fs::read(config)?;
    let dataset = io::parse_dataset(&String::from_utf8_lossy(&data_bytes))?;
    let adj = io::parse_adjacency(&String::from_utf8_lossy(&adj_bytes), &dataset.ids())?;
    let cfg = io::parse_config(&String::from_utf8_lossy(&cfg_bytes))?;
    let digests = json!({
        "data": { "path": data.display().to_string(), "sha256": sha256_hex(&data_bytes) },
        "adjacency": { "path": adjacency.display().to_string(), "sha256": sha256_hex(&adj_bytes) },
        "config": { "path": config.display().to_string(), "sha256": sha256_hex(&cfg_bytes) },
    });
    let configs: Vec<(PathBuf, ChainConfig)> = if replicates == 1 {
        vec![(out.to_path_buf(), cfg.clone())]
    } else {
        (0..replicates)
            .map(|r| {
                let seed = split_seed(cfg.seed, r as u64);
                (out.join(format!("replicate_{r}")), ChainConfig { seed, ..cfg.clone() })
            })
            .collect()
    };
    let results: Vec<boundary_core::Result<ChainOutput>> =
        configs.par_iter().map(|(_, c)| run_chain(c, &dataset, &adj)).collect();
    for ((dir, c), result) in configs.iter().zip(results) {
        let output = result?;
        fs::create_dir_all(dir)?;
        let mut chain_bytes = Vec::new();
        io::write_chain(&mut chain_bytes, &output.edge_list, &output.records)?;
        fs::write(dir.join("chain.jsonl"), &chain_bytes)?;
        let manifest = json!({
            "software": { "name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION") },
            "seed": c.seed,
            "config": io::format_config(c),
            "config_fields": c,
            "inputs": digests,
            "outputs": { "chain.jsonl": sha256_hex(&chain_bytes) },
            "n_areas": dataset.n_areas(),
            "n_edges": adj.n_edges(),
            "n_records": output.records.len(),
            "reversible_jump": output.rj.as_ref().map(|s| json!({
                "births_proposed": s.births_proposed,
                "births_accepted": s.births_accepted,
                "deaths_proposed": s.deaths_proposed,
                "deaths_accepted": s.deaths_accepted,
                "deaths_out_of_support": s.deaths_out_of_support,
                "skipped": s.skipped,
                "acceptance_rate": s.acceptance_rate(),
            })),
            "timing": {
                "elapsed_seconds": output.elapsed_seconds,
                "iterations_per_second": output.iterations_per_second(),
                "sweep_block_seconds": output.sweep.seconds,
            },
        });
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).map_err(Error::from)? + "\n")?;
        let _ = writeln!(
            stderr,
            "wrote {} ({} records, {:.1} it/s)",
            dir.join("chain.jsonl").display(),
            output.records.len(),
            output.iterations_per_second()
        );
    }
    Ok(())
}

fn load_chain(path: &Path) -> CliResult<ChainFile> {
    Ok(io::read_chain(BufReader::new(fs::File::open(path)?))?)
}

/// Grid covering every saved atom by four standard deviations.
fn atom_grid(chain: &ChainFile) -> Vec<f64> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in &chain.records {
        for a in &r.atoms {
            let sd = a[1].sqrt();
            lo = lo.min(a[0] - 4.0 * sd);
            hi = hi.max(a[0] + 4.0 * sd);
        }
    }
    linspace(lo, hi, 512).unwrap_or_else(|_| vec![lo - 1.0, lo + 1.0])
}

fn density_csv(est: &DensityEstimate) -> String {
    let mut out = String::from("x,mean,lower95,upper95\n");
    for k in 0..est.grid.len() {
        let _ = writeln!(out, "{},{},{},{}", est.grid[k], est.mean[k], est.lower95[k], est.upper95[k]);
    }
    out
}

fn summarize(chain_path: &Path, gamma: f64, out: &Path, data: Option<&Path>, truth: Option<&Path>, stderr: &mut dyn Write) -> CliResult<()> {
    check_gamma(gamma).map_err(|e| CliError::Usage(e.to_string()))?;
    let chain = load_chain(chain_path)?;
    let n_areas = chain.records[0].tw.len();
    let dataset: Option<AreaDataset> = data.map(io::read_dataset).transpose()?;
    if let Some(d) = &dataset {
        if d.n_areas() != n_areas {
            return Err(CliError::Core(Error::Config(format!(
                "data has {} areas but the chain has {n_areas}",
                d.n_areas()
            ))));
        }
    }
    let truth: Option<TruthFile> = truth.map(io::read_truth).transpose()?;
    let ids: Vec<String> = match (&dataset, &truth) {
        (Some(d), _) => d.ids(),
        (None, Some(t)) if t.area_ids.len() == n_areas => t.area_ids.clone(),
        _ => (0..n_areas).map(|i| i.to_string()).collect(),
    };
    let grid = dataset.as_ref().map_or_else(|| atom_grid(&chain), default_grid);
    fs::create_dir_all(out)?;

    let probs = edge_inclusion(&chain.records, &chain.edges)?;
    let mut csv = String::from("i,j,prob\n");
    for ((i, j), p) in probs.iter() {
        let _ = writeln!(csv, "{i},{j},{p}");
    }
    fs::write(out.join("edge_probs.csv"), csv)?;

    let boundary = boundary_graph(&probs, gamma)?;
    let mut csv = String::from("i,j\n");
    for &(i, j) in &boundary.edges {
        let _ = writeln!(csv, "{i},{j}");
    }
    fs::write(out.join("boundary_edges.csv"), csv)?;

    let mut area_means = Vec::with_capacity(n_areas);
    for (area, id) in ids.iter().enumerate() {
        let est = density_estimate(&chain.records, area, &grid)?;
        fs::write(out.join(format!("density_{}.csv", file_label(id))), density_csv(&est))?;
        area_means.push(posterior_mean_of_area(&chain, area));
    }

    let hp = posterior_h(&chain.records)?;
    let mut csv = String::from("H,prob\n");
    for (h, p) in &hp.pmf {
        let _ = writeln!(csv, "{h},{p}");
    }
    fs::write(out.join("h_posterior.csv"), csv)?;

    match truth.as_ref().and_then(|t| t.geometry).filter(|g| g.n_areas() == n_areas) {
        Some(geometry) => fs::write(out.join("map.svg"), svg::grid_map(geometry, &area_means, &boundary, &ids))?,
        None => {
            let _ = writeln!(stderr, "notice: no grid geometry available, map.svg skipped");
        }
    }
    Ok(())
}

/// Posterior mean of `E[Y_i]`, the value shown on the map.
fn posterior_mean_of_area(chain: &ChainFile, area: usize) -> f64 {
    let n = chain.records.len() as f64;
    chain
        .records
        .iter()
        .map(|r| r.weights(area).iter().zip(&r.atoms).map(|(w, a)| w * a[0]).sum::<f64>())
        .sum::<f64>()
        / n
}

fn file_label(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn metrics(boundary: &Path, truth: &Path, stdout: &mut dyn Write) -> CliResult<()> {
    let estimated = BoundaryGraph::from_edges(io::parse_edge_csv(&fs::read_to_string(boundary)?)?);
    let truth = io::read_truth(truth)?;
    let true_boundary = truth.boundary_edges.clone().ok_or_else(|| {
        CliError::Core(Error::Config(format!("scenario {} defines no true boundary", truth.scenario)))
    })?;
    let m = boundary_core::inference::confusion_metrics(
        &estimated,
        &BoundaryGraph::from_edges(true_boundary),
        &truth.adjacency()?,
    )?;
    let report = json!({ "precision": m.precision, "sensitivity": m.sensitivity, "specificity": m.specificity });
    writeln!(stdout, "{report}")?;
    Ok(())
}

fn density(chain: &Path, area: usize, lo: f64, hi: f64, n: usize, stdout: &mut dyn Write) -> CliResult<()> {
    let grid = linspace(lo, hi, n).map_err(|e| CliError::Usage(e.to_string()))?;
    let chain = load_chain(chain)?;
    let n_areas = chain.records[0].tw.len();
    if area >= n_areas {
        return Err(CliError::Usage(format!("--area {area} out of range for {n_areas} areas")));
    }
    let est = density_estimate(&chain.records, area, &grid)?;
    stdout.write_all(density_csv(&est).as_bytes())?;
    Ok(())
}

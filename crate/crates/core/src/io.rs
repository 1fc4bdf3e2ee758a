//! File formats: observation CSV, adjacency text, flat `key = value` chain
//! configuration, JSON-lines chain records, ground truth JSON and region
//! masks.
//!
//! Values are written with the shortest representation that parses back to
//! the same `f64`, so every writer/reader pair round-trips exactly.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::distributions::ScenarioDist;
use crate::error::{Error, Result};
use crate::model::{Adjacency, Area, AreaDataset, Hyperparams};
use crate::sampler::{ChainConfig, InitGraph, Snapshot};
use crate::scenarios::{GridGeometry, Scenario, ScenarioName};
use crate::within::{EdgeMode, WeightScan};
use crate::between::RjMode;

/// Parse `area_id,value` rows. Areas keep the order of their first row.
pub fn parse_dataset(text: &str) -> Result<AreaDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut order: Vec<Area> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut header_seen = false;
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if !header_seen {
            if row.len() != 2 || &row[0] != "area_id" || &row[1] != "value" {
                return Err(Error::parse(line, "expected the header `area_id,value`"));
            }
            header_seen = true;
            continue;
        }
        if row.len() != 2 {
            return Err(Error::parse(line, format!("expected 2 fields, found {}", row.len())));
        }
        let id = &row[0];
        if id.is_empty() {
            return Err(Error::parse(line, "empty area id"));
        }
        let value: f64 = row[1]
            .parse()
            .map_err(|_| Error::parse(line, format!("value {:?} is not a number", &row[1])))?;
        if !value.is_finite() {
            return Err(Error::parse(line, format!("value {:?} is not finite", &row[1])));
        }
        let k = *index.entry(id.to_string()).or_insert_with(|| {
            order.push(Area { id: id.to_string(), observations: Vec::new() });
            order.len() - 1
        });
        order[k].observations.push(value);
    }
    if !header_seen {
        return Err(Error::parse(1, "missing header `area_id,value`"));
    }
    if order.is_empty() {
        return Err(Error::parse(1, "no observations"));
    }
    AreaDataset::new(order)
}

pub fn read_dataset(path: &std::path::Path) -> Result<AreaDataset> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

pub fn format_dataset(data: &AreaDataset) -> String {
    let mut out = String::from("area_id,value\n");
    for area in data.areas() {
        for y in &area.observations {
            let _ = writeln!(out, "{},{}", area.id, y);
        }
    }
    out
}

/// Parse adjacency lines `i j`. Tokens are 0-based area indices unless a
/// `#ids` directive line precedes them, after which they are area ids.
/// Other lines starting with `#` and blank lines are ignored.
pub fn parse_adjacency(text: &str, ids: &[String]) -> Result<Adjacency> {
    let n = ids.len();
    let lookup: HashMap<&str, usize> = ids.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
    let mut by_id = false;
    let mut pairs = BTreeSet::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let s = raw.trim();
        if s.is_empty() {
            continue;
        }
        if let Some(rest) = s.strip_prefix('#') {
            if rest.trim() == "ids" {
                by_id = true;
            }
            continue;
        }
        let tokens: Vec<&str> = s.split_whitespace().collect();
        if tokens.len() != 2 {
            return Err(Error::parse(line, format!("expected two tokens, found {}", tokens.len())));
        }
        let resolve = |t: &str| -> Result<usize> {
            if by_id {
                lookup.get(t).copied().ok_or_else(|| Error::parse(line, format!("unknown area id {t:?}")))
            } else {
                let i: usize = t.parse().map_err(|_| Error::parse(line, format!("{t:?} is not an area index")))?;
                if i >= n {
                    return Err(Error::parse(line, format!("index {i} out of range for {n} areas")));
                }
                Ok(i)
            }
        };
        let (i, j) = (resolve(tokens[0])?, resolve(tokens[1])?);
        if i == j {
            return Err(Error::parse(line, format!("self-loop at area {}", tokens[0])));
        }
        pairs.insert((i.min(j), i.max(j)));
    }
    Adjacency::new(n, pairs)
}

pub fn read_adjacency(path: &std::path::Path, ids: &[String]) -> Result<Adjacency> {
    parse_adjacency(&std::fs::read_to_string(path)?, ids)
}

pub fn format_adjacency(adjacency: &Adjacency) -> String {
    let mut out = String::new();
    for &(i, j) in adjacency.edges() {
        let _ = writeln!(out, "{i} {j}");
    }
    out
}

/// Keys accepted by [`parse_config`].
pub const CONFIG_KEYS: &[&str] = &[
    "n_iterations",
    "burn_in",
    "thin",
    "seed",
    "rj_enabled",
    "fixed_H",
    "edge_mode",
    "rj_mode",
    "fixed_p",
    "init_graph",
    "pg_normal_approx",
    "rj_steps_per_iter",
    "weight_scan",
    "mu0",
    "lambda",
    "c",
    "d",
    "alpha",
    "beta",
    "a",
    "b",
    "lambda_H",
    "rho",
    "gamma",
    "h_init",
];

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::parse(line, format!("invalid value {v:?} for {key}")))
}

fn parse_enum<T: serde::de::DeserializeOwned>(line: usize, key: &str, v: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(v.to_string()))
        .map_err(|_| Error::parse(line, format!("invalid value {v:?} for {key}")))
}

fn enum_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => unreachable!("unit enum variants serialize to strings"),
    }
}

/// Parse a flat `key = value` chain configuration over the defaults.
///
/// Setting `n_iterations` without `burn_in` puts the burn-in at half the
/// run; setting `fixed_H` without `rj_enabled` switches the reversible
/// jump off.
pub fn parse_config(text: &str) -> Result<ChainConfig> {
    let mut seen: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let s = raw.split('#').next().unwrap_or("").trim();
        if s.is_empty() {
            continue;
        }
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| Error::parse(line, format!("expected `key = value`, found {s:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        if !CONFIG_KEYS.contains(&key) {
            return Err(Error::parse(line, format!("unknown key {key:?}")));
        }
        if seen.insert(key.to_string(), (line, value.to_string())).is_some() {
            return Err(Error::parse(line, format!("duplicate key {key:?}")));
        }
    }
    let mut cfg = ChainConfig::default();
    let h = &mut cfg.hyperparams;
    for (key, (line, v)) in &seen {
        let line = *line;
        let v = v.as_str();
        match key.as_str() {
            "n_iterations" => cfg.n_iterations = parse_value(line, key, v)?,
            "burn_in" => cfg.burn_in = parse_value(line, key, v)?,
            "thin" => cfg.thin = parse_value(line, key, v)?,
            "seed" => cfg.seed = parse_value(line, key, v)?,
            "rj_enabled" => cfg.rj_enabled = parse_value(line, key, v)?,
            "fixed_H" => cfg.fixed_h = Some(parse_value(line, key, v)?),
            "edge_mode" => cfg.edge_mode = parse_enum::<EdgeMode>(line, key, v)?,
            "rj_mode" => cfg.rj_mode = parse_enum::<RjMode>(line, key, v)?,
            "fixed_p" => cfg.fixed_p = Some(parse_value(line, key, v)?),
            "init_graph" => cfg.init_graph = parse_enum::<InitGraph>(line, key, v)?,
            "pg_normal_approx" => cfg.pg_normal_approx = Some(parse_value(line, key, v)?),
            "rj_steps_per_iter" => cfg.rj_steps_per_iter = parse_value(line, key, v)?,
            "weight_scan" => cfg.weight_scan = parse_enum::<WeightScan>(line, key, v)?,
            "mu0" => h.mu0 = parse_value(line, key, v)?,
            "lambda" => h.lambda = parse_value(line, key, v)?,
            "c" => h.c = parse_value(line, key, v)?,
            "d" => h.d = parse_value(line, key, v)?,
            "alpha" => h.alpha = parse_value(line, key, v)?,
            "beta" => h.beta = parse_value(line, key, v)?,
            "a" => h.a = parse_value(line, key, v)?,
            "b" => h.b = parse_value(line, key, v)?,
            "lambda_H" => h.lambda_h = parse_value(line, key, v)?,
            "rho" => h.rho = parse_value(line, key, v)?,
            "gamma" => h.gamma = parse_value(line, key, v)?,
            "h_init" => h.h_init = parse_value(line, key, v)?,
            _ => unreachable!("key checked against CONFIG_KEYS"),
        }
    }
    if seen.contains_key("n_iterations") && !seen.contains_key("burn_in") {
        cfg.burn_in = cfg.n_iterations / 2;
    }
    if seen.contains_key("fixed_H") && !seen.contains_key("rj_enabled") {
        cfg.rj_enabled = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_config(path: &std::path::Path) -> Result<ChainConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

/// Render a configuration that [`parse_config`] reads back unchanged.
pub fn format_config(cfg: &ChainConfig) -> String {
    let h: &Hyperparams = &cfg.hyperparams;
    let mut out = String::new();
    let mut put = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    put("n_iterations", cfg.n_iterations.to_string());
    put("burn_in", cfg.burn_in.to_string());
    put("thin", cfg.thin.to_string());
    put("seed", cfg.seed.to_string());
    put("rj_enabled", cfg.rj_enabled.to_string());
    if let Some(f) = cfg.fixed_h {
        put("fixed_H", f.to_string());
    }
    put("edge_mode", enum_name(&cfg.edge_mode));
    put("rj_mode", enum_name(&cfg.rj_mode));
    if let Some(p) = cfg.fixed_p {
        put("fixed_p", p.to_string());
    }
    put("init_graph", enum_name(&cfg.init_graph));
    if let Some(b) = cfg.pg_normal_approx {
        put("pg_normal_approx", b.to_string());
    }
    put("rj_steps_per_iter", cfg.rj_steps_per_iter.to_string());
    put("weight_scan", enum_name(&cfg.weight_scan));
    put("mu0", h.mu0.to_string());
    put("lambda", h.lambda.to_string());
    put("c", h.c.to_string());
    put("d", h.d.to_string());
    put("alpha", h.alpha.to_string());
    put("beta", h.beta.to_string());
    put("a", h.a.to_string());
    put("b", h.b.to_string());
    put("lambda_H", h.lambda_h.to_string());
    put("rho", h.rho.to_string());
    put("gamma", h.gamma.to_string());
    put("h_init", h.h_init.to_string());
    out
}

/// One line of `chain.jsonl`; edges are `[i, j, bit]` triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ChainLine {
    iter: usize,
    #[serde(rename = "H")]
    h: usize,
    atoms: Vec<[f64; 2]>,
    tw: Vec<Vec<f64>>,
    counts: Vec<Vec<usize>>,
    sigma2: f64,
    p: f64,
    edges: Vec<(usize, usize, u8)>,
}

/// Saved records together with the admissible edge list they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainFile {
    pub edges: Vec<(usize, usize)>,
    pub records: Vec<Snapshot>,
}

pub fn write_chain<W: Write>(mut out: W, edges: &[(usize, usize)], records: &[Snapshot]) -> Result<()> {
    for r in records {
        if r.edges.len() != edges.len() {
            return Err(Error::Domain(format!("record {} does not match the edge list", r.iter)));
        }
        let line = ChainLine {
            iter: r.iter,
            h: r.h,
            atoms: r.atoms.clone(),
            tw: r.tw.clone(),
            counts: r.counts.clone(),
            sigma2: r.sigma2,
            p: r.p,
            edges: edges.iter().zip(&r.edges).map(|(&(i, j), &b)| (i, j, b as u8)).collect(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_chain<R: BufRead>(input: R) -> Result<ChainFile> {
    let mut edges: Option<Vec<(usize, usize)>> = None;
    let mut records = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line_no = k + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ChainLine =
            serde_json::from_str(&line).map_err(|e| Error::parse(line_no, format!("invalid chain record: {e}")))?;
        let these: Vec<(usize, usize)> = parsed.edges.iter().map(|&(i, j, _)| (i, j)).collect();
        match &edges {
            None => edges = Some(these),
            Some(e) if *e != these => return Err(Error::parse(line_no, "edge list differs from earlier records")),
            Some(_) => {}
        }
        if let Some(&(_, _, b)) = parsed.edges.iter().find(|e| e.2 > 1) {
            return Err(Error::parse(line_no, format!("edge bit {b} is not 0 or 1")));
        }
        let snap = Snapshot {
            iter: parsed.iter,
            h: parsed.h,
            atoms: parsed.atoms,
            tw: parsed.tw,
            counts: parsed.counts,
            sigma2: parsed.sigma2,
            p: parsed.p,
            edges: parsed.edges.iter().map(|e| e.2 == 1).collect(),
        };
        let n_areas = snap.tw.len();
        snap.validate(n_areas, snap.edges.len()).map_err(|e| Error::parse(line_no, e.to_string()))?;
        records.push(snap);
    }
    if records.is_empty() {
        return Err(Error::parse(0, "chain file has no records"));
    }
    Ok(ChainFile { edges: edges.unwrap_or_default(), records })
}

/// Contents of `truth.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub scenario: ScenarioName,
    pub seed: u64,
    pub area_ids: Vec<String>,
    pub geometry: Option<GridGeometry>,
    pub adjacency: Vec<(usize, usize)>,
    pub boundary_edges: Option<Vec<(usize, usize)>>,
    pub true_graph: Option<Vec<(usize, usize)>>,
    pub densities: Vec<ScenarioDist>,
}

impl TruthFile {
    pub fn from_scenario(s: &Scenario, seed: u64) -> Self {
        TruthFile {
            scenario: s.name,
            seed,
            area_ids: s.data.ids(),
            geometry: s.geometry,
            adjacency: s.adjacency.edges().to_vec(),
            boundary_edges: s.truth.boundary_edges.clone(),
            true_graph: s.truth.true_graph.clone(),
            densities: s.truth.densities.clone(),
        }
    }

    pub fn adjacency(&self) -> Result<Adjacency> {
        Adjacency::new(self.area_ids.len(), self.adjacency.iter().copied())
    }
}

pub fn read_truth(path: &std::path::Path) -> Result<TruthFile> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Parse an `i,j` edge CSV with a header row.
pub fn parse_edge_csv(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::parse(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() < 2 {
            return Err(Error::parse(line, "expected at least two fields"));
        }
        let i: usize = parse_value(line, "i", &row[0])?;
        let j: usize = parse_value(line, "j", &row[1])?;
        out.push((i, j));
    }
    Ok(out)
}

/// Parse a region mask: whitespace- or comma-separated `0`/`1` labels.
pub fn parse_mask(text: &str) -> Result<Vec<bool>> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let s = raw.split('#').next().unwrap_or("");
        for tok in s.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
            out.push(match tok {
                "0" => false,
                "1" => true,
                other => return Err(Error::parse(k + 1, format!("mask label {other:?} is not 0 or 1"))),
            });
        }
    }
    Ok(out)
}

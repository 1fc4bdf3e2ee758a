//! Posterior summaries over saved records: edge inclusion probabilities,
//! boundary graphs and their confusion metrics, density estimates with
//! pointwise bands, L1 distances and the posterior of the number of
//! components.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::distributions::normal_pdf;
use crate::error::{Error, Result};
use crate::model::{Adjacency, AreaDataset};
use crate::sampler::Snapshot;

/// Posterior inclusion probability of every admissible edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeProbTable {
    pub edges: Vec<(usize, usize)>,
    pub probs: Vec<f64>,
}

impl EdgeProbTable {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let key = (i.min(j), i.max(j));
        self.edges.iter().position(|&e| e == key).map(|k| self.probs[k])
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.edges.iter().copied().zip(self.probs.iter().copied())
    }
}

/// Set of admissible edges classified as boundaries, stored with `i < j`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryGraph {
    pub edges: BTreeSet<(usize, usize)>,
}

impl BoundaryGraph {
    pub fn from_edges(edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        BoundaryGraph { edges: edges.into_iter().map(|(i, j)| (i.min(j), i.max(j))).collect() }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn is_subset(&self, other: &BoundaryGraph) -> bool {
        self.edges.is_subset(&other.edges)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Posterior mean curve and pointwise 2.5% / 97.5% quantiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower95: Vec<f64>,
    pub upper95: Vec<f64>,
}

/// Mean L1 distance from an area's estimated density to those of its
/// estimated neighbours (`d_tm`) and across its boundaries (`d_fm`);
/// `None` when the corresponding set is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaDistances {
    pub d_tm: Option<f64>,
    pub d_fm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HPosterior {
    pub pmf: BTreeMap<usize, f64>,
    pub mode: usize,
}

fn non_empty(records: &[Snapshot]) -> Result<()> {
    if records.is_empty() {
        Err(Error::Domain("the chain has no saved records".into()))
    } else {
        Ok(())
    }
}

/// Mean of the saved edge bits.
pub fn edge_inclusion(records: &[Snapshot], edges: &[(usize, usize)]) -> Result<EdgeProbTable> {
    non_empty(records)?;
    let mut on = vec![0usize; edges.len()];
    for r in records {
        if r.edges.len() != edges.len() {
            return Err(Error::Domain(format!(
                "record {} has {} edge bits, expected {}",
                r.iter,
                r.edges.len(),
                edges.len()
            )));
        }
        for (k, &b) in r.edges.iter().enumerate() {
            on[k] += b as usize;
        }
    }
    let n = records.len() as f64;
    Ok(EdgeProbTable { edges: edges.to_vec(), probs: on.iter().map(|&c| c as f64 / n).collect() })
}

pub fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 0.5 {
        Ok(())
    } else {
        Err(Error::Domain(format!("gamma = {gamma} must lie in (0, 0.5]")))
    }
}

/// Edges whose inclusion probability is strictly below `gamma`.
pub fn boundary_graph(probs: &EdgeProbTable, gamma: f64) -> Result<BoundaryGraph> {
    check_gamma(gamma)?;
    Ok(BoundaryGraph::from_edges(probs.iter().filter(|&(_, p)| p < gamma).map(|(e, _)| e)))
}

/// Edges with inclusion probability at least one half.
pub fn median_graph(probs: &EdgeProbTable) -> BTreeSet<(usize, usize)> {
    probs.iter().filter(|&(_, p)| p >= 0.5).map(|(e, _)| e).collect()
}

/// Confusion counts over the admissible edges with "positive" meaning
/// boundary. Precision is 0 when nothing is flagged.
pub fn confusion_metrics(estimated: &BoundaryGraph, truth: &BoundaryGraph, adjacency: &Adjacency) -> Result<ConfusionMetrics> {
    for &(i, j) in estimated.edges.iter().chain(truth.edges.iter()) {
        if adjacency.edge_index(i, j).is_none() {
            return Err(Error::Domain(format!("({i}, {j}) is not an admissible edge")));
        }
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for &(i, j) in adjacency.edges() {
        match (estimated.contains(i, j), truth.contains(i, j)) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
    Ok(ConfusionMetrics {
        precision: ratio(tp, fp),
        sensitivity: ratio(tp, fn_),
        specificity: ratio(tn, fp),
        tp,
        fp,
        tn,
        fn_,
    })
}

/// `f_i(x) = sum_h w_ih N(x | tau_h)` of one record on a grid.
pub fn density_curve(record: &Snapshot, area: usize, grid: &[f64]) -> Vec<f64> {
    let w = record.weights(area);
    grid.iter()
        .map(|&x| w.iter().zip(&record.atoms).map(|(wh, a)| wh * normal_pdf(x, a[0], a[1])).sum())
        .collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("density grid must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// Linear-interpolation quantile of sorted values (R type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn density_estimate(records: &[Snapshot], area: usize, grid: &[f64]) -> Result<DensityEstimate> {
    non_empty(records)?;
    check_grid(grid)?;
    if let Some(r) = records.iter().find(|r| area >= r.tw.len()) {
        return Err(Error::Domain(format!("area {area} out of range in record {}", r.iter)));
    }
    let curves: Vec<Vec<f64>> = records.iter().map(|r| density_curve(r, area, grid)).collect();
    let n = curves.len() as f64;
    let mut mean = Vec::with_capacity(grid.len());
    let mut lower95 = Vec::with_capacity(grid.len());
    let mut upper95 = Vec::with_capacity(grid.len());
    let mut column = vec![0.0; curves.len()];
    for g in 0..grid.len() {
        for (c, curve) in column.iter_mut().zip(&curves) {
            *c = curve[g];
        }
        mean.push(column.iter().sum::<f64>() / n);
        column.sort_by(f64::total_cmp);
        lower95.push(quantile_sorted(&column, 0.025));
        upper95.push(quantile_sorted(&column, 0.975));
    }
    Ok(DensityEstimate { grid: grid.to_vec(), mean, lower95, upper95 })
}

/// Posterior mean density of an area.
pub fn posterior_mean_density(records: &[Snapshot], area: usize, grid: &[f64]) -> Result<Vec<f64>> {
    non_empty(records)?;
    check_grid(grid)?;
    let mut mean = vec![0.0; grid.len()];
    for r in records {
        for (m, v) in mean.iter_mut().zip(density_curve(r, area, grid)) {
            *m += v;
        }
    }
    let n = records.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Domain(format!("cannot build a grid of {n} points on [{lo}, {hi}]")));
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n).map(|k| if k + 1 == n { hi } else { lo + k as f64 * step }).collect())
}

/// 512 points spanning four pooled standard deviations beyond the data.
pub fn default_grid(data: &AreaDataset) -> Vec<f64> {
    let (lo, hi) = data.pooled_range();
    let (_, var) = data.pooled_mean_var();
    let sd = var.sqrt().max(1e-6);
    linspace(lo - 4.0 * sd, hi + 4.0 * sd, 512).expect("finite data range")
}

/// Trapezoidal integral of `|f - g|`.
pub fn l1_distance(f: &[f64], g: &[f64], grid: &[f64]) -> Result<f64> {
    if grid.len() < 2 {
        return Err(Error::Domain("L1 distance needs at least two grid points".into()));
    }
    if f.len() != grid.len() || g.len() != grid.len() {
        return Err(Error::Domain("curves and grid differ in length".into()));
    }
    Ok(trapezoid(grid, |k| (f[k] - g[k]).abs()))
}

pub fn trapezoid(grid: &[f64], value: impl Fn(usize) -> f64) -> f64 {
    (1..grid.len()).map(|k| 0.5 * (grid[k] - grid[k - 1]) * (value(k) + value(k - 1))).sum()
}

/// Per-area neighbour distances given posterior mean densities and a
/// boundary classification.
pub fn area_distances(means: &[Vec<f64>], adjacency: &Adjacency, boundary: &BoundaryGraph, grid: &[f64]) -> Result<Vec<AreaDistances>> {
    let mut out = Vec::with_capacity(adjacency.n_areas());
    for i in 0..adjacency.n_areas() {
        let (mut tm, mut fm) = (Vec::new(), Vec::new());
        for &(j, _) in adjacency.neighbors(i) {
            let d = l1_distance(&means[i], &means[j], grid)?;
            if boundary.contains(i, j) {
                fm.push(d);
            } else {
                tm.push(d);
            }
        }
        let avg = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        out.push(AreaDistances { d_tm: avg(&tm), d_fm: avg(&fm) });
    }
    Ok(out)
}

pub fn dtm_dfm(records: &[Snapshot], adjacency: &Adjacency, gamma: f64, grid: &[f64]) -> Result<Vec<AreaDistances>> {
    let probs = edge_inclusion(records, adjacency.edges())?;
    let boundary = boundary_graph(&probs, gamma)?;
    let means = (0..adjacency.n_areas())
        .map(|i| posterior_mean_density(records, i, grid))
        .collect::<Result<Vec<_>>>()?;
    area_distances(&means, adjacency, &boundary, grid)
}

/// Relative frequencies of `H`; ties go to the smaller value.
pub fn posterior_h(records: &[Snapshot]) -> Result<HPosterior> {
    non_empty(records)?;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(r.h).or_default() += 1;
    }
    let mut mode = 0;
    let mut best = 0;
    for (&h, &c) in &counts {
        if c > best {
            best = c;
            mode = h;
        }
    }
    let n = records.len() as f64;
    Ok(HPosterior { pmf: counts.into_iter().map(|(h, c)| (h, c as f64 / n)).collect(), mode })
}

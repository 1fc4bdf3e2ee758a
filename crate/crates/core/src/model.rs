//! Data, spatial structure and sampler state, together with the additive
//! log-ratio transform and the Leroux CAR precision algebra.
//!
//! Areas are indexed positionally (0-based) in file order. Mixture weights are
//! stored only through the transformed matrix `tw` (I x (H-1)); the last
//! component is the reference and has no column. `H = 1` is an empty matrix.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CholFactor;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub id: String,
    pub observations: Vec<f64>,
}

/// Observations grouped by areal unit.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaDataset {
    areas: Vec<Area>,
}

impl AreaDataset {
    pub fn new(areas: Vec<Area>) -> Result<Self> {
        if areas.is_empty() {
            return Err(Error::Domain("dataset has no areas".into()));
        }
        let mut seen = HashSet::new();
        for area in &areas {
            if !seen.insert(area.id.as_str()) {
                return Err(Error::Domain(format!("duplicate area id {:?}", area.id)));
            }
            if area.observations.is_empty() {
                return Err(Error::Domain(format!("area {:?} has no observations", area.id)));
            }
            if area.observations.iter().any(|y| !y.is_finite()) {
                return Err(Error::Domain(format!(
                    "area {:?} has a non-finite observation",
                    area.id
                )));
            }
        }
        Ok(AreaDataset { areas })
    }

    pub fn n_areas(&self) -> usize {
        self.areas.len()
    }

    pub fn areas(&self) -> &[Area] {
        &self.areas
    }

    pub fn observations(&self, i: usize) -> &[f64] {
        &self.areas[i].observations
    }

    pub fn ids(&self) -> Vec<String> {
        self.areas.iter().map(|a| a.id.clone()).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.areas.iter().position(|a| a.id == id)
    }

    pub fn total_observations(&self) -> usize {
        self.areas.iter().map(|a| a.observations.len()).sum()
    }

    pub fn pooled(&self) -> impl Iterator<Item = f64> + '_ {
        self.areas.iter().flat_map(|a| a.observations.iter().copied())
    }

    /// Pooled sample mean and (population) variance.
    pub fn pooled_mean_var(&self) -> (f64, f64) {
        let n = self.total_observations() as f64;
        let mean = self.pooled().sum::<f64>() / n;
        let var = self.pooled().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    pub fn pooled_range(&self) -> (f64, f64) {
        self.pooled()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| {
                (lo.min(y), hi.max(y))
            })
    }
}

/// Admissible edges: unordered pairs `(i, j)` with `i < j`, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    n_areas: usize,
    edges: Vec<(usize, usize)>,
    // per area: (neighbour, edge index)
    neighbors: Vec<Vec<(usize, usize)>>,
}

impl Adjacency {
    /// Build from arbitrary pairs; both orientations and duplicates collapse
    /// into one edge.
    pub fn new(n_areas: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut edges = Vec::new();
        for (a, b) in pairs {
            if a == b {
                return Err(Error::Domain(format!("self-loop on area {a}")));
            }
            if a >= n_areas || b >= n_areas {
                return Err(Error::Domain(format!(
                    "edge ({a}, {b}) out of range for {n_areas} areas"
                )));
            }
            edges.push((a.min(b), a.max(b)));
        }
        edges.sort_unstable();
        edges.dedup();
        let mut neighbors = vec![Vec::new(); n_areas];
        for (e, &(i, j)) in edges.iter().enumerate() {
            neighbors[i].push((j, e));
            neighbors[j].push((i, e));
        }
        Ok(Adjacency {
            n_areas,
            edges,
            neighbors,
        })
    }

    /// Every unordered pair of areas.
    pub fn complete(n_areas: usize) -> Self {
        let pairs = (0..n_areas).flat_map(|i| ((i + 1)..n_areas).map(move |j| (i, j)));
        Self::new(n_areas, pairs).expect("complete graph pairs are valid")
    }

    pub fn n_areas(&self) -> usize {
        self.n_areas
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.neighbors[i]
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        let key = (i.min(j), i.max(j));
        self.edges.binary_search(&key).ok()
    }
}

/// Random graph `G` restricted to the admissible edges; one bit per edge,
/// aligned with [`Adjacency::edges`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphState {
    bits: Vec<bool>,
}

impl GraphState {
    pub fn full(adjacency: &Adjacency) -> Self {
        GraphState {
            bits: vec![true; adjacency.n_edges()],
        }
    }

    pub fn empty(adjacency: &Adjacency) -> Self {
        GraphState {
            bits: vec![false; adjacency.n_edges()],
        }
    }

    pub fn from_bits(adjacency: &Adjacency, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != adjacency.n_edges() {
            return Err(Error::Config(format!(
                "graph has {} bits but adjacency has {} edges",
                bits.len(),
                adjacency.n_edges()
            )));
        }
        Ok(GraphState { bits })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_on(&self, edge: usize) -> bool {
        self.bits[edge]
    }

    pub fn set(&mut self, edge: usize, on: bool) {
        self.bits[edge] = on;
    }

    pub fn n_on(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn degree(&self, adjacency: &Adjacency, i: usize) -> usize {
        adjacency
            .neighbors(i)
            .iter()
            .filter(|&&(_, e)| self.bits[e])
            .count()
    }
}

/// Gaussian kernel parameters `(mean, variance)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub mean: f64,
    pub var: f64,
}

impl Atom {
    pub fn new(mean: f64, var: f64) -> Self {
        Atom { mean, var }
    }

    #[inline]
    pub fn ln_pdf(&self, y: f64) -> f64 {
        let z = y - self.mean;
        -0.5 * (LN_2PI + self.var.ln()) - 0.5 * z * z / self.var
    }
}

/// The transdimensional part of the chain state.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureState {
    pub atoms: Vec<Atom>,
    /// I x (H-1) transformed weights; column `h` belongs to `atoms[h]`, the
    /// last atom is the reference.
    pub tw: DMatrix<f64>,
    /// 0-based component index per observation.
    pub allocations: Vec<Vec<usize>>,
}

impl MixtureState {
    pub fn n_components(&self) -> usize {
        self.atoms.len()
    }

    pub fn n_areas(&self) -> usize {
        self.tw.nrows()
    }

    pub fn tw_row(&self, i: usize) -> Vec<f64> {
        self.tw.row(i).iter().copied().collect()
    }

    pub fn weights(&self, i: usize) -> Vec<f64> {
        inverse_alr(&self.tw_row(i))
    }

    pub fn log_weights(&self, i: usize) -> Vec<f64> {
        log_inverse_alr(&self.tw_row(i))
    }

    /// `N_{i,h}` for every area and component.
    pub fn counts(&self) -> Vec<Vec<usize>> {
        let h = self.n_components();
        self.allocations
            .iter()
            .map(|alloc| {
                let mut c = vec![0; h];
                for &s in alloc {
                    c[s] += 1;
                }
                c
            })
            .collect()
    }

    /// Check dimensions, simplex closure and allocation ranges.
    pub fn validate(&self, data: &AreaDataset) -> Result<()> {
        let h = self.n_components();
        if h == 0 {
            return Err(Error::Config("mixture has no components".into()));
        }
        if self.tw.nrows() != data.n_areas() || self.tw.ncols() != h - 1 {
            return Err(Error::Config(format!(
                "tw is {}x{} but expected {}x{}",
                self.tw.nrows(),
                self.tw.ncols(),
                data.n_areas(),
                h - 1
            )));
        }
        if self.atoms.iter().any(|a| !(a.var > 0.0) || !a.mean.is_finite()) {
            return Err(Error::Domain("atom with invalid parameters".into()));
        }
        if self.tw.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("non-finite transformed weight".into()));
        }
        if self.allocations.len() != data.n_areas() {
            return Err(Error::Config("allocation/area count mismatch".into()));
        }
        for (i, alloc) in self.allocations.iter().enumerate() {
            if alloc.len() != data.observations(i).len() {
                return Err(Error::Config(format!("allocation count mismatch in area {i}")));
            }
            if alloc.iter().any(|&s| s >= h) {
                return Err(Error::Domain(format!("allocation out of range in area {i}")));
            }
            let w = self.weights(i);
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-12 || w.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::Numerical(format!("weights of area {i} left the simplex")));
            }
        }
        Ok(())
    }
}

/// Global parameters shared by all areas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    pub sigma2: f64,
    pub p: f64,
    pub rho: f64,
}

impl GlobalState {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0) {
            return Err(Error::Domain(format!("sigma2 = {} must be positive", self.sigma2)));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Domain(format!("p = {} must lie in (0, 1)", self.p)));
        }
        check_rho(self.rho)
    }
}

/// Complete sampler state.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub mixture: MixtureState,
    pub global: GlobalState,
    pub graph: GraphState,
}

impl ChainState {
    pub fn validate(&self, data: &AreaDataset, adjacency: &Adjacency) -> Result<()> {
        if adjacency.n_areas() != data.n_areas() {
            return Err(Error::Config(format!(
                "adjacency has {} areas but the data has {}",
                adjacency.n_areas(),
                data.n_areas()
            )));
        }
        if self.graph.bits().len() != adjacency.n_edges() {
            return Err(Error::Config("graph inconsistent with adjacency".into()));
        }
        self.global.validate()?;
        self.mixture.validate(data)
    }
}

/// Prior constants.
///
/// * `mu_h | sigma2_h ~ N(mu0, sigma2_h / lambda)`, `1/sigma2_h ~ Gamma(c, rate d)`
/// * `sigma2 ~ InvGamma(alpha/2, beta/2)` (shape, rate)
/// * `p ~ Beta(a, b)`, `H - 1 ~ Poisson(lambda_h)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub mu0: f64,
    pub lambda: f64,
    pub c: f64,
    pub d: f64,
    pub alpha: f64,
    pub beta: f64,
    pub a: f64,
    pub b: f64,
    pub lambda_h: f64,
    pub rho: f64,
    pub gamma: f64,
    pub h_init: usize,
}

impl Default for Hyperparams {
    /// Settings of the 36-area misspecified simulation.
    fn default() -> Self {
        Hyperparams {
            mu0: 0.0,
            lambda: 0.1,
            c: 2.0,
            d: 2.0,
            alpha: 6.0,
            beta: 6.0,
            a: 2.0,
            b: 36.0,
            lambda_h: 1.0,
            rho: 0.95,
            gamma: 0.5,
            h_init: 3,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("c", self.c),
            ("d", self.d),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("a", self.a),
            ("b", self.b),
            ("lambda_H", self.lambda_h),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        if !self.mu0.is_finite() {
            return Err(Error::Config("mu0 must be finite".into()));
        }
        check_rho(self.rho).map_err(|e| Error::Config(e.to_string()))?;
        check_gamma(self.gamma)?;
        if self.h_init == 0 {
            return Err(Error::Config("h_init must be at least 1".into()));
        }
        Ok(())
    }

    /// `log P0(mean, var)` in the (mean, variance) parameterisation.
    pub fn ln_p0(&self, atom: &Atom) -> f64 {
        let l = atom.var.ln();
        let z = atom.mean - self.mu0;
        let normal = -0.5 * (LN_2PI - self.lambda.ln() + l) - 0.5 * self.lambda * z * z / atom.var;
        let inv_gamma = self.c * self.d.ln() - statrs::function::gamma::ln_gamma(self.c)
            - (self.c + 1.0) * l
            - self.d / atom.var;
        normal + inv_gamma
    }

    /// `log pi(H)` under `H - 1 ~ Poisson(lambda_h)`.
    pub fn ln_prior_h(&self, h: usize) -> f64 {
        assert!(h >= 1);
        let k = (h - 1) as f64;
        k * self.lambda_h.ln() - self.lambda_h - statrs::function::gamma::ln_gamma(k + 1.0)
    }
}

pub(crate) fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Domain(format!("rho = {rho} must lie in [0, 1)")));
    }
    Ok(())
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 0.5) {
        return Err(Error::Config(format!("gamma = {gamma} must lie in (0, 0.5]")));
    }
    Ok(())
}

/// Additive log-ratio with the last entry as reference.
pub fn alr(w: &[f64]) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(Error::Domain("alr of an empty vector".into()));
    }
    if w.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Domain("alr requires strictly positive entries".into()));
    }
    let ln_ref = w[w.len() - 1].ln();
    Ok(w[..w.len() - 1].iter().map(|x| x.ln() - ln_ref).collect())
}

/// Log of [`inverse_alr`], computed with a max shift.
pub fn log_inverse_alr(tw: &[f64]) -> Vec<f64> {
    let max = tw.iter().copied().fold(0.0_f64, f64::max);
    let norm = max + (tw.iter().map(|&x| (x - max).exp()).sum::<f64>() + (-max).exp()).ln();
    tw.iter().map(|&x| x - norm).chain(std::iter::once(-norm)).collect()
}

/// Inverse additive log-ratio; `tw` of length H-1 maps to an H-simplex point.
pub fn inverse_alr(tw: &[f64]) -> Vec<f64> {
    let max = tw.iter().copied().fold(0.0_f64, f64::max);
    let mut w: Vec<f64> = tw.iter().map(|&x| (x - max).exp()).collect();
    w.push((-max).exp());
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// `Q = F - rho G` with `F_ii = rho deg_G(i) + 1 - rho`.
pub fn leroux_precision(adjacency: &Adjacency, graph: &GraphState, rho: f64) -> Result<DMatrix<f64>> {
    check_rho(rho)?;
    if graph.bits().len() != adjacency.n_edges() {
        return Err(Error::Config("graph inconsistent with adjacency".into()));
    }
    let n = adjacency.n_areas();
    let mut q = DMatrix::zeros(n, n);
    let mut degree = vec![0usize; n];
    for (e, &(i, j)) in adjacency.edges().iter().enumerate() {
        if graph.is_on(e) {
            q[(i, j)] = -rho;
            q[(j, i)] = -rho;
            degree[i] += 1;
            degree[j] += 1;
        }
    }
    for i in 0..n {
        q[(i, i)] = rho * degree[i] as f64 + 1.0 - rho;
    }
    Ok(q)
}

/// Log density of `vec(tw) ~ N(0, ((F - rho G) kron I / sigma2)^-1)`.
///
/// Columns of `tw` are independent `N(0, sigma2 Q^-1)` vectors. An empty
/// matrix (`H = 1`) has log density zero.
pub fn logmcar_logpdf(
    tw: &DMatrix<f64>,
    sigma2: f64,
    graph: &GraphState,
    adjacency: &Adjacency,
    rho: f64,
) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::Domain("sigma2 must be positive".into()));
    }
    if tw.nrows() != adjacency.n_areas() {
        return Err(Error::Config("tw rows differ from the number of areas".into()));
    }
    let q = leroux_precision(adjacency, graph, rho)?;
    let factor = CholFactor::new(&q)?;
    Ok(logmcar_with_factor(tw, sigma2, &factor))
}

pub(crate) fn logmcar_with_factor(tw: &DMatrix<f64>, sigma2: f64, factor: &CholFactor) -> f64 {
    let cols = tw.ncols();
    if cols == 0 {
        return 0.0;
    }
    let n = tw.nrows() as f64;
    let quad: f64 = (0..cols)
        .map(|h| factor.quad_form(tw.column(h).as_slice()))
        .sum();
    let k = cols as f64;
    0.5 * k * factor.log_det() - 0.5 * n * k * (LN_2PI + sigma2.ln()) - 0.5 * quad / sigma2
}

/// `sum_{i,j} Q_ij tw_i' tw_j` through the Cholesky factor of `Q`.
pub(crate) fn car_quadratic(tw: &DMatrix<f64>, factor: &CholFactor) -> f64 {
    (0..tw.ncols())
        .map(|h| factor.quad_form(tw.column(h).as_slice()))
        .sum()
}

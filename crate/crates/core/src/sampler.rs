//! Chain orchestration: initialisation, the iteration schedule (reversible
//! jump then Gibbs sweep), burn-in, thinning and diagnostics.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::between::{rj_step, NewtonOptions, RjMode, RjStats};
use crate::distributions::{sample_beta, sample_invgamma, PolyaGamma, RngHandle};
use crate::error::{Error, Result};
use crate::model::{
    Adjacency, AreaDataset, Atom, ChainState, GlobalState, GraphState, Hyperparams, MixtureState,
};
use crate::within::{self, atom_posterior, EdgeMode, SweepBlocks, SweepOptions, SweepStats, WeightScan};

/// Starting graph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitGraph {
    #[default]
    Full,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub hyperparams: Hyperparams,
    pub rj_enabled: bool,
    pub fixed_h: Option<usize>,
    pub edge_mode: EdgeMode,
    pub rj_mode: RjMode,
    /// Hold the edge probability at this value instead of sampling it.
    pub fixed_p: Option<f64>,
    pub init_graph: InitGraph,
    /// Normal approximation of `PG(b, c)` for `b` above this value.
    pub pg_normal_approx: Option<u32>,
    pub rj_steps_per_iter: usize,
    pub weight_scan: WeightScan,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_iterations: 10_000,
            burn_in: 5_000,
            thin: 1,
            seed: 0,
            hyperparams: Hyperparams::default(),
            rj_enabled: true,
            fixed_h: None,
            edge_mode: EdgeMode::default(),
            rj_mode: RjMode::default(),
            fixed_p: None,
            init_graph: InitGraph::default(),
            pg_normal_approx: None,
            rj_steps_per_iter: 1,
            weight_scan: WeightScan::default(),
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyperparams.validate()?;
        if self.n_iterations == 0 || self.burn_in >= self.n_iterations {
            return Err(Error::Config(format!(
                "burn_in = {} must be smaller than n_iterations = {}",
                self.burn_in, self.n_iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.fixed_h.is_some() && self.rj_enabled {
            return Err(Error::Config("fixed_H and rj_enabled are mutually exclusive".into()));
        }
        if self.fixed_h == Some(0) {
            return Err(Error::Config("fixed_H must be at least 1".into()));
        }
        if let Some(p) = self.fixed_p {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("fixed_p = {p} must lie in (0, 1)")));
            }
        }
        Ok(())
    }

    /// Number of records a run saves.
    pub fn n_saved(&self) -> usize {
        (self.n_iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// One saved iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iter: usize,
    #[serde(rename = "H")]
    pub h: usize,
    /// `[mean, variance]` per component.
    pub atoms: Vec<[f64; 2]>,
    /// Rows of the transformed weights, one per area.
    pub tw: Vec<Vec<f64>>,
    pub counts: Vec<Vec<usize>>,
    pub sigma2: f64,
    pub p: f64,
    /// One bit per admissible edge, aligned with the adjacency edge list.
    pub edges: Vec<bool>,
}

impl Snapshot {
    pub fn from_state(iter: usize, state: &ChainState) -> Self {
        let m = &state.mixture;
        Snapshot {
            iter,
            h: m.n_components(),
            atoms: m.atoms.iter().map(|a| [a.mean, a.var]).collect(),
            tw: (0..m.n_areas()).map(|i| m.tw_row(i)).collect(),
            counts: m.counts(),
            sigma2: state.global.sigma2,
            p: state.global.p,
            edges: state.graph.bits().to_vec(),
        }
    }

    pub fn atoms(&self) -> Vec<Atom> {
        self.atoms.iter().map(|a| Atom::new(a[0], a[1])).collect()
    }

    pub fn weights(&self, area: usize) -> Vec<f64> {
        crate::model::inverse_alr(&self.tw[area])
    }

    pub fn tw_matrix(&self) -> DMatrix<f64> {
        let rows = self.tw.len();
        let cols = self.h - 1;
        DMatrix::from_fn(rows, cols, |i, h| self.tw[i][h])
    }

    /// Structural checks matching the mixture invariants.
    pub fn validate(&self, n_areas: usize, n_edges: usize) -> Result<()> {
        if self.h == 0 || self.atoms.len() != self.h {
            return Err(Error::Config(format!("record {} has inconsistent H", self.iter)));
        }
        if self.tw.len() != n_areas || self.tw.iter().any(|r| r.len() != self.h - 1) {
            return Err(Error::Config(format!("record {} has malformed tw", self.iter)));
        }
        if self.counts.len() != n_areas || self.counts.iter().any(|c| c.len() != self.h) {
            return Err(Error::Config(format!("record {} has malformed counts", self.iter)));
        }
        if self.edges.len() != n_edges {
            return Err(Error::Config(format!("record {} has {} edge bits", self.iter, self.edges.len())));
        }
        for i in 0..n_areas {
            let w = self.weights(i);
            if (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 || w.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::Numerical(format!("record {} leaves the simplex", self.iter)));
            }
        }
        Ok(())
    }
}

/// Sampler output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub config: ChainConfig,
    pub area_ids: Vec<String>,
    pub edge_list: Vec<(usize, usize)>,
    pub records: Vec<Snapshot>,
    /// Absent when the number of components is fixed.
    pub rj: Option<RjStats>,
    pub sweep: SweepStats,
    pub elapsed_seconds: f64,
}

impl ChainOutput {
    pub fn iterations_per_second(&self) -> f64 {
        if self.elapsed_seconds > 0.0 {
            self.config.n_iterations as f64 / self.elapsed_seconds
        } else {
            f64::INFINITY
        }
    }

    pub fn n_areas(&self) -> usize {
        self.area_ids.len()
    }
}

/// Draw the initial state.
pub fn initial_state(
    rng: &mut RngHandle,
    config: &ChainConfig,
    data: &AreaDataset,
    adjacency: &Adjacency,
) -> Result<ChainState> {
    let hyper = &config.hyperparams;
    let h = config.fixed_h.unwrap_or(hyper.h_init);
    let prior = atom_posterior(hyper, &[]);
    let atoms = (0..h)
        .map(|_| within::sample_nig(rng, &prior))
        .collect::<Result<Vec<_>>>()?;
    let sigma2 = sample_invgamma(rng, 0.5 * hyper.alpha, 0.5 * hyper.beta)?;
    let p = match config.fixed_p {
        Some(p) => p,
        None => sample_beta(rng, hyper.a, hyper.b)?.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON),
    };
    let graph = match config.init_graph {
        InitGraph::Full => GraphState::full(adjacency),
        InitGraph::Empty => GraphState::empty(adjacency),
    };
    let mut state = ChainState {
        mixture: MixtureState {
            atoms,
            tw: DMatrix::zeros(data.n_areas(), h - 1),
            allocations: Vec::new(),
        },
        global: GlobalState { sigma2, p, rho: hyper.rho },
        graph,
    };
    within::update_allocations(rng, &mut state.mixture, data)?;
    Ok(state)
}

/// Run one chain. Identical configuration and inputs give identical records.
pub fn run_chain(config: &ChainConfig, data: &AreaDataset, adjacency: &Adjacency) -> Result<ChainOutput> {
    run_chain_with(config, data, adjacency, |_, _| {})
}

/// [`run_chain`] with a callback invoked after every iteration with the
/// iteration index and the current state.
pub fn run_chain_with<F>(config: &ChainConfig, data: &AreaDataset, adjacency: &Adjacency, mut on_iter: F) -> Result<ChainOutput>
where
    F: FnMut(usize, &ChainState),
{
    config.validate()?;
    if adjacency.n_areas() != data.n_areas() {
        return Err(Error::Config(format!(
            "adjacency has {} areas but the data has {}",
            adjacency.n_areas(),
            data.n_areas()
        )));
    }
    let start = Instant::now();
    let mut rng = RngHandle::new(config.seed);
    let mut state = initial_state(&mut rng, config, data, adjacency)?;
    let hyper = &config.hyperparams;
    let opts = SweepOptions {
        edge_mode: config.edge_mode,
        weight_scan: config.weight_scan,
        pg: PolyaGamma { normal_approx_above: config.pg_normal_approx },
        blocks: SweepBlocks { p: config.fixed_p.is_none(), ..SweepBlocks::default() },
    };
    let newton = NewtonOptions::default();
    let mut rj = config.rj_enabled.then(RjStats::default);
    let mut sweep = SweepStats::default();
    let mut records = Vec::with_capacity(config.n_saved());
    for t in 0..config.n_iterations {
        if let Some(stats) = rj.as_mut() {
            for _ in 0..config.rj_steps_per_iter {
                rj_step(&mut rng, &mut state, data, adjacency, hyper, config.rj_mode, &newton, stats)?;
            }
        }
        within::sweep(&mut rng, &mut state, data, adjacency, hyper, &opts, &mut sweep)?;
        if t >= config.burn_in && (t - config.burn_in) % config.thin == 0 {
            records.push(Snapshot::from_state(t, &state));
        }
        on_iter(t, &state);
    }
    Ok(ChainOutput {
        config: config.clone(),
        area_ids: data.ids(),
        edge_list: adjacency.edges().to_vec(),
        records,
        rj,
        sweep,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

//! Fixed-dimension Gibbs sweep.
//!
//! Block order: allocations, atoms, transformed weights (Pólya-Gamma
//! augmented), CAR variance, graph edges, edge probability.
//!
//! Allocation and edge updates are conditionally independent across sites in
//! the paper-verbatim edge mode and could run in parallel; weight updates
//! depend on neighbouring rows and must stay sequential. Everything here runs
//! sequentially.

use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{sample_beta, sample_gamma, standard_normal, PolyaGamma};
use crate::error::{Error, Result};
use crate::linalg::CholFactor;
use crate::model::{
    car_quadratic, leroux_precision, Adjacency, AreaDataset, Atom, ChainState, GraphState,
    Hyperparams, MixtureState,
};

/// Edge full conditional used by [`update_edges`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeMode {
    /// `log(p / (1 - p)) + rho / (2 sigma2) * tw_i . tw_j`.
    #[default]
    PaperVerbatim,
    /// The exact conditional of the CAR density, including the change of the
    /// log determinant and of the diagonal of `F`.
    ExactPrior,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScan {
    /// Every `(i, h)` once per sweep in lexicographic order.
    #[default]
    Systematic,
    /// `I (H - 1)` sites drawn uniformly with replacement.
    Random,
}

/// Which blocks a sweep updates. Disabled blocks keep their current value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepBlocks {
    pub allocations: bool,
    pub atoms: bool,
    pub weights: bool,
    pub sigma2: bool,
    pub edges: bool,
    pub p: bool,
}

impl Default for SweepBlocks {
    fn default() -> Self {
        SweepBlocks {
            allocations: true,
            atoms: true,
            weights: true,
            sigma2: true,
            edges: true,
            p: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SweepOptions {
    pub edge_mode: EdgeMode,
    pub weight_scan: WeightScan,
    pub pg: PolyaGamma,
    pub blocks: SweepBlocks,
}

/// Counters accumulated over sweeps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    pub sweeps: u64,
    pub edge_flips: u64,
    pub allocation_changes: u64,
    /// Seconds per block, in sweep order.
    pub seconds: [f64; 6],
}

/// One full sweep over the enabled blocks.
pub fn sweep<R: Rng + ?Sized>(
    rng: &mut R,
    state: &mut ChainState,
    data: &AreaDataset,
    adjacency: &Adjacency,
    hyper: &Hyperparams,
    opts: &SweepOptions,
    stats: &mut SweepStats,
) -> Result<()> {
    let b = opts.blocks;
    let mut t = Instant::now();
    let mut lap = |k: usize, stats: &mut SweepStats| {
        let now = Instant::now();
        stats.seconds[k] += (now - t).as_secs_f64();
        t = now;
    };
    if b.allocations {
        stats.allocation_changes += update_allocations(rng, &mut state.mixture, data)? as u64;
    }
    lap(0, stats);
    if b.atoms {
        update_atoms(rng, &mut state.mixture, data, hyper)?;
    }
    lap(1, stats);
    if b.weights {
        update_weights(rng, state, data, adjacency, opts.pg, opts.weight_scan)?;
    }
    lap(2, stats);
    if b.sigma2 {
        update_sigma2(rng, state, adjacency, hyper)?;
    }
    lap(3, stats);
    if b.edges {
        stats.edge_flips += update_edges(rng, state, adjacency, opts.edge_mode)? as u64;
    }
    lap(4, stats);
    if b.p {
        update_p(rng, state, adjacency, hyper)?;
    }
    lap(5, stats);
    stats.sweeps += 1;
    Ok(())
}

/// Normalised log allocation probabilities of one observation given the log
/// weights of its area.
pub fn allocation_log_probs(log_weights: &[f64], atoms: &[Atom], y: f64) -> Result<Vec<f64>> {
    let mut lp: Vec<f64> = log_weights
        .iter()
        .zip(atoms)
        .map(|(lw, a)| lw + a.ln_pdf(y))
        .collect();
    let max = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical(format!(
            "every component has zero mass at observation {y}"
        )));
    }
    let norm = max + lp.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    lp.iter_mut().for_each(|x| *x -= norm);
    Ok(lp)
}

/// Draw an index from unnormalised log masses.
pub(crate) fn sample_log_categorical<R: Rng + ?Sized>(rng: &mut R, log_mass: &[f64]) -> Result<usize> {
    let max = log_mass.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical("categorical with no finite mass".into()));
    }
    let mass: Vec<f64> = log_mass.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = mass.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, m) in mass.iter().enumerate() {
        u -= m;
        if u < 0.0 {
            return Ok(k);
        }
    }
    Ok(mass.iter().rposition(|&m| m > 0.0).unwrap_or(0))
}

/// Redraw every allocation from its full conditional. Returns the number of
/// labels that changed.
pub fn update_allocations<R: Rng + ?Sized>(
    rng: &mut R,
    mixture: &mut MixtureState,
    data: &AreaDataset,
) -> Result<usize> {
    let h = mixture.n_components();
    let mut changed = 0;
    if mixture.allocations.len() != data.n_areas() {
        mixture.allocations = (0..data.n_areas())
            .map(|i| vec![usize::MAX; data.observations(i).len()])
            .collect();
    }
    for i in 0..data.n_areas() {
        let lw = mixture.log_weights(i);
        let mut scratch = vec![0.0; h];
        for (j, &y) in data.observations(i).iter().enumerate() {
            for k in 0..h {
                scratch[k] = lw[k] + mixture.atoms[k].ln_pdf(y);
            }
            let s = if h == 1 {
                0
            } else {
                sample_log_categorical(rng, &scratch).map_err(|_| {
                    Error::Numerical(format!(
                        "every component has zero mass at observation {j} of area {i} (y = {y})"
                    ))
                })?
            };
            let slot = &mut mixture.allocations[i][j];
            if *slot != s {
                changed += 1;
                *slot = s;
            }
        }
    }
    Ok(changed)
}

/// Normal-InvGamma hyperparameters `(mu, lambda, c, d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NigParams {
    pub mu: f64,
    pub lambda: f64,
    pub c: f64,
    pub d: f64,
}

/// Conjugate posterior of one atom given the observations allocated to it.
pub fn atom_posterior(hyper: &Hyperparams, values: &[f64]) -> NigParams {
    let n = values.len() as f64;
    if values.is_empty() {
        return NigParams {
            mu: hyper.mu0,
            lambda: hyper.lambda,
            c: hyper.c,
            d: hyper.d,
        };
    }
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|y| (y - mean).powi(2)).sum();
    let lambda_n = hyper.lambda + n;
    NigParams {
        mu: (hyper.lambda * hyper.mu0 + n * mean) / lambda_n,
        lambda: lambda_n,
        c: hyper.c + 0.5 * n,
        d: hyper.d + 0.5 * (ss + hyper.lambda * n * (mean - hyper.mu0).powi(2) / lambda_n),
    }
}

pub(crate) fn sample_nig<R: Rng + ?Sized>(rng: &mut R, nig: &NigParams) -> Result<Atom> {
    let var = 1.0 / sample_gamma(rng, nig.c, nig.d)?;
    let mean = nig.mu + (var / nig.lambda).sqrt() * standard_normal(rng);
    Ok(Atom::new(mean, var))
}

/// Redraw every atom from its Normal-InvGamma posterior, pooling the
/// allocated observations of all areas.
pub fn update_atoms<R: Rng + ?Sized>(
    rng: &mut R,
    mixture: &mut MixtureState,
    data: &AreaDataset,
    hyper: &Hyperparams,
) -> Result<()> {
    let h = mixture.n_components();
    let mut pooled: Vec<Vec<f64>> = vec![Vec::new(); h];
    for (i, alloc) in mixture.allocations.iter().enumerate() {
        for (&s, &y) in alloc.iter().zip(data.observations(i)) {
            pooled[s].push(y);
        }
    }
    for (k, values) in pooled.iter().enumerate() {
        mixture.atoms[k] = sample_nig(rng, &atom_posterior(hyper, values))?;
    }
    Ok(())
}

/// `log sum_{k != h} exp(tw_k)` over a row, counting the reference as `e^0`.
fn log_sum_others(row: &[f64], h: usize) -> f64 {
    let max = row
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != h)
        .map(|(_, &x)| x)
        .fold(0.0_f64, f64::max);
    let s: f64 = row
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != h)
        .map(|(_, &x)| (x - max).exp())
        .sum::<f64>()
        + (-max).exp();
    max + s.ln()
}

/// CAR conditional mean and variance of `tw_{i,h}` given the other rows.
pub fn car_conditional(state: &ChainState, adjacency: &Adjacency, i: usize, h: usize) -> (f64, f64) {
    let rho = state.global.rho;
    let mut deg = 0usize;
    let mut sum = 0.0;
    for &(j, e) in adjacency.neighbors(i) {
        if state.graph.is_on(e) {
            deg += 1;
            sum += state.mixture.tw[(j, h)];
        }
    }
    let f = rho * deg as f64 + 1.0 - rho;
    (rho * sum / f, state.global.sigma2 / f)
}

/// Mean and variance of the Gaussian full conditional of `tw_{i,h}` given the
/// Pólya-Gamma auxiliary `omega`. `counts` holds `N_{i,k}` for area `i`.
pub fn weight_fullcond_params(
    state: &ChainState,
    adjacency: &Adjacency,
    counts: &[usize],
    i: usize,
    h: usize,
    omega: f64,
) -> Result<(f64, f64)> {
    let h_count = state.mixture.n_components();
    if h + 1 >= h_count {
        return Err(Error::Domain(format!(
            "component {h} is the reference (or out of range) among {h_count}"
        )));
    }
    if !(omega > 0.0) {
        return Err(Error::Domain(format!("omega = {omega} must be positive")));
    }
    let (mu_star, var_star) = car_conditional(state, adjacency, i, h);
    let row = state.mixture.tw_row(i);
    let offset = log_sum_others(&row, h);
    let n_i: usize = counts.iter().sum();
    let precision = 1.0 / var_star + omega;
    let mean = (mu_star / var_star + counts[h] as f64 - 0.5 * n_i as f64 + omega * offset) / precision;
    Ok((mean, 1.0 / precision))
}

/// Pólya-Gamma augmented update of every transformed weight.
pub fn update_weights<R: Rng + ?Sized>(
    rng: &mut R,
    state: &mut ChainState,
    data: &AreaDataset,
    adjacency: &Adjacency,
    pg: PolyaGamma,
    scan: WeightScan,
) -> Result<()> {
    let cols = state.mixture.tw.ncols();
    if cols == 0 {
        return Ok(());
    }
    let counts = state.mixture.counts();
    let n_areas = data.n_areas();
    let site = |rng: &mut R, state: &mut ChainState, i: usize, h: usize| -> Result<()> {
        let n_i = data.observations(i).len() as u32;
        let row = state.mixture.tw_row(i);
        let eta = row[h] - log_sum_others(&row, h);
        let omega = pg.sample(rng, n_i, eta)?;
        let (mean, var) = weight_fullcond_params(state, adjacency, &counts[i], i, h, omega)?;
        let draw = mean + var.sqrt() * standard_normal(rng);
        if !draw.is_finite() {
            return Err(Error::Numerical(format!("non-finite weight draw at ({i}, {h})")));
        }
        state.mixture.tw[(i, h)] = draw;
        Ok(())
    };
    match scan {
        WeightScan::Systematic => {
            for i in 0..n_areas {
                for h in 0..cols {
                    site(rng, state, i, h)?;
                }
            }
        }
        WeightScan::Random => {
            for _ in 0..n_areas * cols {
                let i = rng.random_range(0..n_areas);
                let h = rng.random_range(0..cols);
                site(rng, state, i, h)?;
            }
        }
    }
    Ok(())
}

/// `(alpha_p, beta_p)` of the `InvGamma(alpha_p / 2, beta_p / 2)` full
/// conditional of the CAR variance.
pub fn sigma2_posterior_params(state: &ChainState, adjacency: &Adjacency, hyper: &Hyperparams) -> Result<(f64, f64)> {
    let tw = &state.mixture.tw;
    if tw.ncols() == 0 {
        return Ok((hyper.alpha, hyper.beta));
    }
    let q = leroux_precision(adjacency, &state.graph, state.global.rho)?;
    let factor = CholFactor::new(&q)?;
    let quad = car_quadratic(tw, &factor);
    Ok((hyper.alpha + (tw.nrows() * tw.ncols()) as f64, hyper.beta + quad))
}

pub fn update_sigma2<R: Rng + ?Sized>(
    rng: &mut R,
    state: &mut ChainState,
    adjacency: &Adjacency,
    hyper: &Hyperparams,
) -> Result<()> {
    let (a, b) = sigma2_posterior_params(state, adjacency, hyper)?;
    state.global.sigma2 = crate::distributions::sample_invgamma(rng, 0.5 * a, 0.5 * b)?;
    Ok(())
}

fn row_dot(tw: &nalgebra::DMatrix<f64>, i: usize, j: usize) -> f64 {
    (0..tw.ncols()).map(|h| tw[(i, h)] * tw[(j, h)]).sum()
}

/// Log odds of `G_{ij} = 1` against `G_{ij} = 0` given everything else.
pub fn edge_logodds(state: &ChainState, adjacency: &Adjacency, i: usize, j: usize, mode: EdgeMode) -> Result<f64> {
    let edge = adjacency
        .edge_index(i, j)
        .ok_or_else(|| Error::Domain(format!("({i}, {j}) is not an admissible edge")))?;
    match mode {
        EdgeMode::PaperVerbatim => Ok(verbatim_logodds(state, i, j)),
        EdgeMode::ExactPrior => {
            let mut off = state.graph.clone();
            off.set(edge, false);
            let q0 = leroux_precision(adjacency, &off, state.global.rho)?;
            exact_logodds(state, &q0, i, j)
        }
    }
}

fn verbatim_logodds(state: &ChainState, i: usize, j: usize) -> f64 {
    let g = &state.global;
    (g.p / (1.0 - g.p)).ln() + edge_data_term(state, i, j)
}

/// Data-dependent part of the paper-verbatim edge log odds,
/// `rho / (2 sigma2) * tw_i . tw_j`.
pub fn edge_data_term(state: &ChainState, i: usize, j: usize) -> f64 {
    let g = &state.global;
    g.rho / (2.0 * g.sigma2) * row_dot(&state.mixture.tw, i, j)
}

/// Exact log odds given `q0`, the precision with edge `(i, j)` switched off.
///
/// Switching the edge on adds `rho (e_i - e_j)(e_i - e_j)'` to the precision,
/// so the determinant ratio is `1 + rho v' Q0^-1 v`.
fn exact_logodds(state: &ChainState, q0: &nalgebra::DMatrix<f64>, i: usize, j: usize) -> Result<f64> {
    let g = &state.global;
    let tw = &state.mixture.tw;
    let k = tw.ncols() as f64;
    let prior = (g.p / (1.0 - g.p)).ln();
    if tw.ncols() == 0 {
        return Ok(prior);
    }
    let factor = CholFactor::new(q0)?;
    let mut v = DVector::zeros(q0.nrows());
    v[i] = 1.0;
    v[j] = -1.0;
    let s = factor.solve(&v);
    let ln_det_ratio = (1.0 + g.rho * (s[i] - s[j])).ln();
    let diff2: f64 = (0..tw.ncols()).map(|h| (tw[(i, h)] - tw[(j, h)]).powi(2)).sum();
    Ok(prior + 0.5 * k * ln_det_ratio - g.rho / (2.0 * g.sigma2) * diff2)
}

fn sigmoid_draw<R: Rng + ?Sized>(rng: &mut R, logodds: f64) -> bool {
    let prob = 1.0 / (1.0 + (-logodds).exp());
    rng.random::<f64>() < prob
}

/// One pass over every admissible edge. Returns the number of flips.
pub fn update_edges<R: Rng + ?Sized>(
    rng: &mut R,
    state: &mut ChainState,
    adjacency: &Adjacency,
    mode: EdgeMode,
) -> Result<usize> {
    let mut flips = 0;
    let rho = state.global.rho;
    let mut q = match mode {
        EdgeMode::ExactPrior => Some(leroux_precision(adjacency, &state.graph, rho)?),
        EdgeMode::PaperVerbatim => None,
    };
    for (e, &(i, j)) in adjacency.edges().iter().enumerate() {
        let was_on = state.graph.is_on(e);
        let on = match q.as_mut() {
            None => sigmoid_draw(rng, verbatim_logodds(state, i, j)),
            Some(q) => {
                if was_on {
                    toggle_precision(q, i, j, rho, false);
                }
                let on = sigmoid_draw(rng, exact_logodds(state, q, i, j)?);
                if on {
                    toggle_precision(q, i, j, rho, true);
                }
                on
            }
        };
        if on != was_on {
            flips += 1;
            state.graph.set(e, on);
        }
    }
    Ok(flips)
}

fn toggle_precision(q: &mut nalgebra::DMatrix<f64>, i: usize, j: usize, rho: f64, on: bool) {
    let s = if on { 1.0 } else { -1.0 };
    q[(i, i)] += s * rho;
    q[(j, j)] += s * rho;
    q[(i, j)] -= s * rho;
    q[(j, i)] -= s * rho;
}

/// Parameters of the Beta full conditional of the edge probability.
pub fn p_posterior_params(graph: &GraphState, adjacency: &Adjacency, hyper: &Hyperparams) -> (f64, f64) {
    let on = graph.n_on() as f64;
    (hyper.a + on, hyper.b + adjacency.n_edges() as f64 - on)
}

pub fn update_p<R: Rng + ?Sized>(
    rng: &mut R,
    state: &mut ChainState,
    adjacency: &Adjacency,
    hyper: &Hyperparams,
) -> Result<()> {
    let (a, b) = p_posterior_params(&state.graph, adjacency, hyper);
    // keep p strictly inside (0, 1) when the Beta draw rounds to an endpoint
    let p = sample_beta(rng, a, b)?;
    state.global.p = p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::RngHandle;
    use crate::model::{logmcar_logpdf, Area, GlobalState};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn dataset(groups: &[&[f64]]) -> AreaDataset {
        AreaDataset::new(
            groups
                .iter()
                .enumerate()
                .map(|(i, g)| Area { id: format!("a{i}"), observations: g.to_vec() })
                .collect(),
        )
        .unwrap()
    }

    fn state_with(tw: DMatrix<f64>, atoms: Vec<Atom>, adjacency: &Adjacency, sigma2: f64, p: f64, rho: f64, data: &AreaDataset) -> ChainState {
        ChainState {
            mixture: MixtureState {
                atoms,
                tw,
                allocations: (0..data.n_areas()).map(|i| vec![0; data.observations(i).len()]).collect(),
            },
            global: GlobalState { sigma2, p, rho },
            graph: GraphState::full(adjacency),
        }
    }

    #[test]
    fn single_component_allocations_are_all_zero() {
        let data = dataset(&[&[0.1, 3.0], &[-2.0]]);
        let mut m = MixtureState {
            atoms: vec![Atom::new(0.0, 1.0)],
            tw: DMatrix::zeros(2, 0),
            allocations: vec![vec![0, 0], vec![0]],
        };
        update_allocations(&mut RngHandle::new(1), &mut m, &data).unwrap();
        assert!(m.allocations.iter().flatten().all(|&s| s == 0));
    }

    #[test]
    fn degenerate_weights_force_the_allocation() {
        let eps = 1e-300f64;
        let tw = ((1.0 - eps) / eps).ln();
        let data = dataset(&[&[0.0, 1.0, -1.0, 5.0]]);
        let mut m = MixtureState {
            atoms: vec![Atom::new(0.0, 1.0), Atom::new(0.0, 1.0)],
            tw: DMatrix::from_element(1, 1, tw),
            allocations: vec![vec![1; 4]],
        };
        let mut rng = RngHandle::new(2);
        for _ in 0..1000 {
            update_allocations(&mut rng, &mut m, &data).unwrap();
            assert!(m.allocations[0].iter().all(|&s| s == 0));
        }
    }

    #[test]
    fn allocation_probability_example() {
        let atoms = [Atom::new(0.0, 1.0), Atom::new(4.0, 1.0)];
        let lp = allocation_log_probs(&[0.5f64.ln(); 2], &atoms, 0.0).unwrap();
        let phi = |z: f64| (-0.5 * z * z).exp();
        let expected = phi(0.0) / (phi(0.0) + phi(4.0));
        assert!((lp[0].exp() - expected).abs() < 1e-14);
        assert!((lp[0].exp() - 0.999665).abs() < 1e-6);

        let data = dataset(&[&[0.0; 1000]]);
        let mut m = MixtureState {
            atoms: atoms.to_vec(),
            tw: DMatrix::zeros(1, 1),
            allocations: vec![vec![0; 1000]],
        };
        let mut rng = RngHandle::new(3);
        let mut second = 0;
        for _ in 0..200 {
            update_allocations(&mut rng, &mut m, &data).unwrap();
            second += m.allocations[0].iter().filter(|&&s| s == 1).count();
        }
        let rate = second as f64 / 200_000.0;
        assert!((rate - (1.0 - expected)).abs() < 1.5e-4, "{rate}");
    }

    #[test]
    fn far_components_draw_in_log_space() {
        // 60 sd away; linear-space masses would both underflow
        let lp = allocation_log_probs(&[0.5f64.ln(); 2], &[Atom::new(60.0, 1.0), Atom::new(61.0, 1.0)], 0.0).unwrap();
        assert!((lp[0].exp() + lp[1].exp() - 1.0).abs() < 1e-12);
        assert!(lp[0].exp() > 0.99);
        let nan = allocation_log_probs(&[0.0], &[Atom::new(f64::NAN, 1.0)], 0.0);
        assert!(matches!(nan, Err(Error::Numerical(_))));
    }

    #[test]
    fn atom_posterior_examples() {
        let hyper = Hyperparams::default();
        let prior = atom_posterior(&hyper, &[]);
        assert_eq!(prior, NigParams { mu: 0.0, lambda: 0.1, c: 2.0, d: 2.0 });

        let post = atom_posterior(&hyper, &[1.0, 2.0, 3.0]);
        assert!((post.lambda - 3.1).abs() < 1e-14);
        assert!((post.mu - 6.0 / 3.1).abs() < 1e-14);
        assert!((post.mu - 1.935484).abs() < 1e-6);
        assert_eq!(post.c, 3.5);
        assert!((post.d - (2.0 + 0.5 * (2.0 + 0.1 * 3.0 * 4.0 / 3.1))).abs() < 1e-14);
        assert!((post.d - 3.193548).abs() < 1e-6);

        let strong = Hyperparams { lambda: 1e12, ..hyper };
        assert!((atom_posterior(&strong, &[10.0, 20.0]).mu - strong.mu0).abs() < 1e-6);
    }

    #[test]
    fn atom_posterior_matches_grid_integration() {
        let hyper = Hyperparams::default();
        let values = [1.0, 2.0, 3.0];
        let post = atom_posterior(&hyper, &values);
        // unnormalised posterior on a (mean, log variance) grid
        let (mut z, mut m1, mut v1) = (0.0, 0.0, 0.0);
        let nm = 800;
        let nl = 800;
        for a in 0..nm {
            let mu = -6.0 + 14.0 * (a as f64 + 0.5) / nm as f64;
            for b in 0..nl {
                let l = -5.0 + 10.0 * (b as f64 + 0.5) / nl as f64;
                let atom = Atom::new(mu, l.exp());
                let lp = hyper.ln_p0(&atom) + values.iter().map(|&y| atom.ln_pdf(y)).sum::<f64>() + l;
                let w = lp.exp();
                z += w;
                m1 += w * mu;
                v1 += w * atom.var;
            }
        }
        assert!((m1 / z - post.mu).abs() < 1e-3, "{}", m1 / z);
        assert!((v1 / z - post.d / (post.c - 1.0)).abs() < 1e-2, "{}", v1 / z);
    }

    #[test]
    fn atom_draws_have_posterior_moments() {
        let hyper = Hyperparams::default();
        let post = atom_posterior(&hyper, &[1.0, 2.0, 3.0]);
        let mut rng = RngHandle::new(4);
        let n = 100_000;
        let draws: Vec<Atom> = (0..n).map(|_| sample_nig(&mut rng, &post).unwrap()).collect();
        let mean = draws.iter().map(|a| a.mean).sum::<f64>() / n as f64;
        let var = draws.iter().map(|a| a.var).sum::<f64>() / n as f64;
        assert!((mean - post.mu).abs() < 0.01, "{mean}");
        assert!((var - post.d / (post.c - 1.0)).abs() < 0.02, "{var}");
    }

    #[test]
    fn weight_fullcond_examples() {
        let adj = Adjacency::new(1, []).unwrap();
        let data = dataset(&[&[0.0, 1.0]]);
        let st = state_with(DMatrix::zeros(1, 1), vec![Atom::new(0.0, 1.0); 2], &adj, 1.0, 0.5, 0.95, &data);
        let (m, v) = car_conditional(&st, &adj, 0, 0);
        assert_eq!(m, 0.0);
        assert!((v - 20.0).abs() < 1e-12);
        let (mean, var) = weight_fullcond_params(&st, &adj, &[1, 1], 0, 0, 0.5).unwrap();
        assert!(mean.abs() < 1e-15);
        assert!((var - 1.0 / 0.55).abs() < 1e-12);
        assert!((var - 1.818182).abs() < 1e-6);
        assert!(matches!(weight_fullcond_params(&st, &adj, &[1, 1], 0, 1, 0.5), Err(Error::Domain(_))));

        let adj = Adjacency::new(2, [(0, 1)]).unwrap();
        let data = dataset(&[&[0.0], &[1.0]]);
        let tw = DMatrix::from_column_slice(2, 1, &[0.0, 2.0]);
        let st = state_with(tw, vec![Atom::new(0.0, 1.0); 2], &adj, 1.0, 0.5, 0.95, &data);
        let (m, v) = car_conditional(&st, &adj, 0, 0);
        assert!((m - 1.9).abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn offset_includes_reference() {
        let row = [0.3, -1.0, 2.0];
        let direct = ((-1.0f64).exp() + 2.0f64.exp() + 1.0).ln();
        assert!((log_sum_others(&row, 0) - direct).abs() < 1e-14);
        assert_eq!(log_sum_others(&[0.7], 0), 0.0);
    }

    /// Single isolated area with all observations in the first component and
    /// the variance held fixed: compare the chain's mean weight against a
    /// 1-d quadrature of the exact posterior on the transformed weight.
    #[test]
    fn weight_chain_matches_quadrature() {
        let n_obs = 10;
        let data = dataset(&[&vec![0.0; n_obs]]);
        let adj = Adjacency::new(1, []).unwrap();
        let (sigma2, rho) = (1.0, 0.95);
        let mut st = state_with(DMatrix::zeros(1, 1), vec![Atom::new(0.0, 1.0); 2], &adj, sigma2, 0.5, rho, &data);
        let mut rng = RngHandle::new(5);
        let sweeps = 50_000;
        let mut acc = 0.0;
        for _ in 0..sweeps {
            update_weights(&mut rng, &mut st, &data, &adj, PolyaGamma::exact(), WeightScan::Systematic).unwrap();
            acc += st.mixture.weights(0)[0];
        }
        let chain = acc / sweeps as f64;

        let prior_var = sigma2 / (1.0 - rho);
        let (mut z, mut m) = (0.0, 0.0);
        for k in 0..200_000 {
            let t = -40.0 + 80.0 * (k as f64 + 0.5) / 200_000.0;
            let w = 1.0 / (1.0 + (-t).exp());
            let dens = (-0.5 * t * t / prior_var + n_obs as f64 * w.ln()).exp();
            z += dens;
            m += dens * w;
        }
        let oracle = m / z;
        assert!(chain > 0.9);
        assert!((chain - oracle).abs() < 0.005, "chain {chain} vs oracle {oracle}");
    }

    #[test]
    fn sigma2_posterior_examples() {
        let hyper = Hyperparams::default();
        let adj = Adjacency::new(2, [(0, 1)]).unwrap();
        let data = dataset(&[&[0.0], &[1.0]]);
        let st = state_with(DMatrix::from_element(2, 1, 1.0), vec![Atom::new(0.0, 1.0); 2], &adj, 1.0, 0.5, 0.5, &data);
        let (a, b) = sigma2_posterior_params(&st, &adj, &hyper).unwrap();
        assert_eq!(a, 8.0);
        assert!((b - 7.0).abs() < 1e-12);

        let zeros = state_with(DMatrix::zeros(2, 2), vec![Atom::new(0.0, 1.0); 3], &adj, 1.0, 0.5, 0.5, &data);
        assert_eq!(sigma2_posterior_params(&zeros, &adj, &hyper).unwrap(), (6.0 + 4.0, 6.0));

        let one = state_with(DMatrix::zeros(2, 0), vec![Atom::new(0.0, 1.0)], &adj, 1.0, 0.5, 0.5, &data);
        assert_eq!(sigma2_posterior_params(&one, &adj, &hyper).unwrap(), (6.0, 6.0));
    }

    #[test]
    fn sigma2_quadratic_ignores_edge_order() {
        let pairs = [(0, 1), (1, 2), (2, 3), (0, 3), (1, 3)];
        let mut reversed: Vec<_> = pairs.iter().rev().map(|&(i, j)| (j, i)).collect();
        reversed.push((1, 0));
        let a1 = Adjacency::new(4, pairs).unwrap();
        let a2 = Adjacency::new(4, reversed).unwrap();
        let data = dataset(&[&[0.0], &[0.0], &[0.0], &[0.0]]);
        let tw = DMatrix::from_row_slice(4, 2, &[0.3, -1.1, 2.2, 0.5, -0.4, 0.9, 1.7, -2.0]);
        let s1 = state_with(tw.clone(), vec![Atom::new(0.0, 1.0); 3], &a1, 1.0, 0.5, 0.9, &data);
        let s2 = state_with(tw, vec![Atom::new(0.0, 1.0); 3], &a2, 1.0, 0.5, 0.9, &data);
        let hyper = Hyperparams::default();
        assert_eq!(
            sigma2_posterior_params(&s1, &a1, &hyper).unwrap(),
            sigma2_posterior_params(&s2, &a2, &hyper).unwrap()
        );
    }

    #[test]
    fn edge_logodds_examples() {
        let adj = Adjacency::new(2, [(0, 1)]).unwrap();
        let data = dataset(&[&[0.0], &[1.0]]);
        let ortho = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        let st = state_with(ortho, vec![Atom::new(0.0, 1.0); 3], &adj, 1.0, 0.2, 0.95, &data);
        let lo = edge_logodds(&st, &adj, 0, 1, EdgeMode::PaperVerbatim).unwrap();
        assert!((lo - 0.25f64.ln()).abs() < 1e-14);

        let tw = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let fair = state_with(tw.clone(), vec![Atom::new(0.0, 1.0); 3], &adj, 1.0, 0.5, 0.0, &data);
        assert_eq!(edge_logodds(&fair, &adj, 0, 1, EdgeMode::PaperVerbatim).unwrap(), 0.0);

        let st = state_with(tw, vec![Atom::new(0.0, 1.0); 3], &adj, 1.0, 0.2, 0.95, &data);
        let lo = edge_logodds(&st, &adj, 1, 0, EdgeMode::PaperVerbatim).unwrap();
        assert!((lo - (0.25f64.ln() + 0.475 * 4.0)).abs() < 1e-12);
        assert!((lo - 0.513706).abs() < 1e-6);

        let adj3 = Adjacency::new(3, [(0, 1)]).unwrap();
        let data3 = dataset(&[&[0.0], &[1.0], &[2.0]]);
        let st3 = state_with(DMatrix::zeros(3, 1), vec![Atom::new(0.0, 1.0); 2], &adj3, 1.0, 0.5, 0.5, &data3);
        assert!(matches!(edge_logodds(&st3, &adj3, 0, 2, EdgeMode::PaperVerbatim), Err(Error::Domain(_))));
    }

    #[test]
    fn exact_edge_logodds_matches_density_difference() {
        let adj = Adjacency::new(4, [(0, 1), (1, 2), (2, 3), (0, 3), (0, 2)]).unwrap();
        let data = dataset(&[&[0.0], &[0.0], &[0.0], &[0.0]]);
        let tw = DMatrix::from_row_slice(4, 2, &[0.3, -1.1, 2.2, 0.5, -0.4, 0.9, 1.7, -2.0]);
        let mut st = state_with(tw, vec![Atom::new(0.0, 1.0); 3], &adj, 1.3, 0.3, 0.9, &data);
        st.graph.set(1, false);
        for (e, &(i, j)) in adj.edges().iter().enumerate() {
            let mut on = st.graph.clone();
            on.set(e, true);
            let mut off = st.graph.clone();
            off.set(e, false);
            let g = &st.global;
            let direct = (g.p / (1.0 - g.p)).ln()
                + logmcar_logpdf(&st.mixture.tw, g.sigma2, &on, &adj, g.rho).unwrap()
                - logmcar_logpdf(&st.mixture.tw, g.sigma2, &off, &adj, g.rho).unwrap();
            let lo = edge_logodds(&st, &adj, i, j, EdgeMode::ExactPrior).unwrap();
            assert!((lo - direct).abs() < 1e-10, "edge {e}: {lo} vs {direct}");
        }
    }

    #[test]
    fn exact_edge_pass_keeps_precision_in_sync() {
        // after a pass with incremental precision updates, the tracked state
        // must agree with per-edge recomputation
        let adj = Adjacency::complete(5);
        let data = dataset(&[&[0.0], &[0.0], &[0.0], &[0.0], &[0.0]]);
        let tw = DMatrix::from_fn(5, 2, |i, h| (i as f64 - 2.0) * (h as f64 + 0.5));
        let mut st = state_with(tw, vec![Atom::new(0.0, 1.0); 3], &adj, 1.0, 0.5, 0.9, &data);
        let mut a = RngHandle::new(9);
        let mut b = RngHandle::new(9);
        let mut reference = st.clone();
        update_edges(&mut a, &mut st, &adj, EdgeMode::ExactPrior).unwrap();
        for (e, &(i, j)) in adj.edges().iter().enumerate() {
            let lo = edge_logodds(&reference, &adj, i, j, EdgeMode::ExactPrior).unwrap();
            let on = sigmoid_draw(&mut b, lo);
            reference.graph.set(e, on);
        }
        assert_eq!(st.graph, reference.graph);
    }

    #[test]
    fn p_posterior_examples() {
        let hyper = Hyperparams::default();
        let pairs: Vec<_> = (0..6).flat_map(|r| (0..5).map(move |c| (r * 6 + c, r * 6 + c + 1))).chain((0..5).flat_map(|r| (0..6).map(move |c| (r * 6 + c, r * 6 + c + 6)))).collect();
        let adj = Adjacency::new(36, pairs).unwrap();
        assert_eq!(adj.n_edges(), 60);
        assert_eq!(p_posterior_params(&GraphState::full(&adj), &adj, &hyper), (62.0, 36.0));
        assert_eq!(p_posterior_params(&GraphState::empty(&adj), &adj, &hyper), (2.0, 96.0));
        let none = Adjacency::new(3, []).unwrap();
        assert_eq!(p_posterior_params(&GraphState::full(&none), &none, &hyper), (2.0, 36.0));
    }

    #[test]
    fn sweep_respects_disabled_blocks() {
        let adj = Adjacency::new(2, [(0, 1)]).unwrap();
        let data = dataset(&[&[0.0, 1.0, -1.0], &[4.0, 5.0, 3.5]]);
        let mut st = state_with(DMatrix::zeros(2, 1), vec![Atom::new(0.0, 1.0), Atom::new(4.0, 1.0)], &adj, 1.0, 0.5, 0.9, &data);
        let frozen = st.clone();
        let opts = SweepOptions {
            blocks: SweepBlocks { allocations: true, atoms: false, weights: false, sigma2: false, edges: false, p: false },
            ..Default::default()
        };
        let mut stats = SweepStats::default();
        sweep(&mut RngHandle::new(1), &mut st, &data, &adj, &Hyperparams::default(), &opts, &mut stats).unwrap();
        assert_eq!(st.mixture.atoms, frozen.mixture.atoms);
        assert_eq!(st.mixture.tw, frozen.mixture.tw);
        assert_eq!(st.global, frozen.global);
        assert_eq!(st.graph, frozen.graph);
        assert_eq!(stats.sweeps, 1);
    }

    proptest! {
        #[test]
        fn edge_data_term_is_antisymmetric(
            row_i in proptest::collection::vec(-5.0f64..5.0, 3),
            row_j in proptest::collection::vec(-5.0f64..5.0, 3),
            p in 0.01f64..0.99,
            sigma2 in 0.1f64..4.0,
            rho in 0.0f64..0.99,
        ) {
            let adj = Adjacency::new(2, [(0, 1)]).unwrap();
            let data = dataset(&[&[0.0], &[0.0]]);
            let tw = DMatrix::from_fn(2, 3, |i, h| if i == 0 { row_i[h] } else { row_j[h] });
            let mut st = state_with(tw, vec![Atom::new(0.0, 1.0); 4], &adj, sigma2, p, rho, &data);
            let prior = (p / (1.0 - p)).ln();
            let plus = edge_data_term(&st, 0, 1);
            prop_assert_eq!(edge_logodds(&st, &adj, 0, 1, EdgeMode::PaperVerbatim).unwrap(), prior + plus);
            for h in 0..3 {
                st.mixture.tw[(1, h)] = -st.mixture.tw[(1, h)];
            }
            prop_assert_eq!(edge_data_term(&st, 0, 1), -plus);
        }

        #[test]
        fn sweeps_preserve_state_invariants(seed in any::<u64>(), mode in prop_oneof![Just(EdgeMode::PaperVerbatim), Just(EdgeMode::ExactPrior)]) {
            let adj = Adjacency::new(3, [(0, 1), (1, 2)]).unwrap();
            let data = dataset(&[&[-3.0, -2.5, 0.1], &[0.0, 0.4, 5.0], &[4.0, 4.4, 3.9]]);
            let atoms = vec![Atom::new(-3.0, 1.0), Atom::new(0.0, 1.0), Atom::new(4.0, 1.0)];
            let mut st = state_with(DMatrix::zeros(3, 2), atoms, &adj, 1.0, 0.5, 0.95, &data);
            let mut rng = RngHandle::new(seed);
            let opts = SweepOptions { edge_mode: mode, ..Default::default() };
            let mut stats = SweepStats::default();
            for _ in 0..20 {
                sweep(&mut rng, &mut st, &data, &adj, &Hyperparams::default(), &opts, &mut stats).unwrap();
                prop_assert!(st.validate(&data, &adj).is_ok());
            }
        }
    }
}

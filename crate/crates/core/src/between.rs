//! Reversible-jump move on the number of mixture components.
//!
//! A birth appends one component: a new transformed-weight column `c` (one
//! entry per area) and a new atom `(m, exp(l))`. The proposal is the Laplace
//! approximation of the conditional posterior of `theta = (c, m, l)` given the
//! rest of the state, with allocations marginalised out. A death removes a
//! uniformly chosen non-reference component and evaluates the Laplace density
//! fitted from the reduced state at the removed coordinates, so the two ratio
//! formulas are exact reciprocals.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{mvn_precision_ln_pdf, sample_mvn_factor};
use crate::error::{Error, Result};
use crate::linalg::CholFactor;
use crate::model::{
    leroux_precision, logmcar_with_factor, Adjacency, AreaDataset, Atom, ChainState, Hyperparams,
    MixtureState,
};
use crate::within::update_allocations;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Acceptance-ratio variant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RjMode {
    /// The new component always becomes the last non-reference component.
    #[default]
    PaperVerbatim,
    /// The new component is inserted at a uniformly chosen non-reference slot,
    /// mirroring the uniform choice of the death move in the labelled space.
    ExactRj,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            grad_tol: 1e-6,
            max_iter: 100,
        }
    }
}

/// Gaussian approximation `N(mu_star, v_star)` of the new component's
/// conditional posterior. Coordinates: `I` weight entries, atom mean, atom
/// log variance.
#[derive(Debug, Clone)]
pub struct LaplaceFit {
    pub mu_star: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Diagonal jitter added to the negative Hessian before factorisation.
    pub jitter: f64,
    pub grad_norm: f64,
    precision: CholFactor,
}

impl LaplaceFit {
    /// Covariance `v_star`, the inverse of the (jittered) negative Hessian.
    pub fn v_star(&self) -> DMatrix<f64> {
        self.precision.inverse()
    }

    pub fn ln_density(&self, theta: &DVector<f64>) -> f64 {
        mvn_precision_ln_pdf(theta, &self.mu_star, &self.precision)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        sample_mvn_factor(rng, &self.mu_star, &self.precision)
    }
}

/// Allocation-marginalised log likelihood `sum_i sum_j log f_i(y_ij)`.
pub fn marginal_mixture_loglik(data: &AreaDataset, tw: &DMatrix<f64>, atoms: &[Atom]) -> f64 {
    let mut total = 0.0;
    let mut lp = vec![0.0; atoms.len()];
    for i in 0..data.n_areas() {
        let row: Vec<f64> = tw.row(i).iter().copied().collect();
        let lw = crate::model::log_inverse_alr(&row);
        for &y in data.observations(i) {
            for (k, a) in atoms.iter().enumerate() {
                lp[k] = lw[k] + a.ln_pdf(y);
            }
            total += log_sum_exp(&lp);
        }
    }
    total
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[inline]
fn log_add_exp(a: f64, b: f64) -> f64 {
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Log posterior of the collapsed state up to a constant that does not depend
/// on `H`: mixture likelihood, logistic CAR prior of the weights, base measure
/// of the atoms and the prior on `H`.
pub fn log_joint(state: &ChainState, data: &AreaDataset, adjacency: &Adjacency, hyper: &Hyperparams) -> Result<f64> {
    let m = &state.mixture;
    let q = leroux_precision(adjacency, &state.graph, state.global.rho)?;
    let factor = CholFactor::new(&q)?;
    let car = logmcar_with_factor(&m.tw, state.global.sigma2, &factor);
    let p0: f64 = m.atoms.iter().map(|a| hyper.ln_p0(a)).sum();
    Ok(marginal_mixture_loglik(data, &m.tw, &m.atoms) + car + p0 + hyper.ln_prior_h(m.n_components()))
}

/// The extended conditional posterior of a candidate component, with the
/// parts that do not depend on the candidate precomputed.
pub struct ExtendedTarget<'a> {
    data: &'a AreaDataset,
    hyper: Hyperparams,
    /// `log sum_k exp(tw_ik + log N(y | tau_k))` over the existing components.
    base: Vec<Vec<f64>>,
    /// `log(1 + sum_k exp(tw_ik))` per area.
    lse_old: Vec<f64>,
    q: DMatrix<f64>,
    q_factor: CholFactor,
    sigma2: f64,
}

impl<'a> ExtendedTarget<'a> {
    pub fn new(state: &ChainState, data: &'a AreaDataset, adjacency: &Adjacency, hyper: &Hyperparams) -> Result<Self> {
        let m = &state.mixture;
        let q = leroux_precision(adjacency, &state.graph, state.global.rho)?;
        let q_factor = CholFactor::new(&q)?;
        let h = m.n_components();
        let mut base = Vec::with_capacity(data.n_areas());
        let mut lse_old = Vec::with_capacity(data.n_areas());
        let mut lp = vec![0.0; h];
        for i in 0..data.n_areas() {
            let mut logits: Vec<f64> = m.tw.row(i).iter().copied().collect();
            logits.push(0.0);
            lse_old.push(log_sum_exp(&logits));
            base.push(
                data.observations(i)
                    .iter()
                    .map(|&y| {
                        for k in 0..h {
                            lp[k] = logits[k] + m.atoms[k].ln_pdf(y);
                        }
                        log_sum_exp(&lp)
                    })
                    .collect(),
            );
        }
        Ok(ExtendedTarget {
            data,
            hyper: *hyper,
            base,
            lse_old,
            q,
            q_factor,
            sigma2: state.global.sigma2,
        })
    }

    pub fn dim(&self) -> usize {
        self.data.n_areas() + 2
    }

    fn split<'t>(&self, theta: &'t [f64]) -> (&'t [f64], f64, f64) {
        let n = self.data.n_areas();
        (&theta[..n], theta[n], theta[n + 1])
    }

    /// Log base measure of the new atom plus the log-variance Jacobian.
    fn p0_term(&self, m: f64, l: f64) -> f64 {
        self.hyper.ln_p0(&Atom::new(m, l.exp())) + l
    }

    fn car_term(&self, c: &[f64]) -> f64 {
        let n = c.len() as f64;
        0.5 * self.q_factor.log_det() - 0.5 * n * (LN_2PI + self.sigma2.ln())
            - 0.5 * self.q_factor.quad_form(c) / self.sigma2
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let (c, m, l) = self.split(theta);
        let atom = Atom::new(m, l.exp());
        let mut mix = 0.0;
        for (i, ys) in self.data.areas().iter().enumerate() {
            let ci = c[i];
            for (j, &y) in ys.observations.iter().enumerate() {
                mix += log_add_exp(self.base[i][j], ci + atom.ln_pdf(y));
            }
            mix -= ys.observations.len() as f64 * log_add_exp(self.lse_old[i], ci);
        }
        mix + self.car_term(c) + self.p0_term(m, l)
    }

    /// Value, gradient and Hessian.
    pub fn derivatives(&self, theta: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let n_areas = self.data.n_areas();
        let dim = n_areas + 2;
        let (c, m, l) = self.split(theta);
        let s2 = l.exp();
        let atom = Atom::new(m, s2);
        let (im, il) = (n_areas, n_areas + 1);
        let mut g = DVector::zeros(dim);
        let mut hess = DMatrix::zeros(dim, dim);
        let mut value = 0.0;
        for (i, area) in self.data.areas().iter().enumerate() {
            let ci = c[i];
            let (mut g_c, mut h_cc, mut h_cm, mut h_cl) = (0.0, 0.0, 0.0, 0.0);
            for (j, &y) in area.observations.iter().enumerate() {
                let a_new = ci + atom.ln_pdf(y);
                let total = log_add_exp(self.base[i][j], a_new);
                value += total;
                let r = (a_new - total).exp();
                let z = y - m;
                let u1 = z / s2;
                let u2 = -0.5 + 0.5 * z * z / s2;
                let rr = r * (1.0 - r);
                g_c += r;
                g[im] += r * u1;
                g[il] += r * u2;
                h_cc += rr;
                h_cm += rr * u1;
                h_cl += rr * u2;
                hess[(im, im)] += -r / s2 + rr * u1 * u1;
                hess[(im, il)] += -r * z / s2 + rr * u1 * u2;
                hess[(il, il)] += -r * 0.5 * z * z / s2 + rr * u2 * u2;
            }
            let n_i = area.observations.len() as f64;
            let lse = log_add_exp(self.lse_old[i], ci);
            let w = (ci - lse).exp();
            value -= n_i * lse;
            g[i] += g_c - n_i * w;
            hess[(i, i)] += h_cc - n_i * w * (1.0 - w);
            hess[(i, im)] += h_cm;
            hess[(i, il)] += h_cl;
        }
        // CAR prior on the new column
        let cv = DVector::from_column_slice(c);
        let qc = &self.q * &cv;
        value += self.car_term(c);
        for i in 0..n_areas {
            g[i] -= qc[i] / self.sigma2;
            for k in 0..n_areas {
                hess[(i, k)] -= self.q[(i, k)] / self.sigma2;
            }
        }
        // base measure and Jacobian: const - (c + 1/2) l - (lambda (m - mu0)^2 / 2 + d) e^{-l}
        let h = &self.hyper;
        let dm = m - h.mu0;
        let e = (-l).exp();
        let k = 0.5 * h.lambda * dm * dm + h.d;
        value += self.p0_term(m, l);
        g[im] -= h.lambda * dm * e;
        g[il] += -(h.c + 0.5) + k * e;
        hess[(im, im)] -= h.lambda * e;
        hess[(im, il)] += h.lambda * dm * e;
        hess[(il, il)] -= k * e;
        // symmetrise the upper-filled cross terms
        for i in 0..dim {
            for k in (i + 1)..dim {
                if i >= n_areas || k >= n_areas {
                    hess[(k, i)] = hess[(i, k)];
                }
            }
        }
        (value, g, hess)
    }
}

/// Extended log posterior of a candidate `(c, m, log s2)` appended to the
/// current state.
pub fn extended_logpost(
    state: &ChainState,
    data: &AreaDataset,
    adjacency: &Adjacency,
    hyper: &Hyperparams,
    candidate: &[f64],
) -> Result<f64> {
    let target = ExtendedTarget::new(state, data, adjacency, hyper)?;
    check_candidate(&target, candidate)?;
    Ok(target.value(candidate))
}

/// Analytic gradient of [`extended_logpost`].
pub fn extended_logpost_gradient(
    state: &ChainState,
    data: &AreaDataset,
    adjacency: &Adjacency,
    hyper: &Hyperparams,
    candidate: &[f64],
) -> Result<DVector<f64>> {
    let target = ExtendedTarget::new(state, data, adjacency, hyper)?;
    check_candidate(&target, candidate)?;
    Ok(target.derivatives(candidate).1)
}

fn check_candidate(target: &ExtendedTarget, candidate: &[f64]) -> Result<()> {
    if candidate.len() != target.dim() {
        return Err(Error::Config(format!(
            "candidate has length {} but {} is required",
            candidate.len(),
            target.dim()
        )));
    }
    if candidate.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("candidate has non-finite entries".into()));
    }
    Ok(())
}

/// Newton starting point: zero weight column, a uniformly chosen pooled
/// observation as the mean, the log of the pooled variance.
pub fn newton_start<R: Rng + ?Sized>(rng: &mut R, data: &AreaDataset) -> DVector<f64> {
    let n = data.n_areas();
    let total = data.total_observations();
    let pick = rng.random_range(0..total);
    let y = data.pooled().nth(pick).expect("index within pooled data");
    let (_, var) = data.pooled_mean_var();
    let mut theta = DVector::zeros(n + 2);
    theta[n] = y;
    theta[n + 1] = var.max(1e-8).ln();
    theta
}

/// Damped Newton ascent on the extended log posterior, then the Laplace
/// covariance at the optimum.
pub fn laplace_fit(target: &ExtendedTarget, start: &DVector<f64>, opts: &NewtonOptions) -> Result<LaplaceFit> {
    let mut theta = start.clone();
    let (mut f, mut g, mut hess) = target.derivatives(theta.as_slice());
    if !f.is_finite() {
        return Err(Error::Numerical("extended log posterior is not finite at the start".into()));
    }
    let mut iterations = 0;
    let mut converged = g.amax() < opts.grad_tol;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let neg = -&hess;
        let (factor, _) = CholFactor::with_jitter(&neg, 1e-8, 1e8)?;
        let step = factor.solve(&g);
        let slope = g.dot(&step);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..50 {
            let trial = &theta + t * &step;
            let ft = target.value(trial.as_slice());
            if ft.is_finite() && ft >= f + 1e-4 * t * slope {
                theta = trial;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
        let d = target.derivatives(theta.as_slice());
        f = d.0;
        g = d.1;
        hess = d.2;
        converged = g.amax() < opts.grad_tol;
    }
    let neg = -&hess;
    let (precision, jitter, pd) = match CholFactor::with_jitter(&neg, 1e-8, 1e-2) {
        Ok((factor, jitter)) => (factor, jitter, true),
        Err(_) => (CholFactor::with_jitter(&neg, 1e-8, 1e12)?.0, f64::NAN, false),
    };
    Ok(LaplaceFit {
        mu_star: theta,
        converged: converged && pd,
        iterations,
        jitter,
        grad_norm: g.amax(),
        precision,
    })
}

/// Copy of `state` with the candidate component inserted at non-reference
/// slot `slot` (`0..=H-1`), and the candidate as stored in that state (the
/// log variance round-trips through `exp`).
pub fn birth_state(state: &ChainState, theta: &DVector<f64>, slot: usize) -> (ChainState, DVector<f64>) {
    let m = &state.mixture;
    let n = m.n_areas();
    let h = m.n_components();
    assert!(slot < h, "slot {slot} out of range for {h} components");
    let new_col = DVector::from_iterator(n, theta.iter().take(n).copied());
    let tw = m.tw.clone().insert_column(slot, 0.0);
    let mut tw = tw;
    tw.set_column(slot, &new_col);
    let mut atoms = m.atoms.clone();
    let atom = Atom::new(theta[n], theta[n + 1].exp());
    atoms.insert(slot, atom);
    let allocations = m
        .allocations
        .iter()
        .map(|a| a.iter().map(|&s| if s >= slot { s + 1 } else { s }).collect())
        .collect();
    let mut stored = theta.clone();
    stored[n + 1] = atom.var.ln();
    (
        ChainState {
            mixture: MixtureState { atoms, tw, allocations },
            global: state.global,
            graph: state.graph.clone(),
        },
        stored,
    )
}

/// Copy of `state` without non-reference component `r`, and the removed
/// coordinates `(column, mean, log variance)`.
pub fn death_state(state: &ChainState, r: usize) -> (ChainState, DVector<f64>) {
    let m = &state.mixture;
    let n = m.n_areas();
    let h = m.n_components();
    assert!(h >= 2 && r + 1 < h, "component {r} is not removable among {h}");
    let mut theta = DVector::zeros(n + 2);
    for i in 0..n {
        theta[i] = m.tw[(i, r)];
    }
    theta[n] = m.atoms[r].mean;
    theta[n + 1] = m.atoms[r].var.ln();
    let tw = m.tw.clone().remove_column(r);
    let mut atoms = m.atoms.clone();
    atoms.remove(r);
    // labels of the removed component are placeholders until resampled
    let allocations = m
        .allocations
        .iter()
        .map(|a| a.iter().map(|&s| if s > r { s - 1 } else if s == r { 0 } else { s }).collect())
        .collect();
    (
        ChainState {
            mixture: MixtureState { atoms, tw, allocations },
            global: state.global,
            graph: state.graph.clone(),
        },
        theta,
    )
}

/// `log A` of a birth from `current` to `proposed` with candidate `theta`
/// drawn from `fit`. `log_target` is any log posterior over collapsed states.
pub fn birth_log_ratio<F>(log_target: F, current: &ChainState, proposed: &ChainState, fit: &LaplaceFit, theta: &DVector<f64>) -> Result<f64>
where
    F: Fn(&ChainState) -> Result<f64>,
{
    let l_new = theta[theta.len() - 1];
    Ok(log_target(proposed)? - log_target(current)? - (fit.ln_density(theta) - l_new))
}

/// `log A` of a death from `current` to `reduced`, where `theta` are the
/// removed coordinates and `fit` was fitted from `reduced`.
pub fn death_log_ratio<F>(log_target: F, current: &ChainState, reduced: &ChainState, fit: &LaplaceFit, theta: &DVector<f64>) -> Result<f64>
where
    F: Fn(&ChainState) -> Result<f64>,
{
    let l_old = theta[theta.len() - 1];
    // grouped as the negated birth ratio so that the two cancel bit for bit
    Ok(-(log_target(current)? - log_target(reduced)? - (fit.ln_density(theta) - l_old)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    Birth,
    Death,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RjOutcome {
    pub kind: MoveKind,
    pub accepted: bool,
    /// Laplace fit failed; the state is unchanged.
    pub skipped: bool,
    /// `log A`, absent when skipped or out of support.
    pub log_ratio: Option<f64>,
}

/// Counters of the reversible-jump move.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RjStats {
    pub births_proposed: u64,
    pub births_accepted: u64,
    pub deaths_proposed: u64,
    pub deaths_accepted: u64,
    /// Deaths proposed at `H = 1`.
    pub deaths_out_of_support: u64,
    pub skipped: u64,
    pub newton_iterations: u64,
}

impl RjStats {
    pub fn record(&mut self, outcome: &RjOutcome) {
        match outcome.kind {
            MoveKind::Birth => {
                self.births_proposed += 1;
                self.births_accepted += outcome.accepted as u64;
            }
            MoveKind::Death => {
                self.deaths_proposed += 1;
                self.deaths_accepted += outcome.accepted as u64;
            }
        }
        self.skipped += outcome.skipped as u64;
    }

    pub fn acceptance_rate(&self) -> f64 {
        let proposed = self.births_proposed + self.deaths_proposed;
        if proposed == 0 {
            0.0
        } else {
            (self.births_accepted + self.deaths_accepted) as f64 / proposed as f64
        }
    }
}

/// One reversible-jump step: birth or death with probability 1/2 each.
#[allow(clippy::too_many_arguments)]
pub fn rj_step<R: Rng + ?Sized>(
    rng: &mut R,
    state: &mut ChainState,
    data: &AreaDataset,
    adjacency: &Adjacency,
    hyper: &Hyperparams,
    mode: RjMode,
    newton: &NewtonOptions,
    stats: &mut RjStats,
) -> Result<RjOutcome> {
    let target = |s: &ChainState| log_joint(s, data, adjacency, hyper);
    let h = state.mixture.n_components();
    let birth = rng.random::<f64>() < 0.5;
    let outcome = if birth {
        let start = newton_start(rng, data);
        let ext = ExtendedTarget::new(state, data, adjacency, hyper)?;
        let fit = laplace_fit(&ext, &start, newton)?;
        stats.newton_iterations += fit.iterations as u64;
        if !fit.converged {
            RjOutcome { kind: MoveKind::Birth, accepted: false, skipped: true, log_ratio: None }
        } else {
            let theta = fit.sample(rng);
            let slot = match mode {
                RjMode::PaperVerbatim => h - 1,
                RjMode::ExactRj => rng.random_range(0..h),
            };
            let (proposed, theta) = birth_state(state, &theta, slot);
            let log_a = birth_log_ratio(target, state, &proposed, &fit, &theta)?;
            let accepted = accept(rng, log_a);
            if accepted {
                *state = proposed;
            }
            RjOutcome { kind: MoveKind::Birth, accepted, skipped: false, log_ratio: Some(log_a) }
        }
    } else if h == 1 {
        stats.deaths_out_of_support += 1;
        RjOutcome { kind: MoveKind::Death, accepted: false, skipped: false, log_ratio: None }
    } else {
        let r = rng.random_range(0..h - 1);
        let start = newton_start(rng, data);
        let (reduced, theta) = death_state(state, r);
        let ext = ExtendedTarget::new(&reduced, data, adjacency, hyper)?;
        let fit = laplace_fit(&ext, &start, newton)?;
        stats.newton_iterations += fit.iterations as u64;
        if !fit.converged {
            RjOutcome { kind: MoveKind::Death, accepted: false, skipped: true, log_ratio: None }
        } else {
            let log_a = death_log_ratio(target, state, &reduced, &fit, &theta)?;
            let accepted = accept(rng, log_a);
            if accepted {
                *state = reduced;
            }
            RjOutcome { kind: MoveKind::Death, accepted, skipped: false, log_ratio: Some(log_a) }
        }
    };
    if outcome.accepted {
        update_allocations(rng, &mut state.mixture, data)?;
    }
    stats.record(&outcome);
    Ok(outcome)
}

fn accept<R: Rng + ?Sized>(rng: &mut R, log_a: f64) -> bool {
    if log_a.is_nan() {
        return false;
    }
    log_a >= 0.0 || rng.random::<f64>().ln() < log_a
}

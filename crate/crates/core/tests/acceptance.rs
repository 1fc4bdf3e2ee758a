//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=1,3,na` restricts the run to the listed criteria.
//! The process exits non-zero on a failure only when `ACCEPTANCE_STRICT=1`.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use boundary_core::between::{
    birth_log_ratio, birth_state, death_log_ratio, death_state, laplace_fit, log_joint, newton_start,
    ExtendedTarget, NewtonOptions,
};
use boundary_core::distributions::{
    sample_invgamma, sample_polya_gamma, split_seed, standard_normal, PolyaGamma, RngHandle,
};
use boundary_core::inference::{
    boundary_graph, confusion_metrics, default_grid, density_estimate, dtm_dfm, edge_inclusion,
    l1_distance, median_graph, posterior_h, posterior_mean_density, BoundaryGraph,
};
use boundary_core::model::{
    logmcar_logpdf, Adjacency, Area, AreaDataset, Atom, ChainState, GlobalState, GraphState,
    Hyperparams, MixtureState,
};
use boundary_core::sampler::{initial_state, run_chain, ChainConfig, ChainOutput, Snapshot};
use boundary_core::scenarios::{simulate, Scenario, ScenarioName};
use boundary_core::within::{self, EdgeMode, SweepBlocks, SweepOptions, SweepStats};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

struct Report {
    only: Option<Vec<String>>,
    failed: Vec<String>,
}

impl Report {
    fn wants(&self, id: &str) -> bool {
        self.only.as_ref().is_none_or(|ids| ids.iter().any(|x| x == id))
    }

    fn line(&mut self, id: &str, pass: bool, detail: String) {
        println!("{} {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(id.to_string());
        }
    }

    fn info(&self, id: &str, detail: String) {
        println!("INFO {id}: {detail}");
    }
}

fn main() {
    let only = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').map(|t| t.trim().to_lowercase()).filter(|t| !t.is_empty()).collect());
    let mut report = Report { only, failed: Vec::new() };
    let criteria: [(&str, fn(&mut Report)); 12] = [
        ("1", logmcar_oracle),
        ("2", gibbs_toy),
        ("3", pg_moments),
        ("4", laplace_checks),
        ("5", rj_toy),
        ("6", overfitting),
        ("7", precision_table),
        ("8", precision_table),
        ("9", mean_l1),
        ("10", density_bands),
        ("11", structure_learning),
        ("na", missing_distances),
    ];
    let mut table_done = false;
    for (id, run) in criteria {
        if !report.wants(id) {
            continue;
        }
        // 7 and 8 share their runs
        if id == "7" || id == "8" {
            if table_done {
                continue;
            }
            table_done = true;
        }
        let t = Instant::now();
        run(&mut report);
        eprintln!("[criterion {id}: {:.1} s]", t.elapsed().as_secs_f64());
    }
    println!("acceptance: {} failure(s) {:?}", report.failed.len(), report.failed);
    if std::env::var("ACCEPTANCE_STRICT").as_deref() == Ok("1") && !report.failed.is_empty() {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- helpers

fn dataset(areas: &[&[f64]]) -> AreaDataset {
    AreaDataset::new(
        areas
            .iter()
            .enumerate()
            .map(|(i, ys)| Area { id: format!("a{i}"), observations: ys.to_vec() })
            .collect(),
    )
    .unwrap()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 { xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, v.sqrt())
}

fn fit(scenario: &Scenario, seed: u64, n: usize, burn: usize, rho: f64, fixed_h: Option<usize>) -> ChainOutput {
    let mut hyper = scenario.hyperparams();
    hyper.rho = rho;
    let cfg = ChainConfig {
        n_iterations: n,
        burn_in: burn,
        seed,
        hyperparams: hyper,
        rj_enabled: fixed_h.is_none(),
        fixed_h,
        ..Default::default()
    };
    run_chain(&cfg, &scenario.data, &scenario.adjacency).unwrap()
}

fn true_boundary(s: &Scenario) -> BoundaryGraph {
    BoundaryGraph::from_edges(s.truth.boundary_edges.clone().unwrap())
}

fn precision_of(s: &Scenario, out: &ChainOutput, gamma: f64) -> f64 {
    let probs = edge_inclusion(&out.records, &out.edge_list).unwrap();
    let est = boundary_graph(&probs, gamma).unwrap();
    confusion_metrics(&est, &true_boundary(s), &s.adjacency).unwrap().precision
}

fn mean_area_l1(s: &Scenario, records: &[Snapshot]) -> f64 {
    let grid = default_grid(&s.data);
    let n = s.data.n_areas();
    (0..n)
        .map(|i| {
            let est = posterior_mean_density(records, i, &grid).unwrap();
            let truth: Vec<f64> = grid.iter().map(|&x| s.truth.densities[i].pdf(x)).collect();
            l1_distance(&est, &truth, &grid).unwrap()
        })
        .sum::<f64>()
        / n as f64
}

fn pmf_text(records: &[Snapshot]) -> String {
    let post = posterior_h(records).unwrap();
    post.pmf.iter().map(|(h, p)| format!("{h}:{p:.3}")).collect::<Vec<_>>().join(" ")
}

// ------------------------------------------------------- 1. logMCAR oracle

/// Dense multivariate normal log density of the columns of `tw`, with the
/// precision assembled here from the edge list.
fn dense_logmcar(tw: &DMatrix<f64>, sigma2: f64, on_edges: &[(usize, usize)], rho: f64) -> f64 {
    let n = tw.nrows();
    let mut q = DMatrix::<f64>::zeros(n, n);
    for &(i, j) in on_edges {
        q[(i, j)] -= rho;
        q[(j, i)] -= rho;
        q[(i, i)] += rho;
        q[(j, j)] += rho;
    }
    for i in 0..n {
        q[(i, i)] += 1.0 - rho;
    }
    let cov = q.try_inverse().unwrap() * sigma2;
    let prec = cov.clone().try_inverse().unwrap();
    let ln_det = cov.lu().determinant().ln();
    (0..tw.ncols())
        .map(|h| {
            let x = tw.column(h).into_owned();
            -0.5 * (n as f64 * LN_2PI + ln_det) - 0.5 * (x.transpose() * &prec * &x)[(0, 0)]
        })
        .sum()
}

fn logmcar_oracle(report: &mut Report) {
    let mut rng = RngHandle::new(101);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(1..=5);
        let h = rng.random_range(1..=4);
        let all: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let admissible: Vec<(usize, usize)> = all.into_iter().filter(|_| rng.random::<f64>() < 0.7).collect();
        let adj = Adjacency::new(n, admissible).unwrap();
        let bits: Vec<bool> = (0..adj.n_edges()).map(|_| rng.random::<f64>() < 0.6).collect();
        let on: Vec<(usize, usize)> = adj.edges().iter().zip(&bits).filter(|(_, &b)| b).map(|(&e, _)| e).collect();
        let graph = GraphState::from_bits(&adj, bits).unwrap();
        let sigma2 = rng.random_range(0.1..5.0);
        let rho = rng.random_range(0.0..0.99);
        let tw = DMatrix::from_fn(n, h - 1, |_, _| 3.0 * standard_normal(&mut rng));
        let got = logmcar_logpdf(&tw, sigma2, &graph, &adj, rho).unwrap();
        let want = dense_logmcar(&tw, sigma2, &on, rho);
        worst = worst.max((got - want).abs());
    }
    report.line("1", worst <= 1e-10, format!("max |logmcar - dense MVN| over 200 instances = {worst:.2e} (tol 1e-10)"));
}

// ------------------------------------------------------ 2. Gibbs toy

const TOY2_Y: [&[f64]; 2] = [&[-1.4, -0.6, 0.8], &[-1.1, 1.3, 0.5]];
const TOY2_ATOMS: [(f64, f64); 2] = [(-1.0, 1.0), (1.0, 1.0)];
const TOY2_SIGMA2: f64 = 1.0;
const TOY2_RHO: f64 = 0.9;
const TOY2_P: f64 = 0.4;

/// `P(G = 1 | y)` with atoms, `sigma2` and `p` held fixed: the two-area
/// weight integral computed on a grid for each graph.
fn toy2_truth() -> f64 {
    let atoms: Vec<Atom> = TOY2_ATOMS.iter().map(|&(m, v)| Atom::new(m, v)).collect();
    let loglik = |area: usize, t: f64| -> f64 {
        let lw1 = t - (1.0 + t.exp()).ln();
        let lw2 = -(1.0 + t.exp()).ln();
        TOY2_Y[area].iter().map(|&y| log_sum_exp(&[lw1 + atoms[0].ln_pdf(y), lw2 + atoms[1].ln_pdf(y)])).sum()
    };
    let (lo, hi, n) = (-30.0, 30.0, 3001);
    let step = (hi - lo) / (n - 1) as f64;
    let ts: Vec<f64> = (0..n).map(|k| lo + k as f64 * step).collect();
    let l0: Vec<f64> = ts.iter().map(|&t| loglik(0, t)).collect();
    let l1: Vec<f64> = ts.iter().map(|&t| loglik(1, t)).collect();
    let rho = TOY2_RHO;
    let log_z = |q: [[f64; 2]; 2]| -> f64 {
        let det = q[0][0] * q[1][1] - q[0][1] * q[1][0];
        let norm = -LN_2PI - TOY2_SIGMA2.ln() + 0.5 * det.ln();
        let mut terms = Vec::with_capacity(n * n);
        for (a, &x) in ts.iter().enumerate() {
            for (b, &y) in ts.iter().enumerate() {
                let quad = q[0][0] * x * x + 2.0 * q[0][1] * x * y + q[1][1] * y * y;
                terms.push(norm - 0.5 * quad / TOY2_SIGMA2 + l0[a] + l1[b]);
            }
        }
        log_sum_exp(&terms) + 2.0 * step.ln()
    };
    let z1 = log_z([[1.0, -rho], [-rho, 1.0]]);
    let z0 = log_z([[1.0 - rho, 0.0], [0.0, 1.0 - rho]]);
    let on = TOY2_P.ln() + z1;
    let off = (1.0 - TOY2_P).ln() + z0;
    1.0 / (1.0 + (off - on).exp())
}

fn toy2_chain(mode: EdgeMode, sweeps: usize, seed: u64) -> f64 {
    let data = dataset(&TOY2_Y);
    let adj = Adjacency::new(2, [(0, 1)]).unwrap();
    let mut rng = RngHandle::new(seed);
    let mut state = ChainState {
        mixture: MixtureState {
            atoms: TOY2_ATOMS.iter().map(|&(m, v)| Atom::new(m, v)).collect(),
            tw: DMatrix::zeros(2, 1),
            allocations: Vec::new(),
        },
        global: GlobalState { sigma2: TOY2_SIGMA2, p: TOY2_P, rho: TOY2_RHO },
        graph: GraphState::full(&adj),
    };
    within::update_allocations(&mut rng, &mut state.mixture, &data).unwrap();
    let opts = SweepOptions {
        edge_mode: mode,
        weight_scan: Default::default(),
        pg: PolyaGamma::exact(),
        blocks: SweepBlocks { atoms: false, sigma2: false, p: false, ..Default::default() },
    };
    let hyper = Hyperparams { rho: TOY2_RHO, ..Default::default() };
    let mut stats = SweepStats::default();
    let burn = 2_000;
    let mut on = 0usize;
    for it in 0..burn + sweeps {
        within::sweep(&mut rng, &mut state, &data, &adj, &hyper, &opts, &mut stats).unwrap();
        if it >= burn && state.graph.is_on(0) {
            on += 1;
        }
    }
    on as f64 / sweeps as f64
}

fn gibbs_toy(report: &mut Report) {
    let truth = toy2_truth();
    let verbatim = toy2_chain(EdgeMode::PaperVerbatim, 200_000, 202);
    report.line(
        "2",
        (verbatim - truth).abs() <= 0.02,
        format!("verbatim edge mode P(G=1|y) = {verbatim:.4}, grid truth = {truth:.4} (tol 0.02)"),
    );
    let exact = toy2_chain(EdgeMode::ExactPrior, 200_000, 203);
    report.info(
        "2",
        format!("exact-prior edge mode P(G=1|y) = {exact:.4}, |diff| = {:.4}", (exact - truth).abs()),
    );
}

// ------------------------------------------------------ 3. PG moments

fn pg_moments(report: &mut Report) {
    let mut rng = RngHandle::new(303);
    for (b, c, want, tol) in [
        (1u32, 0.0, 0.25, 0.005),
        (1, 2.0, 0.25 * 1f64.tanh(), 0.005),
        (100, 1.0, 50.0 * 0.5f64.tanh(), 0.2),
    ] {
        let m = 100_000;
        let mean = (0..m).map(|_| sample_polya_gamma(&mut rng, b, c).unwrap()).sum::<f64>() / m as f64;
        report.line(
            "3",
            (mean - want).abs() <= tol,
            format!("PG({b}, {c}) mean over {m} draws = {mean:.5}, expected {want:.5} (tol {tol})"),
        );
    }
}

// ------------------------------------------------------ 4. Laplace

/// Negative inverse of the Hessian obtained by central differences of the
/// analytic gradient.
fn fd_covariance(target: &ExtendedTarget, at: &DVector<f64>) -> DMatrix<f64> {
    let d = at.len();
    let step = 1e-5;
    let mut hess = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut up = at.clone();
        let mut down = at.clone();
        up[j] += step;
        down[j] -= step;
        let g = (target.derivatives(up.as_slice()).1 - target.derivatives(down.as_slice()).1) / (2.0 * step);
        hess.set_column(j, &g);
    }
    let sym = (&hess + hess.transpose()) * 0.5;
    (-sym).try_inverse().unwrap()
}

fn laplace_checks(report: &mut Report) {
    // a realistic state: a few sweeps on the boundary-detection data
    let s = simulate(ScenarioName::BdMisspec, 4).unwrap();
    let hyper = s.hyperparams();
    let cfg = ChainConfig { hyperparams: hyper, ..Default::default() };
    let mut rng = RngHandle::new(404);
    let mut state = initial_state(&mut rng, &cfg, &s.data, &s.adjacency).unwrap();
    let opts = SweepOptions { edge_mode: cfg.edge_mode, weight_scan: cfg.weight_scan, pg: PolyaGamma::exact(), blocks: Default::default() };
    let mut stats = SweepStats::default();
    for _ in 0..20 {
        within::sweep(&mut rng, &mut state, &s.data, &s.adjacency, &hyper, &opts, &mut stats).unwrap();
    }
    let target = ExtendedTarget::new(&state, &s.data, &s.adjacency, &hyper).unwrap();
    let start = newton_start(&mut rng, &s.data);
    let lf = laplace_fit(&target, &start, &NewtonOptions::default()).unwrap();
    let grad = target.derivatives(lf.mu_star.as_slice()).1.amax();
    report.line(
        "4",
        lf.converged && grad < 1e-6,
        format!("36-area state: gradient inf-norm at mu_star = {grad:.2e} after {} Newton steps (tol 1e-6)", lf.iterations),
    );
    let v = lf.v_star();
    let v_fd = fd_covariance(&target, &lf.mu_star);
    let rel = (&v - &v_fd).norm() / v_fd.norm();
    report.line("4", rel <= 1e-3, format!("36-area state: ||V* - FD inverse||_F / ||FD inverse||_F = {rel:.2e}, jitter {} (tol 1e-3)", lf.jitter));

    // one area, one existing component away from the data
    let mut rng = RngHandle::new(405);
    let ys: Vec<f64> = (0..50).map(|_| standard_normal(&mut rng)).collect();
    let data = dataset(&[&ys]);
    let adj = Adjacency::new(1, []).unwrap();
    let hyper = Hyperparams::default();
    let state = ChainState {
        mixture: MixtureState { atoms: vec![Atom::new(4.0, 1.0)], tw: DMatrix::zeros(1, 0), allocations: vec![vec![0; 50]] },
        global: GlobalState { sigma2: 1.0, p: 0.5, rho: hyper.rho },
        graph: GraphState::full(&adj),
    };
    let target = ExtendedTarget::new(&state, &data, &adj, &hyper).unwrap();
    let lf = laplace_fit(&target, &newton_start(&mut rng, &data), &NewtonOptions::default()).unwrap();
    let axes = [(-5.0, 15.0, 0.1), (-1.5, 1.5, 0.025), (-1.5, 1.5, 0.025)];
    let pts = |(lo, hi, st): (f64, f64, f64)| -> Vec<f64> {
        let n = ((hi - lo) / st).round() as usize + 1;
        (0..n).map(|k| lo + k as f64 * st).collect()
    };
    let (cs, ms, ls) = (pts(axes[0]), pts(axes[1]), pts(axes[2]));
    let mut best = (f64::NEG_INFINITY, [0.0; 3]);
    for &c in &cs {
        for &m in &ms {
            for &l in &ls {
                let v = target.value(&[c, m, l]);
                if v > best.0 {
                    best = (v, [c, m, l]);
                }
            }
        }
    }
    let within_res = (0..3).all(|k| (lf.mu_star[k] - best.1[k]).abs() <= axes[k].2);
    report.line(
        "4",
        lf.converged && within_res,
        format!(
            "one-area toy: mu_star = ({:.4}, {:.4}, {:.4}), grid maximiser = ({:.3}, {:.3}, {:.3}), steps (0.1, 0.025, 0.025)",
            lf.mu_star[0], lf.mu_star[1], lf.mu_star[2], best.1[0], best.1[1], best.1[2]
        ),
    );
    let ybar = ys.iter().sum::<f64>() / 50.0;
    let sd = lf.v_star()[(1, 1)].sqrt();
    report.info("4", format!("one-area toy: |atom mean - sample mean| = {:.4}, posterior sd {sd:.4}", (lf.mu_star[1] - ybar).abs()));
}

// ------------------------------------------------------ 5. RJ toy

const TOY5_Y: [f64; 6] = [-5.3, -4.8, -5.0, 4.9, 5.2, 5.1];
const TOY5_HMAX: usize = 7;

/// Log marginal likelihood of `ys` under one normal kernel with the
/// normal-inverse-gamma base measure.
fn nig_log_marginal(hyper: &Hyperparams, ys: &[f64]) -> f64 {
    if ys.is_empty() {
        return 0.0;
    }
    let n = ys.len() as f64;
    let ybar = ys.iter().sum::<f64>() / n;
    let ss: f64 = ys.iter().map(|y| (y - ybar).powi(2)).sum();
    let lam_n = hyper.lambda + n;
    let c_n = hyper.c + 0.5 * n;
    let d_n = hyper.d + 0.5 * ss + 0.5 * hyper.lambda * n * (ybar - hyper.mu0).powi(2) / lam_n;
    -0.5 * n * LN_2PI + 0.5 * (hyper.lambda / lam_n).ln() + ln_gamma(c_n) - ln_gamma(hyper.c)
        + hyper.c * hyper.d.ln()
        - c_n * d_n.ln()
}

/// Every composition of `total` into `parts` non-negative counts.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    (0..=total)
        .flat_map(|first| {
            compositions(total - first, parts - 1).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

/// Log of `E[prod_h w_h^{n_h}]` for each count vector, with the weight
/// logits marginally multivariate t after integrating out `sigma2`.
fn weight_moments(hyper: &Hyperparams, h: usize, counts: &[Vec<usize>], rng: &mut RngHandle) -> Vec<f64> {
    let k = h - 1;
    if k == 0 {
        return vec![0.0; counts.len()];
    }
    let nu = hyper.alpha;
    let scale2 = hyper.beta / hyper.alpha / (1.0 - hyper.rho);
    let log_w = |t: &[f64]| -> Vec<f64> {
        let mut logits = t.to_vec();
        logits.push(0.0);
        let z = log_sum_exp(&logits);
        logits.iter().map(|x| x - z).collect()
    };
    let mut acc = vec![0.0; counts.len()];
    if k <= 2 {
        // grid integration against the t density
        let (lo, hi, n) = (-60.0, 60.0, if k == 1 { 24_001 } else { 1_601 });
        let step = (hi - lo) / (n - 1) as f64;
        let ln_t = |r2: f64| -(0.5 * (nu + k as f64)) * (1.0 + r2 / (nu * scale2)).ln();
        let mut mass = 0.0;
        let mut visit = |t: &[f64]| {
            let wt = ln_t(t.iter().map(|x| x * x).sum()).exp();
            mass += wt;
            let lw = log_w(t);
            for (a, n_h) in acc.iter_mut().zip(counts) {
                *a += wt * n_h.iter().zip(&lw).map(|(&c, l)| c as f64 * l).sum::<f64>().exp();
            }
        };
        for a in 0..n {
            let x = lo + a as f64 * step;
            if k == 1 {
                visit(&[x]);
            } else {
                for b in 0..n {
                    visit(&[x, lo + b as f64 * step]);
                }
            }
        }
        acc.iter().map(|a| (a / mass).ln()).collect()
    } else {
        let draws = 400_000;
        for _ in 0..draws {
            let s2 = sample_invgamma(rng, 0.5 * hyper.alpha, 0.5 * hyper.beta).unwrap() / (1.0 - hyper.rho);
            let t: Vec<f64> = (0..k).map(|_| s2.sqrt() * standard_normal(rng)).collect();
            let lw = log_w(&t);
            for (a, n_h) in acc.iter_mut().zip(counts) {
                *a += n_h.iter().zip(&lw).map(|(&c, l)| c as f64 * l).sum::<f64>().exp();
            }
        }
        acc.iter().map(|a| (a / draws as f64).ln()).collect()
    }
}

/// `p(H | y)` for `H = 1..=TOY5_HMAX` by summing over all allocations.
fn toy5_oracle(hyper: &Hyperparams) -> Vec<f64> {
    let n = TOY5_Y.len();
    let subset_lm: Vec<f64> = (0..1usize << n)
        .map(|mask| {
            let ys: Vec<f64> = (0..n).filter(|b| mask >> b & 1 == 1).map(|b| TOY5_Y[b]).collect();
            nig_log_marginal(hyper, &ys)
        })
        .collect();
    let mut rng = RngHandle::new(505);
    let mut log_post = Vec::new();
    for h in 1..=TOY5_HMAX {
        let counts = compositions(n, h);
        let index: HashMap<Vec<usize>, usize> = counts.iter().cloned().enumerate().map(|(i, c)| (c, i)).collect();
        let mut per_count: Vec<Vec<f64>> = vec![Vec::new(); counts.len()];
        let mut labels = vec![0usize; n];
        loop {
            let mut masks = vec![0usize; h];
            let mut cnt = vec![0usize; h];
            for (b, &l) in labels.iter().enumerate() {
                masks[l] |= 1 << b;
                cnt[l] += 1;
            }
            per_count[index[&cnt]].push(masks.iter().map(|&m| subset_lm[m]).sum());
            // next allocation in base h
            let mut pos = 0;
            while pos < n && labels[pos] == h - 1 {
                labels[pos] = 0;
                pos += 1;
            }
            if pos == n {
                break;
            }
            labels[pos] += 1;
        }
        let moments = weight_moments(hyper, h, &counts, &mut rng);
        let terms: Vec<f64> = per_count.iter().zip(&moments).map(|(lm, w)| log_sum_exp(lm) + w).collect();
        log_post.push(hyper.ln_prior_h(h) + log_sum_exp(&terms));
    }
    let z = log_sum_exp(&log_post);
    log_post.iter().map(|l| (l - z).exp()).collect()
}

fn rj_toy(report: &mut Report) {
    let hyper = Hyperparams { lambda_h: 1.0, ..Default::default() };
    let oracle = toy5_oracle(&hyper);
    let data = dataset(&[&TOY5_Y]);
    let adj = Adjacency::new(1, []).unwrap();
    let cfg = ChainConfig { n_iterations: 20_000, burn_in: 2_000, seed: 55, hyperparams: hyper, ..Default::default() };
    let out = run_chain(&cfg, &data, &adj).unwrap();
    let post = posterior_h(&out.records).unwrap();
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for h in 1..=TOY5_HMAX {
        let chain = post.pmf.get(&h).copied().unwrap_or(0.0);
        worst = worst.max((chain - oracle[h - 1]).abs());
        rows.push(format!("{h}:{chain:.3}/{:.3}", oracle[h - 1]));
    }
    let beyond: f64 = post.pmf.range(TOY5_HMAX + 1..).map(|(_, p)| p).sum();
    worst = worst.max(beyond);
    let oracle_mode = (1..=TOY5_HMAX).max_by(|&a, &b| oracle[a - 1].total_cmp(&oracle[b - 1])).unwrap();
    report.line(
        "5",
        worst <= 0.1 && post.mode == oracle_mode,
        format!(
            "p(H|y) chain/oracle {}; chain mode {}, oracle mode {oracle_mode}; max |diff| = {worst:.3} (tol 0.1)",
            rows.join(" "),
            post.mode
        ),
    );

    // reciprocity on a state taken from the chain
    let last = out.records.iter().rev().find(|r| r.h >= 2).expect("a record with two components");
    let state = ChainState {
        mixture: MixtureState { atoms: last.atoms(), tw: last.tw_matrix(), allocations: Vec::new() },
        global: GlobalState { sigma2: last.sigma2, p: last.p, rho: hyper.rho },
        graph: GraphState::full(&adj),
    };
    let target = |s: &ChainState| log_joint(s, &data, &adj, &hyper);
    let mut rng = RngHandle::new(506);
    let start = newton_start(&mut rng, &data);
    let ext = ExtendedTarget::new(&state, &data, &adj, &hyper).unwrap();
    let lf = laplace_fit(&ext, &start, &NewtonOptions::default()).unwrap();
    let mut worst: f64 = 0.0;
    for slot in 0..state.mixture.n_components() {
        let (born, theta) = birth_state(&state, &lf.sample(&mut rng), slot);
        let a_birth = birth_log_ratio(target, &state, &born, &lf, &theta).unwrap();
        let (reduced, removed) = death_state(&born, slot);
        let ext = ExtendedTarget::new(&reduced, &data, &adj, &hyper).unwrap();
        let refit = laplace_fit(&ext, &start, &NewtonOptions::default()).unwrap();
        let a_death = death_log_ratio(target, &born, &reduced, &refit, &removed).unwrap();
        worst = worst.max((a_birth + a_death).abs());
    }
    report.line("5", worst == 0.0, format!("birth then death of the newborn: max |log A_birth + log A_death| = {worst:e}"));
}

// ------------------------------------------------------ 6. overfitting

fn overfitting(report: &mut Report) {
    let s = simulate(ScenarioName::BdMisspec, 1).unwrap();
    let out = fit(&s, 61, 10_000, 5_000, 0.95, Some(10));
    let probs = edge_inclusion(&out.records, &out.edge_list).unwrap();
    let (lo, hi) = probs.probs.iter().fold((1.0f64, 0.0f64), |(lo, hi), &p| (lo.min(p), hi.max(p)));
    let boundary = boundary_graph(&probs, 0.5).unwrap();
    report.line(
        "6",
        lo > 0.99 && boundary.is_empty(),
        format!("H = 10, rho = 0.95: edge probabilities in [{lo:.4}, {hi:.4}], {} boundary edges at gamma 0.5 (need all > 0.99, none)", boundary.len()),
    );
}

// ------------------------------------------------------ 7, 8. Table 1

fn precision_table(report: &mut Report) {
    let replicates = 10;
    let mut modal_h = Vec::new();
    for (rho, check) in [(0.99, "mean >= 0.95"), (0.90, "mean >= 0.80"), (0.0, "each = 0.200")] {
        let mut precs = Vec::new();
        for r in 0..replicates {
            let s = simulate(ScenarioName::BdMisspec, 700 + r).unwrap();
            let out = fit(&s, split_seed(7, r), 4_000, 2_000, rho, None);
            let prec = precision_of(&s, &out, 0.5);
            let post = posterior_h(&out.records).unwrap();
            eprintln!("  rho {rho} replicate {r}: precision {prec:.3}, H pmf {}", pmf_text(&out.records));
            if rho == 0.99 {
                modal_h.push(post.mode);
            }
            precs.push(prec);
        }
        let (m, sd) = mean_sd(&precs);
        let pass = match check {
            "mean >= 0.95" => m >= 0.95,
            "mean >= 0.80" => m >= 0.80,
            _ => precs.iter().all(|&p| (p - 0.2).abs() < 1e-12),
        };
        report.line("7", pass, format!("rho = {rho}: precision {m:.3} ({sd:.3}) over {replicates} replicates ({check})"));
    }
    let threes = modal_h.iter().filter(|&&h| h == 3).count();
    report.line("8", threes >= 7, format!("modal H per rho = 0.99 replicate {modal_h:?}: {threes}/10 equal 3 (need >= 7)"));
}

// ------------------------------------------------------ 9. mean L1

fn mean_l1(report: &mut Report) {
    let replicates = 3;
    for (fixed, tol) in [(None, 0.25), (Some(8), 0.20)] {
        let mut l1 = Vec::new();
        for r in 0..replicates {
            let s = simulate(ScenarioName::BdMisspec, 900 + r).unwrap();
            let out = fit(&s, split_seed(9, r), 4_000, 2_000, 0.95, fixed);
            l1.push(mean_area_l1(&s, &out.records));
        }
        let (m, sd) = mean_sd(&l1);
        let label = fixed.map_or_else(|| "reversible jump".to_string(), |h| format!("H = {h}"));
        report.line("9", m <= tol, format!("{label}, rho = 0.95: mean L1 {m:.3} ({sd:.3}) over {replicates} replicates (tol {tol})"));
    }
}

// ------------------------------------------------------ 10. density bands

fn density_bands(report: &mut Report) {
    let s = simulate(ScenarioName::DeSpatial, 1).unwrap();
    let out = fit(&s, 10, 10_000, 5_000, s.hyperparams().rho, None);
    let post = posterior_h(&out.records).unwrap();
    let grid = default_grid(&s.data);
    let mut coverage = Vec::new();
    for i in 0..s.data.n_areas() {
        let est = density_estimate(&out.records, i, &grid).unwrap();
        let (mut inside, mut total) = (0usize, 0usize);
        for (k, &x) in grid.iter().enumerate() {
            let f = s.truth.densities[i].pdf(x);
            if f > 0.01 {
                total += 1;
                if est.lower95[k] <= f && f <= est.upper95[k] {
                    inside += 1;
                }
            }
        }
        coverage.push(inside as f64 / total as f64);
    }
    let worst = coverage.iter().copied().fold(1.0, f64::min);
    report.info("10", format!("per-area coverage {}", coverage.iter().map(|c| format!("{c:.3}")).collect::<Vec<_>>().join(" ")));
    report.line("10", post.mode == 3, format!("posterior H {}: mode {} (need 3)", pmf_text(&out.records), post.mode));
    report.line("10", worst >= 0.9, format!("smallest per-area band coverage where density > 0.01: {worst:.3} (need >= 0.90)"));
}

// ------------------------------------------------------ 11. structure

fn structure_learning(report: &mut Report) {
    let s = simulate(ScenarioName::SlMisspec, 1).unwrap();
    let out = fit(&s, 11, 10_000, 5_000, 0.99, None);
    let probs = edge_inclusion(&out.records, &out.edge_list).unwrap();
    let median = median_graph(&probs);
    let truth: Vec<(usize, usize)> = s.truth.true_graph.clone().unwrap();
    let missing = truth.iter().filter(|e| !median.contains(e)).count();
    let extra = median.iter().filter(|e| !truth.contains(e)).count();
    report.line(
        "11",
        missing == 0 && extra <= 2,
        format!("median graph {median:?}: {missing} true edges missing, {extra} extra (need 0 missing, <= 2 extra)"),
    );
}

// ------------------------------------------------------ NA mechanism

fn missing_distances(report: &mut Report) {
    // a 2 x 3 lattice whose area 0 is cut off from both neighbours
    let adj = boundary_core::scenarios::grid_adjacency(2, 3).unwrap();
    let isolated: Vec<bool> = adj.edges().iter().map(|&(i, j)| i != 0 && j != 0).collect();
    let record = |iter: usize, shift: f64| Snapshot {
        iter,
        h: 2,
        atoms: vec![[-2.0 + shift, 1.0], [2.0, 1.0]],
        tw: (0..6).map(|i| vec![if i == 0 { 3.0 } else { -1.0 }]).collect(),
        counts: vec![vec![1, 1]; 6],
        sigma2: 1.0,
        p: 0.5,
        edges: isolated.clone(),
    };
    let records: Vec<Snapshot> = (0..20).map(|k| record(k, 0.01 * k as f64)).collect();
    let grid = boundary_core::inference::linspace(-8.0, 8.0, 801).unwrap();
    let dist = dtm_dfm(&records, &adj, 0.5, &grid).unwrap();
    let absent: Vec<usize> = (0..6).filter(|&i| dist[i].d_tm.is_none()).collect();
    let rest_present = (1..6).all(|i| dist[i].d_tm.is_some());
    report.line(
        "na",
        absent == vec![0] && rest_present && dist[0].d_fm.is_some(),
        format!("areas with absent d_TM: {absent:?} (need exactly the all-boundary area 0); d_FM of area 0 = {:?}", dist[0].d_fm.map(|x| (x * 1e4).round() / 1e4)),
    );
}

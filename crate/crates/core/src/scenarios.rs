//! Generators for the three simulation studies: boundary detection under
//! misspecification on a 6x6 grid, spatial density estimation on a 3x3 grid,
//! and structural learning over six areas.
//!
//! Grid areas are numbered row-major, `index = row * cols + col`, with area
//! centres at `((col + 0.5) / cols, (row + 0.5) / rows)` in the unit square.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distributions::{scenario_draws, RngHandle, ScenarioDist};
use crate::error::{Error, Result};
use crate::model::{inverse_alr, Adjacency, Area, AreaDataset, GraphState, Hyperparams};

pub const BD_ROWS: usize = 6;
pub const BD_COLS: usize = 6;
pub const OBS_PER_AREA: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioName {
    BdMisspec,
    DeSpatial,
    SlMisspec,
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bd-misspec" => Ok(ScenarioName::BdMisspec),
            "de-spatial" => Ok(ScenarioName::DeSpatial),
            "sl-misspec" => Ok(ScenarioName::SlMisspec),
            other => Err(Error::Config(format!(
                "unknown scenario '{other}' (expected bd-misspec, de-spatial or sl-misspec)"
            ))),
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioName::BdMisspec => "bd-misspec",
            ScenarioName::DeSpatial => "de-spatial",
            ScenarioName::SlMisspec => "sl-misspec",
        })
    }
}

/// Rectangular lattice layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub rows: usize,
    pub cols: usize,
}

impl GridGeometry {
    pub fn n_areas(&self) -> usize {
        self.rows * self.cols
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn position(&self, area: usize) -> (usize, usize) {
        (area / self.cols, area % self.cols)
    }

    pub fn centre(&self, area: usize) -> (f64, f64) {
        let (r, c) = self.position(area);
        ((c as f64 + 0.5) / self.cols as f64, (r as f64 + 0.5) / self.rows as f64)
    }
}

/// Rook adjacency of a `rows x cols` lattice.
pub fn grid_adjacency(rows: usize, cols: usize) -> Result<Adjacency> {
    if rows == 0 || cols == 0 {
        return Err(Error::Domain("grid dimensions must be positive".into()));
    }
    let g = GridGeometry { rows, cols };
    let mut pairs = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                pairs.push((g.index(r, c), g.index(r, c + 1)));
            }
            if r + 1 < rows {
                pairs.push((g.index(r, c), g.index(r + 1, c)));
            }
        }
    }
    Adjacency::new(rows * cols, pairs)
}

/// Ground truth shipped with a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    /// True boundary edges (admissible edges across which the densities
    /// differ), when the scenario defines them.
    pub boundary_edges: Option<Vec<(usize, usize)>>,
    /// True dependence graph, when the scenario defines one.
    pub true_graph: Option<Vec<(usize, usize)>>,
    /// True data-generating density per area.
    pub densities: Vec<ScenarioDist>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: ScenarioName,
    pub data: AreaDataset,
    pub adjacency: Adjacency,
    pub truth: Truth,
    pub geometry: Option<GridGeometry>,
}

impl Scenario {
    /// Prior settings used for this scenario in the original studies.
    pub fn hyperparams(&self) -> Hyperparams {
        match self.name {
            ScenarioName::BdMisspec => bd_hyperparams(),
            ScenarioName::DeSpatial => de_hyperparams(),
            ScenarioName::SlMisspec => sl_hyperparams(),
        }
    }
}

/// Generate the named scenario from a seed.
pub fn simulate(name: ScenarioName, seed: u64) -> Result<Scenario> {
    let mut rng = RngHandle::new(seed);
    match name {
        ScenarioName::BdMisspec => generate_bd(&mut rng, &default_bd_mask()),
        ScenarioName::DeSpatial => generate_de(&mut rng),
        ScenarioName::SlMisspec => generate_sl(&mut rng),
    }
}

/// Default two-region mask of the 6x6 grid: the inner 3x3 block (rows and
/// columns 1 to 3) is `true`. The block has 12 edges to the outer region.
pub fn default_bd_mask() -> Vec<bool> {
    let g = GridGeometry { rows: BD_ROWS, cols: BD_COLS };
    (0..g.n_areas())
        .map(|a| {
            let (r, c) = g.position(a);
            (1..=3).contains(&r) && (1..=3).contains(&c)
        })
        .collect()
}

/// Admissible edges whose endpoints carry different labels.
pub fn label_boundary(adjacency: &Adjacency, labels: &[bool]) -> Vec<(usize, usize)> {
    adjacency
        .edges()
        .iter()
        .copied()
        .filter(|&(i, j)| labels[i] != labels[j])
        .collect()
}

pub fn bd_t_dist() -> ScenarioDist {
    ScenarioDist::student_t_with_sd(6.0, 4.0, 1.5).expect("valid Student t")
}

pub fn bd_skew_dist() -> ScenarioDist {
    ScenarioDist::SkewNormal { xi: 4.0, omega: 1.3, alpha: -3.0 }
}

/// Boundary-detection scenario: Student t areas where the mask is `false`,
/// skew-normal areas where it is `true`.
pub fn generate_bd(rng: &mut RngHandle, mask: &[bool]) -> Result<Scenario> {
    let geometry = GridGeometry { rows: BD_ROWS, cols: BD_COLS };
    if mask.len() != geometry.n_areas() {
        return Err(Error::Domain(format!(
            "mask has {} entries but the grid has {} areas",
            mask.len(),
            geometry.n_areas()
        )));
    }
    let adjacency = grid_adjacency(BD_ROWS, BD_COLS)?;
    let densities: Vec<ScenarioDist> = mask
        .iter()
        .map(|&skew| if skew { bd_skew_dist() } else { bd_t_dist() })
        .collect();
    let data = draw_areas(rng, &densities)?;
    Ok(Scenario {
        name: ScenarioName::BdMisspec,
        data,
        truth: Truth {
            boundary_edges: Some(label_boundary(&adjacency, mask)),
            true_graph: None,
            densities,
        },
        adjacency,
        geometry: Some(geometry),
    })
}

fn draw_areas(rng: &mut RngHandle, densities: &[ScenarioDist]) -> Result<AreaDataset> {
    let areas = densities
        .iter()
        .enumerate()
        .map(|(i, d)| {
            Ok(Area {
                id: format!("{}", i + 1),
                observations: scenario_draws(rng, d, OBS_PER_AREA)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    AreaDataset::new(areas)
}

/// True transformed weights of the density-estimation scenario at an area
/// centre `(x, y)`, relative to the grid centre `(0.5, 0.5)`.
pub fn de_true_tw(x: f64, y: f64) -> [f64; 2] {
    let s = 3.0 * (x - 0.5) + 3.0 * (y - 0.5);
    [s, -s]
}

/// Density-estimation scenario: a 3x3 grid of three-component mixtures at
/// -5, 0, 5 with spatially smooth weights.
pub fn generate_de(rng: &mut RngHandle) -> Result<Scenario> {
    let geometry = GridGeometry { rows: 3, cols: 3 };
    let adjacency = grid_adjacency(3, 3)?;
    let densities: Vec<ScenarioDist> = (0..geometry.n_areas())
        .map(|a| {
            let (x, y) = geometry.centre(a);
            let w = inverse_alr(&de_true_tw(x, y));
            ScenarioDist::GaussianMixture {
                components: vec![(w[0], -5.0, 1.0), (w[1], 0.0, 1.0), (w[2], 5.0, 1.0)],
            }
        })
        .collect();
    let data = draw_areas(rng, &densities)?;
    Ok(Scenario {
        name: ScenarioName::DeSpatial,
        data,
        truth: Truth { boundary_edges: None, true_graph: None, densities },
        adjacency,
        geometry: Some(geometry),
    })
}

/// The true dependence graph of the structural-learning scenario (0-based).
pub fn sl_true_graph() -> Vec<(usize, usize)> {
    vec![(0, 1), (2, 3), (4, 5)]
}

/// Structural-learning scenario: six areas, every pair admissible.
pub fn generate_sl(rng: &mut RngHandle) -> Result<Scenario> {
    let t = ScenarioDist::student_t_with_sd(6.0, -4.0, 1.0)?;
    let skew = ScenarioDist::SkewNormal { xi: 4.0, omega: 4.0, alpha: 1.0 };
    let chi = ScenarioDist::ChiSquared { df: 3.0 };
    let densities = vec![t.clone(), t, skew.clone(), skew, chi.clone(), chi];
    let data = draw_areas(rng, &densities)?;
    let adjacency = Adjacency::complete(6);
    let truth_set: BTreeSet<(usize, usize)> = sl_true_graph().into_iter().collect();
    let boundary = adjacency
        .edges()
        .iter()
        .copied()
        .filter(|e| !truth_set.contains(e))
        .collect();
    Ok(Scenario {
        name: ScenarioName::SlMisspec,
        data,
        truth: Truth {
            boundary_edges: Some(boundary),
            true_graph: Some(sl_true_graph()),
            densities,
        },
        adjacency,
        geometry: None,
    })
}

/// The true graph of the structural-learning scenario as edge bits.
pub fn sl_true_graph_state(adjacency: &Adjacency) -> GraphState {
    let truth: BTreeSet<(usize, usize)> = sl_true_graph().into_iter().collect();
    let bits = adjacency.edges().iter().map(|e| truth.contains(e)).collect();
    GraphState::from_bits(adjacency, bits).expect("bit count matches")
}

pub fn bd_hyperparams() -> Hyperparams {
    Hyperparams::default()
}

/// `InvGamma(2, 2)` for both the atom variances and the CAR variance, five
/// initial components; `rho` is held at 0.95.
pub fn de_hyperparams() -> Hyperparams {
    Hyperparams {
        mu0: 0.0,
        lambda: 0.1,
        c: 2.0,
        d: 2.0,
        alpha: 4.0,
        beta: 4.0,
        a: 2.0,
        b: 9.0,
        rho: 0.95,
        h_init: 5,
        ..Hyperparams::default()
    }
}

/// `p ~ Beta(1, 5)`, `rho = 0.99`, `sigma2 ~ InvGamma(3, 2)`.
pub fn sl_hyperparams() -> Hyperparams {
    Hyperparams {
        alpha: 6.0,
        beta: 4.0,
        a: 1.0,
        b: 5.0,
        rho: 0.99,
        ..Hyperparams::default()
    }
}

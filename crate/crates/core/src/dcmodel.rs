//! DC power flow and the branch-flow measurement model `z = H x + e`.
//!
//! States are the voltage angles of every non-slack bus, in case order with
//! the slack removed. All power quantities are per unit on the case base.

use nalgebra::{DMatrix, DVector, LU};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::casefile::{validate, CaseSystem, Finding};
use crate::{par, seed};

pub const DEFAULT_SIGMA: f64 = 0.01;
pub const DEFAULT_LOAD_SCALE: (f64, f64) = (0.8, 1.2);

#[derive(Debug, Error)]
pub enum DcError {
    #[error("case is not valid: {0}")]
    InvalidCase(String),
    #[error("network is not observable: buses {island:?} are disconnected from the slack")]
    Disconnected { island: Vec<u32> },
    #[error("measurement matrix has rank {rank}, expected {expected}")]
    RankDeficient { rank: usize, expected: usize },
    #[error("reduced susceptance matrix is singular")]
    Singular,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid load scale range [{lo}, {hi}]")]
    BadRange { lo: f64, hi: f64 },
    #[error("sigma must be finite and non-negative, got {0}")]
    BadSigma(f64),
}

/// Bus voltage angles (radians) of the non-slack buses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub z: Vec<f64>,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone)]
pub struct MeasurementModel {
    pub case_name: String,
    /// `m x (n-1)` per-unit flow per radian.
    pub h: DMatrix<f64>,
    pub meter_ids: Vec<usize>,
    pub slack_bus: u32,
    pub state_dim: usize,
    pub sigma: f64,
    /// Bus id behind each state column.
    pub state_buses: Vec<u32>,
}

impl MeasurementModel {
    pub fn meter_count(&self) -> usize {
        self.h.nrows()
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self, DcError> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(DcError::BadSigma(sigma));
        }
        self.sigma = sigma;
        Ok(self)
    }

    /// Noise-free flows `H x`.
    pub fn flows(&self, x: &StateVector) -> Result<Vec<f64>, DcError> {
        if x.theta.len() != self.state_dim {
            return Err(DcError::Dimension {
                expected: self.state_dim,
                got: x.theta.len(),
            });
        }
        let theta = DVector::from_column_slice(&x.theta);
        Ok((&self.h * theta).iter().copied().collect())
    }
}

/// Column of each bus in the reduced (slack-free) state vector.
fn state_columns(case: &CaseSystem) -> (Vec<Option<usize>>, Vec<u32>) {
    let mut cols = Vec::with_capacity(case.buses.len());
    let mut buses = Vec::with_capacity(case.buses.len().saturating_sub(1));
    for bus in &case.buses {
        if bus.id == case.slack_bus {
            cols.push(None);
        } else {
            cols.push(Some(buses.len()));
            buses.push(bus.id);
        }
    }
    (cols, buses)
}

fn check_case(case: &CaseSystem) -> Result<(), DcError> {
    let report = validate(case);
    if report.is_valid() {
        return Ok(());
    }
    for finding in &report.findings {
        if let Finding::Disconnected { island } = finding {
            return Err(DcError::Disconnected {
                island: island.clone(),
            });
        }
    }
    Err(DcError::InvalidCase(report.to_string()))
}

/// Builds `H`: row `k` of branch `(i, j)` holds `+1/x` at `theta_i` and `-1/x`
/// at `theta_j`, with the slack column dropped.
pub fn build_h(case: &CaseSystem) -> Result<MeasurementModel, DcError> {
    check_case(case)?;
    let index = case.bus_index();
    let (cols, state_buses) = state_columns(case);
    let m = case.branches.len();
    let n1 = state_buses.len();
    let mut h = DMatrix::<f64>::zeros(m, n1);
    for (k, br) in case.branches.iter().enumerate() {
        let b = 1.0 / br.x;
        if let Some(c) = cols[index[&br.from]] {
            h[(k, c)] += b;
        }
        if let Some(c) = cols[index[&br.to]] {
            h[(k, c)] -= b;
        }
    }
    let rank = h.clone().svd(false, false).rank(1e-10 * h.amax().max(1.0));
    if rank != n1 {
        return Err(DcError::RankDeficient { rank, expected: n1 });
    }
    Ok(MeasurementModel {
        case_name: case.name.clone(),
        h,
        meter_ids: case.branches.iter().map(|b| b.meter_id).collect(),
        slack_bus: case.slack_bus,
        state_dim: n1,
        sigma: DEFAULT_SIGMA,
        state_buses,
    })
}

/// Factorized reduced susceptance matrix `B'` of a case.
pub struct DcSolver {
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    cols: Vec<Option<usize>>,
    base_mva: f64,
    state_dim: usize,
}

impl DcSolver {
    pub fn new(case: &CaseSystem) -> Result<Self, DcError> {
        check_case(case)?;
        let index = case.bus_index();
        let (cols, buses) = state_columns(case);
        let n1 = buses.len();
        let mut b = DMatrix::<f64>::zeros(n1, n1);
        for br in &case.branches {
            let y = 1.0 / br.x;
            let i = cols[index[&br.from]];
            let j = cols[index[&br.to]];
            if let Some(i) = i {
                b[(i, i)] += y;
            }
            if let Some(j) = j {
                b[(j, j)] += y;
            }
            if let (Some(i), Some(j)) = (i, j) {
                b[(i, j)] -= y;
                b[(j, i)] -= y;
            }
        }
        let lu = b.lu();
        if n1 > 0 && !lu.is_invertible() {
            return Err(DcError::Singular);
        }
        Ok(Self {
            lu,
            cols,
            base_mva: case.base_mva,
            state_dim: n1,
        })
    }

    /// Solves `B' theta = p` for per-bus injections in MW (case bus order).
    /// The slack entry is ignored; the slack absorbs any imbalance.
    pub fn solve(&self, injections_mw: &[f64]) -> Result<StateVector, DcError> {
        if injections_mw.len() != self.cols.len() {
            return Err(DcError::Dimension {
                expected: self.cols.len(),
                got: injections_mw.len(),
            });
        }
        let mut rhs = DVector::zeros(self.state_dim);
        for (p, col) in injections_mw.iter().zip(&self.cols) {
            if let Some(c) = col {
                rhs[*c] = p / self.base_mva;
            }
        }
        let theta = self.lu.solve(&rhs).ok_or(DcError::Singular)?;
        Ok(StateVector {
            theta: theta.iter().copied().collect(),
        })
    }
}

pub fn dc_powerflow(case: &CaseSystem, injections_mw: &[f64]) -> Result<StateVector, DcError> {
    DcSolver::new(case)?.solve(injections_mw)
}

/// Net injections for loads scaled bus-by-bus; the slack balances the rest.
pub fn balanced_injections(case: &CaseSystem, scales: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = case
        .buses
        .iter()
        .zip(scales)
        .map(|(b, s)| if b.id == case.slack_bus { 0.0 } else { -b.pd * s })
        .collect();
    let total: f64 = p.iter().sum();
    if let Some(slack) = case.buses.iter().position(|b| b.id == case.slack_bus) {
        p[slack] = -total;
    }
    p
}

/// Load scenarios: every bus load is multiplied by its own uniform draw from
/// `[lo, hi]`. Sample `i` uses its own seed stream.
pub fn sample_states(
    case: &CaseSystem,
    count: usize,
    load_scale_range: (f64, f64),
    seed: u64,
) -> Result<Vec<StateVector>, DcError> {
    let (lo, hi) = load_scale_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(DcError::BadRange { lo, hi });
    }
    let solver = DcSolver::new(case)?;
    par::map_range(count, |i| {
        let mut rng = seed::rng(seed, "states", i as u64);
        let scales: Vec<f64> = case
            .buses
            .iter()
            .map(|_| if lo == hi { lo } else { rng.gen_range(lo..=hi) })
            .collect();
        solver.solve(&balanced_injections(case, &scales))
    })
    .into_iter()
    .collect()
}

/// `z = H x + e` with i.i.d. Gaussian noise of standard deviation `model.sigma`.
pub fn measure(model: &MeasurementModel, x: &StateVector, seed: u64) -> Result<Measurement, DcError> {
    let mut z = model.flows(x)?;
    if model.sigma > 0.0 {
        let noise = Normal::new(0.0, model.sigma).map_err(|_| DcError::BadSigma(model.sigma))?;
        let mut rng = seed::rng_from(seed);
        for v in &mut z {
            *v += noise.sample(&mut rng);
        }
    }
    Ok(Measurement {
        z,
        noise_sigma: model.sigma,
    })
}

//! Unit-weight least-squares DC state estimation, chi-square residual bad-data
//! detection, and the `a = H c` offset that passes it unnoticed.

use nalgebra::{DMatrix, DVector, QR};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::dcmodel::{Measurement, MeasurementModel, StateVector};

pub const DEFAULT_CONFIDENCE: f64 = 0.95;

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("measurement matrix is rank deficient")]
    RankDeficient,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("confidence must lie in (0, 1), got {0}")]
    BadConfidence(f64),
    #[error("no redundancy: {meters} meters for {states} states")]
    NoRedundancy { meters: usize, states: usize },
    #[error("sigma is zero but the residual is not (norm^2 = {0:e}); the test is ill-posed")]
    ZeroSigma(f64),
}

#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub x_hat: StateVector,
    pub residual: Vec<f64>,
    pub residual_norm2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BddDecision {
    Clean,
    BadData,
}

#[derive(Debug, Clone, Copy)]
pub struct BddOutcome {
    pub decision: BddDecision,
    /// Chi-square quantile the normalized residual was compared against.
    pub threshold: f64,
    /// `residual_norm2 / sigma^2`.
    pub statistic: f64,
}

#[derive(Debug, Clone)]
pub struct StealthVector {
    pub c: Vec<f64>,
    pub a: Vec<f64>,
}

/// Least-squares estimator with `H = Q R` factored once.
pub struct WlsEstimator {
    h: DMatrix<f64>,
    qr: QR<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl WlsEstimator {
    pub fn new(model: &MeasurementModel) -> Result<Self, EstimateError> {
        let h = model.h.clone();
        let n = h.ncols();
        let qr = h.clone().qr();
        let r = qr.r();
        let scale = r.diagonal().amax().max(f64::MIN_POSITIVE);
        if h.nrows() < n || r.diagonal().iter().any(|d| d.abs() <= 1e-12 * scale) {
            return Err(EstimateError::RankDeficient);
        }
        Ok(Self { h, qr })
    }

    pub fn estimate(&self, z: &[f64]) -> Result<EstimationResult, EstimateError> {
        let m = self.h.nrows();
        if z.len() != m {
            return Err(EstimateError::Dimension { expected: m, got: z.len() });
        }
        let zv = DVector::from_column_slice(z);
        let n = self.h.ncols();
        // x = R^{-1} Q^T z on the thin factorization.
        let mut qtz = zv.clone();
        self.qr.q_tr_mul(&mut qtz);
        let rhs = qtz.rows(0, n).into_owned();
        let r = self.qr.r();
        let x = r
            .solve_upper_triangular(&rhs)
            .ok_or(EstimateError::RankDeficient)?;
        let residual = &zv - &self.h * &x;
        let residual_norm2 = residual.norm_squared();
        Ok(EstimationResult {
            x_hat: StateVector {
                theta: x.iter().copied().collect(),
            },
            residual: residual.iter().copied().collect(),
            residual_norm2,
        })
    }
}

pub fn wls_estimate(model: &MeasurementModel, z: &Measurement) -> Result<EstimationResult, EstimateError> {
    WlsEstimator::new(model)?.estimate(&z.z)
}

/// Chi-square quantile for `m - (n-1)` degrees of freedom.
pub fn chi_square_threshold(model: &MeasurementModel, confidence: f64) -> Result<f64, EstimateError> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(EstimateError::BadConfidence(confidence));
    }
    let m = model.meter_count();
    let n = model.state_dim;
    if m <= n {
        return Err(EstimateError::NoRedundancy { meters: m, states: n });
    }
    let dist = ChiSquared::new((m - n) as f64).expect("positive degrees of freedom");
    Ok(dist.inverse_cdf(confidence))
}

/// Classifies an already computed residual.
pub fn bdd_decide(
    residual_norm2: f64,
    sigma: f64,
    threshold: f64,
) -> Result<BddOutcome, EstimateError> {
    if sigma == 0.0 {
        if residual_norm2 > 1e-20 {
            return Err(EstimateError::ZeroSigma(residual_norm2));
        }
        return Ok(BddOutcome {
            decision: BddDecision::Clean,
            threshold,
            statistic: 0.0,
        });
    }
    let statistic = residual_norm2 / (sigma * sigma);
    let decision = if statistic > threshold {
        BddDecision::BadData
    } else {
        BddDecision::Clean
    };
    Ok(BddOutcome {
        decision,
        threshold,
        statistic,
    })
}

pub fn bdd_detect(
    model: &MeasurementModel,
    z: &Measurement,
    confidence: f64,
) -> Result<BddOutcome, EstimateError> {
    let threshold = chi_square_threshold(model, confidence)?;
    let est = wls_estimate(model, z)?;
    bdd_decide(est.residual_norm2, model.sigma, threshold)
}

pub fn stealth_vector(model: &MeasurementModel, c: &[f64]) -> Result<StealthVector, EstimateError> {
    if c.len() != model.state_dim {
        return Err(EstimateError::Dimension {
            expected: model.state_dim,
            got: c.len(),
        });
    }
    let a = &model.h * DVector::from_column_slice(c);
    Ok(StealthVector {
        c: c.to_vec(),
        a: a.iter().copied().collect(),
    })
}

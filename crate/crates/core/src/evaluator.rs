//! Fitness: R² on the training split, optional linear scaling and
//! evaluation budget accounting.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use thiserror::Error;

use crate::dataio::{mean, variance, Samples};
use crate::template::{Genotype, Representation, TemplateError};

/// Prediction variance below which linear scaling falls back to the mean.
pub const LS_VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitnessError {
    #[error("evaluation budget of {limit} evaluations exhausted")]
    BudgetExhausted { limit: u64 },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("prediction and target lengths differ ({pred} vs {target})")]
    LengthMismatch { pred: usize, target: usize },
    #[error("cannot score an empty prediction vector")]
    Empty,
}

/// R² plus the affine map applied to the raw predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitnessValue {
    pub r2: f64,
    pub intercept: f64,
    pub slope: f64,
}

impl FitnessValue {
    pub const WORST: FitnessValue = FitnessValue {
        r2: f64::NEG_INFINITY,
        intercept: 0.0,
        slope: 1.0,
    };

    pub fn is_worst(&self) -> bool {
        self.r2 == f64::NEG_INFINITY
    }

    /// Total order: higher R² is better; never NaN by construction.
    pub fn cmp_quality(&self, other: &Self) -> Ordering {
        self.r2.total_cmp(&other.r2)
    }

    pub fn is_worse_than(&self, other: &Self) -> bool {
        self.r2 < other.r2
    }

    pub fn is_better_than(&self, other: &Self) -> bool {
        self.r2 > other.r2
    }
}

fn check_lengths(pred: &[f64], target: &[f64]) -> Result<(), FitnessError> {
    if pred.len() != target.len() {
        return Err(FitnessError::LengthMismatch {
            pred: pred.len(),
            target: target.len(),
        });
    }
    if pred.is_empty() {
        return Err(FitnessError::Empty);
    }
    Ok(())
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64, FitnessError> {
    check_lengths(pred, target)?;
    Ok(sse(pred, target, 0.0, 1.0) / pred.len() as f64)
}

fn sse(pred: &[f64], target: &[f64], intercept: f64, slope: f64) -> f64 {
    if intercept == 0.0 && slope == 1.0 {
        pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum()
    } else {
        pred.iter()
            .zip(target)
            .map(|(p, t)| {
                let e = intercept + slope * p - t;
                e * e
            })
            .sum()
    }
}

/// `1 - MSE / var(target)` with the population variance.
pub fn r2(pred: &[f64], target: &[f64]) -> Result<f64, FitnessError> {
    let m = mse(pred, target)?;
    Ok(1.0 - m / variance(target))
}

/// Least-squares `(intercept, slope)` mapping `pred` onto `target`.
pub fn linear_scale(pred: &[f64], target: &[f64]) -> Result<(f64, f64), FitnessError> {
    check_lengths(pred, target)?;
    let (mp, mt) = (mean(pred), mean(target));
    let (mut cov, mut var) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(target) {
        let dp = p - mp;
        cov += dp * (t - mt);
        var += dp * dp;
    }
    let n = pred.len() as f64;
    let (cov, var) = (cov / n, var / n);
    if var < LS_VARIANCE_FLOOR {
        return Ok((mt, 0.0));
    }
    let slope = cov / var;
    Ok((mt - slope * mp, slope))
}

/// Shared evaluation counter with a hard limit.
#[derive(Debug)]
pub struct EvaluationBudget {
    used: AtomicU64,
    limit: u64,
}

impl EvaluationBudget {
    pub fn new(limit: u64) -> Self {
        Self {
            used: AtomicU64::new(0),
            limit,
        }
    }

    pub fn unlimited() -> Self {
        Self::new(u64::MAX)
    }

    pub fn used(&self) -> u64 {
        self.used.load(AtomicOrdering::SeqCst)
    }

    pub fn limit(&self) -> u64 {
        self.limit
    }

    pub fn remaining(&self) -> u64 {
        self.limit - self.used()
    }

    pub fn is_exhausted(&self) -> bool {
        self.used() >= self.limit
    }

    /// Reserves one evaluation, returning how many were used before it.
    pub fn try_consume(&self) -> Result<u64, FitnessError> {
        self.used
            .fetch_update(AtomicOrdering::SeqCst, AtomicOrdering::SeqCst, |u| {
                (u < self.limit).then_some(u + 1)
            })
            .map_err(|_| FitnessError::BudgetExhausted { limit: self.limit })
    }
}

thread_local! {
    static SCRATCH: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

/// Everything needed to score genotypes on one training split.
#[derive(Debug, Clone)]
pub struct FitnessContext {
    pub repr: Representation,
    pub train: Samples,
    pub linear_scaling: bool,
    target_var: f64,
}

impl FitnessContext {
    pub fn new(repr: Representation, train: Samples, linear_scaling: bool) -> Self {
        let target_var = variance(&train.y);
        Self {
            repr,
            train,
            linear_scaling,
            target_var,
        }
    }

    pub fn predict(&self, g: &Genotype, x: &crate::dataio::DataMatrix) -> Result<Vec<f64>, TemplateError> {
        SCRATCH.with(|s| self.repr.evaluate_with(g, x, &mut s.borrow_mut()))
    }

    /// Scores `g` on the training data, consuming one evaluation.
    pub fn fitness(&self, g: &Genotype, budget: &EvaluationBudget) -> Result<FitnessValue, FitnessError> {
        budget.try_consume()?;
        self.score(g)
    }

    /// Scores `g` on the training data without touching any budget.
    pub fn score(&self, g: &Genotype) -> Result<FitnessValue, FitnessError> {
        let pred = self.predict(g, &self.train.x)?;
        Ok(self.score_predictions(&pred))
    }

    fn score_predictions(&self, pred: &[f64]) -> FitnessValue {
        let y = &self.train.y;
        let (intercept, slope) = if self.linear_scaling {
            match linear_scale(pred, y) {
                Ok(v) => v,
                Err(_) => return FitnessValue::WORST,
            }
        } else {
            (0.0, 1.0)
        };
        if !intercept.is_finite() || !slope.is_finite() {
            return FitnessValue::WORST;
        }
        let m = sse(pred, y, intercept, slope) / pred.len() as f64;
        let r2 = 1.0 - m / self.target_var;
        if r2.is_finite() {
            FitnessValue { r2, intercept, slope }
        } else {
            FitnessValue::WORST
        }
    }

    /// R² of `g` on other samples using the scaling fitted on training data.
    pub fn r2_on(&self, g: &Genotype, fit: &FitnessValue, samples: &Samples) -> Result<f64, FitnessError> {
        if samples.is_empty() {
            return Err(FitnessError::Empty);
        }
        let pred = self.predict(g, &samples.x)?;
        let m = sse(&pred, &samples.y, fit.intercept, fit.slope) / pred.len() as f64;
        let r2 = 1.0 - m / variance(&samples.y);
        Ok(if r2.is_nan() { f64::NEG_INFINITY } else { r2 })
    }
}

//! Transient-impact cost model: decaying propagator kernel, effective
//! propagator, impact/variance quadratic forms, and schedule cost reports.
//!
//! Units convention, used across the crate: impact coefficients and spreads
//! are in basis points, volumes in shares, noise variance in bp^2 per
//! interval. Costs therefore come out in bp * shares, and per-share costs in
//! bp.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{classify_definiteness, Definiteness, SymMat};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("impact matrix is not positive definite: the kernel admits price manipulation")]
    NonConvexImpactMatrix,
    #[error("invalid kernel parameter: {0}")]
    InvalidKernel(String),
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: schedule has {got} intervals, model has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("participation undefined: interval {0} has zero market volume but nonzero trade")]
    InfeasibleParticipation(usize),
}

/// Decaying impact kernel G0. `g0(0) = 0`; lags are counted in intervals.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum PropagatorKernel {
    /// G0(l) = gamma0 / (l0^2 + l^2)^(beta/2).
    Parametric { gamma0: f64, l0: f64, beta: f64 },
    /// Tabulated G0(1..=K); lags beyond the table hold the last value.
    Tabulated { values: Vec<f64> },
}

impl PropagatorKernel {
    pub fn parametric(gamma0: f64, l0: f64, beta: f64) -> Result<Self, ModelError> {
        if !(gamma0 > 0.0) {
            return Err(ModelError::InvalidKernel(format!(
                "gamma0 must be > 0, got {gamma0}"
            )));
        }
        if !(l0 >= 0.0) {
            return Err(ModelError::InvalidKernel(format!(
                "l0 must be >= 0, got {l0}"
            )));
        }
        if !(0.0..2.0).contains(&beta) {
            return Err(ModelError::InvalidKernel(format!(
                "beta must be in [0, 2), got {beta}"
            )));
        }
        Ok(PropagatorKernel::Parametric { gamma0, l0, beta })
    }

    /// Build a parametric kernel whose (gamma0, l0) are quoted in a time-lag
    /// unit (e.g. minutes) rather than interval counts. The family is closed
    /// under lag rescaling, so the parameters are converted exactly:
    /// gamma0' = gamma0 * s^-beta, l0' = l0 / s with s lags per interval.
    pub fn from_time_lags(
        gamma0: f64,
        l0: f64,
        beta: f64,
        lags_per_interval: f64,
    ) -> Result<Self, ModelError> {
        if !(lags_per_interval > 0.0) {
            return Err(ModelError::InvalidKernel(format!(
                "lags_per_interval must be > 0, got {lags_per_interval}"
            )));
        }
        Self::parametric(
            gamma0 * lags_per_interval.powf(-beta),
            l0 / lags_per_interval,
            beta,
        )
    }

    pub fn tabulated(values: Vec<f64>) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::InvalidKernel(
                "tabulated kernel needs at least one lag".into(),
            ));
        }
        Ok(PropagatorKernel::Tabulated { values })
    }

    /// G0 at integer interval lag k; zero at lag zero.
    pub fn g0(&self, k: usize) -> f64 {
        if k == 0 {
            return 0.0;
        }
        match self {
            PropagatorKernel::Parametric { gamma0, l0, beta } => {
                let l = k as f64;
                gamma0 / (l0 * l0 + l * l).powf(beta / 2.0)
            }
            PropagatorKernel::Tabulated { values } => values[(k - 1).min(values.len() - 1)],
        }
    }

    /// Increments g(k) = G0(k+1) - G0(k) for k = 0..n.
    pub fn increments(&self, n: usize) -> Vec<f64> {
        (0..n).map(|k| self.g0(k + 1) - self.g0(k)).collect()
    }
}

/// Propagator seen by the effective (mid-of-interval) price:
/// Gt(0) = G0(1)/2 and Gt(k) = (G0(k) + G0(k+1))/2 for k >= 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectivePropagator {
    values: Vec<f64>,
}

impl EffectivePropagator {
    pub fn build(kernel: &PropagatorKernel, n: usize) -> Self {
        assert!(n >= 1, "effective propagator needs at least one lag");
        let mut values = Vec::with_capacity(n);
        values.push(kernel.g0(1) / 2.0);
        for k in 1..n {
            values.push((kernel.g0(k) + kernel.g0(k + 1)) / 2.0);
        }
        EffectivePropagator { values }
    }

    #[inline]
    pub fn at(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Per-interval market volume: a constant or an intraday profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VolumeProfile {
    Constant(f64),
    PerInterval(Vec<f64>),
}

impl VolumeProfile {
    fn series(&self, n: usize) -> Result<Vec<f64>, ModelError> {
        let w = match self {
            VolumeProfile::Constant(w) => vec![*w; n],
            VolumeProfile::PerInterval(ws) => {
                if ws.len() != n {
                    return Err(ModelError::DimensionMismatch {
                        expected: n,
                        got: ws.len(),
                    });
                }
                ws.clone()
            }
        };
        if w.iter().any(|&x| !(x > 0.0)) {
            return Err(ModelError::InvalidParameter(
                "interval volumes must be > 0".into(),
            ));
        }
        Ok(w)
    }
}

/// Signed trading schedule over N intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub volumes: Vec<f64>,
}

impl Schedule {
    pub fn new(volumes: Vec<f64>) -> Self {
        Schedule { volumes }
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.volumes.iter().sum()
    }

    pub fn abs_total(&self) -> f64 {
        self.volumes.iter().map(|v| v.abs()).sum()
    }
}

/// Costs of a schedule under a model, at a given risk aversion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostReport {
    /// v' I v, in bp * shares.
    pub impact_cost: f64,
    /// delta * sum |v|, in bp * shares.
    pub spread_cost: f64,
    /// v' V v, in bp^2 * shares^2.
    pub variance: f64,
    /// Impact cost per traded share, bp; undefined when the net volume is zero.
    pub impact_per_share: Option<f64>,
    /// Spread cost per traded share, bp; equals delta iff all volumes share one sign.
    pub spread_per_share: Option<f64>,
    pub lambda: f64,
    /// impact + lambda * variance + spread.
    pub objective: f64,
}

/// Assembled execution cost model: triangular impact matrix, its symmetric
/// part, variance structure, and spread.
#[derive(Debug, Clone)]
pub struct CostModel {
    n: usize,
    effective: EffectivePropagator,
    /// theta_k = theta / W_k, bp per share.
    theta_series: Vec<f64>,
    w_series: Vec<f64>,
    theta_bp: f64,
    sigma2_bp2: f64,
    delta_bp: f64,
    /// Symmetrized impact matrix M = (I + I')/2.
    sym: SymMat,
    degenerate: bool,
}

/// Pivot tolerance for the convexity gate at construction.
pub const PD_PIVOT_TOL: f64 = 1e-12;

impl CostModel {
    pub fn build(
        kernel: &PropagatorKernel,
        theta_bp: f64,
        volume: &VolumeProfile,
        sigma2_bp2: f64,
        delta_bp: f64,
        n: usize,
    ) -> Result<Self, ModelError> {
        if n < 1 {
            return Err(ModelError::InvalidParameter(
                "model needs at least one interval".into(),
            ));
        }
        if !(theta_bp >= 0.0) || !(sigma2_bp2 >= 0.0) || !(delta_bp >= 0.0) {
            return Err(ModelError::InvalidParameter(
                "theta, sigma^2 and delta must be non-negative".into(),
            ));
        }
        let w_series = volume.series(n)?;
        let theta_series: Vec<f64> = w_series.iter().map(|w| theta_bp / w).collect();
        let effective = EffectivePropagator::build(kernel, n);
        // I_{ij} = theta_i * Gt(i - j) for i >= j; M is its symmetric part.
        let sym = SymMat::from_fn(n, |i, j| {
            debug_assert!(i >= j);
            if i == j {
                theta_series[i] * effective.at(0)
            } else {
                theta_series[i] * effective.at(i - j) / 2.0
            }
        });
        let degenerate = match classify_definiteness(&sym, PD_PIVOT_TOL) {
            Definiteness::PositiveDefinite => false,
            Definiteness::PositiveSemidefinite => true,
            Definiteness::Indefinite => return Err(ModelError::NonConvexImpactMatrix),
        };
        Ok(CostModel {
            n,
            effective,
            theta_series,
            w_series,
            theta_bp,
            sigma2_bp2,
            delta_bp,
            sym,
            degenerate,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn delta_bp(&self) -> f64 {
        self.delta_bp
    }

    pub fn sigma2_bp2(&self) -> f64 {
        self.sigma2_bp2
    }

    pub fn theta_bp(&self) -> f64 {
        self.theta_bp
    }

    pub fn theta_series(&self) -> &[f64] {
        &self.theta_series
    }

    pub fn w_series(&self) -> &[f64] {
        &self.w_series
    }

    pub fn effective_propagator(&self) -> &EffectivePropagator {
        &self.effective
    }

    /// Entry of the lower-triangular impact matrix.
    pub fn impact_entry(&self, i: usize, j: usize) -> f64 {
        if i >= j {
            self.theta_series[i] * self.effective.at(i - j)
        } else {
            0.0
        }
    }

    /// Symmetrized impact matrix M = (I + I')/2.
    pub fn sym_impact(&self) -> &SymMat {
        &self.sym
    }

    /// True when M is only positive semidefinite; solvers then apply a ridge
    /// tie-break and return the minimum-norm optimum.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Variance matrix entry V_{ij} = sigma^2 * min(i, j).
    pub fn variance_entry(&self, i: usize, j: usize) -> f64 {
        self.sigma2_bp2 * i.min(j) as f64
    }

    pub fn variance_matrix(&self) -> SymMat {
        SymMat::from_fn(self.n, |i, j| self.variance_entry(i, j))
    }

    fn check_dim(&self, schedule: &Schedule) -> Result<(), ModelError> {
        if schedule.len() != self.n {
            return Err(ModelError::DimensionMismatch {
                expected: self.n,
                got: schedule.len(),
            });
        }
        Ok(())
    }

    /// Expected impact cost v' I v (= v' M v), bp * shares.
    pub fn impact_cost(&self, schedule: &Schedule) -> Result<f64, ModelError> {
        self.check_dim(schedule)?;
        let v = &schedule.volumes;
        let mut total = 0.0;
        for i in 0..self.n {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += self.effective.at(i - j) * v[j];
            }
            total += v[i] * self.theta_series[i] * acc;
        }
        Ok(total)
    }

    /// Spread cost delta * sum |v_k|, bp * shares.
    pub fn spread_cost(&self, schedule: &Schedule) -> Result<f64, ModelError> {
        self.check_dim(schedule)?;
        Ok(self.delta_bp * schedule.abs_total())
    }

    /// Cost variance v' V v, computed through the tail-sum identity
    /// sum_{k>=1} (sum_{j>=k} v_j)^2.
    pub fn cost_variance(&self, schedule: &Schedule) -> Result<f64, ModelError> {
        self.check_dim(schedule)?;
        let v = &schedule.volumes;
        let mut tail = 0.0;
        let mut acc = 0.0;
        for k in (1..self.n).rev() {
            tail += v[k];
            acc += tail * tail;
        }
        Ok(self.sigma2_bp2 * acc)
    }

    /// Total objective v' (I + lambda V) v + delta sum |v|.
    pub fn objective(&self, schedule: &Schedule, lambda: f64) -> Result<f64, ModelError> {
        if lambda < 0.0 {
            return Err(ModelError::InvalidParameter(format!(
                "risk aversion must be >= 0, got {lambda}"
            )));
        }
        Ok(self.impact_cost(schedule)?
            + lambda * self.cost_variance(schedule)?
            + self.spread_cost(schedule)?)
    }

    pub fn cost_report(&self, schedule: &Schedule, lambda: f64) -> Result<CostReport, ModelError> {
        let impact_cost = self.impact_cost(schedule)?;
        let spread_cost = self.spread_cost(schedule)?;
        let variance = self.cost_variance(schedule)?;
        if lambda < 0.0 {
            return Err(ModelError::InvalidParameter(format!(
                "risk aversion must be >= 0, got {lambda}"
            )));
        }
        let net = schedule.total().abs();
        let (impact_per_share, spread_per_share) = if net > 0.0 {
            (Some(impact_cost / net), Some(spread_cost / net))
        } else {
            (None, None)
        };
        Ok(CostReport {
            impact_cost,
            spread_cost,
            variance,
            impact_per_share,
            spread_per_share,
            lambda,
            objective: impact_cost + lambda * variance + spread_cost,
        })
    }

    /// Impact matrix as CSV text, for external inspection.
    pub fn impact_matrix_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n)
                .map(|j| format!("{:.9e}", self.impact_entry(i, j)))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Variance matrix as CSV text.
    pub fn variance_matrix_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n)
                .map(|j| format!("{:.9e}", self.variance_entry(i, j)))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Serializable one-page summary of the model.
    pub fn summary(&self) -> CostModelSummary {
        CostModelSummary {
            n: self.n,
            theta_bp: self.theta_bp,
            delta_bp: self.delta_bp,
            sigma2_bp2: self.sigma2_bp2,
            mean_interval_volume: self.w_series.iter().sum::<f64>() / self.n as f64,
            effective_propagator_head: self.effective.values().iter().take(5).copied().collect(),
            degenerate: self.degenerate,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostModelSummary {
    pub n: usize,
    pub theta_bp: f64,
    pub delta_bp: f64,
    pub sigma2_bp2: f64,
    pub mean_interval_volume: f64,
    pub effective_propagator_head: Vec<f64>,
    pub degenerate: bool,
}

/// Participation rates x_k = v_k / W_k.
pub fn to_participation(schedule: &Schedule, w_series: &[f64]) -> Result<Vec<f64>, ModelError> {
    if schedule.len() != w_series.len() {
        return Err(ModelError::DimensionMismatch {
            expected: w_series.len(),
            got: schedule.len(),
        });
    }
    schedule
        .volumes
        .iter()
        .zip(w_series)
        .enumerate()
        .map(|(k, (&v, &w))| {
            if w > 0.0 {
                Ok(v / w)
            } else if v == 0.0 {
                Ok(0.0)
            } else {
                Err(ModelError::InfeasibleParticipation(k))
            }
        })
        .collect()
}

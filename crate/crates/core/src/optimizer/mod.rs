//! Optimal schedules under the assembled cost model: closed form without
//! spread, active-set numerical solve with spread, risk-aversion frontier,
//! and the flat / cosh baselines.

mod spread_solver;

pub use spread_solver::solve_with_spread_smoothed;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::impact_model::{CostModel, ModelError, Schedule};
use crate::linalg::{cholesky, SymMat};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("linear system is singular")]
    SingularSystem,
    #[error("objective is not convex")]
    NonConvex,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizationConfig {
    /// Risk aversion weight on cost variance.
    pub lambda: f64,
    /// Total signed shares to execute.
    pub total_volume: f64,
    /// Relative stationarity tolerance for the numerical solver.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Reserved for randomized diagnostics; the solvers are deterministic.
    pub seed: u64,
}

impl OptimizationConfig {
    pub fn new(total_volume: f64, lambda: f64) -> Self {
        OptimizationConfig {
            lambda,
            total_volume,
            tolerance: 1e-9,
            max_iterations: 20_000,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<(), SolverError> {
        if self.lambda < 0.0 {
            return Err(SolverError::InvalidParameter(format!(
                "risk aversion must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(SolverError::InvalidParameter(
                "tolerance must be > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverPath {
    ClosedForm,
    ActiveSet,
    Smoothed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    /// Scaled subgradient/KKT residual at the returned iterate.
    pub stationarity_norm: f64,
    pub objective: f64,
    pub path: SolverPath,
    pub converged: bool,
}

/// Quadratic part of the objective: F = (I + I')/2 + lambda V, with the ridge
/// tie-break applied when the impact matrix is only semidefinite.
pub(crate) fn objective_matrix(model: &CostModel, lambda: f64) -> SymMat {
    let n = model.n();
    let m = model.sym_impact();
    let mut q = SymMat::from_fn(n, |i, j| m.at(i, j) + lambda * model.variance_entry(i, j));
    if model.is_degenerate() {
        q.add_diag(1e-12 * m.trace() / n as f64);
    }
    q
}

/// Minimize v'(M + lambda V)v subject to 1'v = X, ignoring the spread term:
/// v* = (X / 1'F^-1 1) F^-1 1 with F the symmetrized stationarity matrix.
pub fn solve_closed_form(
    model: &CostModel,
    total_volume: f64,
    lambda: f64,
) -> Result<Schedule, SolverError> {
    if lambda < 0.0 {
        return Err(SolverError::InvalidParameter(format!(
            "risk aversion must be >= 0, got {lambda}"
        )));
    }
    let n = model.n();
    let mut q = objective_matrix(model, lambda);
    let chol = match cholesky(&q, 1e-13) {
        Ok(c) => c,
        Err(_) => {
            // Degenerate directions are broken by the minimum-norm ridge.
            q.add_diag(1e-12 * model.sym_impact().trace() / n as f64 + f64::MIN_POSITIVE);
            cholesky(&q, 1e-13).map_err(|_| SolverError::SingularSystem)?
        }
    };
    let u = chol.solve(&vec![1.0; n]);
    let denom: f64 = u.iter().sum();
    if !denom.is_finite() || denom.abs() <= 1e-300 {
        return Err(SolverError::SingularSystem);
    }
    let scale = total_volume / denom;
    Ok(Schedule::new(u.iter().map(|ui| scale * ui).collect()))
}

/// Minimize v'(M + lambda V)v + delta sum|v| subject to 1'v = X.
///
/// The absolute value is handled exactly by sign splitting; each iteration
/// solves the equality-constrained Newton system on the currently free
/// coordinates, walks as far as sign feasibility allows, and exchanges the
/// active set until the subgradient optimality conditions hold.
pub fn solve_with_spread(
    model: &CostModel,
    config: &OptimizationConfig,
) -> Result<(Schedule, SolveDiagnostics), SolverError> {
    config.validate()?;
    let n = model.n();
    if config.total_volume == 0.0 {
        let schedule = Schedule::new(vec![0.0; n]);
        let diag = SolveDiagnostics {
            iterations: 0,
            stationarity_norm: 0.0,
            objective: 0.0,
            path: SolverPath::ActiveSet,
            converged: true,
        };
        return Ok((schedule, diag));
    }
    let q = objective_matrix(model, config.lambda);
    let (v, diag) = spread_solver::solve_active_set(
        &q,
        model.delta_bp(),
        config.total_volume,
        config.tolerance,
        config.max_iterations,
    )?;
    Ok((Schedule::new(v), diag))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub lambda: f64,
    /// Expected cost (impact + spread) per traded share, bp.
    pub cost_per_share_bp: f64,
    /// Cost variance per traded share squared, bp^2.
    pub variance_per_share2: f64,
    pub schedule: Schedule,
    pub converged: bool,
}

fn frontier_point(
    model: &CostModel,
    schedule: Schedule,
    lambda: f64,
    converged: bool,
) -> Result<FrontierPoint, SolverError> {
    let report = model.cost_report(&schedule, lambda)?;
    let x = schedule.total().abs();
    if x <= 0.0 {
        return Err(SolverError::InvalidParameter(
            "frontier needs a nonzero volume".into(),
        ));
    }
    Ok(FrontierPoint {
        lambda,
        cost_per_share_bp: (report.impact_cost + report.spread_cost) / x,
        variance_per_share2: report.variance / (x * x),
        schedule,
        converged,
    })
}

/// One optimal schedule per risk aversion, sorted by lambda.
pub fn efficient_frontier(
    model: &CostModel,
    total_volume: f64,
    lambdas: &[f64],
) -> Result<Vec<FrontierPoint>, SolverError> {
    if lambdas.is_empty() {
        return Err(SolverError::InvalidParameter(
            "lambda list must be non-empty".into(),
        ));
    }
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted
        .par_iter()
        .map(|&lambda| {
            let cfg = OptimizationConfig {
                lambda,
                ..OptimizationConfig::new(total_volume, lambda)
            };
            let (schedule, diag) = solve_with_spread(model, &cfg)?;
            frontier_point(model, schedule, lambda, diag.converged)
        })
        .collect()
}

/// Temporary-impact coefficient for the cosh baseline, chosen so its
/// one-interval cost matches the model's instantaneous cost: theta_0 Gt(0).
pub fn ac_temporary_impact(model: &CostModel) -> f64 {
    model.theta_series()[0] * model.effective_propagator().at(0)
}

/// Cosh-baseline schedules costed under the same propagator model, sorted by
/// lambda.
pub fn almgren_chriss_frontier(
    model: &CostModel,
    total_volume: f64,
    lambdas: &[f64],
) -> Result<Vec<FrontierPoint>, SolverError> {
    if lambdas.is_empty() {
        return Err(SolverError::InvalidParameter(
            "lambda list must be non-empty".into(),
        ));
    }
    let rho = ac_temporary_impact(model);
    let n = model.n();
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted
        .iter()
        .map(|&lambda| {
            let schedule = almgren_chriss_schedule(
                total_volume,
                n,
                n as f64,
                lambda,
                model.sigma2_bp2(),
                rho,
            )?;
            frontier_point(model, schedule, lambda, true)
        })
        .collect()
}

/// Constant-rate schedule v_k = X / N.
pub fn bertsimas_lo_flat(total_volume: f64, n: usize) -> Result<Schedule, SolverError> {
    if n < 1 {
        return Err(SolverError::InvalidParameter(
            "need at least one interval".into(),
        ));
    }
    Ok(Schedule::new(vec![total_volume / n as f64; n]))
}

/// Risk-averse cosh schedule: v_k proportional to cosh(beta (T - t_k)) with
/// beta = sqrt(lambda sigma^2 / rho) and t_k = k T / N, normalized to X.
/// Computed in log space so large beta T does not overflow.
pub fn almgren_chriss_schedule(
    total_volume: f64,
    n: usize,
    horizon: f64,
    lambda: f64,
    sigma2: f64,
    rho: f64,
) -> Result<Schedule, SolverError> {
    if n < 1 {
        return Err(SolverError::InvalidParameter(
            "need at least one interval".into(),
        ));
    }
    if !(rho > 0.0) || lambda < 0.0 || sigma2 < 0.0 || !(horizon > 0.0) {
        return Err(SolverError::InvalidParameter(
            "need rho > 0, horizon > 0, lambda >= 0, sigma^2 >= 0".into(),
        ));
    }
    let beta = (lambda * sigma2 / rho).sqrt();
    let args: Vec<f64> = (0..n)
        .map(|k| beta * (horizon - k as f64 * horizon / n as f64))
        .collect();
    let max_arg = args.iter().cloned().fold(0.0, f64::max);
    // cosh(a) / exp(max) = (exp(a - max) + exp(-a - max)) / 2.
    let weights: Vec<f64> = args
        .iter()
        .map(|&a| ((a - max_arg).exp() + (-a - max_arg).exp()) / 2.0)
        .collect();
    let sum: f64 = weights.iter().sum();
    Ok(Schedule::new(
        weights.iter().map(|w| total_volume * w / sum).collect(),
    ))
}

/// Default risk-aversion grid: zero plus 20 logarithmically spaced points
/// over [1e-8, 1e-2].
pub fn default_lambda_grid() -> Vec<f64> {
    let mut grid = vec![0.0];
    let (lo, hi, n) = (-8.0_f64, -2.0_f64, 20usize);
    for i in 0..n {
        let e = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        grid.push(10f64.powf(e));
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impact_model::{PropagatorKernel, VolumeProfile};

    fn model(kernel: PropagatorKernel, n: usize, delta: f64, sigma2: f64) -> CostModel {
        CostModel::build(
            &kernel,
            10.0,
            &VolumeProfile::Constant(1000.0),
            sigma2,
            delta,
            n,
        )
        .unwrap()
    }

    fn decaying() -> PropagatorKernel {
        PropagatorKernel::parametric(1.0, 2.0, 0.45).unwrap()
    }

    #[test]
    fn closed_form_single_interval() {
        let m = model(decaying(), 1, 0.0, 4.0);
        let s = solve_closed_form(&m, 42.0, 0.5).unwrap();
        assert_eq!(s.volumes, vec![42.0]);
    }

    #[test]
    fn closed_form_constant_kernel_is_flat() {
        let kernel = PropagatorKernel::tabulated(vec![0.7]).unwrap();
        let m = model(kernel, 6, 0.0, 0.0);
        assert!(m.is_degenerate());
        let s = solve_closed_form(&m, 60.0, 0.0).unwrap();
        // The tie-break ridge is 1e-12 of the matrix scale, so the recovered
        // flat solution carries conditioning error of that order.
        for v in &s.volumes {
            assert!((v - 10.0).abs() < 0.05, "volumes {:?}", s.volumes);
        }
        assert!((s.total() - 60.0).abs() < 1e-9 * 60.0);
    }

    #[test]
    fn closed_form_constraint_is_exact() {
        let m = model(decaying(), 12, 0.0, 9.0);
        for lambda in [0.0, 1e-6, 1e-3] {
            let s = solve_closed_form(&m, -350.0, lambda).unwrap();
            assert!((s.total() + 350.0).abs() <= 1e-9 * 350.0);
        }
    }

    #[test]
    fn spread_solver_matches_closed_form_when_delta_zero() {
        let m = model(decaying(), 10, 0.0, 25.0);
        for lambda in [0.0, 1e-5] {
            let closed = solve_closed_form(&m, 120.0, lambda).unwrap();
            let cfg = OptimizationConfig::new(120.0, lambda);
            let (numeric, diag) = solve_with_spread(&m, &cfg).unwrap();
            assert!(diag.converged);
            for (a, b) in closed.volumes.iter().zip(&numeric.volumes) {
                assert!(
                    (a - b).abs() <= 1e-6 * a.abs().max(1e-12),
                    "closed {a} vs numeric {b}"
                );
            }
        }
    }

    #[test]
    fn spread_solver_handles_degenerate_model() {
        // Constant kernel: impact cost is constant on the constraint set, so
        // the spread term alone decides; the ridge tie-break keeps it flat.
        let kernel = PropagatorKernel::tabulated(vec![0.7]).unwrap();
        let m = model(kernel, 6, 2.0, 0.0);
        assert!(m.is_degenerate());
        let (s, diag) = solve_with_spread(&m, &OptimizationConfig::new(60.0, 0.0)).unwrap();
        assert!(diag.converged);
        assert!(s.volumes.iter().all(|&v| v >= -1e-9));
        assert!((s.total() - 60.0).abs() < 1e-9 * 60.0);
        let report = m.cost_report(&s, 0.0).unwrap();
        assert!((report.spread_per_share.unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn spread_solver_zero_volume_is_trivial() {
        let m = model(decaying(), 5, 3.0, 1.0);
        let (s, diag) = solve_with_spread(&m, &OptimizationConfig::new(0.0, 0.0)).unwrap();
        assert!(s.volumes.iter().all(|&v| v == 0.0));
        assert!(diag.converged);
    }

    #[test]
    fn huge_spread_forces_single_signed_solution() {
        let m = model(decaying(), 8, 1e4, 0.0);
        let cfg = OptimizationConfig::new(80.0, 0.0);
        let (s, diag) = solve_with_spread(&m, &cfg).unwrap();
        assert!(diag.converged);
        assert!(
            s.volumes.iter().all(|&v| v >= -1e-12),
            "volumes {:?}",
            s.volumes
        );
        let report = m.cost_report(&s, 0.0).unwrap();
        assert!((report.spread_per_share.unwrap() - 1e4).abs() < 1e-6);
    }

    #[test]
    fn objective_descent_vs_flat() {
        let m = model(decaying(), 20, 2.5, 50.0);
        for lambda in [0.0, 1e-4] {
            let cfg = OptimizationConfig::new(200.0, lambda);
            let (s, _) = solve_with_spread(&m, &cfg).unwrap();
            let flat = bertsimas_lo_flat(200.0, 20).unwrap();
            let obj_s = m.objective(&s, lambda).unwrap();
            let obj_flat = m.objective(&flat, lambda).unwrap();
            assert!(obj_s <= obj_flat + 1e-9 * obj_flat.abs());
        }
    }

    #[test]
    fn flat_baseline() {
        let s = bertsimas_lo_flat(100.0, 4).unwrap();
        assert_eq!(s.volumes, vec![25.0; 4]);
        assert_eq!(s.total(), 100.0);
        assert!(bertsimas_lo_flat(1.0, 0).is_err());
    }

    #[test]
    fn cosh_schedule_zero_lambda_is_flat() {
        let s = almgren_chriss_schedule(100.0, 5, 5.0, 0.0, 100.0, 1.0).unwrap();
        for v in &s.volumes {
            assert!((v - 20.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cosh_schedule_front_loads_with_lambda() {
        let ratio = |lambda: f64| {
            let s = almgren_chriss_schedule(100.0, 10, 10.0, lambda, 400.0, 2.0).unwrap();
            s.volumes[0] / s.volumes[9]
        };
        let r1 = ratio(1e-4);
        let r2 = ratio(1e-2);
        assert!(r1 > 1.0);
        assert!(r2 > r1);
        // Strictly decreasing weights for positive lambda.
        let s = almgren_chriss_schedule(100.0, 10, 10.0, 1e-3, 400.0, 2.0).unwrap();
        for w in s.volumes.windows(2) {
            assert!(w[0] > w[1]);
        }
    }

    #[test]
    fn cosh_schedule_survives_extreme_lambda() {
        let s = almgren_chriss_schedule(50.0, 100, 100.0, 1e6, 1e4, 0.1).unwrap();
        assert!(s.volumes.iter().all(|v| v.is_finite()));
        assert!((s.total() - 50.0).abs() < 1e-9 * 50.0);
    }

    #[test]
    fn frontier_is_monotone() {
        let m = model(decaying(), 15, 1.0, 200.0);
        let lambdas = [0.0, 1e-6, 1e-5, 1e-4, 1e-3];
        let frontier = efficient_frontier(&m, 150.0, &lambdas).unwrap();
        assert_eq!(frontier.len(), lambdas.len());
        for pair in frontier.windows(2) {
            assert!(pair[1].cost_per_share_bp >= pair[0].cost_per_share_bp - 1e-9);
            assert!(pair[1].variance_per_share2 <= pair[0].variance_per_share2 + 1e-9);
        }
    }

    #[test]
    fn empty_lambda_list_is_an_error() {
        let m = model(decaying(), 5, 1.0, 1.0);
        assert!(efficient_frontier(&m, 10.0, &[]).is_err());
    }

    #[test]
    fn default_grid_shape() {
        let grid = default_lambda_grid();
        assert_eq!(grid.len(), 21);
        assert_eq!(grid[0], 0.0);
        assert!((grid[1] - 1e-8).abs() < 1e-20);
        assert!((grid[20] - 1e-2).abs() < 1e-12);
    }
}

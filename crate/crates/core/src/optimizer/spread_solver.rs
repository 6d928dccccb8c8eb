//! Active-set solver for min v'Qv + delta ||v||_1 subject to 1'v = X.
//!
//! Signs are split exactly (each coordinate is held at zero, positive, or
//! negative); on the current sign pattern the problem is an equality-
//! constrained quadratic solved in one bordered Newton system. A ratio test
//! walks toward that face optimum, clamping the first coordinate whose sign
//! would flip; once a face optimum is feasible, the subgradient conditions
//! decide convergence or which coordinate to release.

use crate::impact_model::{CostModel, Schedule};
use crate::linalg::{cholesky, dot, solve_bordered, SymMat};

use super::{objective_matrix, OptimizationConfig, SolveDiagnostics, SolverError, SolverPath};

/// Exact subgradient residual of the KKT system at (v, nu):
/// free coordinates need g_k + nu + delta sign(v_k) = 0, clamped ones
/// |g_k + nu| <= delta.
fn stationarity_residual(g: &[f64], v: &[f64], sign: &[i8], nu: f64, delta: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..v.len() {
        let r = if sign[k] != 0 {
            (g[k] + nu + delta * sign[k] as f64).abs()
        } else {
            (g[k] + nu).abs() - delta
        };
        worst = worst.max(r);
    }
    worst
}

fn residual_scale(g: &[f64], nu: f64, delta: f64) -> f64 {
    let gmax = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    gmax.max(nu.abs()).max(delta).max(1e-30)
}

pub(crate) fn solve_active_set(
    q: &SymMat,
    delta: f64,
    total_volume: f64,
    tolerance: f64,
    max_iterations: usize,
) -> Result<(Vec<f64>, SolveDiagnostics), SolverError> {
    let n = q.n();
    let q2 = SymMat::from_fn(n, |i, j| 2.0 * q.at(i, j));
    let init_sign: i8 = if total_volume > 0.0 { 1 } else { -1 };
    let mut v = vec![total_volume / n as f64; n];
    let mut sign: Vec<i8> = vec![init_sign; n];
    let mut nu = 0.0;
    let mut iterations = 0usize;
    let mut converged = false;

    while iterations < max_iterations {
        iterations += 1;
        let free: Vec<usize> = (0..n).filter(|&k| sign[k] != 0).collect();
        debug_assert!(!free.is_empty());

        // Newton/KKT target on the current face:
        //   [2Q_FF  1] [w ]   [-delta s_F]
        //   [1'     0] [nu] = [X]
        let sub = q2.submatrix(&free);
        let chol = cholesky(&sub, 1e-15).map_err(|_| SolverError::SingularSystem)?;
        let ones = vec![1.0; free.len()];
        let rhs: Vec<f64> = free.iter().map(|&k| -delta * sign[k] as f64).collect();
        let (w, nu_new) = solve_bordered(&chol, &ones, &rhs, total_volume);
        nu = nu_new;

        // Walk toward the face optimum, stopping at the first sign flip.
        let mut t = 1.0f64;
        let mut blocker: Option<usize> = None;
        for (idx, &k) in free.iter().enumerate() {
            let target = w[idx] * sign[k] as f64;
            if target < 0.0 {
                let cur = v[k] * sign[k] as f64;
                let tk = cur / (cur - target);
                if tk < t {
                    t = tk;
                    blocker = Some(k);
                }
            }
        }
        for (idx, &k) in free.iter().enumerate() {
            v[k] += t * (w[idx] - v[k]);
        }
        if let Some(b) = blocker {
            v[b] = 0.0;
            sign[b] = 0;
            continue;
        }

        // Face optimum reached; test the clamped coordinates.
        let g = q2.matvec(&v);
        let mut worst_k = None;
        let mut worst_viol = tolerance * residual_scale(&g, nu, delta);
        for k in 0..n {
            if sign[k] == 0 {
                let viol = (g[k] + nu).abs() - delta;
                if viol > worst_viol {
                    worst_viol = viol;
                    worst_k = Some(k);
                }
            }
        }
        match worst_k {
            None => {
                converged = true;
                break;
            }
            Some(k) => {
                sign[k] = if g[k] + nu > 0.0 { -1 } else { 1 };
            }
        }
    }

    let g = q2.matvec(&v);
    let residual = stationarity_residual(&g, &v, &sign, nu, delta);
    let objective = dot(&q.matvec(&v), &v) + delta * v.iter().map(|x| x.abs()).sum::<f64>();
    let diag = SolveDiagnostics {
        iterations,
        stationarity_norm: residual / residual_scale(&g, nu, delta),
        objective,
        path: SolverPath::ActiveSet,
        converged,
    };
    Ok((v, diag))
}

/// Smooth diagnostic variant: replaces |v_k| by sqrt(v_k^2 + eps) with
/// eps = 1e-12 X^2 and runs equality-constrained Newton with backtracking.
/// Useful for cross-checking the active-set solution.
pub fn solve_with_spread_smoothed(
    model: &CostModel,
    config: &OptimizationConfig,
) -> Result<(Schedule, SolveDiagnostics), SolverError> {
    let n = model.n();
    let x_total = config.total_volume;
    if x_total == 0.0 {
        return Ok((
            Schedule::new(vec![0.0; n]),
            SolveDiagnostics {
                iterations: 0,
                stationarity_norm: 0.0,
                objective: 0.0,
                path: SolverPath::Smoothed,
                converged: true,
            },
        ));
    }
    let q = objective_matrix(model, config.lambda);
    let delta = model.delta_bp();
    let eps = 1e-12 * x_total * x_total;
    let smooth_obj = |v: &[f64]| -> f64 {
        dot(&q.matvec(v), v) + delta * v.iter().map(|x| (x * x + eps).sqrt()).sum::<f64>()
    };
    let mut v = vec![x_total / n as f64; n];
    let mut obj = smooth_obj(&v);
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..config.max_iterations.min(500) {
        iterations += 1;
        let qv = q.matvec(&v);
        let grad: Vec<f64> = (0..n)
            .map(|k| 2.0 * qv[k] + delta * v[k] / (v[k] * v[k] + eps).sqrt())
            .collect();
        let hess = SymMat::from_fn(n, |i, j| {
            let extra = if i == j {
                delta * eps / (v[i] * v[i] + eps).powf(1.5)
            } else {
                0.0
            };
            2.0 * q.at(i, j) + extra
        });
        let chol = cholesky(&hess, 1e-15).map_err(|_| SolverError::SingularSystem)?;
        let neg_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
        let ones = vec![1.0; n];
        // Direction keeps the volume constraint: 1'd = 0.
        let (d, _nu) = solve_bordered(&chol, &ones, &neg_grad, 0.0);
        let slope = dot(&grad, &d);
        let dnorm = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if dnorm <= 1e-14 * (1.0 + v.iter().fold(0.0f64, |m, x| m.max(x.abs()))) || slope >= 0.0 {
            converged = true;
            break;
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = v.iter().zip(&d).map(|(vi, di)| vi + step * di).collect();
            let cand_obj = smooth_obj(&cand);
            if cand_obj <= obj + 1e-4 * step * slope {
                let rel = (obj - cand_obj) / obj.abs().max(1e-30);
                v = cand;
                obj = cand_obj;
                accepted = true;
                if rel <= config.tolerance {
                    converged = true;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted || converged {
            converged = true;
            break;
        }
    }
    // Constrained stationarity: the multiplier that best cancels the gradient.
    let qv = q.matvec(&v);
    let grad: Vec<f64> = (0..n)
        .map(|k| 2.0 * qv[k] + delta * v[k] / (v[k] * v[k] + eps).sqrt())
        .collect();
    let mean = grad.iter().sum::<f64>() / n as f64;
    let resid = grad.iter().fold(0.0f64, |m, g| m.max((g - mean).abs()));
    let scale = grad.iter().fold(1e-30f64, |m, g| m.max(g.abs()));
    let diag = SolveDiagnostics {
        iterations,
        stationarity_norm: resid / scale,
        objective: model
            .objective(&Schedule::new(v.clone()), config.lambda)
            .unwrap_or(f64::NAN),
        path: SolverPath::Smoothed,
        converged,
    };
    Ok((Schedule::new(v), diag))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn active_set_positive_face_with_large_delta() {
        // Strongly diagonal Q with a big spread keeps everything positive.
        let q = SymMat::from_fn(4, |i, j| if i == j { 2.0 } else { 0.1 });
        let (v, diag) = solve_active_set(&q, 50.0, 8.0, 1e-10, 1000).unwrap();
        assert!(diag.converged);
        assert!((v.iter().sum::<f64>() - 8.0).abs() < 1e-12);
        assert!(v.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn active_set_zero_delta_is_exact_kkt() {
        let q = SymMat::from_fn(6, |i, j| {
            if i == j {
                3.0
            } else {
                1.0 / (1.0 + (i as f64 - j as f64).abs())
            }
        });
        let (v, diag) = solve_active_set(&q, 0.0, -30.0, 1e-12, 1000).unwrap();
        assert!(diag.converged);
        assert!(diag.stationarity_norm < 1e-10);
        assert!((v.iter().sum::<f64>() + 30.0).abs() < 1e-10);
    }
}

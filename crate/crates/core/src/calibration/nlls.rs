//! Small-problem Levenberg-Marquardt with box clamping, used by the kernel
//! and arctan impact fits (2-3 parameters, tens of data points).

use crate::linalg::{cholesky, SymMat};

pub struct LmProblem<'a, M, J>
where
    M: Fn(&[f64], f64) -> f64,
    J: Fn(&[f64], f64, &mut [f64]),
{
    pub x: &'a [f64],
    pub y: &'a [f64],
    /// Optional per-point weights (defaults to 1).
    pub weights: Option<&'a [f64]>,
    pub model: M,
    /// Writes d model / d params into the provided buffer.
    pub jacobian: J,
    pub lower: &'a [f64],
    pub upper: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub params: Vec<f64>,
    pub sse: f64,
    /// Diagonal of s^2 (J'WJ)^-1 at the optimum; NaN when underdetermined.
    pub variance_diag: Vec<f64>,
    pub converged: bool,
}

fn weighted_sse<M: Fn(&[f64], f64) -> f64>(
    p: &[f64],
    x: &[f64],
    y: &[f64],
    w: Option<&[f64]>,
    model: &M,
) -> f64 {
    x.iter()
        .zip(y)
        .enumerate()
        .map(|(i, (&xi, &yi))| {
            let r = yi - model(p, xi);
            w.map_or(1.0, |w| w[i]) * r * r
        })
        .sum()
}

/// Damped Gauss-Newton iteration from `p0`. Returns None when the objective is
/// not finite at the start or every step fails.
pub fn levenberg_marquardt<M, J>(
    prob: &LmProblem<'_, M, J>,
    p0: &[f64],
    max_iter: usize,
) -> Option<LmResult>
where
    M: Fn(&[f64], f64) -> f64,
    J: Fn(&[f64], f64, &mut [f64]),
{
    let np = p0.len();
    let n = prob.x.len();
    let clamp = |p: &mut [f64]| {
        for k in 0..np {
            p[k] = p[k].clamp(prob.lower[k], prob.upper[k]);
        }
    };
    let mut p = p0.to_vec();
    clamp(&mut p);
    let mut sse = weighted_sse(&p, prob.x, prob.y, prob.weights, &prob.model);
    if !sse.is_finite() {
        return None;
    }
    let mut mu = 1e-3;
    let mut converged = false;
    let mut jrow = vec![0.0; np];

    for _ in 0..max_iter {
        // Normal equations J'WJ and J'Wr at the current point.
        let mut a = SymMat::zeros(np);
        let mut g = vec![0.0; np];
        for i in 0..n {
            let wi = prob.weights.map_or(1.0, |w| w[i]);
            (prob.jacobian)(&p, prob.x[i], &mut jrow);
            let r = prob.y[i] - (prob.model)(&p, prob.x[i]);
            for k in 0..np {
                g[k] += wi * jrow[k] * r;
                for l in 0..=k {
                    a.set(k, l, a.at(k, l) + wi * jrow[k] * jrow[l]);
                }
            }
        }
        if g.iter().map(|v| v.abs()).fold(0.0, f64::max) <= 1e-14 * (1.0 + sse) {
            converged = true;
            break;
        }
        let mut stepped = false;
        for _ in 0..30 {
            let mut damped = a.clone();
            for k in 0..np {
                let d = a.at(k, k);
                damped.set(k, k, d + mu * d.max(1e-30));
            }
            let Ok(chol) = cholesky(&damped, 1e-300) else {
                mu *= 4.0;
                continue;
            };
            let step = chol.solve(&g);
            let mut cand = p.clone();
            for k in 0..np {
                cand[k] += step[k];
            }
            clamp(&mut cand);
            let cand_sse = weighted_sse(&cand, prob.x, prob.y, prob.weights, &prob.model);
            if cand_sse.is_finite() && cand_sse <= sse {
                let rel = (sse - cand_sse) / sse.max(1e-300);
                let step_small = step
                    .iter()
                    .zip(&p)
                    .all(|(s, pk)| s.abs() <= 1e-12 * (1.0 + pk.abs()));
                p = cand;
                sse = cand_sse;
                mu = (mu / 3.0).max(1e-12);
                stepped = true;
                if rel <= 1e-14 || step_small {
                    converged = true;
                }
                break;
            }
            mu *= 4.0;
        }
        if !stepped || converged {
            converged = converged || !stepped;
            break;
        }
    }

    // Parameter variances from the Gauss-Newton approximation at the optimum.
    let dof = n.saturating_sub(np);
    let variance_diag = if dof > 0 {
        let s2 = sse / dof as f64;
        let mut a = SymMat::zeros(np);
        for i in 0..n {
            let wi = prob.weights.map_or(1.0, |w| w[i]);
            (prob.jacobian)(&p, prob.x[i], &mut jrow);
            for k in 0..np {
                for l in 0..=k {
                    a.set(k, l, a.at(k, l) + wi * jrow[k] * jrow[l]);
                }
            }
        }
        match cholesky(&a, 1e-300) {
            Ok(chol) => (0..np)
                .map(|k| {
                    let mut e = vec![0.0; np];
                    e[k] = 1.0;
                    s2 * chol.solve(&e)[k]
                })
                .collect(),
            Err(_) => vec![f64::NAN; np],
        }
    } else {
        vec![f64::NAN; np]
    };

    Some(LmResult {
        params: p,
        sse,
        variance_diag,
        converged,
    })
}

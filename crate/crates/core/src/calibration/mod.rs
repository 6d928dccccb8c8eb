//! Estimation of the instantaneous impact function, the decaying propagator,
//! the residual noise variance, and the half fractional spread from an
//! interval series.
//!
//! Returns enter in log units and all fitted quantities are reported in basis
//! points (impact coefficients bp, noise variance bp^2 per interval).

mod nlls;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::impact_model::PropagatorKernel;
use crate::linalg::{cholesky, SymMat};
use crate::market_data::{AggregationScheme, IntervalRow, IntervalSeries, QuoteRecord};
use crate::SCHEMA_VERSION;
use nlls::{levenberg_marquardt, LmProblem};

/// Log-return to basis points.
pub const BP: f64 = 1e4;

/// Standard errors can be non-finite when a fit parameter sits on a bound;
/// JSON has no NaN, so those serialize as null and read back as NaN.
mod se_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("degenerate bins: imbalances carry no identifying variation")]
    DegenerateBins,
    #[error("fit diverged: {0}")]
    FitDiverged(String),
    #[error("singular regression design (pivot ratio {condition:.3e})")]
    SingularDesign { condition: f64 },
    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpactForm {
    Linear,
    Arctan,
}

/// One bin of the conditional-return scatter.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BinStat {
    pub center: f64,
    pub mean_return_bp: f64,
    pub count: usize,
}

/// Fitted instantaneous impact function; odd by construction.
///
/// The linear form acts on the normalized imbalance and the arctan form on the
/// raw aggregated imbalance in shares.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum ImpactFunctionFit {
    Linear {
        theta_bp: f64,
        #[serde(with = "se_serde")]
        theta_se_bp: f64,
        bins: Vec<BinStat>,
    },
    Arctan {
        theta_bp: f64,
        rho_per_share: f64,
        #[serde(with = "se_serde")]
        theta_se_bp: f64,
        #[serde(with = "se_serde")]
        rho_se: f64,
        bins: Vec<BinStat>,
    },
}

impl ImpactFunctionFit {
    /// f at the form's own coordinate (normalized or raw imbalance), in bp.
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ImpactFunctionFit::Linear { theta_bp, .. } => theta_bp * x,
            ImpactFunctionFit::Arctan {
                theta_bp,
                rho_per_share,
                ..
            } => theta_bp * (rho_per_share * x).atan(),
        }
    }

    /// f applied to an interval row, in bp.
    pub fn eval_row(&self, row: &IntervalRow) -> f64 {
        match self {
            ImpactFunctionFit::Linear { .. } => self.eval(row.norm_imbalance),
            ImpactFunctionFit::Arctan { .. } => self.eval(row.imbalance),
        }
    }

    pub fn bins(&self) -> &[BinStat] {
        match self {
            ImpactFunctionFit::Linear { bins, .. } | ImpactFunctionFit::Arctan { bins, .. } => bins,
        }
    }
}

/// Conditional-return fit over equal-population bins of the imbalance.
/// Odd symmetry is imposed by pooling every (v, r) with its mirror (-v, -r).
pub fn estimate_impact_function(
    series: &IntervalSeries,
    n_bins: usize,
    form: ImpactForm,
) -> Result<ImpactFunctionFit, CalibrationError> {
    if n_bins < 3 {
        return Err(CalibrationError::InvalidParameter(format!(
            "need n_bins >= 3, got {n_bins}"
        )));
    }
    if series.is_empty() {
        return Err(CalibrationError::InsufficientData { needed: 1, got: 0 });
    }
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(series.len() * 2);
    for row in &series.rows {
        let x = match form {
            ImpactForm::Linear => row.norm_imbalance,
            ImpactForm::Arctan => row.imbalance,
        };
        let y = row.log_return * BP;
        points.push((x, y));
        points.push((-x, -y));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut bins = Vec::with_capacity(n_bins);
    let total = points.len();
    for b in 0..n_bins {
        let lo = b * total / n_bins;
        let hi = (b + 1) * total / n_bins;
        if lo == hi {
            continue;
        }
        let chunk = &points[lo..hi];
        let count = chunk.len();
        let center = chunk.iter().map(|p| p.0).sum::<f64>() / count as f64;
        let mean_return_bp = chunk.iter().map(|p| p.1).sum::<f64>() / count as f64;
        bins.push(BinStat {
            center,
            mean_return_bp,
            count,
        });
    }

    let x_scale = bins.iter().map(|b| b.center.abs()).fold(0.0, f64::max);
    if x_scale <= 0.0 {
        return Err(CalibrationError::DegenerateBins);
    }

    match form {
        ImpactForm::Linear => {
            let sxx: f64 = bins
                .iter()
                .map(|b| b.count as f64 * b.center * b.center)
                .sum();
            if sxx <= 1e-300 {
                return Err(CalibrationError::DegenerateBins);
            }
            let sxy: f64 = bins
                .iter()
                .map(|b| b.count as f64 * b.center * b.mean_return_bp)
                .sum();
            let theta = sxy / sxx;
            // Sandwich variance over the bin means.
            let var: f64 = bins
                .iter()
                .map(|b| {
                    let w = b.count as f64;
                    let r = b.mean_return_bp - theta * b.center;
                    w * w * b.center * b.center * r * r
                })
                .sum::<f64>()
                / (sxx * sxx);
            Ok(ImpactFunctionFit::Linear {
                theta_bp: theta,
                theta_se_bp: var.sqrt(),
                bins,
            })
        }
        ImpactForm::Arctan => fit_arctan_bins(bins, x_scale),
    }
}

/// theta * atan(rho x) through the bin means: profile rho over a log grid with
/// theta linear in each step, then polish both parameters.
fn fit_arctan_bins(
    bins: Vec<BinStat>,
    x_scale: f64,
) -> Result<ImpactFunctionFit, CalibrationError> {
    let xs: Vec<f64> = bins.iter().map(|b| b.center).collect();
    let ys: Vec<f64> = bins.iter().map(|b| b.mean_return_bp).collect();
    let ws: Vec<f64> = bins.iter().map(|b| b.count as f64).collect();

    let theta_for = |rho: f64| -> (f64, f64) {
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for i in 0..xs.len() {
            let a = (rho * xs[i]).atan();
            sxx += ws[i] * a * a;
            sxy += ws[i] * a * ys[i];
        }
        if sxx <= 1e-300 {
            return (0.0, f64::INFINITY);
        }
        let theta = sxy / sxx;
        let sse: f64 = (0..xs.len())
            .map(|i| {
                let r = ys[i] - theta * (rho * xs[i]).atan();
                ws[i] * r * r
            })
            .sum();
        (theta, sse)
    };

    let mut best: Option<(f64, f64, f64)> = None;
    for e in -30..=30 {
        let rho = 10f64.powf(e as f64 / 5.0) / x_scale;
        let (theta, sse) = theta_for(rho);
        if sse.is_finite() && best.as_ref().is_none_or(|b| sse < b.2) {
            best = Some((theta, rho, sse));
        }
    }
    let (theta0, rho0, _) = best.ok_or_else(|| {
        CalibrationError::FitDiverged("no arctan starting point produced a finite fit".into())
    })?;

    let prob = LmProblem {
        x: &xs,
        y: &ys,
        weights: Some(&ws),
        model: |p: &[f64], x: f64| p[0] * (p[1] * x).atan(),
        jacobian: |p: &[f64], x: f64, out: &mut [f64]| {
            out[0] = (p[1] * x).atan();
            out[1] = p[0] * x / (1.0 + p[1] * x * p[1] * x);
        },
        lower: &[f64::NEG_INFINITY, 0.0],
        upper: &[f64::INFINITY, f64::INFINITY],
    };
    let res = levenberg_marquardt(&prob, &[theta0, rho0], 300)
        .ok_or_else(|| CalibrationError::FitDiverged("arctan refinement failed".into()))?;
    Ok(ImpactFunctionFit::Arctan {
        theta_bp: res.params[0],
        rho_per_share: res.params[1],
        theta_se_bp: res.variance_diag[0].sqrt(),
        rho_se: res.variance_diag[1].sqrt(),
        bins,
    })
}

/// Regression coefficients g(k) = G0(k+1) - G0(k) and the cumulative G0 table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalPropagator {
    /// OLS coefficients, k = 0 .. k_max-1.
    pub g: Vec<f64>,
    /// Standard errors of the coefficients.
    pub g_se: Vec<f64>,
    /// G0(0..=k_max) with G0(0) = 0, cumulative sum of g.
    pub g0_tab: Vec<f64>,
    pub k_max: usize,
    pub n_observations: usize,
}

impl EmpiricalPropagator {
    pub fn g0(&self, k: usize) -> f64 {
        self.g0_tab[k]
    }
}

/// Precomputed normal equations of the lag regression
/// r_j ~ sum_k g(k) f(v_{j-k}); only lags with full in-day history enter.
pub(crate) struct PropagatorDesign {
    k_max: usize,
    gram: SymMat,
    xty: Vec<f64>,
    yty: f64,
    y_sum: f64,
    n_obs: usize,
}

pub(crate) fn build_design(
    series: &IntervalSeries,
    impact: &ImpactFunctionFit,
    k_max: usize,
) -> Result<PropagatorDesign, CalibrationError> {
    if k_max < 1 {
        return Err(CalibrationError::InvalidParameter(
            "k_max must be >= 1".into(),
        ));
    }
    let mut gram = SymMat::zeros(k_max);
    let mut xty = vec![0.0; k_max];
    let mut yty = 0.0;
    let mut y_sum = 0.0;
    let mut n_obs = 0usize;
    let mut xrow = vec![0.0; k_max];

    for range in series.day_ranges() {
        let rows = &series.rows[range];
        if rows.len() < k_max {
            continue;
        }
        let f: Vec<f64> = rows.iter().map(|r| impact.eval_row(r)).collect();
        for j in (k_max - 1)..rows.len() {
            let y = rows[j].log_return * BP;
            for k in 0..k_max {
                xrow[k] = f[j - k];
            }
            for k in 0..k_max {
                xty[k] += xrow[k] * y;
                for l in 0..=k {
                    gram.set(k, l, gram.at(k, l) + xrow[k] * xrow[l]);
                }
            }
            yty += y * y;
            y_sum += y;
            n_obs += 1;
        }
    }
    Ok(PropagatorDesign {
        k_max,
        gram,
        xty,
        yty,
        y_sum,
        n_obs,
    })
}

pub(crate) struct RegressionSolution {
    pub g: Vec<f64>,
    pub g_se: Vec<f64>,
    pub ss_res: f64,
    pub ss_tot: f64,
    pub n_obs: usize,
}

impl PropagatorDesign {
    /// Solve the leading k x k normal equations (nested sub-model on the same
    /// observation set, so R^2 is monotone in k).
    pub(crate) fn solve(&self, k: usize) -> Result<RegressionSolution, CalibrationError> {
        assert!(k >= 1 && k <= self.k_max);
        let gram_k = self.gram.submatrix(&(0..k).collect::<Vec<_>>());
        let chol = cholesky(&gram_k, 1e-13).map_err(|_| singular(&gram_k))?;
        let g = chol.solve(&self.xty[..k]);
        let explained: f64 = g.iter().zip(&self.xty).map(|(a, b)| a * b).sum();
        let ss_res = (self.yty - explained).max(0.0);
        let mean = self.y_sum / self.n_obs as f64;
        let ss_tot = self.yty - self.n_obs as f64 * mean * mean;
        let dof = self.n_obs.saturating_sub(k).max(1);
        let s2 = ss_res / dof as f64;
        let g_se = (0..k)
            .map(|i| {
                let mut e = vec![0.0; k];
                e[i] = 1.0;
                (s2 * chol.solve(&e)[i]).max(0.0).sqrt()
            })
            .collect();
        Ok(RegressionSolution {
            g,
            g_se,
            ss_res,
            ss_tot,
            n_obs: self.n_obs,
        })
    }
}

fn singular(gram: &SymMat) -> CalibrationError {
    // Condition diagnostic from the pivots that do exist.
    let condition = match cholesky(gram, 1e-300) {
        Ok(c) => c.pivot_ratio(),
        Err(_) => f64::INFINITY,
    };
    CalibrationError::SingularDesign { condition }
}

fn require_observations(design: &PropagatorDesign, k_max: usize) -> Result<(), CalibrationError> {
    let needed = 10 * k_max;
    if design.n_obs < needed {
        return Err(CalibrationError::InsufficientData {
            needed,
            got: design.n_obs,
        });
    }
    Ok(())
}

/// OLS of returns on lagged impact values; cumulative sums give the G0 table.
pub fn regress_propagator(
    series: &IntervalSeries,
    impact: &ImpactFunctionFit,
    k_max: usize,
) -> Result<EmpiricalPropagator, CalibrationError> {
    let design = build_design(series, impact, k_max)?;
    require_observations(&design, k_max)?;
    let sol = design.solve(k_max)?;
    let mut g0_tab = Vec::with_capacity(k_max + 1);
    g0_tab.push(0.0);
    let mut acc = 0.0;
    for &gk in &sol.g {
        acc += gk;
        g0_tab.push(acc);
    }
    // Store g as the exact differences of the cumulative table so the pair
    // stays self-consistent at the bit level (one rounding of each sum).
    let g: Vec<f64> = (0..k_max).map(|k| g0_tab[k + 1] - g0_tab[k]).collect();
    Ok(EmpiricalPropagator {
        g,
        g_se: sol.g_se,
        g0_tab,
        k_max,
        n_observations: sol.n_obs,
    })
}

/// R^2 of the lag regression for every order k = 1..=k_max, evaluated on the
/// common observation set usable at k_max. Nested least squares on one sample,
/// so the profile is non-decreasing; useful for choosing the lag cutoff.
pub fn r_squared_profile(
    series: &IntervalSeries,
    impact: &ImpactFunctionFit,
    k_max: usize,
) -> Result<Vec<f64>, CalibrationError> {
    let design = build_design(series, impact, k_max)?;
    require_observations(&design, k_max)?;
    (1..=k_max)
        .map(|k| {
            let sol = design.solve(k)?;
            Ok(if sol.ss_tot > 0.0 {
                (1.0 - sol.ss_res / sol.ss_tot).clamp(0.0, 1.0)
            } else {
                0.0
            })
        })
        .collect()
}

fn residual_stats(
    series: &IntervalSeries,
    impact: &ImpactFunctionFit,
    emp: &EmpiricalPropagator,
) -> Result<(f64, f64, usize), CalibrationError> {
    let k_max = emp.k_max;
    let mut ss_res = 0.0;
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    let mut n = 0usize;
    for range in series.day_ranges() {
        let rows = &series.rows[range];
        if rows.len() < k_max {
            continue;
        }
        let f: Vec<f64> = rows.iter().map(|r| impact.eval_row(r)).collect();
        for j in (k_max - 1)..rows.len() {
            let y = rows[j].log_return * BP;
            let yhat: f64 = (0..k_max).map(|k| emp.g[k] * f[j - k]).sum();
            let e = y - yhat;
            ss_res += e * e;
            sum += y;
            sum2 += y * y;
            n += 1;
        }
    }
    if n == 0 {
        return Err(CalibrationError::InsufficientData {
            needed: k_max,
            got: 0,
        });
    }
    let ss_tot = sum2 - sum * sum / n as f64;
    Ok((ss_res, ss_tot, n))
}

/// Fraction of return variance explained by the propagator regression.
pub fn r_squared(
    series: &IntervalSeries,
    impact: &ImpactFunctionFit,
    emp: &EmpiricalPropagator,
) -> Result<f64, CalibrationError> {
    let (ss_res, ss_tot, _) = residual_stats(series, impact, emp)?;
    if ss_tot <= 0.0 {
        return Ok(if ss_res <= 0.0 { 1.0 } else { 0.0 });
    }
    Ok((1.0 - ss_res / ss_tot).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseEstimate {
    /// Mean squared regression residual, bp^2 per interval.
    pub sigma2_bp2: f64,
    pub n_samples: usize,
}

/// sigma^2 as the mean squared residual of the propagator regression.
pub fn estimate_noise_variance(
    series: &IntervalSeries,
    impact: &ImpactFunctionFit,
    emp: &EmpiricalPropagator,
) -> Result<NoiseEstimate, CalibrationError> {
    let (ss_res, _, n) = residual_stats(series, impact, emp)?;
    Ok(NoiseEstimate {
        sigma2_bp2: ss_res / n as f64,
        n_samples: n,
    })
}

/// Parametric fit of the decaying kernel to a G0 table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelFit {
    pub gamma0: f64,
    pub l0: f64,
    pub beta: f64,
    #[serde(with = "se_serde")]
    pub gamma0_se: f64,
    #[serde(with = "se_serde")]
    pub l0_se: f64,
    #[serde(with = "se_serde")]
    pub beta_se: f64,
    /// Root of the residual sum of squares over the fitted lags.
    pub residual_norm: f64,
    /// False when the best residual stayed above the quality threshold.
    pub converged: bool,
}

impl KernelFit {
    pub fn kernel(&self) -> PropagatorKernel {
        PropagatorKernel::Parametric {
            gamma0: self.gamma0,
            l0: self.l0,
            beta: self.beta,
        }
    }
}

/// Relative residual above which a kernel fit is flagged as poor.
const KERNEL_FIT_QUALITY: f64 = 0.25;

/// Nonlinear least squares of gamma0 / (l0^2 + l^2)^(beta/2) against
/// G0(1..k_max), multi-started over a log grid of (l0, beta) with gamma0
/// profiled, then polished. Deterministic; ties go to the smallest l0, then
/// the smallest beta.
pub fn fit_kernel(emp: &EmpiricalPropagator) -> Result<KernelFit, CalibrationError> {
    if emp.k_max < 4 {
        return Err(CalibrationError::InsufficientData {
            needed: 4,
            got: emp.k_max,
        });
    }
    let xs: Vec<f64> = (1..=emp.k_max).map(|k| k as f64).collect();
    let ys: Vec<f64> = (1..=emp.k_max).map(|k| emp.g0_tab[k]).collect();

    let model = |p: &[f64], l: f64| p[0] / (p[1] * p[1] + l * l).powf(p[2] / 2.0);
    let jacobian = |p: &[f64], l: f64, out: &mut [f64]| {
        let base = p[1] * p[1] + l * l;
        let pow = base.powf(p[2] / 2.0);
        out[0] = 1.0 / pow;
        out[1] = -p[0] * p[2] * p[1] / (base * pow);
        out[2] = -p[0] * base.ln() / (2.0 * pow);
    };
    let lower = [1e-12, 0.0, 0.0];
    let upper = [f64::INFINITY, f64::INFINITY, 2.0 - 1e-9];
    let prob = LmProblem {
        x: &xs,
        y: &ys,
        weights: None,
        model,
        jacobian,
        lower: &lower,
        upper: &upper,
    };

    let l0_grid = [0.05, 0.15, 0.5, 1.5, 5.0, 15.0, 50.0];
    let beta_grid = [0.01, 0.03, 0.08, 0.2, 0.5, 1.0, 1.6];
    let mut best: Option<(f64, f64, f64, nlls::LmResult)> = None;
    for &l0 in &l0_grid {
        for &beta in &beta_grid {
            // Profile gamma0: linear given the shape.
            let mut num = 0.0;
            let mut den = 0.0;
            for (&l, &y) in xs.iter().zip(&ys) {
                let phi = 1.0 / (l0 * l0 + l * l).powf(beta / 2.0);
                num += phi * y;
                den += phi * phi;
            }
            let gamma0 = (num / den).max(1e-12);
            let Some(res) = levenberg_marquardt(&prob, &[gamma0, l0, beta], 400) else {
                continue;
            };
            let better = match &best {
                None => true,
                Some((bs, bl0, bbeta, _)) => {
                    res.sse < bs * (1.0 - 1e-12)
                        || (res.sse <= bs * (1.0 + 1e-12)
                            && (res.params[1] < *bl0 - 1e-12
                                || ((res.params[1] - bl0).abs() <= 1e-12
                                    && res.params[2] < *bbeta)))
                }
            };
            if better {
                best = Some((res.sse, res.params[1], res.params[2], res));
            }
        }
    }
    let (sse, _, _, res) =
        best.ok_or_else(|| CalibrationError::FitDiverged("all kernel fit starts failed".into()))?;
    let y_norm: f64 = ys.iter().map(|y| y * y).sum::<f64>().sqrt();
    let residual_norm = sse.sqrt();
    let ses = kernel_fit_standard_errors(&res.params, &xs, emp, jacobian);
    Ok(KernelFit {
        gamma0: res.params[0],
        l0: res.params[1],
        beta: res.params[2],
        gamma0_se: ses[0],
        l0_se: ses[1],
        beta_se: ses[2],
        residual_norm,
        converged: res.converged && residual_norm <= KERNEL_FIT_QUALITY * y_norm.max(1e-12),
    })
}

/// Parameter dispersion of the kernel fit. The fitted G0 values are running
/// sums of regression coefficients, so their errors are strongly correlated:
/// Cov(G0(k), G0(l)) = sum of coefficient variances up to min(k, l). The
/// least-squares parameter covariance follows by the sandwich
/// (J'J)^-1 J' Cov J (J'J)^-1.
fn kernel_fit_standard_errors(
    params: &[f64],
    xs: &[f64],
    emp: &EmpiricalPropagator,
    jacobian: impl Fn(&[f64], f64, &mut [f64]),
) -> [f64; 3] {
    let k_max = xs.len();
    let mut jac = vec![[0.0; 3]; k_max];
    let mut row = [0.0; 3];
    for (i, &x) in xs.iter().enumerate() {
        jacobian(params, x, &mut row);
        jac[i] = row;
    }
    let mut a = SymMat::zeros(3);
    for r in &jac {
        for c in 0..3 {
            for d in 0..=c {
                a.set(c, d, a.at(c, d) + r[c] * r[d]);
            }
        }
    }
    let Ok(chol) = cholesky(&a, 1e-300) else {
        return [f64::NAN; 3];
    };
    // Prefix sums of coefficient variances give the covariance of the table.
    let mut prefix = vec![0.0; k_max + 1];
    for j in 0..k_max {
        prefix[j + 1] = prefix[j] + emp.g_se[j] * emp.g_se[j];
    }
    // m = J' Cov J with Cov_{kl} = prefix[min(k, l) + 1].
    let mut m = SymMat::zeros(3);
    for k in 0..k_max {
        for l in 0..k_max {
            let cov = prefix[k.min(l) + 1];
            if cov == 0.0 {
                continue;
            }
            for c in 0..3 {
                for d in 0..=c {
                    m.set(c, d, m.at(c, d) + jac[k][c] * cov * jac[l][d]);
                }
            }
        }
    }
    let mut out = [0.0; 3];
    for (c, slot) in out.iter_mut().enumerate() {
        let mut e = vec![0.0; 3];
        e[c] = 1.0;
        let ainv_e = chol.solve(&e);
        // e' A^-1 M A^-1 e.
        let m_ainv_e = m.matvec(&ainv_e);
        let var = crate::linalg::dot(&ainv_e, &m_ainv_e);
        *slot = var.max(0.0).sqrt();
    }
    out
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpreadEstimate {
    /// Half fractional spread, bp.
    pub delta_bp: f64,
    /// Crossed (ask < bid) rows excluded from the average.
    pub crossed_excluded: usize,
}

/// Time-weighted average of (ask - bid)/(ask + bid) over each day, in bp.
/// Each quote is weighted by how long it prevails; a day's last quote carries
/// no weight (an unweighted mean is the fallback when nothing else does).
pub fn estimate_spread(quotes: &[QuoteRecord]) -> Result<SpreadEstimate, CalibrationError> {
    if quotes.is_empty() {
        return Err(CalibrationError::InsufficientData { needed: 1, got: 0 });
    }
    let mut crossed = 0usize;
    let mut weighted = 0.0;
    let mut weight = 0.0;
    let mut plain = 0.0;
    let mut n_plain = 0usize;
    for (i, q) in quotes.iter().enumerate() {
        if q.ask < q.bid || !(q.bid > 0.0) {
            crossed += 1;
            continue;
        }
        let delta = (q.ask - q.bid) / (q.ask + q.bid) * BP;
        plain += delta;
        n_plain += 1;
        if let Some(next) = quotes.get(i + 1) {
            if next.day_id == q.day_id && next.timestamp_us > q.timestamp_us {
                let w = (next.timestamp_us - q.timestamp_us) as f64;
                weighted += w * delta;
                weight += w;
            }
        }
    }
    if n_plain == 0 {
        return Err(CalibrationError::InsufficientData { needed: 1, got: 0 });
    }
    let delta_bp = if weight > 0.0 {
        weighted / weight
    } else {
        plain / n_plain as f64
    };
    Ok(SpreadEstimate {
        delta_bp,
        crossed_excluded: crossed,
    })
}

/// Full calibration output; serializes to versioned JSON with explicit units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibratedModel {
    pub schema_version: u32,
    pub label: Option<String>,
    pub scheme: AggregationScheme,
    pub impact: ImpactFunctionFit,
    pub kernel: KernelFit,
    pub k_max: usize,
    pub r_squared: f64,
    /// Noise variance, bp^2 per interval.
    pub sigma2_bp2: f64,
    /// Half fractional spread, bp.
    pub delta_bp: f64,
    /// Mean total volume per interval, shares.
    pub avg_interval_volume: f64,
    /// Typical interval count per trading day (schedule length default).
    pub intervals_per_day: usize,
}

impl CalibratedModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibrated model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, CalibrationError> {
        let model: CalibratedModel = serde_json::from_str(s)
            .map_err(|e| CalibrationError::InvalidParameter(format!("bad model JSON: {e}")))?;
        if model.schema_version != SCHEMA_VERSION {
            return Err(CalibrationError::InvalidParameter(format!(
                "unsupported schema_version {} (expected {})",
                model.schema_version, SCHEMA_VERSION
            )));
        }
        Ok(model)
    }

    /// Linear impact coefficient in bp per unit normalized imbalance. Arctan
    /// fits are linearized at the origin and rescaled by the mean interval
    /// volume.
    pub fn linear_theta_bp(&self) -> f64 {
        match &self.impact {
            ImpactFunctionFit::Linear { theta_bp, .. } => *theta_bp,
            ImpactFunctionFit::Arctan {
                theta_bp,
                rho_per_share,
                ..
            } => theta_bp * rho_per_share * self.avg_interval_volume,
        }
    }

    pub fn propagator_kernel(&self) -> PropagatorKernel {
        self.kernel.kernel()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::AggregationWarnings;

    fn series_from(rows: Vec<IntervalRow>) -> IntervalSeries {
        IntervalSeries {
            scheme: AggregationScheme::TradeTime,
            rows,
            warnings: AggregationWarnings::default(),
        }
    }

    fn row(day: u32, idx: u32, r_bp: f64, v_nor: f64, w: f64) -> IntervalRow {
        IntervalRow {
            day_id: day,
            interval_index: idx,
            log_mid_open: 0.0,
            log_return: r_bp / BP,
            imbalance: v_nor * w,
            norm_imbalance: v_nor,
            total_volume: w,
        }
    }

    #[test]
    fn linear_fit_recovers_exact_slope() {
        let mut rows = Vec::new();
        for i in 0..600 {
            let v = -1.0 + 2.0 * (i as f64 + 0.5) / 600.0;
            rows.push(row(0, i, 20.0 * v, v, 100.0));
        }
        let fit = estimate_impact_function(&series_from(rows), 10, ImpactForm::Linear).unwrap();
        match fit {
            ImpactFunctionFit::Linear { theta_bp, .. } => assert!((theta_bp - 20.0).abs() < 1e-9),
            _ => panic!("expected linear fit"),
        }
    }

    #[test]
    fn zero_returns_give_zero_theta() {
        let rows = (0..100)
            .map(|i| row(0, i, 0.0, ((i % 7) as f64 - 3.0) / 3.5, 50.0))
            .collect();
        let fit = estimate_impact_function(&series_from(rows), 5, ImpactForm::Linear).unwrap();
        match fit {
            ImpactFunctionFit::Linear { theta_bp, .. } => assert_eq!(theta_bp, 0.0),
            _ => unreachable!(),
        }
    }

    #[test]
    fn all_zero_imbalances_are_degenerate() {
        let rows = (0..100).map(|i| row(0, i, 1.0, 0.0, 50.0)).collect();
        let err = estimate_impact_function(&series_from(rows), 5, ImpactForm::Linear);
        assert!(matches!(err, Err(CalibrationError::DegenerateBins)));
    }

    #[test]
    fn odd_symmetry_holds_exactly() {
        let rows = (0..500)
            .map(|i| {
                let v = ((i * 37 % 101) as f64 - 50.0) / 50.0;
                row(0, i, 5.0 * v + ((i % 13) as f64 - 6.0), v, 100.0)
            })
            .collect();
        let fit = estimate_impact_function(&series_from(rows), 8, ImpactForm::Linear).unwrap();
        for v in [-1.0, -0.4, 0.0, 0.7, 1.0] {
            assert_eq!(fit.eval(-v), -fit.eval(v));
        }
    }

    #[test]
    fn arctan_fit_recovers_parameters() {
        let mut rows = Vec::new();
        for i in 0..4000 {
            let v = -500.0 + 1000.0 * (i as f64 + 0.5) / 4000.0;
            let r = 12.0 * (0.01 * v).atan();
            rows.push(IntervalRow {
                day_id: 0,
                interval_index: i,
                log_mid_open: 0.0,
                log_return: r / BP,
                imbalance: v,
                norm_imbalance: (v / 500.0).clamp(-1.0, 1.0),
                total_volume: v.abs().max(1.0),
            });
        }
        let fit = estimate_impact_function(&series_from(rows), 30, ImpactForm::Arctan).unwrap();
        match fit {
            ImpactFunctionFit::Arctan {
                theta_bp,
                rho_per_share,
                ..
            } => {
                assert!((theta_bp - 12.0).abs() < 0.05, "theta {theta_bp}");
                assert!((rho_per_share - 0.01).abs() < 5e-4, "rho {rho_per_share}");
            }
            _ => panic!("expected arctan fit"),
        }
    }

    #[test]
    fn noiseless_kernel_fit_recovers_four_digits() {
        let truth = PropagatorKernel::parametric(1.07, 4.0, 0.075).unwrap();
        let k_max = 40;
        let g0_tab: Vec<f64> = (0..=k_max).map(|k| truth.g0(k)).collect();
        let g: Vec<f64> = (0..k_max).map(|k| g0_tab[k + 1] - g0_tab[k]).collect();
        let emp = EmpiricalPropagator {
            g,
            g_se: vec![0.0; k_max],
            g0_tab,
            k_max,
            n_observations: 1000,
        };
        let fit = fit_kernel(&emp).unwrap();
        assert!(
            (fit.gamma0 - 1.07).abs() < 1.07 * 1e-4,
            "gamma0 {}",
            fit.gamma0
        );
        assert!((fit.l0 - 4.0).abs() < 4.0 * 1e-4, "l0 {}", fit.l0);
        assert!((fit.beta - 0.075).abs() < 0.075 * 1e-4, "beta {}", fit.beta);
        assert!(fit.converged);
    }

    #[test]
    fn constant_table_fits_zero_beta() {
        let k_max = 20;
        let g0_tab: Vec<f64> = (0..=k_max)
            .map(|k| if k == 0 { 0.0 } else { 0.8 })
            .collect();
        let mut g = vec![0.0; k_max];
        g[0] = 0.8;
        let emp = EmpiricalPropagator {
            g,
            g_se: vec![0.0; k_max],
            g0_tab,
            k_max,
            n_observations: 500,
        };
        let fit = fit_kernel(&emp).unwrap();
        assert!(fit.beta < 1e-3, "beta {}", fit.beta);
        assert!((fit.residual_norm) < 1e-6);
    }

    #[test]
    fn spread_constant_quotes() {
        let quotes: Vec<QuoteRecord> = (0..10)
            .map(|i| QuoteRecord {
                day_id: 0,
                timestamp_us: i * 1000,
                bid: 9.99,
                ask: 10.01,
            })
            .collect();
        let est = estimate_spread(&quotes).unwrap();
        assert!((est.delta_bp - 10.0).abs() < 1e-9);
    }

    #[test]
    fn spread_skips_crossed_quotes() {
        let mut quotes = vec![
            QuoteRecord {
                day_id: 0,
                timestamp_us: 0,
                bid: 9.99,
                ask: 10.01,
            },
            QuoteRecord {
                day_id: 0,
                timestamp_us: 1000,
                bid: 10.02,
                ask: 10.00,
            },
            QuoteRecord {
                day_id: 0,
                timestamp_us: 2000,
                bid: 9.99,
                ask: 10.01,
            },
        ];
        let est = estimate_spread(&quotes).unwrap();
        assert_eq!(est.crossed_excluded, 1);
        assert!((est.delta_bp - 10.0).abs() < 1e-9);
        quotes.clear();
        assert!(estimate_spread(&quotes).is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let model = CalibratedModel {
            schema_version: SCHEMA_VERSION,
            label: Some("test".into()),
            scheme: AggregationScheme::RealTime {
                interval_secs: 300.0,
            },
            impact: ImpactFunctionFit::Linear {
                theta_bp: 15.4,
                theta_se_bp: 0.5,
                bins: vec![],
            },
            kernel: KernelFit {
                gamma0: 1.0,
                l0: 4.0,
                beta: 0.1,
                gamma0_se: 0.0,
                l0_se: 0.0,
                beta_se: 0.0,
                residual_norm: 0.0,
                converged: true,
            },
            k_max: 50,
            r_squared: 0.2,
            sigma2_bp2: 350.0,
            delta_bp: 5.27,
            avg_interval_volume: 1e4,
            intervals_per_day: 102,
        };
        let json = model.to_json();
        let back = CalibratedModel::from_json(&json).unwrap();
        assert_eq!(back.intervals_per_day, 102);
        assert_eq!(back.linear_theta_bp(), 15.4);
    }
}

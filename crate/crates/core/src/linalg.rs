//! Minimal dense symmetric linear algebra: Cholesky / LDL^T factorizations,
//! equality-constrained (bordered) solves, and a definiteness classifier.
//!
//! Everything here operates on full row-major storage. Problem sizes in this
//! crate are small (a few hundred at most), so no blocking or pivoting is used.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot ratio {pivot_ratio:.3e} at column {col})")]
    NotPositiveDefinite { col: usize, pivot_ratio: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Dense symmetric matrix, full row-major storage.
#[derive(Debug, Clone)]
pub struct SymMat {
    n: usize,
    a: Vec<f64>,
}

impl SymMat {
    pub fn zeros(n: usize) -> Self {
        SymMat {
            n,
            a: vec![0.0; n * n],
        }
    }

    /// Build from a function of (row, col); the function is queried for i >= j
    /// and mirrored.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = SymMat::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                m.a[i * n + j] = v;
                m.a[j * n + i] = v;
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.n + j] = v;
        self.a[j * self.n + i] = v;
    }

    pub fn add_diag(&mut self, r: f64) {
        for i in 0..self.n {
            self.a[i * self.n + i] += r;
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.at(i, i)).sum()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let row = &self.a[i * self.n..(i + 1) * self.n];
            y[i] = dot(row, x);
        }
        y
    }

    /// x^T A x.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(&self.matvec(x), x)
    }

    /// Principal submatrix on the given (sorted or unsorted) index set.
    pub fn submatrix(&self, idx: &[usize]) -> SymMat {
        SymMat::from_fn(idx.len(), |i, j| self.at(idx[i], idx[j]))
    }
}

#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Lower-triangular Cholesky factor of a positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
    min_pivot: f64,
    max_pivot: f64,
}

/// Factor A = L L^T. Fails when any pivot drops below `rel_tol` times the
/// largest pivot seen so far (or below zero), which is the convexity gate used
/// by cost-model construction.
pub fn cholesky(m: &SymMat, rel_tol: f64) -> Result<Cholesky, LinalgError> {
    let n = m.n;
    let mut l = vec![0.0; n * n];
    let mut max_pivot = f64::MIN_POSITIVE;
    let mut min_pivot = f64::MAX;
    for j in 0..n {
        let mut d = m.at(j, j);
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        max_pivot = max_pivot.max(d);
        min_pivot = min_pivot.min(d);
        if d <= rel_tol * max_pivot {
            return Err(LinalgError::NotPositiveDefinite {
                col: j,
                pivot_ratio: d / max_pivot,
            });
        }
        let dj = d.sqrt();
        l[j * n + j] = dj;
        for i in j + 1..n {
            let mut s = m.at(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / dj;
        }
    }
    Ok(Cholesky {
        n,
        l,
        min_pivot,
        max_pivot,
    })
}

impl Cholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                x[i] -= self.l[i * n + k] * x[k];
            }
            x[i] /= self.l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                x[i] -= self.l[k * n + i] * x[k];
            }
            x[i] /= self.l[i * n + i];
        }
        x
    }

    /// Ratio of largest to smallest pivot, a cheap condition diagnostic.
    pub fn pivot_ratio(&self) -> f64 {
        self.max_pivot / self.min_pivot
    }
}

/// Solve the bordered KKT system
/// ```text
///   [A  c] [x ]   [r]
///   [c' 0] [nu] = [s]
/// ```
/// given a Cholesky factorization of A.
pub fn solve_bordered(chol: &Cholesky, c: &[f64], r: &[f64], s: f64) -> (Vec<f64>, f64) {
    let u = chol.solve(c);
    let w = chol.solve(r);
    let nu = (dot(c, &w) - s) / dot(c, &u);
    let x: Vec<f64> = w.iter().zip(&u).map(|(wi, ui)| wi - nu * ui).collect();
    (x, nu)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Definiteness {
    PositiveDefinite,
    PositiveSemidefinite,
    Indefinite,
}

/// Classify a symmetric matrix by attempting an LDL^T factorization, treating
/// pivots within `rel_tol` of the dominant scale as zero. Zero pivots are
/// accepted only when the rest of their column is also negligible (the
/// positive-semidefinite case); anything else is indefinite.
pub fn classify_definiteness(m: &SymMat, rel_tol: f64) -> Definiteness {
    let n = m.n;
    let scale = (0..n)
        .map(|i| m.at(i, i).abs())
        .fold(f64::MIN_POSITIVE, f64::max);
    let tol = rel_tol * scale;
    let mut l = vec![0.0; n * n];
    let mut d = vec![0.0; n];
    let mut semidefinite = false;
    for j in 0..n {
        let mut dj = m.at(j, j);
        for k in 0..j {
            dj -= l[j * n + k] * l[j * n + k] * d[k];
        }
        if dj < -tol {
            return Definiteness::Indefinite;
        }
        // Column below the pivot, after elimination.
        let mut col = vec![0.0; n - j - 1];
        for i in j + 1..n {
            let mut s = m.at(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k] * d[k];
            }
            col[i - j - 1] = s;
        }
        if dj.abs() <= tol {
            if col.iter().any(|c| c.abs() > tol.sqrt() * scale.sqrt()) {
                return Definiteness::Indefinite;
            }
            semidefinite = true;
            d[j] = 0.0;
        } else {
            d[j] = dj;
            for i in j + 1..n {
                l[i * n + j] = col[i - j - 1] / dj;
            }
        }
        l[j * n + j] = 1.0;
    }
    if semidefinite {
        Definiteness::PositiveSemidefinite
    } else {
        Definiteness::PositiveDefinite
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        let m = SymMat::from_fn(3, |i, j| if i == j { 4.0 } else { 1.0 });
        let chol = cholesky(&m, 1e-12).unwrap();
        let b = vec![1.0, 2.0, 3.0];
        let x = chol.solve(&b);
        let back = m.matvec(&x);
        for (bi, yi) in b.iter().zip(&back) {
            assert!((bi - yi).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut m = SymMat::zeros(2);
        m.set(0, 0, 1.0);
        m.set(1, 1, -1.0);
        assert!(cholesky(&m, 1e-12).is_err());
    }

    #[test]
    fn bordered_solve_enforces_constraint() {
        let m = SymMat::from_fn(4, |i, j| if i == j { 2.0 } else { 0.5 });
        let chol = cholesky(&m, 1e-12).unwrap();
        let c = vec![1.0; 4];
        let r = vec![0.0; 4];
        let (x, _nu) = solve_bordered(&chol, &c, &r, 3.0);
        assert!((x.iter().sum::<f64>() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn definiteness_classification() {
        let pd = SymMat::from_fn(3, |i, j| if i == j { 1.0 } else { 0.1 });
        assert_eq!(
            classify_definiteness(&pd, 1e-12),
            Definiteness::PositiveDefinite
        );

        // Rank-one outer product 11^T is PSD with zero pivots after the first.
        let psd = SymMat::from_fn(3, |_, _| 1.0);
        assert_eq!(
            classify_definiteness(&psd, 1e-12),
            Definiteness::PositiveSemidefinite
        );

        let indef = SymMat::from_fn(2, |i, j| if i == j { 0.0 } else { 1.0 });
        assert_eq!(
            classify_definiteness(&indef, 1e-12),
            Definiteness::Indefinite
        );
    }
}

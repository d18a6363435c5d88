//! Symmetric sparse matrices and their solvers.
//!
//! Matrices store the lower triangle in compressed-column form. The pattern
//! is fixed at construction so repeated numeric factorizations can share one
//! symbolic analysis.

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::{Mat, Side};

use crate::error::{Error, Result};

/// Matrices larger than this are solved with preconditioned conjugate
/// gradients instead of a direct factorization.
pub const DEFAULT_CG_THRESHOLD: usize = 500_000;

/// Relative residual tolerance of the conjugate-gradient fallback.
pub const CG_TOLERANCE: f64 = 1e-10;

/// Symmetric matrix with lower-triangular compressed-column storage.
#[derive(Clone, Debug)]
pub struct SymMatrix {
    symbolic: Arc<SymbolicSparseColMat<usize>>,
    values: Vec<f64>,
}

impl SymMatrix {
    /// Zero matrix whose pattern holds the given positions (either
    /// triangle; mirrored entries are merged) plus the full diagonal.
    pub fn with_pattern(n: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut cols: Vec<Vec<usize>> = (0..n).map(|j| vec![j]).collect();
        for (r, c) in entries {
            let (r, c) = if r >= c { (r, c) } else { (c, r) };
            cols[c].push(r);
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for mut col in cols {
            col.sort_unstable();
            col.dedup();
            row_idx.extend(col);
            col_ptr.push(row_idx.len());
        }
        let nnz = row_idx.len();
        let symbolic = SymbolicSparseColMat::new_checked(n, n, col_ptr, None, row_idx);
        SymMatrix {
            symbolic: Arc::new(symbolic),
            values: vec![0.0; nnz],
        }
    }

    pub fn dim(&self) -> usize {
        self.symbolic.nrows()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn col_ptr(&self) -> &[usize] {
        self.symbolic.col_ptr()
    }

    fn row_idx(&self) -> &[usize] {
        self.symbolic.row_idx()
    }

    /// Storage slot of entry `(r, c)`, if it is in the pattern.
    pub fn slot(&self, r: usize, c: usize) -> Option<usize> {
        let (r, c) = if r >= c { (r, c) } else { (c, r) };
        let start = self.col_ptr()[c];
        let rows = &self.row_idx()[start..self.col_ptr()[c + 1]];
        rows.binary_search(&r).ok().map(|k| start + k)
    }

    /// Adds `v` to entry `(r, c)` (and its mirror).
    ///
    /// # Panics
    /// If the entry is outside the pattern.
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        let s = self
            .slot(r, c)
            .unwrap_or_else(|| panic!("entry ({r}, {c}) is not in the pattern"));
        self.values[s] += v;
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.slot(r, c).map_or(0.0, |s| self.values[s])
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Calls `f(row, col, value)` for every stored lower-triangle entry.
    pub fn for_each(&self, mut f: impl FnMut(usize, usize, f64)) {
        let (cp, ri) = (self.col_ptr(), self.row_idx());
        for c in 0..self.dim() {
            for k in cp[c]..cp[c + 1] {
                f(ri[k], c, self.values[k]);
            }
        }
    }

    /// `y = A x` for the full symmetric matrix.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.for_each(|r, c, v| {
            y[r] += v * x[c];
            if r != c {
                y[c] += v * x[r];
            }
        });
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let (cp, ri) = (self.col_ptr(), self.row_idx());
        (0..self.dim())
            .map(|c| (cp[c]..cp[c + 1]).find(|&k| ri[k] == c).map_or(0.0, |k| self.values[k]))
            .collect()
    }

    /// Dense copy, for tests and small problems.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut d = vec![vec![0.0; n]; n];
        self.for_each(|r, c, v| {
            d[r][c] = v;
            d[c][r] = v;
        });
        d
    }

    fn as_faer(&self) -> SparseColMatRef<'_, usize, f64> {
        SparseColMatRef::new((*self.symbolic).as_ref(), &self.values)
    }
}

/// Solver settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Dimension above which conjugate gradients replace Cholesky.
    pub cg_threshold: usize,
    pub cg_tolerance: f64,
    pub cg_max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            cg_threshold: DEFAULT_CG_THRESHOLD,
            cg_tolerance: CG_TOLERANCE,
            cg_max_iterations: 20_000,
        }
    }
}

/// Symbolic analysis that can be reused for every matrix sharing a pattern.
/// A matrix with a different pattern replaces the cached analysis.
#[derive(Clone, Debug, Default)]
pub struct SymbolicCache {
    llt: Option<(Arc<SymbolicSparseColMat<usize>>, SymbolicLlt<usize>)>,
}

impl SymbolicCache {
    fn matches(&self, a: &SymMatrix) -> bool {
        match &self.llt {
            Some((p, _)) => Arc::ptr_eq(p, &a.symbolic) || (p.col_ptr() == a.col_ptr() && p.row_idx() == a.row_idx()),
            None => false,
        }
    }
}

enum Kind {
    Llt(Llt<usize, f64>),
    Cg {
        matrix: SymMatrix,
        inv_diag: Vec<f64>,
        options: SolverOptions,
    },
}

/// A factorized (or preconditioned) symmetric positive definite system.
pub struct Factorization {
    kind: Kind,
}

impl Factorization {
    /// Factorizes `a`, reusing and filling `cache` when the direct solver
    /// is used.
    pub fn new(a: &SymMatrix, cache: &mut SymbolicCache, options: SolverOptions) -> Result<Self> {
        if a.dim() > options.cg_threshold {
            let diag = a.diagonal();
            if let Some(i) = diag.iter().position(|&d| !(d > 0.0)) {
                return Err(Error::NotPositiveDefinite(format!("diagonal entry {i} is {}", diag[i])));
            }
            return Ok(Factorization {
                kind: Kind::Cg {
                    matrix: a.clone(),
                    inv_diag: diag.iter().map(|d| 1.0 / d).collect(),
                    options,
                },
            });
        }
        if !cache.matches(a) {
            let s = SymbolicLlt::try_new((*a.symbolic).as_ref(), Side::Lower)
                .map_err(|e| Error::NotPositiveDefinite(format!("symbolic analysis failed: {e:?}")))?;
            cache.llt = Some((a.symbolic.clone(), s));
        }
        let symbolic = cache.llt.as_ref().unwrap().1.clone();
        let llt = Llt::try_new_with_symbolic(symbolic, a.as_faer(), Side::Lower)
            .map_err(|e| Error::NotPositiveDefinite(format!("{e:?}")))?;
        Ok(Factorization { kind: Kind::Llt(llt) })
    }

    /// Solves for each right-hand side in place.
    pub fn solve_many(&self, rhs: &mut [Vec<f64>]) -> Result<()> {
        if rhs.is_empty() {
            return Ok(());
        }
        match &self.kind {
            Kind::Llt(llt) => {
                let n = rhs[0].len();
                let mut m = Mat::<f64>::from_fn(n, rhs.len(), |i, j| rhs[j][i]);
                llt.solve_in_place(m.as_mut());
                for (j, col) in rhs.iter_mut().enumerate() {
                    for (i, x) in col.iter_mut().enumerate() {
                        *x = m[(i, j)];
                    }
                }
                Ok(())
            }
            Kind::Cg {
                matrix,
                inv_diag,
                options,
            } => {
                for b in rhs.iter_mut() {
                    *b = pcg(matrix, inv_diag, b, options)?;
                }
                Ok(())
            }
        }
    }

    pub fn solve(&self, rhs: &mut Vec<f64>) -> Result<()> {
        self.solve_many(std::slice::from_mut(rhs))
    }
}

/// Jacobi-preconditioned conjugate gradients from a zero start.
fn pcg(a: &SymMatrix, inv_diag: &[f64], b: &[f64], options: &SolverOptions) -> Result<Vec<f64>> {
    let n = b.len();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut rnorm = bnorm;
    for _ in 0..options.cg_max_iterations {
        let ap = a.mul_vec(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::NotPositiveDefinite(
                "conjugate gradients met a non-positive curvature".into(),
            ));
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= options.cg_tolerance * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverDiverged {
        iterations: options.cg_max_iterations,
        residual: rnorm / bnorm,
    })
}

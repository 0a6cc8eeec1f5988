//! Sparse matrices and direct solves, backed by faer's supernodal LU.
//!
//! All factorizations run single-threaded so that repeated runs produce
//! bitwise-identical numbers.

use std::sync::Once;

use faer::prelude::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu, SymbolicLlt, SymbolicLu};
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat, Triplet};

use crate::error::{Error, Result};

static SEQUENTIAL: Once = Once::new();

fn force_sequential() {
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

/// Coordinate-format builder. Duplicate entries are summed on assembly.
#[derive(Debug, Clone)]
pub struct TripletMatrix {
    nrows: usize,
    ncols: usize,
    entries: Vec<Triplet<usize, usize, f64>>,
}

impl TripletMatrix {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push(Triplet::new(row, col, val));
    }

    /// Appends every entry of `other`, shifted by `(row0, col0)` and scaled.
    pub fn push_block(&mut self, row0: usize, col0: usize, other: &TripletMatrix, scale: f64) {
        for t in &other.entries {
            self.push(row0 + t.row, col0 + t.col, scale * t.val);
        }
    }

    /// Copy keeping only the entries whose `(row, col)` passes `keep`.
    pub fn filtered(&self, keep: impl Fn(usize, usize) -> bool) -> TripletMatrix {
        TripletMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            entries: self
                .entries
                .iter()
                .filter(|t| keep(t.row, t.col))
                .copied()
                .collect(),
        }
    }

    pub fn build(&self) -> Result<CscMatrix> {
        let inner = SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &self.entries)
            .map_err(|e| Error::LinearSolve(format!("assembly failed: {e:?}")))?;
        Ok(CscMatrix { inner })
    }
}

#[derive(Debug, Clone)]
pub struct CscMatrix {
    inner: SparseColMat<usize, f64>,
}

impl CscMatrix {
    pub fn nrows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols());
        let mut y = vec![0.0; self.nrows()];
        let sym = self.inner.symbolic();
        let col_ptr = sym.col_ptr();
        let row_idx = sym.row_idx();
        let val = self.inner.val();
        for (c, &xc) in x.iter().enumerate() {
            if xc == 0.0 {
                continue;
            }
            for k in col_ptr[c]..col_ptr[c + 1] {
                y[row_idx[k]] += val[k] * xc;
            }
        }
        y
    }

    pub fn transpose_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows());
        let sym = self.inner.symbolic();
        let col_ptr = sym.col_ptr();
        let row_idx = sym.row_idx();
        let val = self.inner.val();
        (0..self.ncols())
            .map(|c| {
                (col_ptr[c]..col_ptr[c + 1])
                    .map(|k| val[k] * x[row_idx[k]])
                    .sum()
            })
            .collect()
    }

    /// Dense copy, row-major. Meant for small matrices in tests and oracles.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.ncols()]; self.nrows()];
        let sym = self.inner.symbolic();
        let col_ptr = sym.col_ptr();
        let row_idx = sym.row_idx();
        let val = self.inner.val();
        for c in 0..self.ncols() {
            for k in col_ptr[c]..col_ptr[c + 1] {
                out[row_idx[k]][c] += val[k];
            }
        }
        out
    }

    pub fn symbolic_lu(&self) -> Result<SymbolicLu<usize>> {
        force_sequential();
        SymbolicLu::try_new(self.inner.symbolic())
            .map_err(|e| Error::LinearSolve(format!("symbolic LU: {e:?}")))
    }

    pub fn lu(&self) -> Result<LuFactor> {
        let sym = self.symbolic_lu()?;
        self.lu_with(&sym)
    }

    /// Numeric factorization reusing a symbolic analysis of the same pattern.
    pub fn lu_with(&self, symbolic: &SymbolicLu<usize>) -> Result<LuFactor> {
        force_sequential();
        let lu = Lu::try_new_with_symbolic(symbolic.clone(), self.inner.as_ref())
            .map_err(|e| Error::LinearSolve(format!("numeric LU: {e:?}")))?;
        Ok(LuFactor { lu })
    }
}

/// A fixed sparsity pattern given as a list of (possibly repeated) index
/// pairs. Values supplied in the same order are summed into place, and the
/// symbolic LU is computed once.
pub struct Pattern {
    symbolic: SymbolicSparseColMat<usize>,
    argsort: Argsort<usize>,
    lu: SymbolicLu<usize>,
    len: usize,
}

impl Pattern {
    pub fn new(nrows: usize, ncols: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        force_sequential();
        let idx: Vec<Pair<usize, usize>> = pairs.iter().map(|&(r, c)| Pair::new(r, c)).collect();
        let (symbolic, argsort) = SymbolicSparseColMat::try_new_from_indices(nrows, ncols, &idx)
            .map_err(|e| Error::LinearSolve(format!("pattern: {e:?}")))?;
        let lu = SymbolicLu::try_new(symbolic.as_ref())
            .map_err(|e| Error::LinearSolve(format!("symbolic LU: {e:?}")))?;
        Ok(Self {
            symbolic,
            argsort,
            lu,
            len: pairs.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn factor(&self, values: &[f64]) -> Result<LuFactor> {
        if values.len() != self.len {
            return Err(Error::ShapeMismatch {
                what: "pattern values",
                expected: self.len,
                actual: values.len(),
            });
        }
        let m = SparseColMat::new_from_argsort(self.symbolic.clone(), &self.argsort, values)
            .map_err(|e| Error::LinearSolve(format!("assembly failed: {e:?}")))?;
        let lu = Lu::try_new_with_symbolic(self.lu.clone(), m.as_ref())
            .map_err(|e| Error::LinearSolve(format!("numeric LU: {e:?}")))?;
        Ok(LuFactor { lu })
    }
}

/// Like [`Pattern`] for symmetric positive definite matrices: only the
/// lower triangle is stored and factored by sparse Cholesky.
pub struct SpdPattern {
    symbolic: SymbolicSparseColMat<usize>,
    argsort: Argsort<usize>,
    llt: SymbolicLlt<usize>,
    keep: Vec<bool>,
}

impl SpdPattern {
    pub fn new(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        force_sequential();
        let keep: Vec<bool> = pairs.iter().map(|&(r, c)| r >= c).collect();
        let idx: Vec<Pair<usize, usize>> = pairs
            .iter()
            .filter(|(r, c)| r >= c)
            .map(|&(r, c)| Pair::new(r, c))
            .collect();
        let (symbolic, argsort) = SymbolicSparseColMat::try_new_from_indices(n, n, &idx)
            .map_err(|e| Error::LinearSolve(format!("pattern: {e:?}")))?;
        let llt = SymbolicLlt::try_new(symbolic.as_ref(), faer::Side::Lower)
            .map_err(|e| Error::LinearSolve(format!("symbolic Cholesky: {e:?}")))?;
        Ok(Self {
            symbolic,
            argsort,
            llt,
            keep,
        })
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    /// Factors the matrix whose entries, in the order of the construction
    /// pairs, are `values`.
    pub fn factor(&self, values: &[f64]) -> Result<CholFactor> {
        if values.len() != self.keep.len() {
            return Err(Error::ShapeMismatch {
                what: "pattern values",
                expected: self.keep.len(),
                actual: values.len(),
            });
        }
        let lower: Vec<f64> = values
            .iter()
            .zip(&self.keep)
            .filter(|(_, k)| **k)
            .map(|(v, _)| *v)
            .collect();
        let m = SparseColMat::new_from_argsort(self.symbolic.clone(), &self.argsort, &lower)
            .map_err(|e| Error::LinearSolve(format!("assembly failed: {e:?}")))?;
        let llt = Llt::try_new_with_symbolic(self.llt.clone(), m.as_ref(), faer::Side::Lower)
            .map_err(|e| Error::LinearSolve(format!("Cholesky: {e:?}")))?;
        Ok(CholFactor { llt })
    }
}

pub struct CholFactor {
    llt: Llt<usize, f64>,
}

impl CholFactor {
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let x = self.llt.solve(faer::ColRef::from_slice(rhs));
        let out: Vec<f64> = (0..rhs.len()).map(|i| x[i]).collect();
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::LinearSolve("non-finite Cholesky solution".into()))
        }
    }
}

pub struct LuFactor {
    lu: Lu<usize, f64>,
}

impl std::fmt::Debug for LuFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("LuFactor")
    }
}

impl LuFactor {
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let x = self.lu.solve(faer::ColRef::from_slice(rhs));
        let out: Vec<f64> = (0..rhs.len()).map(|i| x[i]).collect();
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::LinearSolve("singular matrix (non-finite solution)".into()))
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub(crate) fn l1(a: &[f64]) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

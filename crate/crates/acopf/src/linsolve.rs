//! Sparse direct solver for the per-iteration KKT systems.
//!
//! Backed by faer's sparse LU (fill-reducing ordering with pivoting suited
//! to indefinite saddle-point systems). The symbolic analysis is cached per
//! sparsity pattern; with a fixed network the pattern never changes across
//! iterates or homotopy factors, so one analysis serves a whole solve.

use faer::linalg::solvers::Solve;
use faer::prelude::Reborrow;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use thiserror::Error;

/// Relative pivot floor below which a factorization counts as singular.
pub const SINGULAR_TOLERANCE: f64 = 1e-12;
/// Backward-error bound every successful solve must meet.
pub const BACKWARD_ERROR_BOUND: f64 = 1e-9;
const MAX_REFINEMENT_STEPS: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("dimension mismatch: system is {expected}, rhs is {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty system")]
    EmptySystem,
}

/// A square sparse system in coordinate form with its right-hand side.
/// Duplicate entries are summed during assembly.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub n: usize,
    pub triplets: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
}

/// Deduplicated CSC arrays of a sparse system.
#[derive(Debug, Clone, PartialEq)]
struct CscPattern {
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
}

/// Caches the fill-reducing symbolic analysis keyed on the sparsity
/// pattern, plus the triplet-to-CSC scatter map so repeated assemblies skip
/// the sort entirely.
#[derive(Default)]
pub struct FactorCache {
    pattern: Option<CscPattern>,
    symbolic: Option<SymbolicLu<usize>>,
    /// triplet slot -> position in the deduped value array; valid only while
    /// the triplet emission order is unchanged, which `factor` verifies via
    /// the pattern produced.
    scatter: Vec<usize>,
    triplet_count: usize,
}

impl FactorCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn invalidate(&mut self) {
        *self = Self::default();
    }
}

pub struct Factorization {
    lu: Lu<usize, f64>,
    matrix: SparseColMat<usize, f64>,
    n: usize,
    /// infinity norm of the deduplicated matrix
    norm_inf: f64,
}

fn build_csc(system: &SparseSystem) -> (CscPattern, Vec<f64>, Vec<usize>) {
    let n = system.n;
    let mut order: Vec<usize> = (0..system.triplets.len()).collect();
    order.sort_unstable_by_key(|&k| {
        let (r, c, _) = system.triplets[k];
        (c, r)
    });
    let mut col_ptr = vec![0usize; n + 1];
    let mut row_idx = Vec::with_capacity(system.triplets.len());
    let mut values = Vec::with_capacity(system.triplets.len());
    let mut scatter = vec![0usize; system.triplets.len()];
    let mut last: Option<(usize, usize)> = None;
    for &k in &order {
        let (r, c, v) = system.triplets[k];
        if last == Some((c, r)) {
            let slot = values.len() - 1;
            values[slot] += v;
            scatter[k] = slot;
        } else {
            scatter[k] = values.len();
            values.push(v);
            row_idx.push(r);
            col_ptr[c + 1] += 1;
            last = Some((c, r));
        }
    }
    for c in 0..n {
        col_ptr[c + 1] += col_ptr[c];
    }
    (CscPattern { col_ptr, row_idx }, values, scatter)
}

fn matrix_norm_inf(pattern: &CscPattern, values: &[f64], n: usize) -> f64 {
    let mut row_sums = vec![0.0; n];
    for c in 0..n {
        for k in pattern.col_ptr[c]..pattern.col_ptr[c + 1] {
            row_sums[pattern.row_idx[k]] += values[k].abs();
        }
    }
    crate::sparse::norm_inf(&row_sums)
}

/// Factors a sparse system, reusing the cached symbolic analysis when the
/// sparsity pattern matches.
pub fn factor(system: &SparseSystem, cache: &mut FactorCache) -> Result<Factorization, SolveError> {
    if system.n == 0 {
        return Err(SolveError::EmptySystem);
    }

    let reuse = cache.pattern.is_some() && cache.triplet_count == system.triplets.len();
    let (pattern, values) = if reuse {
        // same emission order: scatter values straight into the cached layout
        let pattern = cache.pattern.clone().unwrap();
        let mut values = vec![0.0; pattern.row_idx.len()];
        let mut ok = true;
        for (k, &(r, c, v)) in system.triplets.iter().enumerate() {
            let slot = cache.scatter[k];
            if pattern.row_idx[slot] != r
                || slot < pattern.col_ptr[c]
                || slot >= pattern.col_ptr[c + 1]
            {
                ok = false;
                break;
            }
            values[slot] += v;
        }
        if ok {
            (pattern, values)
        } else {
            cache.invalidate();
            let (pattern, values, scatter) = build_csc(system);
            cache.scatter = scatter;
            cache.triplet_count = system.triplets.len();
            (pattern, values)
        }
    } else {
        let (pattern, values, scatter) = build_csc(system);
        cache.scatter = scatter;
        cache.triplet_count = system.triplets.len();
        (pattern, values)
    };

    let symbolic_mat = SymbolicSparseColMat::new_checked(
        system.n,
        system.n,
        pattern.col_ptr.clone(),
        None,
        pattern.row_idx.clone(),
    );
    let norm_inf = matrix_norm_inf(&pattern, &values, system.n);
    let matrix = SparseColMat::new(symbolic_mat, values);

    let symbolic = match (&cache.symbolic, &cache.pattern) {
        (Some(sym), Some(cached)) if *cached == pattern => sym.clone(),
        _ => {
            let sym = SymbolicLu::try_new(matrix.symbolic()).map_err(|_| SolveError::Singular)?;
            cache.symbolic = Some(sym.clone());
            cache.pattern = Some(pattern.clone());
            sym
        }
    };

    let lu = Lu::try_new_with_symbolic(symbolic, matrix.rb()).map_err(|_| SolveError::Singular)?;
    let fact = Factorization {
        lu,
        matrix,
        n: system.n,
        norm_inf,
    };

    // Numerically singular factorizations complete but produce non-finite
    // or wildly inaccurate solves; probe with a deterministic rhs.
    let probe: Vec<f64> = (0..system.n)
        .map(|i| {
            let mut s = (i as u64).wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
            s ^= s >> 33;
            s = s.wrapping_mul(0xff51afd7ed558ccd);
            s ^= s >> 33;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect();
    let solution = fact.solve_unchecked(&probe);
    if !solution.iter().all(|v| v.is_finite())
        || fact.backward_error(&solution, &probe) > 1e-6
    {
        return Err(SolveError::Singular);
    }

    Ok(fact)
}

impl Factorization {
    fn solve_unchecked(&self, rhs: &[f64]) -> Vec<f64> {
        let rhs_mat = faer::Mat::from_fn(self.n, 1, |i, _| rhs[i]);
        let solution = self.lu.solve(&rhs_mat);
        (0..self.n).map(|i| solution[(i, 0)]).collect()
    }

    fn residual(&self, x: &[f64], rhs: &[f64]) -> Vec<f64> {
        let mut r = rhs.to_vec();
        let sym = self.matrix.symbolic();
        let values = self.matrix.val();
        for c in 0..self.n {
            let range = sym.col_range(c);
            for k in range {
                r[sym.row_idx()[k]] -= values[k] * x[c];
            }
        }
        r
    }

    pub fn backward_error(&self, x: &[f64], rhs: &[f64]) -> f64 {
        let r = self.residual(x, rhs);
        let denom = self.norm_inf * crate::sparse::norm_inf(x) + crate::sparse::norm_inf(rhs);
        if denom == 0.0 {
            0.0
        } else {
            crate::sparse::norm_inf(&r) / denom
        }
    }

    /// Solves A x = rhs with at most two steps of iterative refinement.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, SolveError> {
        if rhs.len() != self.n {
            return Err(SolveError::DimensionMismatch {
                expected: self.n,
                got: rhs.len(),
            });
        }
        let mut x = self.solve_unchecked(rhs);
        for _ in 0..MAX_REFINEMENT_STEPS {
            if self.backward_error(&x, rhs) <= BACKWARD_ERROR_BOUND {
                break;
            }
            let r = self.residual(&x, rhs);
            let dx = self.solve_unchecked(&r);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
        }
        debug_assert!(
            self.backward_error(&x, rhs) <= BACKWARD_ERROR_BOUND,
            "backward error {:.3e} above bound",
            self.backward_error(&x, rhs)
        );
        Ok(x)
    }
}

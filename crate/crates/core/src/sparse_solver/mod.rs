//! ℓ1-regularized least squares, one problem per probe block.
//!
//! Every problem has the form `min_w ½‖x − Yw‖² + β‖w‖₁` where the columns
//! of `Y` (atoms) are gallery blocks and `x` is one probe block.

mod dictionary;
mod feature_sign;
pub mod oracle;

pub use dictionary::Dictionary;
pub use feature_sign::{feature_sign_search, feature_sign_search_prepared};

use rayon::prelude::*;

use crate::error::{DsrError, Result};
use crate::feature_maps::BlockSet;
use crate::scalar::{dot, l1_norm, Scalar};

/// Sparsity strength used throughout unless configured otherwise.
pub const DEFAULT_BETA: f64 = 0.4;
pub const DEFAULT_MAX_ITERS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions<T> {
    /// Largest tolerated KKT violation at a returned solution.
    pub tol_kkt: T,
    /// Cap on feature-sign steps.
    pub max_iters: usize,
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            tol_kkt: T::default_kkt_tol(),
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

/// A dense lasso instance. Atoms are stored column-major (`d x M`).
#[derive(Debug, Clone, PartialEq)]
pub struct LassoProblem<T> {
    dim: usize,
    atoms: Vec<T>,
    target: Vec<T>,
    beta: T,
}

impl<T: Scalar> LassoProblem<T> {
    pub fn new(atoms: Vec<Vec<T>>, target: Vec<T>, beta: T) -> Result<Self> {
        if atoms.is_empty() {
            return Err(DsrError::EmptyGallery);
        }
        let dim = target.len();
        if dim == 0 {
            return Err(DsrError::EmptyInput("target"));
        }
        let mut flat = Vec::with_capacity(dim * atoms.len());
        for a in &atoms {
            if a.len() != dim {
                return Err(DsrError::mismatch("atom length", dim, a.len()));
            }
            flat.extend_from_slice(a);
        }
        Self::from_columns(dim, flat, target, beta)
    }

    pub fn from_columns(dim: usize, atoms: Vec<T>, target: Vec<T>, beta: T) -> Result<Self> {
        if target.len() != dim {
            return Err(DsrError::mismatch("target length", dim, target.len()));
        }
        if atoms.is_empty() || dim == 0 || atoms.len() % dim != 0 {
            return Err(DsrError::EmptyGallery);
        }
        if !(beta >= T::zero()) || !beta.is_finite() {
            return Err(DsrError::Config(format!(
                "beta must be finite and >= 0, got {beta}"
            )));
        }
        if atoms.iter().chain(&target).any(|v| !v.is_finite()) {
            return Err(DsrError::Numeric("non-finite problem data".into()));
        }
        Ok(Self {
            dim,
            atoms,
            target,
            beta,
        })
    }

    pub fn from_blocks(dictionary: &BlockSet<T>, target: &[T], beta: T) -> Result<Self> {
        let atoms = dictionary
            .iter()
            .flat_map(|b| b.vector.iter().copied())
            .collect();
        Self::from_columns(dictionary.channels(), atoms, target.to_vec(), beta)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len() / self.dim
    }

    pub fn atom(&self, k: usize) -> &[T] {
        &self.atoms[k * self.dim..(k + 1) * self.dim]
    }

    pub fn atoms(&self) -> &[T] {
        &self.atoms
    }

    pub fn target(&self) -> &[T] {
        &self.target
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    /// `x − Y w`.
    pub fn residual(&self, w: &[T]) -> Result<Vec<T>> {
        if w.len() != self.n_atoms() {
            return Err(DsrError::mismatch("code length", self.n_atoms(), w.len()));
        }
        let mut r = self.target.clone();
        for (k, &wk) in w.iter().enumerate() {
            if wk != T::zero() {
                for (ri, &a) in r.iter_mut().zip(self.atom(k)) {
                    *ri -= wk * a;
                }
            }
        }
        Ok(r)
    }
}

/// Solution of one lasso problem, coefficients in the caller's atom order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode<T> {
    pub coefficients: Vec<T>,
    pub active_set: Vec<usize>,
    pub objective: T,
    /// `‖x − Y w‖²` at the returned coefficients.
    pub residual: T,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Scalar> SparseCode<T> {
    pub fn l0(&self) -> usize {
        self.active_set.len()
    }

    pub fn l1(&self) -> T {
        l1_norm(&self.coefficients)
    }
}

/// `W = [w_1 … w_N]`, one column per probe block, `M` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMatrix<T> {
    rows: usize,
    columns: Vec<SparseCode<T>>,
}

impl<T: Scalar> CodeMatrix<T> {
    pub fn new(rows: usize, columns: Vec<SparseCode<T>>) -> Result<Self> {
        if let Some(c) = columns.iter().find(|c| c.coefficients.len() != rows) {
            return Err(DsrError::mismatch(
                "code length",
                rows,
                c.coefficients.len(),
            ));
        }
        Ok(Self { rows, columns })
    }

    /// Builds a matrix from raw column vectors (objective fields are left zero).
    pub fn from_dense_columns(rows: usize, cols: Vec<Vec<T>>) -> Result<Self> {
        let columns = cols
            .into_iter()
            .map(|coefficients| {
                let active_set = active_indices(&coefficients);
                SparseCode {
                    coefficients,
                    active_set,
                    objective: T::zero(),
                    residual: T::zero(),
                    iterations: 0,
                    converged: true,
                }
            })
            .collect();
        Self::new(rows, columns)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[SparseCode<T>] {
        &self.columns
    }

    pub fn column(&self, n: usize) -> &[T] {
        &self.columns[n].coefficients
    }

    pub fn get(&self, m: usize, n: usize) -> T {
        self.columns[n].coefficients[m]
    }

    /// `Σ |W_ij|`.
    pub fn l1(&self) -> T {
        self.columns.iter().map(SparseCode::l1).sum()
    }

    pub fn mean_l0(&self) -> f64 {
        if self.columns.is_empty() {
            return 0.0;
        }
        self.columns.iter().map(SparseCode::l0).sum::<usize>() as f64 / self.columns.len() as f64
    }

    pub fn all_converged(&self) -> bool {
        self.columns.iter().all(|c| c.converged)
    }
}

pub(crate) fn active_indices<T: Scalar>(w: &[T]) -> Vec<usize> {
    w.iter()
        .enumerate()
        .filter(|(_, v)| **v != T::zero())
        .map(|(i, _)| i)
        .collect()
}

/// `½‖x − Y w‖² + β‖w‖₁`.
pub fn objective<T: Scalar>(problem: &LassoProblem<T>, w: &[T]) -> Result<T> {
    let r = problem.residual(w)?;
    Ok(T::of(0.5) * dot(&r, &r) + problem.beta * l1_norm(w))
}

/// Largest violation of the lasso optimality conditions at `w`.
///
/// With `g = Yᵀ(Y w − x)`: active coordinates need `g_i + β sign(w_i) = 0`,
/// inactive ones need `|g_i| ≤ β`.
pub fn kkt_residual<T: Scalar>(problem: &LassoProblem<T>, w: &[T]) -> Result<T> {
    let r = problem.residual(w)?;
    let beta = problem.beta;
    let mut worst = T::zero();
    for (k, &wk) in w.iter().enumerate() {
        let g = -dot(problem.atom(k), &r);
        let v = if wk != T::zero() {
            (g + beta * crate::scalar::signum(wk)).abs()
        } else {
            (g.abs() - beta).max(T::zero())
        };
        worst = worst.max(v);
    }
    Ok(worst)
}

/// Solves one problem per block of `probe` against the dictionary `gallery`.
pub fn solve_batch<T: Scalar>(
    gallery: &BlockSet<T>,
    probe: &BlockSet<T>,
    beta: T,
    opts: &SolverOptions<T>,
) -> Result<CodeMatrix<T>> {
    let dictionary = Dictionary::from_blocks(gallery)?;
    solve_batch_prepared(&dictionary, probe, beta, opts)
}

/// [`solve_batch`] against a dictionary whose Gram matrix is already built.
pub fn solve_batch_prepared<T: Scalar>(
    dictionary: &Dictionary<T>,
    probe: &BlockSet<T>,
    beta: T,
    opts: &SolverOptions<T>,
) -> Result<CodeMatrix<T>> {
    if probe.channels() != dictionary.dim() {
        return Err(DsrError::mismatch(
            "channel count",
            dictionary.dim(),
            probe.channels(),
        ));
    }
    let columns = probe
        .blocks()
        .par_iter()
        .map(|b| feature_sign_search_prepared(dictionary, &b.vector, beta, opts))
        .collect::<Result<Vec<_>>>()?;
    CodeMatrix::new(dictionary.len(), columns)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity2(x: [f64; 2], beta: f64) -> LassoProblem<f64> {
        LassoProblem::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], x.to_vec(), beta).unwrap()
    }

    #[test]
    fn objective_examples() {
        let p = identity2([1.0, 0.2], 0.4);
        assert!((objective(&p, &[0.0, 0.0]).unwrap() - 0.5 * 1.04).abs() < 1e-15);
        // ½(0.16 + 0.04) + 0.4·0.6
        assert!((objective(&p, &[0.6, 0.0]).unwrap() - 0.34).abs() < 1e-15);
        let exact = identity2([1.0, 0.2], 0.0);
        assert_eq!(objective(&exact, &[1.0, 0.2]).unwrap(), 0.0);
        assert!(objective(&p, &[1.0]).is_err());
    }

    #[test]
    fn kkt_at_zero_reports_excess_correlation() {
        let p = identity2([1.0, 0.2], 0.4);
        assert!((kkt_residual(&p, &[0.0, 0.0]).unwrap() - 0.6).abs() < 1e-15);
        assert!(kkt_residual(&p, &[0.6, 0.0]).unwrap() < 1e-15);
        assert!(kkt_residual(&p, &[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn problem_validation() {
        assert!(matches!(
            LassoProblem::<f64>::new(vec![], vec![1.0], 0.1),
            Err(DsrError::EmptyGallery)
        ));
        assert!(LassoProblem::new(vec![vec![1.0]], vec![1.0], -0.1).is_err());
        assert!(LassoProblem::new(vec![vec![1.0, 2.0]], vec![1.0], 0.1).is_err());
        assert!(LassoProblem::new(vec![vec![f64::NAN]], vec![1.0], 0.1).is_err());
    }

    #[test]
    fn batch_self_representation_is_exact() {
        let y = BlockSet::from_vectors(
            3,
            vec![
                vec![1.0, 2.0, 0.5],
                vec![-0.3, 0.1, 4.0],
                vec![2.0, 2.0, 2.0],
            ],
        )
        .unwrap();
        let w = solve_batch(&y, &y, 0.0, &SolverOptions::default()).unwrap();
        assert_eq!(w.cols(), 3);
        assert!(w.columns().iter().all(|c| c.residual == 0.0));
    }

    #[test]
    fn batch_single_column_matches_direct_solve() {
        let y = BlockSet::from_vectors(2, vec![vec![1.0, 0.3], vec![0.2, 1.0], vec![0.7, 0.7]])
            .unwrap();
        let x = BlockSet::from_vectors(2, vec![vec![0.9, -0.4]]).unwrap();
        let opts = SolverOptions::default();
        let w = solve_batch(&y, &x, 0.4, &opts).unwrap();
        let direct = feature_sign_search(
            &LassoProblem::from_blocks(&y, x.vector(0), 0.4).unwrap(),
            &opts,
        )
        .unwrap();
        assert_eq!(w.columns()[0], direct);
    }

    #[test]
    fn batch_rejects_empty_gallery_and_mismatch() {
        let empty = BlockSet::<f64>::from_vectors(2, vec![]).unwrap();
        let x = BlockSet::from_vectors(2, vec![vec![1.0, 0.0]]).unwrap();
        let opts = SolverOptions::default();
        assert!(matches!(
            solve_batch(&empty, &x, 0.4, &opts),
            Err(DsrError::EmptyGallery)
        ));
        let y3 = BlockSet::from_vectors(3, vec![vec![1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            solve_batch(&y3, &x, 0.4, &opts),
            Err(DsrError::DimensionMismatch { .. })
        ));
    }
}

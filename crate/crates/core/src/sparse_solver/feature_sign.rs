//! Feature-sign search: an active-set method that guesses the sign of each
//! nonzero coefficient, which turns the ℓ1 problem into an unconstrained
//! quadratic on the active set, then repairs the guess with a discrete line
//! search over sign changes.

use super::{active_indices, Dictionary, LassoProblem, SolverOptions, SparseCode};
use crate::error::{DsrError, Result};
use crate::linalg::{cholesky_solve, min_norm_solve, symmetric_eigen};
use crate::scalar::{dot, signum, Scalar};

pub fn feature_sign_search<T: Scalar>(
    problem: &LassoProblem<T>,
    opts: &SolverOptions<T>,
) -> Result<SparseCode<T>> {
    let dictionary = Dictionary::new(problem.dim(), problem.atoms())?;
    feature_sign_search_prepared(&dictionary, problem.target(), problem.beta(), opts)
}

/// Active-set quadratic `½ vᵀ G_aa v − c_aᵀ v + β‖v‖₁` (the constant ½‖x‖² dropped).
struct ActiveQuadratic<T> {
    gram: Vec<T>,
    linear: Vec<T>,
    beta: T,
}

impl<T: Scalar> ActiveQuadratic<T> {
    fn value(&self, v: &[T]) -> T {
        let k = v.len();
        let mut quad = T::zero();
        for i in 0..k {
            let mut row = T::zero();
            for j in 0..k {
                row += self.gram[i * k + j] * v[j];
            }
            quad += v[i] * row;
        }
        T::of(0.5) * quad - dot(&self.linear, v) + self.beta * crate::scalar::l1_norm(v)
    }
}

pub fn feature_sign_search_prepared<T: Scalar>(
    dictionary: &Dictionary<T>,
    target: &[T],
    beta: T,
    opts: &SolverOptions<T>,
) -> Result<SparseCode<T>> {
    if target.len() != dictionary.dim() {
        return Err(DsrError::mismatch(
            "target length",
            dictionary.dim(),
            target.len(),
        ));
    }
    if !(beta >= T::zero()) {
        return Err(DsrError::Config(format!("beta must be >= 0, got {beta}")));
    }
    let m = dictionary.len();
    let corr: Vec<T> = (0..m).map(|k| dot(dictionary.atom(k), target)).collect();
    if corr.iter().any(|v| !v.is_finite()) {
        return Err(DsrError::Numeric("non-finite correlation".into()));
    }

    let mut w = vec![T::zero(); m];

    // Without a penalty an atom identical to the target is an exact minimizer.
    if beta == T::zero() {
        if let Some(k) = (0..m).find(|&k| dictionary.atom(k) == target) {
            w[k] = T::one();
            return Ok(finish(dictionary, target, beta, w, 0, true));
        }
    }

    let slack = opts.tol_kkt * T::of(0.5);
    let mut theta = vec![T::zero(); m];
    let mut active: Vec<usize> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    let gradient = |w: &[T], active: &[usize], i: usize| -> T {
        let mut g = -corr[i];
        for &j in active {
            g += dictionary.gram(i, j) * w[j];
        }
        g
    };

    loop {
        let active_optimal = active
            .iter()
            .all(|&i| (gradient(&w, &active, i) + beta * theta[i]).abs() <= slack);

        if active_optimal {
            // Entering coordinate: largest |g_i| among zeros, lowest index on ties.
            let mut entering: Option<(usize, T)> = None;
            for i in 0..m {
                if w[i] != T::zero() || active.contains(&i) {
                    continue;
                }
                let g = gradient(&w, &active, i);
                if g.abs() > beta + slack && entering.map_or(true, |(_, best)| g.abs() > best.abs())
                {
                    entering = Some((i, g));
                }
            }
            match entering {
                None => {
                    converged = true;
                    break;
                }
                Some((i, g)) => {
                    theta[i] = -signum(g);
                    active.push(i);
                }
            }
        }

        if iterations >= opts.max_iters {
            break;
        }
        iterations += 1;

        let k = active.len();
        let mut gram = vec![T::zero(); k * k];
        for (a, &i) in active.iter().enumerate() {
            for (b, &j) in active.iter().enumerate() {
                gram[a * k + b] = dictionary.gram(i, j);
            }
        }
        let linear: Vec<T> = active.iter().map(|&i| corr[i]).collect();
        let rhs: Vec<T> = active.iter().map(|&i| corr[i] - beta * theta[i]).collect();
        let quad = ActiveQuadratic { gram, linear, beta };
        let current: Vec<T> = active.iter().map(|&i| w[i]).collect();
        let best_point = match cholesky_solve(&quad.gram, k, &rhs) {
            Some(z) => line_search(&quad, &current, z)?,
            None => match null_direction_step(&quad, &current) {
                Some(p) => p,
                None => line_search(&quad, &current, min_norm_solve(&quad.gram, k, &rhs))?,
            },
        };

        for (a, &i) in active.iter().enumerate() {
            w[i] = best_point[a];
            theta[i] = signum(best_point[a]);
        }
        active.retain(|&i| w[i] != T::zero());
    }

    Ok(finish(dictionary, target, beta, w, iterations, converged))
}

/// Discrete line search from `current` towards `target`: the end point and
/// every point where a coefficient changes sign are compared by objective.
fn line_search<T: Scalar>(
    quad: &ActiveQuadratic<T>,
    current: &[T],
    target: Vec<T>,
) -> Result<Vec<T>> {
    if target.iter().any(|v| !v.is_finite()) {
        return Err(DsrError::Numeric(
            "active-set solve produced a non-finite value".into(),
        ));
    }
    let mut best_value = quad.value(&target);
    let mut best_point = target.clone();
    for j in 0..current.len() {
        let (from, to) = (current[j], target[j]);
        if from == T::zero() || to == T::zero() || signum(from) == signum(to) {
            continue;
        }
        let t = from / (from - to);
        let mut point: Vec<T> = current
            .iter()
            .zip(&target)
            .map(|(&a, &b)| a + t * (b - a))
            .collect();
        point[j] = T::zero();
        let value = quad.value(&point);
        if value < best_value {
            best_value = value;
            best_point = point;
        }
    }
    Ok(best_point)
}

/// Step for a singular active Gram matrix.
///
/// Along a null direction `n` of `G_aa` the reconstruction is unchanged and
/// the objective is piecewise linear in the step, so its minimum sits where
/// some coefficient reaches zero. Returns `None` if no breakpoint improves
/// on `current`.
fn null_direction_step<T: Scalar>(quad: &ActiveQuadratic<T>, current: &[T]) -> Option<Vec<T>> {
    let k = current.len();
    let (values, vectors) = symmetric_eigen(&quad.gram, k);
    let smallest =
        (0..k).min_by(|&a, &b| values[a].abs().partial_cmp(&values[b].abs()).unwrap())?;
    let n: Vec<T> = (0..k).map(|i| vectors[i * k + smallest]).collect();

    let mut best_value = quad.value(current);
    let mut best_point = None;
    for j in 0..k {
        if n[j] == T::zero() || current[j] == T::zero() {
            continue;
        }
        let t = -current[j] / n[j];
        let mut point: Vec<T> = current.iter().zip(&n).map(|(&v, &d)| v + t * d).collect();
        point[j] = T::zero();
        let value = quad.value(&point);
        if value < best_value {
            best_value = value;
            best_point = Some(point);
        }
    }
    best_point
}

/// Maps a canonical-order solution back to caller order and fills diagnostics.
fn finish<T: Scalar>(
    dictionary: &Dictionary<T>,
    target: &[T],
    beta: T,
    canonical: Vec<T>,
    iterations: usize,
    converged: bool,
) -> SparseCode<T> {
    let mut r = target.to_vec();
    for (k, &wk) in canonical.iter().enumerate() {
        if wk != T::zero() {
            for (ri, &a) in r.iter_mut().zip(dictionary.atom(k)) {
                *ri -= wk * a;
            }
        }
    }
    let residual = dot(&r, &r);
    let mut coefficients = vec![T::zero(); canonical.len()];
    for (k, wk) in canonical.into_iter().enumerate() {
        coefficients[dictionary.original_index(k)] = wk;
    }
    let objective = T::of(0.5) * residual + beta * crate::scalar::l1_norm(&coefficients);
    SparseCode {
        active_set: active_indices(&coefficients),
        coefficients,
        objective,
        residual,
        iterations,
        converged,
    }
}

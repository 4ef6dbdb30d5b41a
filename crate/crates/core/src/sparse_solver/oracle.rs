//! Cyclic coordinate descent with soft-thresholding.
//!
//! Slow but simple; it shares no code with feature-sign search beyond the
//! objective, and exists to cross-check it.

use super::{active_indices, LassoProblem, SparseCode};
use crate::scalar::{dot, l1_norm, soft_threshold, Scalar};

const MAX_SWEEPS: usize = 200_000;

/// Runs sweeps until the objective drops by less than `tol` in one sweep and
/// no coefficient moves by more than `100·tol` relative to the largest one.
pub fn coordinate_descent_oracle<T: Scalar>(problem: &LassoProblem<T>, tol: T) -> SparseCode<T> {
    let m = problem.n_atoms();
    let beta = problem.beta();
    let x = problem.target();
    let norms: Vec<T> = (0..m)
        .map(|k| dot(problem.atom(k), problem.atom(k)))
        .collect();

    let mut w = vec![T::zero(); m];
    let mut r = x.to_vec();
    let value = |r: &[T], w: &[T]| T::of(0.5) * dot(r, r) + beta * l1_norm(w);
    let mut current = value(&r, &w);
    let mut sweeps = 0;
    let mut converged = false;

    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut max_step = T::zero();
        for k in 0..m {
            if norms[k] == T::zero() {
                continue;
            }
            let atom = problem.atom(k);
            let old = w[k];
            // Correlation of atom k with the residual that excludes its own term.
            let rho = dot(atom, &r) + norms[k] * old;
            let new = soft_threshold(rho, beta) / norms[k];
            if new != old {
                let delta = new - old;
                max_step = max_step.max(delta.abs());
                for (ri, &a) in r.iter_mut().zip(atom) {
                    *ri -= delta * a;
                }
                w[k] = new;
            }
        }
        let next = value(&r, &w);
        let change = current - next;
        current = next;
        let scale = w.iter().fold(T::one(), |a, v| a.max(v.abs()));
        if change.abs() < tol && max_step <= T::of(100.0) * tol * scale {
            converged = true;
            break;
        }
    }

    let residual = {
        let r = problem.residual(&w).expect("code length matches");
        dot(&r, &r)
    };
    SparseCode {
        active_set: active_indices(&w),
        objective: T::of(0.5) * residual + beta * l1_norm(&w),
        residual,
        coefficients: w,
        iterations: sweeps,
        converged,
    }
}

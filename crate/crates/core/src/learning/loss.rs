//! Verification loss `α‖X − YW‖²_F + β‖W‖₁` and its gradients with `W` held fixed.

use serde::{Deserialize, Serialize};

use crate::error::{DsrError, Result};
use crate::feature_maps::BlockSet;
use crate::scalar::Scalar;
use crate::sparse_solver::CodeMatrix;

/// Pair label: `+1` same identity, `-1` different identities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "i32", into = "i32")]
pub enum PairLabel {
    Genuine,
    Impostor,
}

impl PairLabel {
    pub fn sign<T: Scalar>(self) -> T {
        match self {
            PairLabel::Genuine => T::one(),
            PairLabel::Impostor => -T::one(),
        }
    }
}

impl TryFrom<i32> for PairLabel {
    type Error = DsrError;

    fn try_from(v: i32) -> Result<Self> {
        match v {
            1 => Ok(PairLabel::Genuine),
            -1 => Ok(PairLabel::Impostor),
            other => Err(DsrError::Config(format!(
                "pair label must be +1 or -1, got {other}"
            ))),
        }
    }
}

impl From<PairLabel> for i32 {
    fn from(l: PairLabel) -> i32 {
        match l {
            PairLabel::Genuine => 1,
            PairLabel::Impostor => -1,
        }
    }
}

fn check_shapes<T: Scalar>(x: &BlockSet<T>, y: &BlockSet<T>, w: &CodeMatrix<T>) -> Result<()> {
    if x.channels() != y.channels() {
        return Err(DsrError::mismatch(
            "channel count",
            y.channels(),
            x.channels(),
        ));
    }
    if w.rows() != y.len() {
        return Err(DsrError::mismatch("code rows", y.len(), w.rows()));
    }
    if w.cols() != x.len() {
        return Err(DsrError::mismatch("code columns", x.len(), w.cols()));
    }
    Ok(())
}

/// Columns of `X − Y W`.
pub fn reconstruction_residual<T: Scalar>(
    x: &BlockSet<T>,
    y: &BlockSet<T>,
    w: &CodeMatrix<T>,
) -> Result<Vec<Vec<T>>> {
    check_shapes(x, y, w)?;
    Ok((0..x.len())
        .map(|n| {
            let mut r = x.vector(n).to_vec();
            for (m, &wmn) in w.column(n).iter().enumerate() {
                if wmn != T::zero() {
                    for (ri, &yv) in r.iter_mut().zip(y.vector(m)) {
                        *ri -= wmn * yv;
                    }
                }
            }
            r
        })
        .collect())
}

/// `‖X − Y W‖²_F`.
pub fn residual_energy<T: Scalar>(
    x: &BlockSet<T>,
    y: &BlockSet<T>,
    w: &CodeMatrix<T>,
) -> Result<T> {
    Ok(reconstruction_residual(x, y, w)?
        .iter()
        .map(|r| crate::scalar::squared_norm(r))
        .sum())
}

pub fn verification_loss<T: Scalar>(
    x: &BlockSet<T>,
    y: &BlockSet<T>,
    w: &CodeMatrix<T>,
    label: PairLabel,
    beta: T,
) -> Result<T> {
    Ok(label.sign::<T>() * residual_energy(x, y, w)? + beta * w.l1())
}

/// Per-block gradients of the loss:
/// `∂L/∂X = 2α(X − YW)` and `∂L/∂Y = −2α(X − YW)Wᵀ`.
pub fn loss_gradients<T: Scalar>(
    x: &BlockSet<T>,
    y: &BlockSet<T>,
    w: &CodeMatrix<T>,
    label: PairLabel,
) -> Result<(Vec<Vec<T>>, Vec<Vec<T>>)> {
    let residual = reconstruction_residual(x, y, w)?;
    let two_alpha = T::of(2.0) * label.sign::<T>();
    let d = x.channels();
    let dx = residual
        .iter()
        .map(|r| r.iter().map(|&v| two_alpha * v).collect())
        .collect();
    let mut dy = vec![vec![T::zero(); d]; y.len()];
    for (n, r) in residual.iter().enumerate() {
        for (m, &wmn) in w.column(n).iter().enumerate() {
            if wmn != T::zero() {
                for (g, &rv) in dy[m].iter_mut().zip(r) {
                    *g -= two_alpha * rv * wmn;
                }
            }
        }
    }
    Ok((dx, dy))
}

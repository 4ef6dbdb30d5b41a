use std::cmp::Ordering;

use crate::error::{DsrError, Result};
use crate::feature_maps::BlockSet;
use crate::scalar::{dot, Scalar};

/// Dictionary atoms with a precomputed Gram matrix.
///
/// Atoms are held in a canonical order (lexicographic on their values) so a
/// solve does not depend on the order the caller supplied them in; codes are
/// mapped back to the caller's order on the way out.
#[derive(Debug, Clone)]
pub struct Dictionary<T> {
    dim: usize,
    atoms: Vec<T>,
    gram: Vec<T>,
    original: Vec<usize>,
}

fn lexicographic<T: Scalar>(a: &[T], b: &[T]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

impl<T: Scalar> Dictionary<T> {
    /// `atoms` is column-major `dim x M` in caller order.
    pub fn new(dim: usize, atoms: &[T]) -> Result<Self> {
        if dim == 0 || atoms.is_empty() {
            return Err(DsrError::EmptyGallery);
        }
        if atoms.len() % dim != 0 {
            return Err(DsrError::mismatch(
                "dictionary length",
                dim,
                atoms.len() % dim,
            ));
        }
        let m = atoms.len() / dim;
        let col = |k: usize| &atoms[k * dim..(k + 1) * dim];
        let mut original: Vec<usize> = (0..m).collect();
        original.sort_by(|&a, &b| lexicographic(col(a), col(b)).then(a.cmp(&b)));

        let mut sorted = Vec::with_capacity(atoms.len());
        for &k in &original {
            sorted.extend_from_slice(col(k));
        }
        let mut gram = vec![T::zero(); m * m];
        for i in 0..m {
            for j in i..m {
                let v = dot(
                    &sorted[i * dim..(i + 1) * dim],
                    &sorted[j * dim..(j + 1) * dim],
                );
                gram[i * m + j] = v;
                gram[j * m + i] = v;
            }
        }
        Ok(Self {
            dim,
            atoms: sorted,
            gram,
            original,
        })
    }

    pub fn from_blocks(blocks: &BlockSet<T>) -> Result<Self> {
        let flat: Vec<T> = blocks
            .iter()
            .flat_map(|b| b.vector.iter().copied())
            .collect();
        Self::new(blocks.channels(), &flat)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.original.len()
    }

    pub fn is_empty(&self) -> bool {
        self.original.is_empty()
    }

    /// Atom at canonical position `k`.
    pub(crate) fn atom(&self, k: usize) -> &[T] {
        &self.atoms[k * self.dim..(k + 1) * self.dim]
    }

    #[inline]
    pub(crate) fn gram(&self, i: usize, j: usize) -> T {
        self.gram[i * self.len() + j]
    }

    /// Caller index of canonical atom `k`.
    pub(crate) fn original_index(&self, k: usize) -> usize {
        self.original[k]
    }
}

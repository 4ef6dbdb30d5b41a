//! DSR distance between block sets, gallery ranking, and the resizing baseline.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{DsrError, Result};
use crate::feature_maps::{BlockSet, FeatureMap};
use crate::scalar::Scalar;
use crate::sparse_solver::{solve_batch_prepared, Dictionary, SolverOptions};

#[derive(Debug, Clone, Serialize)]
pub struct MatchScore<T> {
    /// Mean squared reconstruction residual over probe blocks.
    pub distance: T,
    pub per_block_residuals: Vec<T>,
    /// Mean number of nonzero coefficients per probe block.
    pub code_sparsity: f64,
    /// `Σ_n ½‖x_n − Y w_n‖² + β‖w_n‖₁`, the quantity actually minimized.
    pub penalized_objective: T,
    pub probe_blocks: usize,
    pub gallery_blocks: usize,
    pub converged: bool,
    #[serde(serialize_with = "serialize_secs")]
    pub wall_time: Duration,
}

fn serialize_secs<S: serde::Serializer>(
    d: &Duration,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

/// DSR distance of `probe` reconstructed from the atoms of `gallery`.
///
/// Not symmetric in its arguments.
pub fn dsr_distance<T: Scalar>(
    probe: &BlockSet<T>,
    gallery: &BlockSet<T>,
    beta: T,
    opts: &SolverOptions<T>,
) -> Result<MatchScore<T>> {
    if gallery.is_empty() {
        return Err(DsrError::EmptyGallery);
    }
    if probe.channels() != gallery.channels() {
        return Err(DsrError::mismatch(
            "channel count",
            gallery.channels(),
            probe.channels(),
        ));
    }
    let dictionary = Dictionary::from_blocks(gallery)?;
    dsr_distance_prepared(probe, &dictionary, beta, opts)
}

pub fn dsr_distance_prepared<T: Scalar>(
    probe: &BlockSet<T>,
    dictionary: &Dictionary<T>,
    beta: T,
    opts: &SolverOptions<T>,
) -> Result<MatchScore<T>> {
    if probe.is_empty() {
        return Err(DsrError::EmptyInput("probe blocks"));
    }
    let start = Instant::now();
    let codes = solve_batch_prepared(dictionary, probe, beta, opts)?;
    let per_block_residuals: Vec<T> = codes.columns().iter().map(|c| c.residual).collect();
    let total: T = per_block_residuals.iter().copied().sum();
    Ok(MatchScore {
        distance: total / T::of(per_block_residuals.len() as f64),
        penalized_objective: codes.columns().iter().map(|c| c.objective).sum(),
        code_sparsity: codes.mean_l0(),
        probe_blocks: probe.len(),
        gallery_blocks: dictionary.len(),
        converged: codes.all_converged(),
        per_block_residuals,
        wall_time: start.elapsed(),
    })
}

/// Mean of the distances of several gallery shots of one identity.
pub fn aggregate_multishot<T: Scalar>(scores: &[MatchScore<T>]) -> Result<T> {
    if scores.is_empty() {
        return Err(DsrError::EmptyInput("multi-shot scores"));
    }
    let sum: T = scores.iter().map(|s| s.distance).sum();
    Ok(sum / T::of(scores.len() as f64))
}

/// One gallery image, with its dictionary prepared once for all probes.
#[derive(Debug, Clone)]
pub struct GalleryEntry<T> {
    pub person_id: String,
    pub shot_index: usize,
    pub source: PathBuf,
    blocks: BlockSet<T>,
    dictionary: Dictionary<T>,
}

impl<T: Scalar> GalleryEntry<T> {
    pub fn new(
        person_id: impl Into<String>,
        shot_index: usize,
        blocks: BlockSet<T>,
    ) -> Result<Self> {
        let dictionary = Dictionary::from_blocks(&blocks)?;
        Ok(Self {
            person_id: person_id.into(),
            shot_index,
            source: PathBuf::new(),
            blocks,
            dictionary,
        })
    }

    pub fn with_source(mut self, source: impl Into<PathBuf>) -> Self {
        self.source = source.into();
        self
    }

    pub fn blocks(&self) -> &BlockSet<T> {
        &self.blocks
    }

    pub fn dictionary(&self) -> &Dictionary<T> {
        &self.dictionary
    }
}

#[derive(Debug, Clone)]
pub struct EntryScore<T> {
    pub person_id: String,
    pub shot_index: usize,
    pub score: MatchScore<T>,
}

/// Identities sorted by ascending aggregated distance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedList<T> {
    entries: Vec<(String, T)>,
}

impl<T: Scalar> RankedList<T> {
    /// Sorts `(person_id, distance)` pairs; ties go to the lexicographically smaller id.
    pub fn from_unsorted(mut entries: Vec<(String, T)>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for (id, d) in &entries {
            if !seen.insert(id.as_str()) {
                return Err(DsrError::Config(format!("identity {id:?} ranked twice")));
            }
            if !d.is_finite() {
                return Err(DsrError::Numeric(format!("non-finite distance for {id:?}")));
            }
        }
        entries.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(String, T)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// 1-based rank of `person_id`, if present.
    pub fn rank_of(&self, person_id: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|(id, _)| id == person_id)
            .map(|p| p + 1)
    }
}

/// Scores every gallery entry independently (in parallel) against `probe`.
pub fn score_gallery<T: Scalar>(
    probe: &BlockSet<T>,
    entries: &[GalleryEntry<T>],
    beta: T,
    opts: &SolverOptions<T>,
) -> Result<Vec<EntryScore<T>>> {
    if entries.is_empty() {
        return Err(DsrError::EmptyGallery);
    }
    if let Some(e) = entries
        .iter()
        .find(|e| e.blocks.channels() != probe.channels())
    {
        return Err(DsrError::mismatch(
            "channel count",
            e.blocks.channels(),
            probe.channels(),
        ));
    }
    entries
        .par_iter()
        .map(|e| {
            Ok(EntryScore {
                person_id: e.person_id.clone(),
                shot_index: e.shot_index,
                score: dsr_distance_prepared(probe, &e.dictionary, beta, opts)?,
            })
        })
        .collect()
}

/// Groups entry scores by identity, averages shots, and sorts.
pub fn rank_scores<T: Scalar>(scores: &[EntryScore<T>]) -> Result<RankedList<T>> {
    if scores.is_empty() {
        return Err(DsrError::EmptyGallery);
    }
    let mut by_person: BTreeMap<&str, Vec<MatchScore<T>>> = BTreeMap::new();
    for s in scores {
        by_person
            .entry(s.person_id.as_str())
            .or_default()
            .push(s.score.clone());
    }
    let pairs = by_person
        .into_iter()
        .map(|(id, shots)| Ok((id.to_string(), aggregate_multishot(&shots)?)))
        .collect::<Result<Vec<_>>>()?;
    RankedList::from_unsorted(pairs)
}

pub fn rank_gallery<T: Scalar>(
    probe: &BlockSet<T>,
    entries: &[GalleryEntry<T>],
    beta: T,
    opts: &SolverOptions<T>,
) -> Result<RankedList<T>> {
    rank_scores(&score_gallery(probe, entries, beta, opts)?)
}

/// Bilinear resampling with half-pixel centers; same-size input is returned unchanged.
pub fn resize_bilinear<T: Scalar>(
    fm: &FeatureMap<T>,
    width: usize,
    height: usize,
) -> Result<FeatureMap<T>> {
    if width == 0 || height == 0 {
        return Err(DsrError::OutOfRange(
            "resize target must be positive".into(),
        ));
    }
    if width == fm.width() && height == fm.height() {
        return Ok(fm.clone());
    }
    let axis = |out: usize, len_in: usize, len_out: usize| -> (usize, usize, T) {
        let scale = len_in as f64 / len_out as f64;
        let src = ((out as f64 + 0.5) * scale - 0.5).clamp(0.0, (len_in - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(len_in - 1);
        (lo, hi, T::of(src - lo as f64))
    };
    let one = T::one();
    FeatureMap::from_fn(width, height, fm.channels(), |c, r, k| {
        let (c0, c1, fx) = axis(c, fm.width(), width);
        let (r0, r1, fy) = axis(r, fm.height(), height);
        let top = fm.get(c0, r0, k) * (one - fx) + fm.get(c1, r0, k) * fx;
        let bottom = fm.get(c0, r1, k) * (one - fx) + fm.get(c1, r1, k) * fx;
        top * (one - fy) + bottom * fy
    })
}

/// Resizing-model baseline: warp both maps to a common size and compare flat vectors.
pub fn resizing_baseline_distance<T: Scalar>(
    probe: &FeatureMap<T>,
    gallery: &FeatureMap<T>,
    target_width: usize,
    target_height: usize,
) -> Result<T> {
    if probe.channels() != gallery.channels() {
        return Err(DsrError::mismatch(
            "channel count",
            gallery.channels(),
            probe.channels(),
        ));
    }
    let a = resize_bilinear(probe, target_width, target_height)?;
    let b = resize_bilinear(gallery, target_width, target_height)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_maps::divide_into_blocks;

    fn opts() -> SolverOptions<f64> {
        SolverOptions::default()
    }

    fn vectors(v: &[&[f64]]) -> BlockSet<f64> {
        BlockSet::from_vectors(v[0].len(), v.iter().map(|x| x.to_vec()).collect()).unwrap()
    }

    #[test]
    fn subset_probe_at_zero_beta_is_exact() {
        let g = vectors(&[&[1.0, 2.0, 0.0], &[0.5, -1.0, 3.0], &[2.0, 2.0, 2.0]]);
        let p = vectors(&[&[0.5, -1.0, 3.0], &[1.0, 2.0, 0.0]]);
        let s = dsr_distance(&p, &g, 0.0, &opts()).unwrap();
        assert_eq!(s.distance, 0.0);
    }

    #[test]
    fn single_unit_block_shrinks_by_beta() {
        let x = vectors(&[&[0.6, 0.8]]);
        let s = dsr_distance(&x, &x, 0.4, &opts()).unwrap();
        assert!((s.distance - 0.16).abs() < 1e-12);
        assert_eq!(s.code_sparsity, 1.0);
    }

    #[test]
    fn distance_is_mean_residual() {
        let g = vectors(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let p = vectors(&[&[1.0, 1.0, 1.0], &[0.0, 0.0, 2.0]]);
        let s = dsr_distance(&p, &g, 0.4, &opts()).unwrap();
        let mean = s.per_block_residuals.iter().sum::<f64>() / 2.0;
        assert!((s.distance - mean).abs() < 1e-10);
        // Block 1 is orthogonal to the gallery: residual = ‖x‖².
        assert_eq!(s.per_block_residuals[1], 4.0);
    }

    #[test]
    fn errors_on_bad_inputs() {
        let g = vectors(&[&[1.0, 0.0]]);
        let empty = BlockSet::<f64>::from_vectors(2, vec![]).unwrap();
        let p3 = vectors(&[&[1.0, 0.0, 0.0]]);
        assert!(matches!(
            dsr_distance(&g, &empty, 0.4, &opts()),
            Err(DsrError::EmptyGallery)
        ));
        assert!(dsr_distance(&p3, &g, 0.4, &opts()).is_err());
        assert!(aggregate_multishot::<f64>(&[]).is_err());
    }

    #[test]
    fn multishot_mean() {
        let x = vectors(&[&[0.6, 0.8]]);
        let base = dsr_distance(&x, &x, 0.4, &opts()).unwrap();
        let with = |d: f64| MatchScore {
            distance: d,
            ..base.clone()
        };
        assert_eq!(aggregate_multishot(&[with(0.2)]).unwrap(), 0.2);
        assert!((aggregate_multishot(&[with(0.1), with(0.3)]).unwrap() - 0.2).abs() < 1e-15);
        let exact = dsr_distance(&x, &x, 0.0, &opts()).unwrap();
        assert_eq!(
            aggregate_multishot(&[exact.clone(), exact.clone(), exact]).unwrap(),
            0.0
        );
    }

    #[test]
    fn ranking_prefers_identical_identity() {
        let probe = vectors(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]]);
        let other = vectors(&[&[0.0, 0.0, 1.0, 0.0], &[0.0, 0.0, 0.0, 1.0]]);
        let entries = vec![
            GalleryEntry::new("b", 0, other).unwrap(),
            GalleryEntry::new("a", 0, probe.clone()).unwrap(),
        ];
        let ranked = rank_gallery(&probe, &entries, 0.0, &opts()).unwrap();
        assert_eq!(ranked.entries()[0], ("a".to_string(), 0.0));
        assert_eq!(ranked.rank_of("b"), Some(2));
        assert!(rank_gallery(&probe, &[], 0.0, &opts()).is_err());
    }

    #[test]
    fn ties_break_lexicographically() {
        let r = RankedList::from_unsorted(vec![
            ("z".into(), 1.0),
            ("a".into(), 1.0),
            ("m".into(), 0.5),
        ])
        .unwrap();
        let ids: Vec<&str> = r.entries().iter().map(|(i, _)| i.as_str()).collect();
        assert_eq!(ids, ["m", "a", "z"]);
        assert!(RankedList::from_unsorted(vec![("a".into(), 1.0), ("a".into(), 2.0)]).is_err());
    }

    #[test]
    fn resizing_baseline_closed_forms() {
        let a = FeatureMap::from_fn(3, 5, 2, |c, r, k| (c + 2 * r + k) as f64).unwrap();
        assert_eq!(resizing_baseline_distance(&a, &a, 4, 8).unwrap(), 0.0);

        let b = a.scaled(2.0);
        let direct: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        assert_eq!(resizing_baseline_distance(&a, &b, 3, 5).unwrap(), direct);

        let c1 = FeatureMap::from_fn(2, 3, 4, |_, _, _| 1.5f64).unwrap();
        let c2 = FeatureMap::from_fn(5, 2, 4, |_, _, _| -0.5).unwrap();
        assert!(
            (resizing_baseline_distance(&c1, &c2, 6, 7).unwrap() - 6.0 * 7.0 * 4.0 * 4.0).abs()
                < 1e-9
        );
    }

    #[test]
    fn resize_preserves_linear_ramps() {
        // Half-pixel bilinear upsampling reproduces a linear ramp away from the borders.
        let fm = FeatureMap::from_fn(4, 1, 1, |c, _, _| c as f64).unwrap();
        let up = resize_bilinear(&fm, 8, 1).unwrap();
        for c in 1..7 {
            let src = (c as f64 + 0.5) * 0.5 - 0.5;
            assert!((up.get(c, 0, 0) - src).abs() < 1e-12);
        }
    }

    #[test]
    fn self_blocks_from_a_map() {
        let fm =
            FeatureMap::from_fn(3, 2, 4, |c, r, k| ((c * 7 + r * 3 + k) % 5) as f64 - 2.0).unwrap();
        let bs = divide_into_blocks(&fm).unwrap();
        let s = dsr_distance(&bs, &bs, 0.0, &opts()).unwrap();
        assert_eq!(s.distance, 0.0);
    }
}

use rayon::prelude::*;
use serde::Serialize;

use super::metrics::{cmc, mean_average_precision, roc, CmcCurve, TrialResult};
use crate::error::{DsrError, Result};
use crate::feature_maps::{block_set, fitting_scales, Normalization};
use crate::matching::{rank_gallery, resizing_baseline_distance, GalleryEntry, RankedList};
use crate::scalar::Scalar;
use crate::sparse_solver::SolverOptions;
use crate::synthetic::Labeled;

#[derive(Debug, Clone)]
pub struct MatchSettings<T> {
    /// Probe block scales.
    pub scales: Vec<usize>,
    /// Gallery block scales; `None` reuses the probe scales.
    pub gallery_scales: Option<Vec<usize>>,
    pub normalization: Normalization,
    pub beta: T,
    pub solver: SolverOptions<T>,
}

impl<T: Scalar> Default for MatchSettings<T> {
    fn default() -> Self {
        Self {
            scales: vec![1, 2, 3],
            gallery_scales: None,
            normalization: Normalization::None,
            beta: T::of(crate::sparse_solver::DEFAULT_BETA),
            solver: SolverOptions::default(),
        }
    }
}

impl<T> MatchSettings<T> {
    pub fn gallery_scales(&self) -> &[usize] {
        self.gallery_scales.as_deref().unwrap_or(&self.scales)
    }
}

/// Gallery entries for every map whose shot index is below `shots`.
pub fn prepare_gallery<T: Scalar>(
    maps: &[Labeled<T>],
    shots: usize,
    settings: &MatchSettings<T>,
) -> Result<Vec<GalleryEntry<T>>> {
    maps.iter()
        .filter(|m| m.shot < shots)
        .map(|m| {
            let blocks = block_set(
                &m.map,
                &fitting_scales(&m.map, settings.gallery_scales()),
                settings.normalization,
            )?;
            GalleryEntry::new(m.person_id.clone(), m.shot, blocks)
        })
        .collect()
}

fn check_closed_set<T>(gallery_ids: &[&str], probes: &[Labeled<T>]) -> Result<()> {
    match probes
        .iter()
        .find(|p| !gallery_ids.contains(&p.person_id.as_str()))
    {
        Some(p) => Err(DsrError::OutOfRange(format!(
            "probe identity {} is not in the gallery",
            p.person_id
        ))),
        None => Ok(()),
    }
}

/// Ranks the gallery for every probe with the DSR distance.
pub fn dsr_trials<T: Scalar>(
    gallery: &[GalleryEntry<T>],
    probes: &[Labeled<T>],
    settings: &MatchSettings<T>,
) -> Result<Vec<TrialResult<T>>> {
    let ids: Vec<&str> = gallery.iter().map(|e| e.person_id.as_str()).collect();
    check_closed_set(&ids, probes)?;
    probes
        .iter()
        .map(|p| {
            let blocks = block_set(
                &p.map,
                &fitting_scales(&p.map, &settings.scales),
                settings.normalization,
            )?;
            let ranked = rank_gallery(&blocks, gallery, settings.beta, &settings.solver)?;
            TrialResult::new(p.map.source_id.clone(), p.person_id.clone(), ranked)
        })
        .collect()
}

/// Ranks the gallery for every probe with the resizing baseline, warping
/// both maps to the gallery map's size. Shots are averaged per identity.
pub fn resizing_trials<T: Scalar>(
    gallery: &[Labeled<T>],
    shots: usize,
    probes: &[Labeled<T>],
) -> Result<Vec<TrialResult<T>>> {
    let gallery: Vec<&Labeled<T>> = gallery.iter().filter(|g| g.shot < shots).collect();
    if gallery.is_empty() {
        return Err(DsrError::EmptyGallery);
    }
    let ids: Vec<&str> = gallery.iter().map(|e| e.person_id.as_str()).collect();
    check_closed_set(&ids, probes)?;
    probes
        .par_iter()
        .map(|p| {
            let mut sums: std::collections::BTreeMap<&str, (T, usize)> = Default::default();
            for g in &gallery {
                let d = resizing_baseline_distance(&p.map, &g.map, g.map.width(), g.map.height())?;
                let e = sums.entry(g.person_id.as_str()).or_insert((T::zero(), 0));
                e.0 += d;
                e.1 += 1;
            }
            let list = sums
                .into_iter()
                .map(|(id, (s, n))| (id.to_string(), s / T::of(n as f64)))
                .collect();
            TrialResult::new(
                p.map.source_id.clone(),
                p.person_id.clone(),
                RankedList::from_unsorted(list)?,
            )
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsSummary {
    pub rank1: f64,
    pub rank3: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub auc: f64,
    #[serde(skip)]
    pub cmc: CmcCurve,
    #[serde(skip)]
    pub roc: super::metrics::RocCurve,
}

/// Identity-level genuine and impostor distances of a set of trials.
pub fn verification_scores<T: Scalar>(trials: &[TrialResult<T>]) -> (Vec<f64>, Vec<f64>) {
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for t in trials {
        for (id, d) in t.ranked.entries() {
            if *id == t.true_person_id {
                genuine.push(d.as_f64());
            } else {
                impostor.push(d.as_f64());
            }
        }
    }
    (genuine, impostor)
}

pub fn summarize<T: Scalar>(trials: &[TrialResult<T>]) -> Result<MetricsSummary> {
    let curve = cmc(trials)?;
    let rankings: Vec<Vec<bool>> = trials.iter().map(|t| t.relevance()).collect();
    let map = mean_average_precision(&rankings)?;
    let (genuine, impostor) = verification_scores(trials);
    let roc = roc(&genuine, &impostor)?;
    Ok(MetricsSummary {
        rank1: curve.rank1(),
        rank3: curve.at(3),
        map,
        auc: roc.auc,
        cmc: curve,
        roc,
    })
}

/// Mean and population standard deviation of per-repetition results.
#[derive(Debug, Clone, Serialize)]
pub struct RepeatedSummary {
    pub repetitions: usize,
    pub rank1: f64,
    pub rank1_std: f64,
    pub rank3: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub auc: f64,
    pub cmc_mean: Vec<f64>,
    pub cmc_std: Vec<f64>,
}

pub fn aggregate_repetitions(runs: &[MetricsSummary]) -> Result<RepeatedSummary> {
    if runs.is_empty() {
        return Err(DsrError::EmptyInput("repetitions"));
    }
    let n = runs.len() as f64;
    let mean = |f: &dyn Fn(&MetricsSummary) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let std = |f: &dyn Fn(&MetricsSummary) -> f64| {
        let m = mean(f);
        (runs.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / n).sqrt()
    };
    let depth = runs.iter().map(|r| r.cmc.values.len()).max().unwrap_or(0);
    let cmc_mean: Vec<f64> = (0..depth).map(|k| mean(&|r| r.cmc.at(k + 1))).collect();
    let cmc_std: Vec<f64> = (0..depth).map(|k| std(&|r| r.cmc.at(k + 1))).collect();
    Ok(RepeatedSummary {
        repetitions: runs.len(),
        rank1: mean(&|r| r.rank1),
        rank1_std: std(&|r| r.rank1),
        rank3: mean(&|r| r.rank3),
        map: mean(&|r| r.map),
        auc: mean(&|r| r.auc),
        cmc_mean,
        cmc_std,
    })
}

//! Per-probe timing of amortized DSR matching against a recompute-per-probe
//! sliding-window baseline.

use std::time::{Duration, Instant};

use serde::Serialize;

use super::metrics::{cmc, TrialResult};
use crate::error::{DsrError, Result};
use crate::feature_maps::{block_set, fitting_scales, FeatureMap, Normalization};
use crate::learning::Fcn;
use crate::matching::{rank_gallery, GalleryEntry, RankedList};
use crate::scalar::Scalar;
use crate::sparse_solver::SolverOptions;
use crate::synthetic::Labeled;

#[derive(Debug, Clone)]
pub struct BenchConfig<T> {
    pub single_scales: Vec<usize>,
    pub multi_scales: Vec<usize>,
    pub normalization: Normalization,
    pub beta: T,
    pub solver: SolverOptions<T>,
    /// Threads used for matching; 0 means rayon's default.
    pub workers: usize,
    /// Recorded in the report; the caller generates data from it.
    pub seed: u64,
    /// Vertical stride, in input pixels, of the baseline's sliding window.
    pub window_stride: usize,
}

impl<T: Scalar> Default for BenchConfig<T> {
    fn default() -> Self {
        Self {
            single_scales: vec![1],
            multi_scales: vec![1, 2],
            normalization: Normalization::None,
            beta: T::of(crate::sparse_solver::DEFAULT_BETA),
            solver: SolverOptions::default(),
            workers: 1,
            seed: 0,
            window_stride: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeTiming {
    pub mode: String,
    pub mean_secs: f64,
    pub p95_secs: f64,
    pub mean_extract_secs: f64,
    pub mean_match_secs: f64,
    /// Gallery feature extractions performed by this mode.
    pub gallery_extractions: usize,
    pub rank1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub probes: usize,
    pub gallery: usize,
    pub workers: usize,
    pub seed: u64,
    /// One-off gallery extraction shared by the DSR modes.
    pub gallery_extract_secs: f64,
    pub modes: Vec<ModeTiming>,
}

impl BenchReport {
    pub fn mode(&self, name: &str) -> Option<&ModeTiming> {
        self.modes.iter().find(|m| m.mode == name)
    }
}

#[derive(Default)]
struct Samples {
    total: Vec<Duration>,
    extract: Vec<Duration>,
    matching: Vec<Duration>,
    extractions: usize,
    trials: Vec<TrialResult<f64>>,
}

impl Samples {
    fn finish(mut self, mode: &str) -> Result<ModeTiming> {
        let n = self.total.len().max(1) as f64;
        let mean = |v: &[Duration]| v.iter().map(Duration::as_secs_f64).sum::<f64>() / n;
        let (mean_secs, mean_extract_secs, mean_match_secs) =
            (mean(&self.total), mean(&self.extract), mean(&self.matching));
        self.total.sort();
        let p95 = self
            .total
            .get(((self.total.len() as f64 * 0.95).ceil() as usize).saturating_sub(1))
            .map_or(0.0, Duration::as_secs_f64);
        Ok(ModeTiming {
            mode: mode.to_string(),
            mean_secs,
            p95_secs: p95,
            mean_extract_secs,
            mean_match_secs,
            gallery_extractions: self.extractions,
            rank1: cmc(&self.trials)?.rank1(),
        })
    }
}

fn to_f64_list<T: Scalar>(list: &RankedList<T>) -> Result<RankedList<f64>> {
    RankedList::from_unsorted(
        list.entries()
            .iter()
            .map(|(id, d)| (id.clone(), d.as_f64()))
            .collect(),
    )
}

/// Sliding-window baseline: every gallery image is re-cut into probe-sized
/// windows and re-extracted for every probe; the best window wins.
fn recompute_rank<T: Scalar>(
    net: &Fcn<T>,
    probe: &FeatureMap<T>,
    gallery: &[Labeled<T>],
    stride: usize,
    extractions: &mut usize,
) -> Result<(RankedList<T>, Duration, Duration)> {
    let t = Instant::now();
    let pf = net.forward(probe)?;
    let mut extract = t.elapsed();
    let mut matching = Duration::ZERO;
    let mut scores = Vec::with_capacity(gallery.len());
    for g in gallery {
        let (pw, ph) = (
            probe.width().min(g.map.width()),
            probe.height().min(g.map.height()),
        );
        let t = Instant::now();
        let mut windows = Vec::new();
        let mut row = 0;
        loop {
            let mut col = 0;
            loop {
                windows.push(net.forward(&g.map.crop(col, row, pw, ph)?)?);
                if col + pw >= g.map.width() {
                    break;
                }
                col = (col + stride).min(g.map.width() - pw);
            }
            if row + ph >= g.map.height() {
                break;
            }
            row = (row + stride).min(g.map.height() - ph);
        }
        *extractions += 1;
        extract += t.elapsed();
        let t = Instant::now();
        let best = windows
            .iter()
            .filter(|w| w.width() == pf.width() && w.height() == pf.height())
            .map(|w| {
                pf.data()
                    .iter()
                    .zip(w.data())
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<T>()
            })
            .fold(T::infinity(), T::min);
        scores.push((g.person_id.clone(), best));
        matching += t.elapsed();
    }
    let t = Instant::now();
    let ranked = RankedList::from_unsorted(mean_per_identity(scores))?;
    matching += t.elapsed();
    Ok((ranked, extract, matching))
}

/// Mean over shots of one identity, matching the DSR multi-shot rule.
fn mean_per_identity<T: Scalar>(scores: Vec<(String, T)>) -> Vec<(String, T)> {
    let mut by: std::collections::BTreeMap<String, (T, usize)> = Default::default();
    for (id, d) in scores {
        let e = by.entry(id).or_insert((T::zero(), 0));
        e.0 += d;
        e.1 += 1;
    }
    by.into_iter()
        .map(|(id, (s, n))| (id, s / T::of(n as f64)))
        .collect()
}

/// Times every probe under three modes, interleaved probe by probe:
/// `dsr_single` and `dsr_multi` (gallery features extracted once and shared)
/// and `recompute` (gallery re-extracted per probe).
pub fn bench_matching<T: Scalar>(
    net: &Fcn<T>,
    gallery: &[Labeled<T>],
    probes: &[Labeled<T>],
    cfg: &BenchConfig<T>,
) -> Result<BenchReport> {
    if gallery.is_empty() {
        return Err(DsrError::EmptyGallery);
    }
    if probes.is_empty() {
        return Err(DsrError::EmptyInput("probes"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| DsrError::Config(format!("worker pool: {e}")))?;
    let workers = pool.current_num_threads();
    pool.install(|| {
        let t = Instant::now();
        let features: Vec<FeatureMap<T>> = gallery
            .iter()
            .map(|g| net.forward(&g.map))
            .collect::<Result<_>>()?;
        let gallery_extract_secs = t.elapsed().as_secs_f64();

        let entries = |scales: &[usize]| -> Result<Vec<GalleryEntry<T>>> {
            gallery
                .iter()
                .zip(&features)
                .map(|(g, f)| {
                    GalleryEntry::new(
                        g.person_id.clone(),
                        g.shot,
                        block_set(f, scales, cfg.normalization)?,
                    )
                })
                .collect()
        };
        let single = entries(&cfg.single_scales)?;
        let multi = entries(&cfg.multi_scales)?;

        let mut samples: [Samples; 3] = Default::default();
        for s in samples.iter_mut().take(2) {
            s.extractions = 1;
        }
        for (i, p) in probes.iter().enumerate() {
            for k in 0..3 {
                let mode = (i + k) % 3;
                let start = Instant::now();
                let (ranked, extract, matching) = match mode {
                    0 | 1 => {
                        let (scales, entries) = if mode == 0 {
                            (&cfg.single_scales, &single)
                        } else {
                            (&cfg.multi_scales, &multi)
                        };
                        let t = Instant::now();
                        let pf = net.forward(&p.map)?;
                        let extract = t.elapsed();
                        let t = Instant::now();
                        let blocks =
                            block_set(&pf, &fitting_scales(&pf, scales), cfg.normalization)?;
                        let ranked = rank_gallery(&blocks, entries, cfg.beta, &cfg.solver)?;
                        (ranked, extract, t.elapsed())
                    }
                    _ => recompute_rank(
                        net,
                        &p.map,
                        gallery,
                        cfg.window_stride.max(1),
                        &mut samples[2].extractions,
                    )?,
                };
                let total = start.elapsed();
                let s = &mut samples[mode];
                s.total.push(total);
                s.extract.push(extract);
                s.matching.push(matching);
                s.trials.push(TrialResult::new(
                    p.map.source_id.clone(),
                    p.person_id.clone(),
                    to_f64_list(&ranked)?,
                )?);
            }
        }
        let [a, b, c] = samples;
        Ok(BenchReport {
            probes: probes.len(),
            gallery: gallery.len(),
            workers,
            seed: cfg.seed,
            gallery_extract_secs,
            modes: vec![
                a.finish("dsr_single")?,
                b.finish("dsr_multi")?,
                c.finish("recompute")?,
            ],
        })
    })
}

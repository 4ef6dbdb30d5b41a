use serde::Serialize;

use crate::error::{DsrError, Result};
use crate::matching::RankedList;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct TrialResult<T> {
    pub probe_id: String,
    pub true_person_id: String,
    pub ranked: RankedList<T>,
}

impl<T: Scalar> TrialResult<T> {
    pub fn new(
        probe_id: impl Into<String>,
        true_person_id: impl Into<String>,
        ranked: RankedList<T>,
    ) -> Result<Self> {
        if ranked.is_empty() {
            return Err(DsrError::EmptyInput("ranked list"));
        }
        Ok(Self {
            probe_id: probe_id.into(),
            true_person_id: true_person_id.into(),
            ranked,
        })
    }

    pub fn true_rank(&self) -> Option<usize> {
        self.ranked.rank_of(&self.true_person_id)
    }

    /// Relevance marks of the identity ranking (exactly one hit when present).
    pub fn relevance(&self) -> Vec<bool> {
        self.ranked
            .entries()
            .iter()
            .map(|(id, _)| *id == self.true_person_id)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CmcCurve {
    /// `values[r - 1]` is the match rate within rank `r`.
    pub values: Vec<f64>,
}

impl CmcCurve {
    /// Match rate at 1-based `rank`; ranks past the end saturate.
    pub fn at(&self, rank: usize) -> f64 {
        assert!(rank >= 1, "ranks are 1-based");
        self.values[(rank - 1).min(self.values.len() - 1)]
    }

    pub fn rank1(&self) -> f64 {
        self.at(1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,value\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, v));
        }
        out
    }
}

pub fn cmc<T: Scalar>(trials: &[TrialResult<T>]) -> Result<CmcCurve> {
    if trials.is_empty() {
        return Err(DsrError::EmptyInput("trials"));
    }
    let depth = trials.iter().map(|t| t.ranked.len()).max().unwrap_or(0);
    let mut hits = vec![0usize; depth];
    for t in trials {
        if let Some(r) = t.true_rank() {
            hits[r - 1] += 1;
        }
    }
    let n = trials.len() as f64;
    let mut acc = 0usize;
    let values = hits
        .into_iter()
        .map(|h| {
            acc += h;
            acc as f64 / n
        })
        .collect();
    Ok(CmcCurve { values })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    /// `(false accept rate, true accept rate)`, starting at `(0, 0)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("far,tar\n");
        for (far, tar) in &self.points {
            out.push_str(&format!("{far},{tar}\n"));
        }
        out
    }
}

/// Sweeps an accept threshold (`distance <= t`) over every observed distance.
pub fn roc(genuine: &[f64], impostor: &[f64]) -> Result<RocCurve> {
    if genuine.is_empty() {
        return Err(DsrError::EmptyInput("genuine distances"));
    }
    if impostor.is_empty() {
        return Err(DsrError::EmptyInput("impostor distances"));
    }
    if genuine.iter().chain(impostor).any(|v| !v.is_finite()) {
        return Err(DsrError::Numeric("non-finite distance".into()));
    }
    let mut g = genuine.to_vec();
    let mut i = impostor.to_vec();
    g.sort_by(f64::total_cmp);
    i.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = g.iter().chain(&i).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let (ng, ni) = (g.len() as f64, i.len() as f64);
    let (mut gi, mut ii) = (0usize, 0usize);
    let mut points = vec![(0.0, 0.0)];
    for t in thresholds {
        while gi < g.len() && g[gi] <= t {
            gi += 1;
        }
        while ii < i.len() && i[ii] <= t {
            ii += 1;
        }
        points.push((ii as f64 / ni, gi as f64 / ng));
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * 0.5)
        .sum();
    Ok(RocCurve { points, auc })
}

/// Average precision of one relevance-marked ranking.
pub fn average_precision(relevance: &[bool]) -> Result<f64> {
    let total = relevance.iter().filter(|&&r| r).count();
    if total == 0 {
        return Err(DsrError::EmptyInput("relevant entries"));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / total as f64)
}

pub fn mean_average_precision(rankings: &[Vec<bool>]) -> Result<f64> {
    if rankings.is_empty() {
        return Err(DsrError::EmptyInput("rankings"));
    }
    let mut sum = 0.0;
    for r in rankings {
        sum += average_precision(r)?;
    }
    Ok(sum / rankings.len() as f64)
}

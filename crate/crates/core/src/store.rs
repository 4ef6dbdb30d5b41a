//! On-disk gallery: a directory holding `manifest.json` and one `.fmap` per shot.
//!
//! The manifest is a JSON array of `{"person_id": string, "shot": int, "fmap": path}`
//! with paths relative to the store root.

use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DsrError, Result};
use crate::feature_maps::{
    block_set, fitting_scales, read_fmap, write_fmap, FeatureMap, Normalization,
};
use crate::matching::GalleryEntry;
use crate::scalar::Scalar;
use crate::synthetic::Labeled;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub person_id: String,
    pub shot: usize,
    pub fmap: String,
}

#[derive(Debug, Clone)]
pub struct GalleryStore<T> {
    root: PathBuf,
    manifest: Vec<ManifestEntry>,
    maps: Vec<FeatureMap<T>>,
}

fn checked_relative(p: &str) -> Result<&Path> {
    let path = Path::new(p);
    if p.is_empty()
        || path
            .components()
            .any(|c| !matches!(c, Component::Normal(_)))
    {
        return Err(DsrError::Format(format!(
            "manifest path {p:?} must be relative and stay inside the store"
        )));
    }
    Ok(path)
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let entries: Vec<ManifestEntry> =
        serde_json::from_str(text).map_err(|e| DsrError::Format(format!("manifest: {e}")))?;
    let mut seen = std::collections::BTreeSet::new();
    for e in &entries {
        checked_relative(&e.fmap)?;
        if e.person_id.is_empty() {
            return Err(DsrError::Format(
                "manifest entry with empty person_id".into(),
            ));
        }
        if !seen.insert((e.person_id.as_str(), e.shot)) {
            return Err(DsrError::Format(format!(
                "duplicate entry {} shot {}",
                e.person_id, e.shot
            )));
        }
    }
    Ok(entries)
}

impl<T: Scalar> GalleryStore<T> {
    /// Loads the manifest and every map it lists.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| DsrError::io(&path, e))?;
        let manifest = parse_manifest(&text)?;
        let maps = manifest
            .iter()
            .map(|e| read_fmap(root.join(&e.fmap)))
            .collect::<Result<Vec<FeatureMap<T>>>>()?;
        if let Some(first) = maps.first() {
            if let Some((e, m)) = manifest
                .iter()
                .zip(&maps)
                .find(|(_, m)| m.channels() != first.channels())
            {
                return Err(DsrError::Format(format!(
                    "{} has {} channels, store has {}",
                    e.fmap,
                    m.channels(),
                    first.channels()
                )));
            }
        }
        Ok(Self {
            root,
            manifest,
            maps,
        })
    }

    /// Writes `items` as `<person_id>_s<shot>.fmap` plus the manifest.
    pub fn create(root: impl AsRef<Path>, items: &[Labeled<T>]) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(&root).map_err(|e| DsrError::io(&root, e))?;
        let manifest: Vec<ManifestEntry> = items
            .iter()
            .map(|l| ManifestEntry {
                person_id: l.person_id.clone(),
                shot: l.shot,
                fmap: format!("{}_s{}.fmap", l.person_id, l.shot),
            })
            .collect();
        let text =
            serde_json::to_string_pretty(&manifest).map_err(|e| DsrError::Format(e.to_string()))?;
        parse_manifest(&text)?;
        for (e, l) in manifest.iter().zip(items) {
            write_fmap(root.join(&e.fmap), &l.map)?;
        }
        let path = root.join(MANIFEST);
        std::fs::write(&path, text).map_err(|e| DsrError::io(&path, e))?;
        Self::open(root)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &[ManifestEntry] {
        &self.manifest
    }

    pub fn maps(&self) -> &[FeatureMap<T>] {
        &self.maps
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn channels(&self) -> Option<usize> {
        self.maps.first().map(FeatureMap::channels)
    }

    pub fn labeled(&self) -> Vec<Labeled<T>> {
        self.manifest
            .iter()
            .zip(&self.maps)
            .map(|(e, m)| Labeled {
                person_id: e.person_id.clone(),
                shot: e.shot,
                map: m.clone(),
            })
            .collect()
    }

    /// Block sets for matching, keeping shots with index below `max_shots`.
    /// Scales too large for a map are skipped for that map.
    pub fn gallery_entries(
        &self,
        scales: &[usize],
        normalization: Normalization,
        max_shots: usize,
    ) -> Result<Vec<GalleryEntry<T>>> {
        if self.is_empty() {
            return Err(DsrError::EmptyGallery);
        }
        self.manifest
            .iter()
            .zip(&self.maps)
            .filter(|(e, _)| e.shot < max_shots)
            .map(|(e, m)| {
                let blocks = block_set(m, &fitting_scales(m, scales), normalization)?;
                Ok(GalleryEntry::new(e.person_id.clone(), e.shot, blocks)?
                    .with_source(self.root.join(&e.fmap)))
            })
            .collect()
    }
}

//! `--synthetic` generator specs.
//!
//! | spec                          | output                                        |
//! |-------------------------------|-----------------------------------------------|
//! | `constant:WxHxC[:value]`      | one map filled with `value` (default 0.5)     |
//! | `noise:WxHxC[:seed]`          | one map of uniform `[0, 1)` values            |
//! | `person:ID[:shot]`            | one 16x32 RGB person image                    |
//! | `feature-gallery`             | store: feature-level benchmark gallery        |
//! | `feature-probes[:rep]`        | store: partial, partly downsampled probes     |
//! | `person-gallery[:shots]`      | store: person images                          |
//! | `person-probes[:tag]`         | store: upper-body crops of person images      |
//!
//! Store-producing specs honour the global `--seed`.

use dsr::feature_maps::FeatureMap;
use dsr::synthetic::{FeatureBenchmark, Labeled, PersonImages};
use dsr::{DsrError, Result};
use rand::{Rng, SeedableRng};

pub enum Generated {
    Single(FeatureMap<f64>),
    Many(Vec<Labeled<f64>>),
}

fn dims(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|t| {
            t.parse()
                .map_err(|_| DsrError::Config(format!("bad dimensions {s:?}")))
        })
        .collect::<Result<_>>()?;
    match parts[..] {
        [w, h, c] => Ok((w, h, c)),
        _ => Err(DsrError::Config(format!(
            "dimensions must be WxHxC, got {s:?}"
        ))),
    }
}

fn arg<T: std::str::FromStr>(v: Option<&&str>, default: T, what: &str) -> Result<T> {
    match v {
        None => Ok(default),
        Some(s) => s
            .parse()
            .map_err(|_| DsrError::Config(format!("bad {what} {s:?}"))),
    }
}

pub fn feature_benchmark(seed: u64) -> FeatureBenchmark {
    FeatureBenchmark {
        seed: FeatureBenchmark::default().seed ^ seed,
        ..FeatureBenchmark::default()
    }
}

pub fn person_images(seed: u64, identities: usize) -> PersonImages {
    PersonImages {
        identities,
        seed: PersonImages::default().seed ^ seed,
        ..PersonImages::default()
    }
}

pub fn generate(spec: &str, seed: u64) -> Result<Generated> {
    let fields: Vec<&str> = spec.split(':').collect();
    match fields[0] {
        "constant" => {
            let (w, h, c) = dims(
                fields
                    .get(1)
                    .ok_or_else(|| DsrError::Config("constant needs WxHxC".into()))?,
            )?;
            let v: f64 = arg(fields.get(2), 0.5, "value")?;
            Ok(Generated::Single(FeatureMap::from_fn(
                w,
                h,
                c,
                |_, _, _| v,
            )?))
        }
        "noise" => {
            let (w, h, c) = dims(
                fields
                    .get(1)
                    .ok_or_else(|| DsrError::Config("noise needs WxHxC".into()))?,
            )?;
            let s: u64 = arg(fields.get(2), seed, "seed")?;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(s);
            Ok(Generated::Single(FeatureMap::from_fn(
                w,
                h,
                c,
                |_, _, _| rng.gen::<f64>(),
            )?))
        }
        "person" => {
            let id: usize = arg(fields.get(1), 0, "identity")?;
            let shot: usize = arg(fields.get(2), 0, "shot")?;
            let imgs = person_images(seed, id + 1);
            let all = imgs.gallery::<f64>(shot + 1, 0)?;
            let pick = all
                .into_iter()
                .find(|l| l.shot == shot && l.person_id == dsr::synthetic::person_id(id));
            Ok(Generated::Single(pick.expect("generated identity").map))
        }
        "feature-gallery" => Ok(Generated::Many(feature_benchmark(seed).gallery()?)),
        "feature-probes" => {
            let rep: u64 = arg(fields.get(1), 0, "repetition")?;
            Ok(Generated::Many(feature_benchmark(seed).probes(rep)?))
        }
        "person-gallery" => {
            let shots: usize = arg(fields.get(1), 1, "shots")?;
            Ok(Generated::Many(person_images(seed, 60).gallery(shots, 0)?))
        }
        "person-probes" => {
            let tag: u64 = arg(fields.get(1), 1, "tag")?;
            Ok(Generated::Many(
                person_images(seed, 60).partial_probes(8, tag)?,
            ))
        }
        other => Err(DsrError::Config(format!(
            "unknown synthetic spec {other:?}"
        ))),
    }
}

//! Seeded synthetic identities for tests, benchmarks and `--synthetic` inputs.
//!
//! Two generators: [`FeatureBenchmark`] emits feature maps directly (no
//! network), [`PersonImages`] emits small RGB-like person images for the
//! trainable extractor. Partial probes are crops of full views; the feature
//! generator additionally downsamples some of them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DsrError, Result};
use crate::feature_maps::FeatureMap;
use crate::learning::{PairLabel, VerificationPair};
use crate::scalar::Scalar;

/// A map with its ground-truth identity.
#[derive(Debug, Clone)]
pub struct Labeled<T> {
    pub person_id: String,
    pub shot: usize,
    pub map: FeatureMap<T>,
}

pub fn person_id(i: usize) -> String {
    format!("p{i:03}")
}

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

#[derive(Debug, Clone)]
pub struct FeatureBenchmark {
    pub identities: usize,
    pub shots: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Size of the shared part-descriptor pool identities are composed from.
    pub parts: usize,
    /// Rows per body band; each band shows one part.
    pub band_height: usize,
    /// Per-view Gaussian noise on every entry.
    pub noise: f64,
    /// Fraction of probes that are downsampled by 2 after cropping.
    pub downsample_rate: f64,
    pub seed: u64,
}

impl Default for FeatureBenchmark {
    fn default() -> Self {
        Self {
            identities: 30,
            shots: 3,
            width: 4,
            height: 8,
            channels: 32,
            parts: 10,
            band_height: 2,
            noise: 0.35,
            downsample_rate: 0.5,
            seed: 2024,
        }
    }
}

struct Identity {
    /// Per-cell descriptors in the map's layout.
    cells: Vec<f64>,
}

impl FeatureBenchmark {
    fn identities_model(&self) -> Vec<Identity> {
        let mut rng = stream(self.seed, 1);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let d = self.channels;
        let pool: Vec<Vec<f64>> = (0..self.parts)
            .map(|_| (0..d).map(|_| f64::abs(normal.sample(&mut rng))).collect())
            .collect();
        let bands = self.height.div_ceil(self.band_height);
        (0..self.identities)
            .map(|_| {
                let choice: Vec<usize> = (0..bands).map(|_| rng.gen_range(0..self.parts)).collect();
                let mut cells = Vec::with_capacity(self.width * self.height * d);
                for row in 0..self.height {
                    let part = &pool[choice[row / self.band_height]];
                    for _ in 0..self.width {
                        cells.extend(
                            part.iter()
                                .map(|&v| (v + 0.3 * normal.sample(&mut rng)).max(0.0)),
                        );
                    }
                }
                Identity { cells }
            })
            .collect()
    }

    fn view<T: Scalar>(&self, id: &Identity, rng: &mut ChaCha8Rng) -> Result<FeatureMap<T>> {
        let normal = Normal::new(0.0, self.noise).unwrap();
        let data = id
            .cells
            .iter()
            .map(|&v| T::of((v + normal.sample(rng)).max(0.0)))
            .collect();
        FeatureMap::new(self.width, self.height, self.channels, data)
    }

    /// Full-body gallery views, `shots` per identity.
    pub fn gallery<T: Scalar>(&self) -> Result<Vec<Labeled<T>>> {
        let ids = self.identities_model();
        let mut rng = stream(self.seed, 2);
        let mut out = Vec::new();
        for (i, id) in ids.iter().enumerate() {
            for shot in 0..self.shots {
                out.push(Labeled {
                    person_id: person_id(i),
                    shot,
                    map: self
                        .view(id, &mut rng)?
                        .with_source(format!("{}_s{shot}", person_id(i))),
                });
            }
        }
        Ok(out)
    }

    /// One partial probe per identity; `repetition` selects an independent draw.
    pub fn probes<T: Scalar>(&self, repetition: u64) -> Result<Vec<Labeled<T>>> {
        let ids = self.identities_model();
        let mut rng = stream(self.seed, 100 + repetition);
        let mut out = Vec::new();
        for (i, id) in ids.iter().enumerate() {
            let full = self.view::<T>(id, &mut rng)?;
            let h = rng.gen_range(self.height.div_ceil(2)..=self.height);
            let w = rng.gen_range(self.width.div_ceil(2)..=self.width);
            let row = rng.gen_range(0..=self.height - h);
            let col = rng.gen_range(0..=self.width - w);
            let mut map = full.crop(col, row, w, h)?;
            if w >= 2 && h >= 2 && rng.gen_bool(self.downsample_rate) {
                map = map.downsample(2)?;
            }
            out.push(Labeled {
                person_id: person_id(i),
                shot: 0,
                map: map.with_source(format!("q{}_{repetition}", person_id(i))),
            });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct PersonImages {
    pub identities: usize,
    pub width: usize,
    pub height: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for PersonImages {
    fn default() -> Self {
        Self {
            identities: 12,
            width: 16,
            height: 32,
            noise: 0.05,
            seed: 7,
        }
    }
}

const PALETTE: [[f64; 3]; 8] = [
    [0.9, 0.1, 0.1],
    [0.1, 0.7, 0.2],
    [0.15, 0.25, 0.9],
    [0.9, 0.85, 0.1],
    [0.6, 0.2, 0.8],
    [0.1, 0.8, 0.8],
    [0.95, 0.95, 0.95],
    [0.2, 0.2, 0.2],
];

#[derive(Debug, Clone, Copy)]
struct Outfit {
    hair: usize,
    shirt: usize,
    pattern: usize,
    trousers: usize,
}

impl PersonImages {
    fn outfits(&self) -> Vec<Outfit> {
        let mut rng = stream(self.seed, 1);
        (0..self.identities)
            .map(|_| Outfit {
                hair: rng.gen_range(0..PALETTE.len()),
                shirt: rng.gen_range(0..PALETTE.len()),
                pattern: rng.gen_range(0..4),
                trousers: rng.gen_range(0..PALETTE.len()),
            })
            .collect()
    }

    fn render<T: Scalar>(&self, o: Outfit, rng: &mut ChaCha8Rng) -> Result<FeatureMap<T>> {
        let (w, h) = (self.width, self.height);
        let gain = rng.gen_range(0.85..1.15);
        let shift: i64 = rng.gen_range(-1..=1);
        let normal = Normal::new(0.0, self.noise).unwrap();
        let head_end = h * 3 / 16;
        let torso_end = h * 9 / 16;
        let mut data = Vec::with_capacity(w * h * 3);
        for row in 0..h {
            for col in 0..w {
                let c = (col as i64 - shift).clamp(0, w as i64 - 1) as usize;
                let torso_margin = w / 8;
                let body = c >= torso_margin && c < w - torso_margin;
                let rgb = if row < head_end {
                    let face = c >= w / 4 && c < w - w / 4;
                    if face && row >= head_end / 3 {
                        [0.85, 0.65, 0.5]
                    } else {
                        PALETTE[o.hair]
                    }
                } else if row < torso_end && body {
                    let shade = match o.pattern {
                        1 => (row / 2) % 2 == 0,
                        2 => (c / 2) % 2 == 0,
                        3 => (row / 2 + c / 2) % 2 == 0,
                        _ => true,
                    };
                    let base = PALETTE[o.shirt];
                    if shade {
                        base
                    } else {
                        [base[0] * 0.4, base[1] * 0.4, base[2] * 0.4]
                    }
                } else if row >= torso_end && body && (c < w / 2 - 1 || c > w / 2) {
                    PALETTE[o.trousers]
                } else {
                    [0.5, 0.5, 0.5]
                };
                for v in rgb {
                    data.push(T::of((gain * v + normal.sample(rng)).clamp(0.0, 1.0)));
                }
            }
        }
        FeatureMap::new(w, h, 3, data)
    }

    /// `shots` full-body images per identity.
    pub fn gallery<T: Scalar>(&self, shots: usize, tag: u64) -> Result<Vec<Labeled<T>>> {
        let outfits = self.outfits();
        let mut rng = stream(self.seed, 10 + tag);
        let mut out = Vec::new();
        for (i, &o) in outfits.iter().enumerate() {
            for shot in 0..shots {
                out.push(Labeled {
                    person_id: person_id(i),
                    shot,
                    map: self
                        .render(o, &mut rng)?
                        .with_source(format!("{}_s{shot}", person_id(i))),
                });
            }
        }
        Ok(out)
    }

    /// Upper-body crops at the gallery's scale. Crop heights are multiples of
    /// `row_multiple` between half and three quarters of the full height.
    pub fn partial_probes<T: Scalar>(
        &self,
        row_multiple: usize,
        tag: u64,
    ) -> Result<Vec<Labeled<T>>> {
        let outfits = self.outfits();
        let mut rng = stream(self.seed, 1000 + tag);
        let step = row_multiple.max(1);
        let lo = (self.height / 2).div_ceil(step).max(1);
        let hi = (self.height * 3 / 4 / step).max(lo);
        let mut out = Vec::new();
        for (i, &o) in outfits.iter().enumerate() {
            let full = self.render::<T>(o, &mut rng)?;
            let rows = rng.gen_range(lo..=hi) * step;
            out.push(Labeled {
                person_id: person_id(i),
                shot: 0,
                map: full
                    .crop(0, 0, self.width, rows)?
                    .with_source(format!("q{}_{tag}", person_id(i))),
            });
        }
        Ok(out)
    }
}

/// One genuine and one impostor pair per probe. The genuine partner is the
/// first gallery map of the probe's identity; the impostor partner is the
/// first map of the identity `offset + 1` places further along (cyclically).
pub fn verification_pairs<T: Scalar>(
    gallery: &[Labeled<T>],
    probes: &[Labeled<T>],
    offset: usize,
) -> Result<Vec<VerificationPair<T>>> {
    let mut ids: Vec<&str> = gallery.iter().map(|g| g.person_id.as_str()).collect();
    ids.dedup();
    if ids.len() < 2 {
        return Err(DsrError::EmptyInput("impostor identities"));
    }
    let first = |id: &str| gallery.iter().find(|g| g.person_id == id);
    let mut out = Vec::with_capacity(2 * probes.len());
    for p in probes {
        let k = ids
            .iter()
            .position(|&id| id == p.person_id)
            .ok_or_else(|| {
                DsrError::OutOfRange(format!("probe identity {} not in gallery", p.person_id))
            })?;
        let other = ids[(k + 1 + offset % (ids.len() - 1)) % ids.len()];
        for (partner, label) in [(ids[k], PairLabel::Genuine), (other, PairLabel::Impostor)] {
            out.push(VerificationPair {
                probe: p.map.clone(),
                gallery: first(partner).expect("listed identity").map.clone(),
                label,
            });
        }
    }
    Ok(out)
}

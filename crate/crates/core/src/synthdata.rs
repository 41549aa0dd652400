//! Seeded synthetic imbalanced segmentation data: noisy background images
//! with a small number of brighter elliptical lesions, plus a configurable
//! fraction of blank (lesion-free) samples.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{pixel_index, Dataset, Image, Mask, Sample, SampleId, Split};
use crate::error::{Error, Result};

const BACKGROUND_MEAN: f64 = 0.3;

/// Generator configuration. Defaults give a 64x64 benchmark where lesions
/// cover only a few percent of the pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub height: usize,
    pub width: usize,
    pub blank_fraction: f64,
    pub lesions_min: usize,
    pub lesions_max: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub intensity_offset: f64,
    pub noise_stddev: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            height: 64,
            width: 64,
            blank_fraction: 0.25,
            lesions_min: 1,
            lesions_max: 3,
            radius_min: 3.0,
            radius_max: 10.0,
            intensity_offset: 0.35,
            noise_stddev: 0.08,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("n_samples must be positive".into()));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidConfig(format!(
                "dimensions must be positive, got {}x{}",
                self.height, self.width
            )));
        }
        if !(0.0..1.0).contains(&self.blank_fraction) {
            return Err(Error::InvalidConfig(format!(
                "blank_fraction must lie in [0, 1), got {}",
                self.blank_fraction
            )));
        }
        if self.lesions_min == 0 || self.lesions_min > self.lesions_max {
            return Err(Error::InvalidConfig(format!(
                "lesion count range {}..={} is empty or zero",
                self.lesions_min, self.lesions_max
            )));
        }
        if !(self.radius_min > 0.0) || self.radius_min > self.radius_max {
            return Err(Error::InvalidConfig(format!(
                "lesion radius range {}..={} is empty or non-positive",
                self.radius_min, self.radius_max
            )));
        }
        let half = self.height.min(self.width) as f64 / 2.0;
        if self.radius_max > half {
            return Err(Error::InvalidConfig(format!(
                "radius_max {} exceeds image half-size {half}",
                self.radius_max
            )));
        }
        if !self.intensity_offset.is_finite() || !self.noise_stddev.is_finite() || self.noise_stddev < 0.0 {
            return Err(Error::InvalidConfig(
                "intensity_offset and noise_stddev must be finite (stddev non-negative)".into(),
            ));
        }
        Ok(())
    }
}

/// Quantize through f32, matching the on-disk representation so datasets
/// round-trip bit-exactly.
#[inline]
fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

/// RNG stream used by [`split_dataset`], distinct from the generator's.
const SPLIT_STREAM: u64 = 1;

/// Generates a dataset deterministically from the config's seed. All samples
/// start in the pool split; use [`split_dataset`] to assign the others.
/// Exactly round(blank_fraction * n_samples) images carry all-zero masks.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_stddev.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let n_blank = (cfg.blank_fraction * cfg.n_samples as f64).round() as usize;
    let mut order: Vec<usize> = (0..cfg.n_samples).collect();
    order.shuffle(&mut rng);
    let mut is_blank = vec![false; cfg.n_samples];
    for &i in order.iter().take(n_blank) {
        is_blank[i] = true;
    }

    let (h, w) = (cfg.height, cfg.width);
    let mut samples = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let mut intensities: Vec<f64> = (0..h * w)
            .map(|_| (BACKGROUND_MEAN + noise.sample(&mut rng)).clamp(0.0, 1.0))
            .collect();
        let mut labels = vec![0u8; h * w];
        if !is_blank[i] {
            let n_lesions = rng.gen_range(cfg.lesions_min..=cfg.lesions_max);
            for _ in 0..n_lesions {
                let cy = rng.gen_range(0.0..h as f64 - 1.0);
                let cx = rng.gen_range(0.0..w as f64 - 1.0);
                let ry = rng.gen_range(cfg.radius_min..=cfg.radius_max);
                let rx = rng.gen_range(cfg.radius_min..=cfg.radius_max);
                let r0 = ((cy - ry).floor().max(0.0)) as usize;
                let r1 = ((cy + ry).ceil() as usize).min(h - 1);
                let c0 = ((cx - rx).floor().max(0.0)) as usize;
                let c1 = ((cx + rx).ceil() as usize).min(w - 1);
                for r in r0..=r1 {
                    for c in c0..=c1 {
                        let dy = (r as f64 - cy) / ry;
                        let dx = (c as f64 - cx) / rx;
                        if dy * dy + dx * dx <= 1.0 {
                            let idx = pixel_index(r, c, w);
                            if labels[idx] == 0 {
                                labels[idx] = 1;
                                intensities[idx] =
                                    (intensities[idx] + cfg.intensity_offset).clamp(0.0, 1.0);
                            }
                        }
                    }
                }
            }
        }
        for v in intensities.iter_mut() {
            *v = quantize(*v);
        }
        samples.push(Sample {
            id: SampleId(i as u64),
            image: Image::new(h, w, intensities)?,
            mask: Mask::new(h, w, labels)?,
            split: Split::Pool,
        });
    }
    Ok(Dataset::new(samples))
}

/// Seeded uniform disjoint split assignment; everything not drawn for the
/// initial-labeled, validation or test sets stays in the pool.
pub fn split_dataset(
    d: &Dataset,
    n_initial: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<Dataset> {
    let total = d.len();
    if n_initial + n_val + n_test > total {
        return Err(Error::SplitOversubscribed {
            initial: n_initial,
            validation: n_val,
            test: n_test,
            total,
        });
    }
    let mut ids: Vec<SampleId> = d.samples().iter().map(|s| s.id).collect();
    ids.sort();
    // A dedicated stream keeps this shuffle independent of the generator's,
    // which draws from stream 0 and may share the same seed.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    ids.shuffle(&mut rng);

    let mut assignment: BTreeMap<SampleId, Split> = BTreeMap::new();
    let mut it = ids.into_iter();
    for _ in 0..n_initial {
        assignment.insert(it.next().unwrap(), Split::InitialLabeled);
    }
    for _ in 0..n_val {
        assignment.insert(it.next().unwrap(), Split::Validation);
    }
    for _ in 0..n_test {
        assignment.insert(it.next().unwrap(), Split::Test);
    }
    for id in it {
        assignment.insert(id, Split::Pool);
    }
    Ok(d.with_splits(&assignment))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::validate_dataset;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            n_samples: 10,
            height: 32,
            width: 32,
            blank_fraction: 0.5,
            seed: 11,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generator_output_is_valid_and_counts_blanks() {
        let d = generate_dataset(&small_cfg()).unwrap();
        assert!(validate_dataset(&d).is_empty());
        let blanks = d.samples().iter().filter(|s| s.mask.is_blank()).count();
        assert_eq!(blanks, 5);
    }

    #[test]
    fn generator_is_deterministic() {
        let cfg = small_cfg();
        assert_eq!(generate_dataset(&cfg).unwrap(), generate_dataset(&cfg).unwrap());
    }

    #[test]
    fn lesions_are_a_small_minority() {
        let cfg = SynthConfig {
            n_samples: 20,
            blank_fraction: 0.0,
            seed: 2,
            ..SynthConfig::default()
        };
        let d = generate_dataset(&cfg).unwrap();
        for s in d.samples() {
            let frac = s.mask.foreground_count() as f64 / s.mask.len() as f64;
            assert!(frac > 0.0 && frac < 0.25, "foreground fraction {frac}");
        }
    }

    #[test]
    fn zero_offset_hides_lesions_in_noise() {
        let cfg = SynthConfig {
            n_samples: 30,
            blank_fraction: 0.0,
            intensity_offset: 0.0,
            seed: 8,
            ..SynthConfig::default()
        };
        let d = generate_dataset(&cfg).unwrap();
        let mut fg_sum = 0.0;
        let mut fg_n = 0usize;
        let mut bg_sum = 0.0;
        let mut bg_n = 0usize;
        for s in d.samples() {
            for (i, &v) in s.image.as_slice().iter().enumerate() {
                if s.mask.as_slice()[i] == 1 {
                    fg_sum += v;
                    fg_n += 1;
                } else {
                    bg_sum += v;
                    bg_n += 1;
                }
            }
        }
        let diff = (fg_sum / fg_n as f64 - bg_sum / bg_n as f64).abs();
        assert!(diff < cfg.noise_stddev, "mean intensity gap {diff}");
    }

    #[test]
    fn oversized_radius_is_rejected() {
        let cfg = SynthConfig {
            height: 16,
            width: 16,
            radius_max: 10.0,
            ..small_cfg()
        };
        assert!(generate_dataset(&cfg).is_err());
    }

    #[test]
    fn split_arithmetic_and_determinism() {
        let cfg = SynthConfig {
            n_samples: 100,
            ..small_cfg()
        };
        let d = generate_dataset(&cfg).unwrap();
        let s = split_dataset(&d, 10, 10, 20, 5).unwrap();
        assert_eq!(s.ids_in(Split::InitialLabeled).len(), 10);
        assert_eq!(s.ids_in(Split::Validation).len(), 10);
        assert_eq!(s.ids_in(Split::Test).len(), 20);
        assert_eq!(s.ids_in(Split::Pool).len(), 60);
        assert!(validate_dataset(&s).is_empty());

        assert_eq!(s, split_dataset(&d, 10, 10, 20, 5).unwrap());
        // golden: two fixed seeds chosen at implementation time give
        // different initial splits
        let other = split_dataset(&d, 10, 10, 20, 6).unwrap();
        assert_ne!(
            s.ids_in(Split::InitialLabeled),
            other.ids_in(Split::InitialLabeled)
        );
    }

    #[test]
    fn split_is_uncorrelated_with_blank_assignment() {
        // Generation and splitting may receive the same seed; the split
        // shuffle must still be independent of the shuffle that picked which
        // masks are blank, or the small splits end up entirely blank.
        let cfg = SynthConfig {
            n_samples: 400,
            blank_fraction: 0.25,
            ..small_cfg()
        };
        let d = generate_dataset(&cfg).unwrap();
        let s = split_dataset(&d, 40, 40, 80, cfg.seed).unwrap();
        for split in [Split::InitialLabeled, Split::Validation, Split::Test] {
            let ids = s.ids_in(split);
            let blanks = ids
                .iter()
                .filter(|&&id| s.get(id).unwrap().mask.foreground_count() == 0)
                .count();
            let frac = blanks as f64 / ids.len() as f64;
            assert!(
                (frac - cfg.blank_fraction).abs() < 0.2,
                "{split:?} has blank fraction {frac}"
            );
        }
    }

    #[test]
    fn oversubscribed_split_is_rejected() {
        let d = generate_dataset(&small_cfg()).unwrap();
        assert!(matches!(
            split_dataset(&d, 5, 5, 5, 0),
            Err(Error::SplitOversubscribed { .. })
        ));
    }
}

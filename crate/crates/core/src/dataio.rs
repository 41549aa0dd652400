//! On-disk formats: the probability-map container, the dataset directory
//! layout, and model checkpoints.
//!
//! Payloads are 32-bit little-endian values, row-major, pass-major within a
//! sample, so golden files are portable across platforms. Readers reject
//! malformed input with named errors and never silently repair.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, Image, MCProbStack, Mask, ProbMap, Sample, SampleId, Split};
use crate::error::{Error, Result};
use crate::learner::Model;
use crate::synthdata::SynthConfig;
use crate::uncertainty::Prediction;

const DATASET_MANIFEST: &str = "manifest.toml";
const DATASET_IMAGES: &str = "images.bin";
const DATASET_MASKS: &str = "masks.bin";

/// Probability maps for a set of samples, possibly with several MC passes
/// per sample. The bridge through which externally trained models feed the
/// selection core.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMapContainer {
    ids: Vec<SampleId>,
    height: usize,
    width: usize,
    mc_passes: usize,
    /// sample-major, pass-major within sample, row-major within pass
    probs: Vec<f32>,
}

impl ProbMapContainer {
    pub fn new(
        ids: Vec<SampleId>,
        height: usize,
        width: usize,
        mc_passes: usize,
        probs: Vec<f32>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || mc_passes == 0 {
            return Err(Error::InvalidConfig(format!(
                "container dimensions must be positive, got {height}x{width}, {mc_passes} passes"
            )));
        }
        let expected = ids.len() * mc_passes * height * width;
        if probs.len() != expected {
            return Err(Error::InvalidConfig(format!(
                "container payload holds {} values, expected {expected}",
                probs.len()
            )));
        }
        let c = Self {
            ids,
            height,
            width,
            mc_passes,
            probs,
        };
        c.check_range(Path::new("<memory>"))?;
        Ok(c)
    }

    fn check_range(&self, path: &Path) -> Result<()> {
        let per_sample = self.mc_passes * self.height * self.width;
        for (i, &v) in self.probs.iter().enumerate() {
            let v = v as f64;
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::ProbabilityOutOfRange {
                    path: path.to_path_buf(),
                    id: self.ids[i / per_sample],
                    pixel: i % per_sample,
                    value: v,
                });
            }
        }
        Ok(())
    }

    pub fn ids(&self) -> &[SampleId] {
        &self.ids
    }
    pub fn n_samples(&self) -> usize {
        self.ids.len()
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn mc_passes(&self) -> usize {
        self.mc_passes
    }
    pub fn payload(&self) -> &[f32] {
        &self.probs
    }

    fn pass_map(&self, sample: usize, pass: usize) -> ProbMap {
        let n = self.height * self.width;
        let start = (sample * self.mc_passes + pass) * n;
        let probs = self.probs[start..start + n]
            .iter()
            .map(|&v| v as f64)
            .collect();
        ProbMap::new(self.height, self.width, probs).expect("range checked at construction")
    }

    /// The prediction stored for sample index `i`: a single map when the
    /// container holds one pass, an MC stack otherwise.
    pub fn prediction(&self, i: usize) -> Prediction {
        if self.mc_passes == 1 {
            Prediction::Single(self.pass_map(i, 0))
        } else {
            let passes = (0..self.mc_passes).map(|t| self.pass_map(i, t)).collect();
            Prediction::Stack(MCProbStack::new(passes).expect("passes >= 2, uniform dims"))
        }
    }
}

fn fmt_ids(ids: &[SampleId]) -> String {
    ids.iter()
        .map(|id| id.0.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Writes a container: one human-readable header line, then the raw payload.
pub fn write_probmaps(c: &ProbMapContainer, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let header = format!(
        "probmaps v1 n={} h={} w={} passes={} ids={}\n",
        c.n_samples(),
        c.height,
        c.width,
        c.mc_passes,
        fmt_ids(&c.ids)
    );
    f.write_all(header.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::with_capacity(c.probs.len() * 4);
    for &v in &c.probs {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

fn header_field<'a>(fields: &'a [&str], key: &str, path: &Path) -> Result<&'a str> {
    fields
        .iter()
        .find_map(|f| f.strip_prefix(key).and_then(|rest| rest.strip_prefix('=')))
        .ok_or_else(|| Error::HeaderParse {
            path: path.to_path_buf(),
            reason: format!("missing field {key:?}"),
        })
}

fn parse_usize(s: &str, key: &str, path: &Path) -> Result<usize> {
    s.parse().map_err(|_| Error::HeaderParse {
        path: path.to_path_buf(),
        reason: format!("field {key} is not an integer: {s:?}"),
    })
}

pub fn read_probmaps(path: &Path) -> Result<ProbMapContainer> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::new();
    f.read_to_end(&mut data).map_err(|e| Error::io(path, e))?;
    let nl = data
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::HeaderParse {
            path: path.to_path_buf(),
            reason: "no header line".to_string(),
        })?;
    let header = std::str::from_utf8(&data[..nl]).map_err(|_| Error::HeaderParse {
        path: path.to_path_buf(),
        reason: "header is not UTF-8".to_string(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.first() != Some(&"probmaps") || fields.get(1) != Some(&"v1") {
        return Err(Error::HeaderParse {
            path: path.to_path_buf(),
            reason: format!("unexpected magic {header:?}"),
        });
    }
    let n = parse_usize(header_field(&fields, "n", path)?, "n", path)?;
    let h = parse_usize(header_field(&fields, "h", path)?, "h", path)?;
    let w = parse_usize(header_field(&fields, "w", path)?, "w", path)?;
    let passes = parse_usize(header_field(&fields, "passes", path)?, "passes", path)?;
    let ids_str = header_field(&fields, "ids", path)?;
    let mut ids = Vec::with_capacity(n);
    if !ids_str.is_empty() {
        for part in ids_str.split(',') {
            ids.push(SampleId(part.parse().map_err(|_| Error::HeaderParse {
                path: path.to_path_buf(),
                reason: format!("bad id {part:?}"),
            })?));
        }
    }
    if ids.len() != n {
        return Err(Error::HeaderParse {
            path: path.to_path_buf(),
            reason: format!("header lists {} ids but n={n}", ids.len()),
        });
    }
    if h == 0 || w == 0 || passes == 0 {
        return Err(Error::HeaderParse {
            path: path.to_path_buf(),
            reason: format!("dimensions must be positive, got h={h} w={w} passes={passes}"),
        });
    }

    let payload = &data[nl + 1..];
    if payload.len() % 4 != 0 {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            got: payload.len(),
        });
    }
    let actual = payload.len() / 4;
    let expected = n * passes * h * w;
    if actual != expected {
        return Err(Error::PayloadSizeMismatch {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    let probs: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let c = ProbMapContainer {
        ids,
        height: h,
        width: w,
        mc_passes: passes,
        probs,
    };
    c.check_range(path)?;
    Ok(c)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetManifest {
    version: u32,
    n_samples: usize,
    height: usize,
    width: usize,
    ids: Vec<SampleId>,
    splits: Vec<Split>,
    #[serde(skip_serializing_if = "Option::is_none")]
    generator: Option<SynthConfig>,
}

/// Writes a dataset directory: `manifest.toml`, `images.bin` (f32 LE) and
/// `masks.bin` (one byte per pixel). Dimensions must be uniform.
pub fn write_dataset(d: &Dataset, dir: &Path, generator: Option<&SynthConfig>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let first = d.samples().first().ok_or_else(|| {
        Error::InvalidConfig("cannot write an empty dataset".to_string())
    })?;
    let (h, w) = (first.image.height(), first.image.width());
    let mut ids = Vec::with_capacity(d.len());
    let mut splits = Vec::with_capacity(d.len());
    let mut image_bytes = Vec::with_capacity(d.len() * h * w * 4);
    let mut mask_bytes = Vec::with_capacity(d.len() * h * w);
    for s in d.samples() {
        if s.image.height() != h || s.image.width() != w {
            return Err(Error::InvalidConfig(format!(
                "sample {} is {}x{}, expected uniform {h}x{w}",
                s.id,
                s.image.height(),
                s.image.width()
            )));
        }
        ids.push(s.id);
        splits.push(s.split);
        for &v in s.image.as_slice() {
            image_bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        mask_bytes.extend_from_slice(s.mask.as_slice());
    }
    let manifest = DatasetManifest {
        version: 1,
        n_samples: d.len(),
        height: h,
        width: w,
        ids,
        splits,
        generator: generator.cloned(),
    };
    let manifest_path = dir.join(DATASET_MANIFEST);
    let text = toml::to_string_pretty(&manifest).map_err(|e| Error::ConfigParse {
        path: manifest_path.clone(),
        reason: e.to_string(),
    })?;
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    let images_path = dir.join(DATASET_IMAGES);
    fs::write(&images_path, image_bytes).map_err(|e| Error::io(&images_path, e))?;
    let masks_path = dir.join(DATASET_MASKS);
    fs::write(&masks_path, mask_bytes).map_err(|e| Error::io(&masks_path, e))
}

/// Reads a dataset directory, returning the dataset and the generator
/// config recorded in the manifest, if any.
pub fn read_dataset(dir: &Path) -> Result<(Dataset, Option<SynthConfig>)> {
    let manifest_path = dir.join(DATASET_MANIFEST);
    if !manifest_path.exists() {
        return Err(Error::MissingManifest(manifest_path));
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest = toml::from_str(&text).map_err(|e| Error::ConfigParse {
        path: manifest_path.clone(),
        reason: e.to_string(),
    })?;
    let mismatch = |reason: String| Error::ManifestMismatch {
        path: manifest_path.clone(),
        reason,
    };
    if manifest.ids.len() != manifest.n_samples || manifest.splits.len() != manifest.n_samples {
        return Err(mismatch(format!(
            "manifest lists {} ids and {} splits but n_samples={}",
            manifest.ids.len(),
            manifest.splits.len(),
            manifest.n_samples
        )));
    }
    let n_px = manifest.height * manifest.width;

    let images_path = dir.join(DATASET_IMAGES);
    let image_bytes = fs::read(&images_path).map_err(|e| Error::io(&images_path, e))?;
    if image_bytes.len() % 4 != 0 {
        return Err(Error::TruncatedPayload {
            path: images_path,
            got: image_bytes.len(),
        });
    }
    if image_bytes.len() / 4 != manifest.n_samples * n_px {
        return Err(Error::PayloadSizeMismatch {
            path: images_path,
            expected: manifest.n_samples * n_px,
            actual: image_bytes.len() / 4,
        });
    }
    let masks_path = dir.join(DATASET_MASKS);
    let mask_bytes = fs::read(&masks_path).map_err(|e| Error::io(&masks_path, e))?;
    if mask_bytes.len() != manifest.n_samples * n_px {
        return Err(Error::PayloadSizeMismatch {
            path: masks_path,
            expected: manifest.n_samples * n_px,
            actual: mask_bytes.len(),
        });
    }

    let mut samples = Vec::with_capacity(manifest.n_samples);
    for (i, (&id, &split)) in manifest.ids.iter().zip(&manifest.splits).enumerate() {
        let mut intensities = Vec::with_capacity(n_px);
        for b in image_bytes[i * n_px * 4..(i + 1) * n_px * 4].chunks_exact(4) {
            intensities.push(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
        }
        let image = Image::new(manifest.height, manifest.width, intensities)?;
        let labels = &mask_bytes[i * n_px..(i + 1) * n_px];
        if let Some(pixel) = labels.iter().position(|&v| v > 1) {
            return Err(Error::BadMaskByte {
                path: masks_path,
                id,
                pixel,
                value: labels[pixel],
            });
        }
        let mask = Mask::new(manifest.height, manifest.width, labels.to_vec())?;
        samples.push(Sample {
            id,
            image,
            mask,
            split,
        });
    }
    Ok((Dataset::new(samples), manifest.generator))
}

/// Writes a model checkpoint as a small self-describing text record.
pub fn write_model(model: &Model, path: &Path) -> Result<()> {
    let text = toml::to_string_pretty(model).map_err(|e| Error::ConfigParse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::ConfigParse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Parses a TOML config file into any deserializable config type.
pub fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::ConfigParse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn dataset_manifest_path(dir: &Path) -> PathBuf {
    dir.join(DATASET_MANIFEST)
}

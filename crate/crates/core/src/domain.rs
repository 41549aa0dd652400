//! Shared domain types: images, masks, probability maps and datasets.
//!
//! All types are immutable after construction; constructors reject data that
//! violates their invariants. Pixels are stored row-major: pixel `(r, c)`
//! lives at index `r * width + c`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major pixel index for `(row, col)` in a map of the given width.
#[inline]
pub fn pixel_index(row: usize, col: usize, width: usize) -> usize {
    row * width + col
}

/// Stable identifier of one sample within a dataset. Never reused.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct SampleId(pub u64);

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn check_dims(height: usize, width: usize, len: usize, what: &str) -> std::result::Result<(), String> {
    if height == 0 || width == 0 {
        return Err(format!("{what} dimensions must be positive, got {height}x{width}"));
    }
    let expected = height * width;
    if len != expected {
        return Err(format!(
            "{what} has {len} values, expected {height}x{width} = {expected}"
        ));
    }
    Ok(())
}

/// A 2D grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    intensities: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, intensities: Vec<f64>) -> Result<Self> {
        check_dims(height, width, intensities.len(), "image").map_err(Error::InvalidImage)?;
        for (i, &v) in intensities.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidImage(format!(
                    "intensity at pixel {i} is {v}, expected a finite value in [0, 1]"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            intensities,
        })
    }

    /// Builds without invariant checks; pair with [`validate_dataset`] when
    /// ingesting untrusted data.
    pub fn from_raw_unchecked(height: usize, width: usize, intensities: Vec<f64>) -> Self {
        Self {
            height,
            width,
            intensities,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn len(&self) -> usize {
        self.intensities.len()
    }
    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.intensities
    }
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.intensities[pixel_index(row, col, self.width)]
    }
}

/// A binary ground-truth segmentation mask paired with an [`Image`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        check_dims(height, width, labels.len(), "mask").map_err(Error::InvalidMask)?;
        for (i, &v) in labels.iter().enumerate() {
            if v > 1 {
                return Err(Error::InvalidMask(format!(
                    "label at pixel {i} is {v}, expected 0 or 1"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn from_raw_unchecked(height: usize, width: usize, labels: Vec<u8>) -> Self {
        Self {
            height,
            width,
            labels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn len(&self) -> usize {
        self.labels.len()
    }
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
    pub fn as_slice(&self) -> &[u8] {
        &self.labels
    }

    /// Number of foreground pixels.
    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&v| v == 1).count()
    }

    /// True when the mask contains no foreground at all (a "blank" sample).
    pub fn is_blank(&self) -> bool {
        self.labels.iter().all(|&v| v == 0)
    }
}

/// Per-pixel foreground probabilities produced by a model for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    probs: Vec<f64>,
}

impl ProbMap {
    pub fn new(height: usize, width: usize, probs: Vec<f64>) -> Result<Self> {
        check_dims(height, width, probs.len(), "probability map").map_err(Error::InvalidProbMap)?;
        for (i, &v) in probs.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidProbMap(format!(
                    "probability at pixel {i} is {v}, expected a finite value in [0, 1]"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            probs,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn len(&self) -> usize {
        self.probs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }
}

/// T stochastic forward passes over one sample, T >= 2, uniform dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct MCProbStack {
    passes: Vec<ProbMap>,
}

impl MCProbStack {
    pub fn new(passes: Vec<ProbMap>) -> Result<Self> {
        if passes.len() < 2 {
            return Err(Error::InvalidMcStack(format!(
                "need at least 2 passes, got {}",
                passes.len()
            )));
        }
        let (h, w) = (passes[0].height(), passes[0].width());
        for (t, p) in passes.iter().enumerate() {
            if p.height() != h || p.width() != w {
                return Err(Error::InvalidMcStack(format!(
                    "pass {t} is {}x{}, expected {h}x{w}",
                    p.height(),
                    p.width()
                )));
            }
        }
        Ok(Self { passes })
    }

    pub fn passes(&self) -> &[ProbMap] {
        &self.passes
    }
    pub fn num_passes(&self) -> usize {
        self.passes.len()
    }
    pub fn height(&self) -> usize {
        self.passes[0].height()
    }
    pub fn width(&self) -> usize {
        self.passes[0].width()
    }
}

/// Sorted, duplicate-free pixel indices that passed a filter.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PixelSet {
    indices: Vec<usize>,
}

impl PixelSet {
    /// `n_pixels` bounds the valid index range.
    pub fn new(indices: Vec<usize>, n_pixels: usize) -> Result<Self> {
        for pair in indices.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::InvalidPixelSet(format!(
                    "indices must be strictly increasing, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        if let Some(&last) = indices.last() {
            if last >= n_pixels {
                return Err(Error::InvalidPixelSet(format!(
                    "index {last} out of range for {n_pixels} pixels"
                )));
            }
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
    pub fn len(&self) -> usize {
        self.indices.len()
    }
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Which split a sample currently belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Pool,
    InitialLabeled,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Split::Pool => "pool",
            Split::InitialLabeled => "initial-labeled",
            Split::Validation => "validation",
            Split::Test => "test",
        };
        f.write_str(s)
    }
}

/// One sample: an image, its ground-truth mask, and its split assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: SampleId,
    pub image: Image,
    pub mask: Mask,
    pub split: Split,
}

/// A full dataset. Construction is permissive; run [`validate_dataset`] to
/// obtain a list of invariant violations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Self { samples }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }
    pub fn len(&self) -> usize {
        self.samples.len()
    }
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: SampleId) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Ids assigned to `split`, ascending.
    pub fn ids_in(&self, split: Split) -> Vec<SampleId> {
        let mut ids: Vec<SampleId> = self
            .samples
            .iter()
            .filter(|s| s.split == split)
            .map(|s| s.id)
            .collect();
        ids.sort();
        ids
    }

    /// Reassigns splits; ids absent from `assignment` keep their current split.
    pub fn with_splits(&self, assignment: &BTreeMap<SampleId, Split>) -> Dataset {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let split = assignment.get(&s.id).copied().unwrap_or(s.split);
                Sample {
                    split,
                    ..s.clone()
                }
            })
            .collect();
        Dataset::new(samples)
    }
}

/// Checks every dataset invariant and returns one description per violation.
/// An empty list means the dataset is well formed.
pub fn validate_dataset(d: &Dataset) -> Vec<String> {
    let mut violations = Vec::new();
    let mut seen: BTreeMap<SampleId, Split> = BTreeMap::new();
    for s in d.samples() {
        if let Some(prev) = seen.get(&s.id) {
            violations.push(format!(
                "sample {} appears in multiple splits ({prev}, {}): splits must be disjoint and ids unique",
                s.id, s.split
            ));
        } else {
            seen.insert(s.id, s.split);
        }
        if let Err(msg) = check_dims(s.image.height(), s.image.width(), s.image.len(), "image") {
            violations.push(format!("sample {}: {msg}", s.id));
        }
        if let Err(msg) = check_dims(s.mask.height(), s.mask.width(), s.mask.len(), "mask") {
            violations.push(format!("sample {}: {msg}", s.id));
        }
        if s.image.height() != s.mask.height() || s.image.width() != s.mask.width() {
            violations.push(format!(
                "sample {}: mask is {}x{} but image is {}x{}",
                s.id,
                s.mask.height(),
                s.mask.width(),
                s.image.height(),
                s.image.width()
            ));
        }
        for (i, &v) in s.image.as_slice().iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                violations.push(format!(
                    "sample {}: intensity at pixel {i} is {v}, outside [0, 1]",
                    s.id
                ));
                break;
            }
        }
        for (i, &v) in s.mask.as_slice().iter().enumerate() {
            if v > 1 {
                violations.push(format!(
                    "sample {}: mask value at pixel {i} is {v}, expected 0 or 1",
                    s.id
                ));
                break;
            }
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    fn px(v: f64, n: usize) -> Vec<f64> {
        vec![v; n]
    }

    #[test]
    fn image_rejects_out_of_range() {
        assert!(Image::new(2, 2, vec![0.0, 0.5, 1.0, 1.5]).is_err());
        assert!(Image::new(2, 2, vec![0.0, 0.5, 1.0, f64::NAN]).is_err());
        assert!(Image::new(2, 2, px(0.5, 3)).is_err());
        assert!(Image::new(0, 2, vec![]).is_err());
        assert!(Image::new(2, 2, px(0.5, 4)).is_ok());
    }

    #[test]
    fn mask_rejects_nonbinary() {
        assert!(Mask::new(1, 3, vec![0, 1, 2]).is_err());
        assert!(Mask::new(1, 3, vec![0, 1, 1]).is_ok());
    }

    #[test]
    fn mc_stack_needs_two_uniform_passes() {
        let a = ProbMap::new(1, 2, vec![0.1, 0.2]).unwrap();
        let b = ProbMap::new(2, 1, vec![0.1, 0.2]).unwrap();
        assert!(MCProbStack::new(vec![a.clone()]).is_err());
        assert!(MCProbStack::new(vec![a.clone(), b]).is_err());
        assert!(MCProbStack::new(vec![a.clone(), a]).is_ok());
    }

    #[test]
    fn pixel_set_enforces_order_and_range() {
        assert!(PixelSet::new(vec![0, 2, 2], 4).is_err());
        assert!(PixelSet::new(vec![2, 0], 4).is_err());
        assert!(PixelSet::new(vec![0, 4], 4).is_err());
        assert!(PixelSet::new(vec![0, 3], 4).is_ok());
        assert!(PixelSet::new(vec![], 4).is_ok());
    }

    #[test]
    fn row_major_indexing() {
        assert_eq!(pixel_index(0, 0, 5), 0);
        assert_eq!(pixel_index(2, 3, 5), 13);
    }

    fn sample(id: u64, split: Split) -> Sample {
        Sample {
            id: SampleId(id),
            image: Image::new(2, 2, px(0.5, 4)).unwrap(),
            mask: Mask::new(2, 2, vec![0, 1, 0, 1]).unwrap(),
            split,
        }
    }

    #[test]
    fn validate_accepts_well_formed_dataset() {
        let d = Dataset::new(vec![
            sample(0, Split::InitialLabeled),
            sample(1, Split::Pool),
            sample(2, Split::Validation),
            sample(3, Split::Test),
        ]);
        assert!(validate_dataset(&d).is_empty());
    }

    #[test]
    fn validate_flags_bad_mask_value() {
        let mut s = sample(7, Split::Pool);
        s.mask = Mask::from_raw_unchecked(2, 2, vec![0, 2, 0, 1]);
        let v = validate_dataset(&Dataset::new(vec![s]));
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("sample 7"), "{}", v[0]);
        assert!(v[0].contains("expected 0 or 1"), "{}", v[0]);
    }

    #[test]
    fn validate_flags_split_overlap() {
        let d = Dataset::new(vec![sample(3, Split::Pool), sample(3, Split::Test)]);
        let v = validate_dataset(&d);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("sample 3"), "{}", v[0]);
        assert!(v[0].contains("disjoint"), "{}", v[0]);
    }

    #[test]
    fn validate_flags_shape_mismatch() {
        let mut s = sample(1, Split::Pool);
        s.mask = Mask::new(1, 4, vec![0, 1, 0, 1]).unwrap();
        let v = validate_dataset(&Dataset::new(vec![s]));
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("1x4"), "{}", v[0]);
    }
}

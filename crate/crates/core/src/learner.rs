//! A toy pixelwise segmentation learner: logistic regression over
//! handcrafted per-pixel features, trained with minibatch SGD and BCE loss,
//! with feature dropout for MC prediction.
//!
//! The learner stands in for a heavy segmentation network; the query
//! strategies only ever see its probability maps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Image, MCProbStack, Mask, ProbMap};
use crate::error::{Error, Result};
use crate::uncertainty::PROB_EPS;

/// Features per pixel: intensity, 3x3 mean, 3x3 std, gradient magnitude,
/// normalized row, normalized column, bias.
pub const FEATURE_LEN: usize = 7;

/// Index of the constant bias feature; never dropped.
pub const BIAS_FEATURE: usize = 6;

/// Fixed-length feature vectors for every pixel of one image, pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    feats: Vec<f64>,
}

impl FeatureMap {
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.feats
    }
    /// The 7 features of one pixel.
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.feats[i * FEATURE_LEN..(i + 1) * FEATURE_LEN]
    }
}

/// Trained logistic-regression weights plus the dropout rate they were
/// trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub weights: Vec<f64>,
    pub trained_epochs: usize,
    pub dropout_rate: f64,
}

impl Model {
    pub fn zeros(dropout_rate: f64) -> Self {
        Self {
            weights: vec![0.0; FEATURE_LEN],
            trained_epochs: 0,
            dropout_rate,
        }
    }
}

/// SGD hyperparameters. All fields have desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub minibatch_pixels: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            max_epochs: 100,
            patience: 5,
            min_delta: 1e-5,
            minibatch_pixels: 1024,
            dropout_rate: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be positive".into()));
        }
        if self.minibatch_pixels == 0 {
            return Err(Error::InvalidConfig(
                "minibatch_pixels must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Deterministic per-pixel features with edge-replication padding.
pub fn extract_features(img: &Image) -> FeatureMap {
    let (h, w) = (img.height(), img.width());
    let mut feats = Vec::with_capacity(h * w * FEATURE_LEN);
    for r in 0..h {
        for c in 0..w {
            let v = img.get(r, c);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let rr = (r as i64 + dr).clamp(0, h as i64 - 1) as usize;
                    let cc = (c as i64 + dc).clamp(0, w as i64 - 1) as usize;
                    let x = img.get(rr, cc);
                    sum += x;
                    sum_sq += x * x;
                }
            }
            let mean = sum / 9.0;
            let var = (sum_sq / 9.0 - mean * mean).max(0.0);
            let std = var.sqrt();
            let left = img.get(r, c.saturating_sub(1));
            let right = img.get(r, (c + 1).min(w - 1));
            let up = img.get(r.saturating_sub(1), c);
            let down = img.get((r + 1).min(h - 1), c);
            let gx = (right - left) / 2.0;
            let gy = (down - up) / 2.0;
            let grad = (gx * gx + gy * gy).sqrt();
            let row_n = if h > 1 { r as f64 / (h - 1) as f64 } else { 0.0 };
            let col_n = if w > 1 { c as f64 / (w - 1) as f64 } else { 0.0 };
            feats.extend_from_slice(&[v, mean, std, grad, row_n, col_n, 1.0]);
        }
    }
    FeatureMap {
        height: h,
        width: w,
        feats,
    }
}

/// Mean binary cross-entropy of `weights` over pixel-major `feats`/`labels`.
pub fn bce_loss(weights: &[f64], feats: &[f64], labels: &[f64]) -> f64 {
    let w: &[f64; FEATURE_LEN] = weights.try_into().expect("7 weights");
    let n = labels.len();
    let mut loss = 0.0;
    for (f, &y) in feats.chunks_exact(FEATURE_LEN).zip(labels) {
        let f: &[f64; FEATURE_LEN] = f.try_into().expect("7 features");
        let mut z = 0.0;
        for k in 0..FEATURE_LEN {
            z += w[k] * f[k];
        }
        let p = sigmoid(z).clamp(PROB_EPS, 1.0 - PROB_EPS);
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    loss / n as f64
}

/// Analytic gradient of [`bce_loss`] with respect to the weights.
pub fn bce_gradient(weights: &[f64], feats: &[f64], labels: &[f64]) -> Vec<f64> {
    let n = labels.len();
    let mut grad = vec![0.0; FEATURE_LEN];
    for (i, &y) in labels.iter().enumerate() {
        let f = &feats[i * FEATURE_LEN..(i + 1) * FEATURE_LEN];
        let z: f64 = weights.iter().zip(f).map(|(w, x)| w * x).sum();
        let e = sigmoid(z) - y;
        for (g, &x) in grad.iter_mut().zip(f) {
            *g += e * x;
        }
    }
    for g in grad.iter_mut() {
        *g /= n as f64;
    }
    grad
}

fn flatten(samples: &[(&Image, &Mask)]) -> (Vec<f64>, Vec<f64>) {
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for (img, mask) in samples {
        let fm = extract_features(img);
        feats.extend_from_slice(fm.as_slice());
        labels.extend(mask.as_slice().iter().map(|&v| v as f64));
    }
    (feats, labels)
}

/// Dropout mask over the non-bias features with inverted scaling.
fn draw_dropout_scale(rng: &mut impl Rng, rate: f64) -> [f64; FEATURE_LEN] {
    let mut scale = [1.0; FEATURE_LEN];
    if rate > 0.0 {
        let keep = 1.0 - rate;
        for s in scale.iter_mut().take(BIAS_FEATURE) {
            *s = if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 };
        }
    }
    scale
}

/// Trains by minibatch SGD with feature dropout, warm-starting from
/// `warm_start` when given. Early-stops when the monitor loss (validation
/// when provided, else training) fails to improve by `min_delta` for
/// `patience` consecutive epochs. Fully seeded and deterministic.
pub fn train(
    labeled: &[(&Image, &Mask)],
    validation: &[(&Image, &Mask)],
    cfg: &TrainConfig,
    warm_start: Option<&Model>,
) -> Result<Model> {
    if labeled.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    cfg.validate()?;

    let mut weights = match warm_start {
        Some(m) => m.weights.clone(),
        None => vec![0.0; FEATURE_LEN],
    };
    let prev_epochs = warm_start.map(|m| m.trained_epochs).unwrap_or(0);
    if cfg.max_epochs == 0 {
        return Ok(Model {
            weights,
            trained_epochs: prev_epochs,
            dropout_rate: cfg.dropout_rate,
        });
    }

    let (feats, labels) = flatten(labeled);
    let (val_feats, val_labels) = flatten(validation);
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Minibatches are contiguous pixel ranges visited in shuffled order;
    // block shuffling keeps the gradient sweep cache-friendly on large
    // labeled sets while still decorrelating update order across epochs.
    let n_batches = n.div_ceil(cfg.minibatch_pixels);
    let mut order: Vec<usize> = (0..n_batches).collect();
    let mut best_loss = f64::INFINITY;
    let mut best_weights = weights.clone();
    let mut stale = 0usize;
    let mut epochs_run = 0usize;
    let mut w: [f64; FEATURE_LEN] = weights.as_slice().try_into().expect("7 weights");

    for _ in 0..cfg.max_epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for &b in &order {
            let start = b * cfg.minibatch_pixels;
            let end = (start + cfg.minibatch_pixels).min(n);
            let scale = draw_dropout_scale(&mut rng, cfg.dropout_rate);
            let mut grad = [0.0; FEATURE_LEN];
            for (f, &y) in feats[start * FEATURE_LEN..end * FEATURE_LEN]
                .chunks_exact(FEATURE_LEN)
                .zip(&labels[start..end])
            {
                let f: &[f64; FEATURE_LEN] = f.try_into().expect("7 features");
                let mut masked = [0.0; FEATURE_LEN];
                let mut z = 0.0;
                for k in 0..FEATURE_LEN {
                    masked[k] = f[k] * scale[k];
                    z += w[k] * masked[k];
                }
                let e = sigmoid(z) - y;
                for k in 0..FEATURE_LEN {
                    grad[k] += e * masked[k];
                }
            }
            let step = cfg.learning_rate / (end - start) as f64;
            for k in 0..FEATURE_LEN {
                w[k] -= step * grad[k];
            }
        }
        weights.copy_from_slice(&w);
        epochs_run += 1;

        let monitor = if val_labels.is_empty() {
            bce_loss(&weights, &feats, &labels)
        } else {
            bce_loss(&weights, &val_feats, &val_labels)
        };
        if best_loss - monitor > cfg.min_delta {
            best_loss = monitor;
            best_weights.copy_from_slice(&weights);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    Ok(Model {
        weights: best_weights,
        trained_epochs: prev_epochs + epochs_run,
        dropout_rate: cfg.dropout_rate,
    })
}

fn predict_with_scale(model: &Model, fm: &FeatureMap, scale: &[f64; FEATURE_LEN]) -> ProbMap {
    let mut w = [0.0; FEATURE_LEN];
    for k in 0..FEATURE_LEN {
        w[k] = model.weights[k] * scale[k];
    }
    let probs = fm
        .as_slice()
        .chunks_exact(FEATURE_LEN)
        .map(|f| {
            let f: &[f64; FEATURE_LEN] = f.try_into().expect("7 features");
            let mut z = 0.0;
            for k in 0..FEATURE_LEN {
                z += w[k] * f[k];
            }
            sigmoid(z).clamp(PROB_EPS, 1.0 - PROB_EPS)
        })
        .collect();
    ProbMap::new(fm.height(), fm.width(), probs).expect("sigmoid output is in range")
}

/// Deterministic dropout-free prediction.
pub fn predict(model: &Model, img: &Image) -> ProbMap {
    let fm = extract_features(img);
    predict_with_scale(model, &fm, &[1.0; FEATURE_LEN])
}

/// `passes` stochastic forward passes with independent feature dropout.
/// Pass t draws its mask from stream t of the seeded generator, so the
/// stack is the same regardless of evaluation order.
pub fn predict_mc(model: &Model, img: &Image, passes: usize, seed: u64) -> Result<MCProbStack> {
    if passes < 2 {
        return Err(Error::TooFewPasses(passes));
    }
    let fm = extract_features(img);
    let mut maps = Vec::with_capacity(passes);
    for t in 0..passes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64 + 1);
        let scale = draw_dropout_scale(&mut rng, model.dropout_rate);
        maps.push(predict_with_scale(model, &fm, &scale));
    }
    MCProbStack::new(maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{pixel_index, Split};
    use crate::synthdata::{generate_dataset, SynthConfig};

    fn constant_image(h: usize, w: usize, v: f64) -> Image {
        Image::new(h, w, vec![v; h * w]).unwrap()
    }

    #[test]
    fn features_of_constant_image() {
        let img = constant_image(3, 3, 0.5);
        let fm = extract_features(&img);
        for i in 0..9 {
            let f = fm.pixel(i);
            assert_eq!(f[0], 0.5);
            assert!((f[1] - 0.5).abs() < 1e-12, "mean");
            assert!(f[2].abs() < 1e-7, "std");
            assert_eq!(f[3], 0.0, "gradient");
            assert_eq!(f[BIAS_FEATURE], 1.0);
        }
    }

    #[test]
    fn features_of_single_pixel_image() {
        let img = constant_image(1, 1, 0.3);
        let fm = extract_features(&img);
        let f = fm.pixel(0);
        assert_eq!(f[0], 0.3);
        assert!((f[1] - 0.3).abs() < 1e-12);
        assert!(f[2].abs() < 1e-7);
        assert_eq!(f[3], 0.0);
        assert_eq!(f[4], 0.0);
        assert_eq!(f[5], 0.0);
    }

    #[test]
    fn vertical_step_edge_gradient() {
        // columns 0-1 dark, columns 2-3 bright; central differences put the
        // maximal gradient on columns 1 and 2
        let mut data = Vec::new();
        for _ in 0..4 {
            data.extend_from_slice(&[0.0, 0.0, 1.0, 1.0]);
        }
        let img = Image::new(4, 4, data).unwrap();
        let fm = extract_features(&img);
        for r in 0..4 {
            let g: Vec<f64> = (0..4)
                .map(|c| fm.pixel(pixel_index(r, c, 4))[3])
                .collect();
            assert_eq!(g[0], 0.0);
            assert!((g[1] - 0.5).abs() < 1e-12);
            assert!((g[2] - 0.5).abs() < 1e-12);
            assert_eq!(g[3], 0.0);
        }
    }

    #[test]
    fn zero_weights_predict_half() {
        let model = Model::zeros(0.5);
        let p = predict(&model, &constant_image(2, 2, 0.7));
        assert!(p.as_slice().iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn bias_only_model_saturates() {
        let mut model = Model::zeros(0.0);
        model.weights[BIAS_FEATURE] = 10.0;
        let p = predict(&model, &constant_image(2, 2, 0.3));
        assert!(p.as_slice().iter().all(|&v| v > 0.9999));
    }

    #[test]
    fn predict_is_deterministic() {
        let mut model = Model::zeros(0.5);
        model.weights = vec![0.3, -0.2, 0.1, 0.7, -0.4, 0.2, 0.05];
        let img = constant_image(4, 5, 0.6);
        assert_eq!(predict(&model, &img), predict(&model, &img));
    }

    #[test]
    fn mc_passes_match_predict_without_dropout() {
        let mut model = Model::zeros(0.0);
        model.weights = vec![0.3, -0.2, 0.1, 0.7, -0.4, 0.2, 0.05];
        let img = constant_image(3, 3, 0.4);
        let plain = predict(&model, &img);
        let stack = predict_mc(&model, &img, 3, 42).unwrap();
        for pass in stack.passes() {
            assert_eq!(pass, &plain);
        }
    }

    #[test]
    fn mc_is_seed_deterministic_and_rejects_single_pass() {
        let mut model = Model::zeros(0.5);
        model.weights = vec![1.0, 0.5, -0.5, 0.2, 0.1, -0.1, 0.0];
        let img = constant_image(3, 3, 0.4);
        let a = predict_mc(&model, &img, 5, 9).unwrap();
        let b = predict_mc(&model, &img, 5, 9).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            predict_mc(&model, &img, 1, 9),
            Err(Error::TooFewPasses(1))
        ));
    }

    #[test]
    fn zero_weight_model_immune_to_dropout() {
        let model = Model::zeros(0.5);
        let img = constant_image(2, 2, 0.8);
        let stack = predict_mc(&model, &img, 4, 1).unwrap();
        for pass in stack.passes() {
            assert!(pass.as_slice().iter().all(|&v| (v - 0.5).abs() < 1e-12));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = 8;
            let feats: Vec<f64> = (0..n * FEATURE_LEN).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let labels: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.5))).collect();
            let w: Vec<f64> = (0..FEATURE_LEN).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let grad = bce_gradient(&w, &feats, &labels);
            let h = 1e-6;
            for j in 0..FEATURE_LEN {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[j] += h;
                wm[j] -= h;
                let fd = (bce_loss(&wp, &feats, &labels) - bce_loss(&wm, &feats, &labels)) / (2.0 * h);
                let denom = grad[j].abs().max(fd.abs()).max(1e-8);
                assert!(
                    (grad[j] - fd).abs() / denom < 1e-5,
                    "component {j}: analytic {} vs fd {}",
                    grad[j],
                    fd
                );
            }
        }
    }

    fn toy_dataset() -> Vec<(Image, Mask)> {
        let cfg = SynthConfig {
            n_samples: 12,
            height: 16,
            width: 16,
            blank_fraction: 0.25,
            radius_min: 2.0,
            radius_max: 5.0,
            seed: 3,
            ..SynthConfig::default()
        };
        let d = generate_dataset(&cfg).unwrap();
        d.samples()
            .iter()
            .filter(|s| s.split == Split::Pool)
            .map(|s| (s.image.clone(), s.mask.clone()))
            .collect()
    }

    #[test]
    fn training_loss_decreases_early() {
        let data = toy_dataset();
        let refs: Vec<(&Image, &Mask)> = data.iter().map(|(i, m)| (i, m)).collect();
        let (feats, labels) = flatten(&refs);
        let cfg = TrainConfig {
            dropout_rate: 0.0,
            seed: 1,
            ..TrainConfig::default()
        };
        let mut losses = Vec::new();
        let mut prev: Option<Model> = None;
        for _ in 0..5 {
            let one_epoch = TrainConfig {
                max_epochs: 1,
                ..cfg.clone()
            };
            let m = train(&refs, &[], &one_epoch, prev.as_ref()).unwrap();
            losses.push(bce_loss(&m.weights, &feats, &labels));
            prev = Some(m);
        }
        for pair in losses.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-6,
                "loss increased: {:?}",
                losses
            );
        }
    }

    #[test]
    fn warm_start_with_zero_epochs_is_identity() {
        let data = toy_dataset();
        let refs: Vec<(&Image, &Mask)> = data.iter().map(|(i, m)| (i, m)).collect();
        let cfg = TrainConfig {
            max_epochs: 5,
            seed: 2,
            ..TrainConfig::default()
        };
        let m = train(&refs, &[], &cfg, None).unwrap();
        let frozen = TrainConfig {
            max_epochs: 0,
            ..cfg
        };
        let m2 = train(&refs, &[], &frozen, Some(&m)).unwrap();
        assert_eq!(m.weights, m2.weights);
    }

    #[test]
    fn all_background_labels_push_probabilities_down() {
        let data = toy_dataset();
        let blanked: Vec<(Image, Mask)> = data
            .iter()
            .map(|(img, m)| {
                (
                    img.clone(),
                    Mask::new(m.height(), m.width(), vec![0; m.len()]).unwrap(),
                )
            })
            .collect();
        let refs: Vec<(&Image, &Mask)> = blanked.iter().map(|(i, m)| (i, m)).collect();
        let cfg = TrainConfig {
            max_epochs: 30,
            dropout_rate: 0.0,
            seed: 4,
            ..TrainConfig::default()
        };
        let m = train(&refs, &[], &cfg, None).unwrap();
        for (img, _) in &blanked {
            let p = predict(&m, img);
            assert!(p.as_slice().iter().all(|&v| v < 0.5));
        }
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(matches!(
            train(&[], &[], &TrainConfig::default(), None),
            Err(Error::EmptyTrainingSet)
        ));
    }

    #[test]
    fn fine_tune_on_converged_model_does_not_regress() {
        let data = toy_dataset();
        let (train_set, val_set) = data.split_at(8);
        let tr: Vec<(&Image, &Mask)> = train_set.iter().map(|(i, m)| (i, m)).collect();
        let va: Vec<(&Image, &Mask)> = val_set.iter().map(|(i, m)| (i, m)).collect();
        let cfg = TrainConfig {
            dropout_rate: 0.0,
            seed: 6,
            ..TrainConfig::default()
        };
        let m = train(&tr, &va, &cfg, None).unwrap();
        let (vf, vl) = flatten(&va);
        let before = bce_loss(&m.weights, &vf, &vl);
        let m2 = train(&tr, &va, &cfg, Some(&m)).unwrap();
        let after = bce_loss(&m2.weights, &vf, &vl);
        assert!(after <= before + cfg.min_delta, "{before} -> {after}");
    }
}

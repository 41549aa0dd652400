//! The pool-based active-learning loop: oracle labeling from ground-truth
//! masks, warm-started retraining, per-round Dice evaluation, and the
//! diversity statistics used to characterize what a strategy selects.
//!
//! Rounds are strictly sequential; everything inside a round is a pure
//! function of the experiment seed, so a run is reproducible bit for bit.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use crate::domain::{validate_dataset, Dataset, Image, Mask, ProbMap, SampleId, Split};
use crate::error::{Error, Result};
use crate::learner::{predict, predict_mc, train, Model, TrainConfig};
use crate::selection::{
    random_query, rank_topk, score_pool, selective_query, BoundaryFilterConfig, PoolScores,
    Provenance, SelectionResult, StrategyKind, TargetFilterConfig,
};
use crate::uncertainty::Prediction;

/// Bucket width of the target-pixel-count histogram in [`DiversityStats`].
pub const HISTOGRAM_BUCKET: usize = 64;

/// Threshold at which probability maps are binarized for Dice evaluation.
/// Fixed independently of the selection filters.
pub const EVAL_THRESHOLD: f64 = 0.5;

const TAG_TRAIN: u64 = 1;
const TAG_QUERY: u64 = 2;
const TAG_MC: u64 = 3;

/// splitmix64-style mixing of a master seed with context words, so each
/// consumer of randomness gets an independent deterministic stream.
pub fn derive_seed(master: u64, tag: u64, round: u64, extra: u64) -> u64 {
    let mut z = master
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(tag)
        .wrapping_mul(0xbf58_476d_1ce4_e5b9)
        .wrapping_add(round)
        .wrapping_mul(0x94d0_49bb_1331_11eb)
        .wrapping_add(extra);
    z ^= z >> 30;
    z = z.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One AL experiment: a strategy, its filters, and the loop budget.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub strategy: StrategyKind,
    pub target_filter: TargetFilterConfig,
    pub boundary_filter: BoundaryFilterConfig,
    pub batch_per_round: usize,
    pub n_rounds: usize,
    pub mc_passes: usize,
    pub train: TrainConfig,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_per_round == 0 {
            return Err(Error::InvalidConfig("batch_per_round must be positive".into()));
        }
        if self.n_rounds == 0 {
            return Err(Error::InvalidConfig("n_rounds must be positive".into()));
        }
        if self.mc_passes < 2 {
            return Err(Error::InvalidConfig(format!(
                "mc_passes must be at least 2, got {}",
                self.mc_passes
            )));
        }
        self.train.validate()
    }
}

/// Bookkeeping for one round of the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    pub n_labeled: usize,
    pub dice_val: f64,
    pub dice_test: f64,
    pub selected: Vec<(SampleId, Provenance)>,
    pub blank_selected_fraction: f64,
    pub mean_target_pixels_selected: f64,
    pub seconds: f64,
}

/// Summary across the whole curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSummary {
    pub highest_dice: f64,
    /// Filled by [`labels_to_baseline`] once a baseline Dice is known.
    pub labels_to_baseline: Option<usize>,
    /// `(n_labeled, test Dice)` per round.
    pub curve: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub rounds: Vec<RoundLog>,
    pub summary: CurveSummary,
    pub warnings: Vec<String>,
}

/// Dice coefficient 2|A n B| / (|A| + |B|); two empty masks count as 1.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::DimensionMismatch(
            a.height(),
            a.width(),
            b.height(),
            b.width(),
        ));
    }
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        inter += (x == 1 && y == 1) as usize;
        total += (x == 1) as usize + (y == 1) as usize;
    }
    if total == 0 {
        Ok(1.0)
    } else {
        Ok(2.0 * inter as f64 / total as f64)
    }
}

/// Binarizes a probability map: strictly above the threshold is foreground.
pub fn binarize(m: &ProbMap, threshold: f64) -> Mask {
    let labels = m
        .as_slice()
        .iter()
        .map(|&p| (p > threshold) as u8)
        .collect();
    Mask::new(m.height(), m.width(), labels).expect("binarized labels are 0/1")
}

/// Ground-truth composition of a selection: how many blanks were picked and
/// how much foreground the picked samples carry.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityStats {
    pub blank_selected_fraction: f64,
    pub mean_target_pixels_selected: f64,
    /// Target-pixel counts bucketed by [`HISTOGRAM_BUCKET`] pixels.
    pub histogram: BTreeMap<usize, usize>,
}

pub fn diversity_stats(selected: &[SampleId], dataset: &Dataset) -> DiversityStats {
    let mut blanks = 0usize;
    let mut pixel_sum = 0usize;
    let mut histogram = BTreeMap::new();
    for &id in selected {
        let count = dataset
            .get(id)
            .map(|s| s.mask.foreground_count())
            .unwrap_or(0);
        if count == 0 {
            blanks += 1;
        }
        pixel_sum += count;
        *histogram.entry(count / HISTOGRAM_BUCKET).or_insert(0) += 1;
    }
    let n = selected.len();
    DiversityStats {
        blank_selected_fraction: if n == 0 { 0.0 } else { blanks as f64 / n as f64 },
        mean_target_pixels_selected: if n == 0 { 0.0 } else { pixel_sum as f64 / n as f64 },
        histogram,
    }
}

/// Smallest labeled count on the curve whose Dice reaches
/// `baseline - tolerance`, or `None` if it is never reached.
pub fn labels_to_baseline(
    curve: &[(usize, f64)],
    baseline: f64,
    tolerance: f64,
) -> Option<usize> {
    curve
        .iter()
        .find(|&&(_, d)| d >= baseline - tolerance)
        .map(|&(n, _)| n)
}

fn gather<'a>(dataset: &'a Dataset, ids: &[SampleId]) -> Vec<(&'a Image, &'a Mask)> {
    ids.iter()
        .map(|&id| {
            let s = dataset.get(id).expect("id drawn from this dataset");
            (&s.image, &s.mask)
        })
        .collect()
}

fn mean_dice(model: &Model, dataset: &Dataset, ids: &[SampleId]) -> Result<f64> {
    let mut sum = 0.0;
    for &id in ids {
        let s = dataset.get(id).expect("id drawn from this dataset");
        let pred = binarize(&predict(model, &s.image), EVAL_THRESHOLD);
        sum += dice(&pred, &s.mask)?;
    }
    Ok(sum / ids.len() as f64)
}

fn pool_predictions(
    dataset: &Dataset,
    pool: &[SampleId],
    model: &Model,
    cfg: &ExperimentConfig,
    round: usize,
) -> Result<BTreeMap<SampleId, Prediction>> {
    let needs_mc = cfg.strategy.scorer().map(|s| s.needs_mc()).unwrap_or(false);
    let mut preds = BTreeMap::new();
    for &id in pool {
        let s = dataset.get(id).expect("pool id in dataset");
        let pred = if needs_mc {
            let seed = derive_seed(cfg.seed, TAG_MC, round as u64, id.0);
            Prediction::Stack(predict_mc(model, &s.image, cfg.mc_passes, seed)?)
        } else {
            Prediction::Single(predict(model, &s.image))
        };
        preds.insert(id, pred);
    }
    Ok(preds)
}

fn select(
    dataset: &Dataset,
    pool: &[SampleId],
    model: &Model,
    cfg: &ExperimentConfig,
    round: usize,
    b: usize,
) -> Result<SelectionResult> {
    match cfg.strategy {
        StrategyKind::Random => {
            random_query(pool, b, derive_seed(cfg.seed, TAG_QUERY, round as u64, 0))
        }
        StrategyKind::Conventional(_) => {
            let preds = pool_predictions(dataset, pool, model, cfg, round)?;
            let PoolScores::Conventional(scores) = score_pool(
                &preds,
                cfg.strategy,
                &cfg.target_filter,
                &cfg.boundary_filter,
            )?
            else {
                unreachable!()
            };
            let chosen = rank_topk(&scores, b)
                .into_iter()
                .map(|id| (id, Provenance::SingleStream))
                .collect::<Vec<_>>();
            Ok(SelectionResult::from_chosen(chosen))
        }
        StrategyKind::Selective(_) => {
            let preds = pool_predictions(dataset, pool, model, cfg, round)?;
            let PoolScores::Selective(scores) = score_pool(
                &preds,
                cfg.strategy,
                &cfg.target_filter,
                &cfg.boundary_filter,
            )?
            else {
                unreachable!()
            };
            selective_query(&scores, b)
        }
    }
}

/// Runs the full AL loop. Round 0 trains on the initial labeled set; each
/// later round scores the pool, queries `batch_per_round` samples, labels
/// them with their ground-truth masks, fine-tunes from the previous model
/// and evaluates. If the pool runs dry the loop truncates with a warning.
pub fn run_experiment(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let violations = validate_dataset(dataset);
    if !violations.is_empty() {
        return Err(Error::DatasetInvalid(violations.join("; ")));
    }

    let mut labeled = dataset.ids_in(Split::InitialLabeled);
    let mut pool = dataset.ids_in(Split::Pool);
    let val_ids = dataset.ids_in(Split::Validation);
    let test_ids = dataset.ids_in(Split::Test);
    if labeled.is_empty() {
        return Err(Error::InvalidConfig("initial labeled split is empty".into()));
    }
    if test_ids.is_empty() {
        return Err(Error::InvalidConfig("test split is empty".into()));
    }
    let val_pairs = gather(dataset, &val_ids);

    let mut warnings = Vec::new();
    let mut rounds: Vec<RoundLog> = Vec::with_capacity(cfg.n_rounds + 1);

    let start = Instant::now();
    let train_cfg = TrainConfig {
        seed: derive_seed(cfg.seed, TAG_TRAIN, 0, 0),
        ..cfg.train.clone()
    };
    let mut model = train(&gather(dataset, &labeled), &val_pairs, &train_cfg, None)?;
    rounds.push(RoundLog {
        round: 0,
        n_labeled: labeled.len(),
        dice_val: if val_ids.is_empty() {
            0.0
        } else {
            mean_dice(&model, dataset, &val_ids)?
        },
        dice_test: mean_dice(&model, dataset, &test_ids)?,
        selected: Vec::new(),
        blank_selected_fraction: 0.0,
        mean_target_pixels_selected: 0.0,
        seconds: start.elapsed().as_secs_f64(),
    });

    for round in 1..=cfg.n_rounds {
        if pool.is_empty() {
            warnings.push(format!(
                "pool exhausted before round {round}; truncating run at {} rounds",
                round - 1
            ));
            break;
        }
        let start = Instant::now();
        let b = cfg.batch_per_round.min(pool.len());
        if b < cfg.batch_per_round {
            warnings.push(format!(
                "round {round}: only {b} pool samples left for a batch of {}",
                cfg.batch_per_round
            ));
        }
        let selection = select(dataset, &pool, &model, cfg, round, b)?;
        let selected_ids = selection.ids();
        pool.retain(|id| !selected_ids.contains(id));
        labeled.extend(&selected_ids);
        labeled.sort();

        let train_cfg = TrainConfig {
            seed: derive_seed(cfg.seed, TAG_TRAIN, round as u64, 0),
            ..cfg.train.clone()
        };
        model = train(&gather(dataset, &labeled), &val_pairs, &train_cfg, Some(&model))?;
        let stats = diversity_stats(&selected_ids, dataset);
        rounds.push(RoundLog {
            round,
            n_labeled: labeled.len(),
            dice_val: if val_ids.is_empty() {
                0.0
            } else {
                mean_dice(&model, dataset, &val_ids)?
            },
            dice_test: mean_dice(&model, dataset, &test_ids)?,
            selected: selection.chosen().to_vec(),
            blank_selected_fraction: stats.blank_selected_fraction,
            mean_target_pixels_selected: stats.mean_target_pixels_selected,
            seconds: start.elapsed().as_secs_f64(),
        });
    }

    let curve: Vec<(usize, f64)> = rounds.iter().map(|r| (r.n_labeled, r.dice_test)).collect();
    let highest_dice = curve.iter().map(|&(_, d)| d).fold(f64::MIN, f64::max);
    Ok(ExperimentResult {
        rounds,
        summary: CurveSummary {
            highest_dice,
            labels_to_baseline: None,
            curve,
        },
        warnings,
    })
}

/// Test Dice of a model trained on the initial set plus the entire pool with
/// ground-truth labels; the target active learning tries to reach.
pub fn supervised_baseline(dataset: &Dataset, train_cfg: &TrainConfig, seed: u64) -> Result<f64> {
    let mut labeled = dataset.ids_in(Split::InitialLabeled);
    labeled.extend(dataset.ids_in(Split::Pool));
    labeled.sort();
    if labeled.is_empty() {
        return Err(Error::InvalidConfig("no labeled data for the baseline".into()));
    }
    let test_ids = dataset.ids_in(Split::Test);
    if test_ids.is_empty() {
        return Err(Error::InvalidConfig("test split is empty".into()));
    }
    let val_pairs = gather(dataset, &dataset.ids_in(Split::Validation));
    let cfg = TrainConfig {
        seed: derive_seed(seed, TAG_TRAIN, 0, 0),
        ..train_cfg.clone()
    };
    let model = train(&gather(dataset, &labeled), &val_pairs, &cfg, None)?;
    mean_dice(&model, dataset, &test_ids)
}

/// Fixed round-log CSV column order.
pub const ROUND_LOG_HEADER: &str = "round,n_labeled,dice_val,dice_test,strategy,seed,blank_selected_fraction,mean_target_pixels_selected,seconds";

/// Renders round logs as CSV with the fixed column order.
pub fn round_logs_to_csv(rounds: &[RoundLog], strategy: StrategyKind, seed: u64) -> String {
    let mut out = String::from(ROUND_LOG_HEADER);
    out.push('\n');
    for r in rounds {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{strategy},{seed},{:.6},{:.3},{:.3}\n",
            r.round,
            r.n_labeled,
            r.dice_val,
            r.dice_test,
            r.blank_selected_fraction,
            r.mean_target_pixels_selected,
            r.seconds
        ));
    }
    out
}

/// One parsed round-log CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub n_labeled: usize,
    pub dice_val: f64,
    pub dice_test: f64,
    pub strategy: String,
    pub seed: u64,
    pub blank_selected_fraction: f64,
    pub mean_target_pixels_selected: f64,
    pub seconds: f64,
}

/// Parses a round-log CSV, naming the file and line of any malformed row.
pub fn parse_round_log_csv(path: &Path) -> Result<Vec<RoundRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, reason: String| Error::CsvParse {
        file: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == ROUND_LOG_HEADER => {}
        Some((_, header)) => {
            return Err(err(1, format!("unexpected header {header:?}")));
        }
        None => return Err(err(1, "empty file".to_string())),
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(err(i + 1, format!("expected 9 fields, got {}", fields.len())));
        }
        let num = |j: usize| -> Result<f64> {
            fields[j]
                .parse()
                .map_err(|_| err(i + 1, format!("field {} is not a number: {:?}", j + 1, fields[j])))
        };
        let int = |j: usize| -> Result<usize> {
            fields[j]
                .parse()
                .map_err(|_| err(i + 1, format!("field {} is not an integer: {:?}", j + 1, fields[j])))
        };
        records.push(RoundRecord {
            round: int(0)?,
            n_labeled: int(1)?,
            dice_val: num(2)?,
            dice_test: num(3)?,
            strategy: fields[4].to_string(),
            seed: fields[5]
                .parse()
                .map_err(|_| err(i + 1, format!("field 6 is not a seed: {:?}", fields[5])))?,
            blank_selected_fraction: num(6)?,
            mean_target_pixels_selected: num(7)?,
            seconds: num(8)?,
        });
    }
    Ok(records)
}

//! Strategy-comparison studies: the same dataset, splits and budgets run
//! under several query strategies and seeds, written out as round-log CSVs
//! plus a plain-text summary table.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::read_dataset;
use crate::domain::{Dataset, Split};
use crate::error::{Error, Result};
use crate::learner::TrainConfig;
use crate::selection::{BoundaryFilterConfig, StrategyKind, TargetFilterConfig};
use crate::simulator::{
    labels_to_baseline, round_logs_to_csv, run_experiment, supervised_baseline, ExperimentConfig,
    ExperimentResult,
};
use crate::synthdata::{generate_dataset, split_dataset, SynthConfig};

/// Where the study's dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// A dataset directory written by the data writer.
    Path(PathBuf),
    /// Generate on the fly from a generator config.
    Synthetic(SynthConfig),
}

/// Split sizes applied per study seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub initial: usize,
    pub validation: usize,
    pub test: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            initial: 100,
            validation: 100,
            test: 300,
        }
    }
}

/// One study: shared experiment settings plus the strategies and seeds to
/// compare under them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    pub dataset: DatasetSource,
    pub strategies: Vec<StrategyKind>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_mc_passes")]
    pub mc_passes: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    #[serde(default)]
    pub baseline_tolerance: f64,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_batch() -> usize {
    20
}
fn default_rounds() -> usize {
    15
}
fn default_mc_passes() -> usize {
    10
}
fn default_threshold() -> f64 {
    TargetFilterConfig::DEFAULT_THRESHOLD
}
fn default_half_width() -> f64 {
    BoundaryFilterConfig::DEFAULT_HALF_WIDTH
}

impl StudySpec {
    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::InvalidConfig("a study needs at least one strategy".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("a study needs at least one seed".into()));
        }
        TargetFilterConfig::new(self.threshold)?;
        BoundaryFilterConfig::new(BoundaryFilterConfig::DEFAULT_CENTER, self.half_width)?;
        self.train.validate()?;
        if let DatasetSource::Synthetic(cfg) = &self.dataset {
            cfg.validate()?;
        }
        Ok(())
    }

    fn experiment_config(&self, strategy: StrategyKind, seed: u64) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig {
            strategy,
            target_filter: TargetFilterConfig::new(self.threshold)?,
            boundary_filter: BoundaryFilterConfig::new(
                BoundaryFilterConfig::DEFAULT_CENTER,
                self.half_width,
            )?,
            batch_per_round: self.batch,
            n_rounds: self.rounds,
            mc_passes: self.mc_passes,
            train: self.train.clone(),
            seed,
        })
    }
}

/// One (strategy, seed) cell of a study.
#[derive(Debug, Clone)]
pub struct StudyCell {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub result: ExperimentResult,
    pub baseline: f64,
    pub labels_to_baseline: Option<usize>,
    pub csv_path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub cells: Vec<StudyCell>,
    pub summary_path: PathBuf,
}

fn seeded_dataset(base: &Dataset, spec: &StudySpec, seed: u64) -> Result<Dataset> {
    // A dataset loaded with pre-assigned splits is used as-is; otherwise
    // each study seed draws its own split assignment.
    let pre_split = base
        .samples()
        .iter()
        .any(|s| s.split != Split::Pool);
    if pre_split {
        Ok(base.clone())
    } else {
        split_dataset(
            base,
            spec.split.initial,
            spec.split.validation,
            spec.split.test,
            seed,
        )
    }
}

pub fn csv_file_name(strategy: StrategyKind, seed: u64) -> String {
    format!("{strategy}_seed{seed}.csv")
}

/// Runs every (strategy, seed) cell, writing one round-log CSV per cell and
/// a summary table. Cells of one seed share the dataset, splits and the
/// supervised baseline, so their curves are directly comparable.
pub fn run_study(spec: &StudySpec, out_dir: &Path) -> Result<StudyOutput> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let base = match &spec.dataset {
        DatasetSource::Path(p) => read_dataset(p)?.0,
        DatasetSource::Synthetic(cfg) => generate_dataset(cfg)?,
    };

    let mut cells = Vec::new();
    for &seed in &spec.seeds {
        let dataset = seeded_dataset(&base, spec, seed)?;
        let baseline = supervised_baseline(&dataset, &spec.train, seed)?;
        for &strategy in &spec.strategies {
            let cfg = spec.experiment_config(strategy, seed)?;
            let result = run_experiment(&dataset, &cfg)?;
            let ltb = labels_to_baseline(&result.summary.curve, baseline, spec.baseline_tolerance);
            let csv_path = out_dir.join(csv_file_name(strategy, seed));
            fs::write(&csv_path, round_logs_to_csv(&result.rounds, strategy, seed))
                .map_err(|e| Error::io(&csv_path, e))?;
            cells.push(StudyCell {
                strategy,
                seed,
                result,
                baseline,
                labels_to_baseline: ltb,
                csv_path,
            });
        }
    }

    let summary_path = out_dir.join("summary.txt");
    let summary = render_summary(spec, &cells);
    fs::write(&summary_path, summary).map_err(|e| Error::io(&summary_path, e))?;
    Ok(StudyOutput {
        cells,
        summary_path,
    })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Renders the study table: per strategy, mean test Dice at each labeling
/// budget, the mean highest Dice, and the mean labeled count needed to reach
/// the supervised baseline ("/" when any seed never reached it).
pub fn render_summary(spec: &StudySpec, cells: &[StudyCell]) -> String {
    let mut budgets: Vec<usize> = cells
        .iter()
        .flat_map(|c| c.result.summary.curve.iter().map(|&(n, _)| n))
        .collect();
    budgets.sort();
    budgets.dedup();

    let baselines: Vec<f64> = spec
        .seeds
        .iter()
        .filter_map(|&seed| {
            cells
                .iter()
                .find(|c| c.seed == seed)
                .map(|c| c.baseline)
        })
        .collect();

    let mut out = String::new();
    out.push_str("study summary\n");
    out.push_str(&format!(
        "seeds: {}\n",
        spec.seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    ));
    out.push_str(&format!(
        "supervised baseline dice (mean over seeds): {:.6}\n",
        mean(&baselines)
    ));
    out.push_str(&format!(
        "baseline tolerance: {:.6}\n\n",
        spec.baseline_tolerance
    ));

    let mut header = format!("{:<28}", "strategy");
    for &b in &budgets {
        header.push_str(&format!("{:>10}", b));
    }
    header.push_str(&format!("{:>14}{:>20}\n", "highest", "labels-to-baseline"));
    out.push_str(&header);

    for &strategy in &spec.strategies {
        let strategy_cells: Vec<&StudyCell> =
            cells.iter().filter(|c| c.strategy == strategy).collect();
        let mut row = format!("{:<28}", strategy.to_string());
        for &b in &budgets {
            let at: Vec<f64> = strategy_cells
                .iter()
                .filter_map(|c| {
                    c.result
                        .summary
                        .curve
                        .iter()
                        .find(|&&(n, _)| n == b)
                        .map(|&(_, d)| d)
                })
                .collect();
            if at.is_empty() {
                row.push_str(&format!("{:>10}", "-"));
            } else {
                row.push_str(&format!("{:>10.4}", mean(&at)));
            }
        }
        let highest: Vec<f64> = strategy_cells
            .iter()
            .map(|c| c.result.summary.highest_dice)
            .collect();
        row.push_str(&format!("{:>14.4}", mean(&highest)));
        if strategy_cells.iter().all(|c| c.labels_to_baseline.is_some()) {
            let ltb: Vec<f64> = strategy_cells
                .iter()
                .map(|c| c.labels_to_baseline.unwrap() as f64)
                .collect();
            row.push_str(&format!("{:>20.1}", mean(&ltb)));
        } else {
            row.push_str(&format!("{:>20}", "/"));
        }
        row.push('\n');
        out.push_str(&row);
    }
    out
}

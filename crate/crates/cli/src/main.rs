//! `alseg` — generate synthetic segmentation datasets, run active-learning
//! studies, score externally produced probability maps, and render reports.
//!
//! Every subcommand is deterministic given identical inputs and seeds, and
//! exits nonzero exactly when an error is reported.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use alseg_core::dataio::{read_config, read_probmaps, write_dataset, ProbMapContainer};
use alseg_core::domain::SampleId;
use alseg_core::report::write_report;
use alseg_core::selection::{
    random_query, rank_topk, score_pool, BoundaryFilterConfig, PoolScores, Provenance,
    SelectionResult, StrategyKind, TargetFilterConfig,
};
use alseg_core::study::{run_study, StudySpec};
use alseg_core::synthdata::{generate_dataset, SynthConfig};
use alseg_core::uncertainty::Prediction;

#[derive(Parser)]
#[command(
    name = "alseg",
    about = "Selective uncertainty-based active learning for binary segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory from a generator config.
    Generate {
        /// TOML generator config.
        #[arg(long)]
        config: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a strategy-comparison study: one round-log CSV per
    /// (strategy, seed) plus a summary table.
    Run {
        /// TOML study spec.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for CSVs and the summary.
        #[arg(long)]
        out: PathBuf,
        /// Replace the spec's seed list (repeatable).
        #[arg(long)]
        seed: Vec<u64>,
        /// Replace the spec's strategy list (repeatable).
        #[arg(long)]
        strategy: Vec<String>,
        /// Override the target-filter threshold.
        #[arg(long)]
        threshold: Option<f64>,
        /// Override the boundary-filter half width.
        #[arg(long)]
        half_width: Option<f64>,
        /// Override the per-round labeling batch.
        #[arg(long)]
        batch: Option<usize>,
        /// Override the number of rounds.
        #[arg(long)]
        rounds: Option<usize>,
        /// Override the number of MC-dropout passes.
        #[arg(long)]
        mc_passes: Option<usize>,
    },
    /// Rank the samples of a probability-map container under a strategy and
    /// write the ranking as CSV.
    Score {
        /// Probability-map container file.
        #[arg(long)]
        input: PathBuf,
        /// Strategy name (see `run` for the list).
        #[arg(long)]
        strategy: String,
        /// Query batch size b.
        #[arg(long)]
        batch: usize,
        /// Target-filter threshold.
        #[arg(long, default_value_t = TargetFilterConfig::DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Boundary-filter half width.
        #[arg(long, default_value_t = BoundaryFilterConfig::DEFAULT_HALF_WIDTH)]
        half_width: f64,
        /// Seed for the random strategy.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a learning-curve chart and comparison table from round-log CSVs.
    Report {
        /// Directory of round-log CSVs.
        #[arg(long)]
        input: PathBuf,
        /// Output directory for the chart and table.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate { config, out, seed } => cmd_generate(&config, &out, seed),
        Command::Run {
            config,
            out,
            seed,
            strategy,
            threshold,
            half_width,
            batch,
            rounds,
            mc_passes,
        } => cmd_run(
            &config, &out, &seed, &strategy, threshold, half_width, batch, rounds, mc_passes,
        ),
        Command::Score {
            input,
            strategy,
            batch,
            threshold,
            half_width,
            seed,
            out,
        } => cmd_score(&input, &strategy, batch, threshold, half_width, seed, &out),
        Command::Report { input, out } => cmd_report(&input, &out),
    }
}

fn cmd_generate(config: &PathBuf, out: &PathBuf, seed: Option<u64>) -> Result<()> {
    let mut cfg: SynthConfig = read_config(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let dataset = generate_dataset(&cfg)?;
    write_dataset(&dataset, out, Some(&cfg))?;
    let blanks = dataset
        .samples()
        .iter()
        .filter(|s| s.mask.foreground_count() == 0)
        .count();
    println!(
        "wrote {} samples ({}x{}, {} blank) to {}",
        dataset.len(),
        cfg.height,
        cfg.width,
        blanks,
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    config: &PathBuf,
    out: &PathBuf,
    seeds: &[u64],
    strategies: &[String],
    threshold: Option<f64>,
    half_width: Option<f64>,
    batch: Option<usize>,
    rounds: Option<usize>,
    mc_passes: Option<usize>,
) -> Result<()> {
    let mut spec: StudySpec = read_config(config)?;
    if !seeds.is_empty() {
        spec.seeds = seeds.to_vec();
    }
    if !strategies.is_empty() {
        spec.strategies = strategies
            .iter()
            .map(|s| s.parse::<StrategyKind>())
            .collect::<alseg_core::Result<Vec<_>>>()?;
    }
    if let Some(v) = threshold {
        spec.threshold = v;
    }
    if let Some(v) = half_width {
        spec.half_width = v;
    }
    if let Some(v) = batch {
        spec.batch = v;
    }
    if let Some(v) = rounds {
        spec.rounds = v;
    }
    if let Some(v) = mc_passes {
        spec.mc_passes = v;
    }
    let output = run_study(&spec, out)?;
    for cell in &output.cells {
        println!(
            "{} seed {}: highest dice {:.6}",
            cell.strategy, cell.seed, cell.result.summary.highest_dice
        );
    }
    println!("summary: {}", output.summary_path.display());
    Ok(())
}

/// Chosen-order rank and provenance per sample, for CSV rendering.
fn chosen_info(selection: &SelectionResult) -> BTreeMap<SampleId, (usize, Provenance)> {
    selection
        .chosen()
        .iter()
        .enumerate()
        .map(|(i, &(id, prov))| (id, (i + 1, prov)))
        .collect()
}

fn cmd_score(
    input: &PathBuf,
    strategy: &str,
    batch: usize,
    threshold: f64,
    half_width: f64,
    seed: u64,
    out: &PathBuf,
) -> Result<()> {
    let strategy: StrategyKind = strategy.parse()?;
    let container = read_probmaps(input)?;
    let csv = score_container(&container, strategy, batch, threshold, half_width, seed)?;
    fs::write(out, &csv).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote ranking for {} samples to {}", container.n_samples(), out.display());
    Ok(())
}

fn score_container(
    container: &ProbMapContainer,
    strategy: StrategyKind,
    batch: usize,
    threshold: f64,
    half_width: f64,
    seed: u64,
) -> Result<String> {
    let predictions: BTreeMap<SampleId, Prediction> = container
        .ids()
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, container.prediction(i)))
        .collect();
    let mut csv = String::new();
    match strategy {
        StrategyKind::Random => {
            let pool: Vec<SampleId> = predictions.keys().copied().collect();
            let info = chosen_info(&random_query(&pool, batch, seed)?);
            csv.push_str("id,rank,chosen,provenance\n");
            for id in pool {
                csv.push_str(&render_tail(&mut String::from(id.0.to_string()), info.get(&id)));
            }
        }
        StrategyKind::Conventional(_) => {
            let PoolScores::Conventional(scores) = score_pool(
                &predictions,
                strategy,
                &TargetFilterConfig::new(threshold)?,
                &BoundaryFilterConfig::new(BoundaryFilterConfig::DEFAULT_CENTER, half_width)?,
            )?
            else {
                unreachable!("conventional strategy yields a single ranking")
            };
            // The chosen set is the head of the full ranking, so rank by the
            // full ordering and flag the first `batch` entries.
            let full = rank_topk(&scores, scores.len());
            let ranks: BTreeMap<SampleId, usize> =
                full.iter().enumerate().map(|(i, &id)| (id, i + 1)).collect();
            csv.push_str("id,score,rank,chosen,provenance\n");
            for (id, score) in &scores {
                let rank = ranks[id];
                let chosen = rank <= batch.min(scores.len());
                let prov = if chosen {
                    Provenance::SingleStream.to_string()
                } else {
                    String::new()
                };
                csv.push_str(&format!(
                    "{},{:.6},{},{},{}\n",
                    id.0,
                    score,
                    rank,
                    chosen as u8,
                    prov
                ));
            }
        }
        StrategyKind::Selective(_) => {
            let PoolScores::Selective(scores) = score_pool(
                &predictions,
                strategy,
                &TargetFilterConfig::new(threshold)?,
                &BoundaryFilterConfig::new(BoundaryFilterConfig::DEFAULT_CENTER, half_width)?,
            )?
            else {
                unreachable!("selective strategy yields stream scores")
            };
            let info = chosen_info(&alseg_core::selection::selective_query(&scores, batch)?);
            csv.push_str("id,target_score,boundary_score,rank,chosen,provenance\n");
            for (id, s) in scores.iter() {
                let mut row = format!("{},{:.6},{:.6}", id.0, s.target, s.boundary);
                csv.push_str(&render_tail(&mut row, info.get(&id)));
            }
        }
    }
    Ok(csv)
}

/// Appends `rank,chosen,provenance` to a partially built row.
fn render_tail(row: &mut String, info: Option<&(usize, Provenance)>) -> String {
    match info {
        Some(&(rank, prov)) => format!("{row},{rank},1,{prov}\n"),
        None => format!("{row},,0,\n"),
    }
}

fn cmd_report(input: &PathBuf, out: &PathBuf) -> Result<()> {
    let (svg, table) = write_report(input, out)?;
    println!("wrote {} and {}", svg.display(), table.display());
    Ok(())
}

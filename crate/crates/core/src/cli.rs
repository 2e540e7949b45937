//! Command-line front end. Every subcommand reads an optional config file,
//! applies flag overrides, runs one driver and writes CSV tables plus a JSON
//! manifest under `--out`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use thiserror::Error;

use crate::data::{load_config, synth_corpus, ConfigError, Corpus, CorpusError, Split, SynthConfig, SynthError};
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, GeoRecon, ModelError};
use crate::objectives::LossWeights;
use crate::probes::{
    heatmap, lipschitz_report, ntk_check, write_heatmap_csv, write_lipschitz_csv, write_lipschitz_summary_csv,
    write_ntk_csv, HeatmapSpec, NtkConfig, PowerMethod, ProbeError,
};
use crate::rng::derive_seed;
use crate::score::{score_matching_check, ScoreCheckConfig, ScoreError};
use crate::train::{
    ablation_grid, finetune, linear_probe, pretrain, write_ablation_csv, write_loss_csv, write_mae_csv, write_probe_csv,
    AblationAxis, RunConfig, TrainError,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("i/o on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

#[derive(Debug, Parser)]
#[command(name = "georecon", version, about = "Graph-level reconstruction pretraining and smoothness probes for 3D molecules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// `key = value` run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (synth) or directory (everything else).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Source {
    /// XYZ corpus; defaults to the checkpoint's or config's dataset.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a relaxed synthetic corpus with energy and dipole labels.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 256)]
        molecules: usize,
        #[arg(long, default_value_t = 3)]
        min_atoms: usize,
        #[arg(long, default_value_t = 8)]
        max_atoms: usize,
    },
    /// Pretrain from scratch; writes loss.csv and final.ckpt.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Loss weights as `w_nsd,w_rec,w_cln`.
        #[arg(long, value_parser = parse_weights)]
        weights: Option<LossWeights>,
    },
    /// Finetune the property head and encoder; writes mae.csv.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Local Lipschitz constants of the pooled embedding; writes lipschitz.csv
    /// and lipschitz_summary.csv.
    ProbeLipschitz {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
        #[arg(long, value_delimiter = ',', default_values_t = [5, 15, 25])]
        steps: Vec<usize>,
        /// `train`, `val`, `test` or `all`.
        #[arg(long, default_value = "all")]
        split: String,
        /// Use the textbook power iteration instead of Lanczos.
        #[arg(long)]
        plain: bool,
    },
    /// Embedding change under displacements of one atom; writes heatmap.csv.
    ProbeHeatmap {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 0)]
        molecule: usize,
        #[arg(long, default_value_t = 0)]
        atom: usize,
        #[arg(long, default_value_t = 41)]
        resolution: usize,
        #[arg(long, default_value_t = 1.0)]
        range: f64,
    },
    /// Linear probe on frozen embeddings; writes probe.csv.
    ProbeLinear {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
    },
    /// Compares training with its linearization; writes ntk.csv.
    ProbeNtk {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 300)]
        steps: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        /// Number of training molecules in the batch.
        #[arg(long, default_value_t = 16)]
        batch: usize,
    },
    /// Checks that a trained denoiser recovers a mixture's analytic score.
    VerifyScore {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3000)]
        steps: usize,
    },
    /// Pretrain and finetune across a hyperparameter grid; writes ablation.csv.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// `lambda-depth`, `rec-weight` or `rec-only`.
        #[arg(long, default_value = "lambda-depth")]
        grid: String,
        #[arg(long)]
        steps: Option<usize>,
    },
}

fn parse_weights(text: &str) -> Result<LossWeights, String> {
    let parts: Vec<f64> = text.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    match parts[..] {
        [w_nsd, w_rec, w_cln] => LossWeights::new(w_nsd, w_rec, w_cln).map_err(|e| e.to_string()),
        _ => Err(format!("expected three comma-separated weights, got {}", parts.len())),
    }
}

/// Runs the command line and returns the process exit status: 0 on success,
/// 1 on usage errors, 2 when the run itself fails.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn base_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => {
            let loaded = load_config(path)?;
            loaded.warnings.iter().for_each(|w| log::warn!("{w}"));
            loaded.config
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_corpus(explicit: Option<&Path>, fallback: Option<&Path>) -> Result<(Corpus, PathBuf), CliError> {
    let path = explicit
        .or(fallback)
        .ok_or_else(|| CliError::Usage("no corpus: pass --corpus or set `dataset` in the config".into()))?;
    Ok((Corpus::load(path)?, path.to_path_buf()))
}

/// The checkpointed model, or a fresh one from the config when none is given.
fn load_model(source: &Source, cfg: &RunConfig) -> Result<(GeoRecon, Option<PathBuf>), CliError> {
    match &source.checkpoint {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            Ok((ckpt.model, ckpt.dataset.map(PathBuf::from)))
        }
        None => Ok((GeoRecon::new(cfg.encoder.clone(), cfg.decoder.clone(), derive_seed(cfg.seed, 0))?, None)),
    }
}

fn resolve(source: &Source, cfg: &RunConfig) -> Result<(GeoRecon, Corpus, PathBuf), CliError> {
    let (model, ckpt_dataset) = load_model(source, cfg)?;
    let fallback = ckpt_dataset.as_deref().or(cfg.dataset.as_deref());
    let (corpus, path) = load_corpus(source.corpus.as_deref(), fallback)?;
    Ok((model, corpus, path))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.display().to_string(), source })
}

fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, extra: Value) -> Result<(), CliError> {
    let manifest = json!({ "command": command, "config": cfg, "results": extra });
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest is plain data");
    std::fs::write(&path, text + "\n").map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn absolute(path: &Path) -> String {
    std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf()).display().to_string()
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth { common, molecules, min_atoms, max_atoms } => {
            let cfg = base_config(&common)?;
            let synth = SynthConfig { n_molecules: molecules, min_atoms, max_atoms, seed: cfg.seed, ..Default::default() };
            let corpus = synth_corpus(&synth)?;
            if let Some(dir) = common.out.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            corpus.save(&common.out)?;
            log::info!("wrote {} molecules to {}", corpus.len(), common.out.display());
        }
        Command::Pretrain { common, corpus, steps, lambda, weights } => {
            let mut cfg = base_config(&common)?;
            cfg.total_steps = steps.unwrap_or(cfg.total_steps);
            cfg.lambda = lambda.unwrap_or(cfg.lambda);
            cfg.weights = weights.unwrap_or(cfg.weights);
            let (data, path) = load_corpus(corpus.as_deref(), cfg.dataset.as_deref())?;
            cfg.dataset = Some(PathBuf::from(absolute(&path)));
            create_dir(&common.out)?;
            let run = pretrain(&cfg, &data)?;
            write_loss_csv(&common.out.join("loss.csv"), &run.log)?;
            let ckpt = Checkpoint { model: run.model, dataset: Some(absolute(&path)) };
            save_checkpoint(common.out.join("final.ckpt"), &ckpt)?;
            let last = run.log.last().map(|r| r.losses.total);
            write_manifest(&common.out, "pretrain", &cfg, json!({ "final_loss": last, "diverged_at": run.diverged_at }))?;
        }
        Command::Finetune { common, source, steps } => {
            let mut cfg = base_config(&common)?;
            cfg.finetune_steps = steps.unwrap_or(cfg.finetune_steps);
            let (model, data, _) = resolve(&source, &cfg)?;
            create_dir(&common.out)?;
            let run = finetune(&cfg, &model, &data)?;
            write_mae_csv(&common.out.join("mae.csv"), &run.log)?;
            write_manifest(&common.out, "finetune", &cfg, json!({ "final_mae": run.final_mae() }))?;
        }
        Command::ProbeLipschitz { common, source, steps, split, plain } => {
            let cfg = base_config(&common)?;
            let (model, data, _) = resolve(&source, &cfg)?;
            let molecules = match split.as_str() {
                "all" => data.molecules().to_vec(),
                name => {
                    let split: Split = name.parse().map_err(|_| CliError::Usage(format!("unknown split `{name}`")))?;
                    data.indices(split).into_iter().map(|i| data.molecule(i).clone()).collect()
                }
            };
            let method = if plain { PowerMethod::Plain } else { PowerMethod::Krylov };
            let report = lipschitz_report(&model, &molecules, &steps, cfg.seed, method)?;
            create_dir(&common.out)?;
            write_lipschitz_csv(&common.out.join("lipschitz.csv"), &report)?;
            write_lipschitz_summary_csv(&common.out.join("lipschitz_summary.csv"), &report)?;
            let summary: Vec<Value> =
                report.summary.iter().map(|s| json!({ "steps": s.steps, "median": s.median, "p95": s.p95 })).collect();
            write_manifest(&common.out, "probe-lipschitz", &cfg, json!({ "summary": summary, "skipped": report.skipped }))?;
        }
        Command::ProbeHeatmap { common, source, molecule, atom, resolution, range } => {
            let cfg = base_config(&common)?;
            let (model, data, _) = resolve(&source, &cfg)?;
            if molecule >= data.len() {
                return Err(CliError::Usage(format!("molecule {molecule} out of range for {} molecules", data.len())));
            }
            let spec = HeatmapSpec { resolution, range, ..HeatmapSpec::new(atom) };
            let grid = heatmap(&model, data.molecule(molecule), &spec)?;
            create_dir(&common.out)?;
            write_heatmap_csv(&common.out.join("heatmap.csv"), &grid)?;
            let max = grid.values.iter().copied().fold(0.0, f64::max);
            write_manifest(&common.out, "probe-heatmap", &cfg, json!({ "center": grid.center(), "max": max }))?;
        }
        Command::ProbeLinear { common, source } => {
            let cfg = base_config(&common)?;
            let (model, data, _) = resolve(&source, &cfg)?;
            let run = linear_probe(&cfg, &model, &data)?;
            create_dir(&common.out)?;
            write_probe_csv(&common.out.join("probe.csv"), &run.curve)?;
            write_manifest(&common.out, "probe-linear", &cfg, json!({ "final_mae": run.final_mae() }))?;
        }
        Command::ProbeNtk { common, source, steps, lr, batch } => {
            let cfg = base_config(&common)?;
            let (model, data, _) = resolve(&source, &cfg)?;
            let labels = data.require_label(&cfg.target)?;
            let picked: Vec<usize> = data.indices(Split::Train).into_iter().take(batch).collect();
            let mols: Vec<_> = picked.iter().map(|&i| data.molecule(i).clone()).collect();
            let targets: Vec<f64> = picked.iter().map(|&i| labels[i]).collect();
            let ntk = NtkConfig { steps, lr, ..NtkConfig::default() };
            let report = ntk_check(&model, &mols, &targets, &ntk)?;
            create_dir(&common.out)?;
            write_ntk_csv(&common.out.join("ntk.csv"), &report)?;
            let ranges: Vec<Value> = report
                .ranges
                .iter()
                .map(|r| json!({ "start": r.start, "end": r.end, "pred_cosine": r.pred_cosine, "grad_alignment": r.grad_alignment }))
                .collect();
            write_manifest(&common.out, "probe-ntk", &cfg, json!({ "ranges": ranges, "diverged_at": report.diverged_at }))?;
        }
        Command::VerifyScore { common, steps } => {
            let cfg = base_config(&common)?;
            let check = ScoreCheckConfig { steps, seed: cfg.seed, ..ScoreCheckConfig::default() };
            let report = score_matching_check(&check)?;
            create_dir(&common.out)?;
            let results = json!({
                "mean_cosine": report.mean_cosine,
                "min_cosine": report.min_cosine,
                "norm_ratio": report.norm_ratio,
                "final_loss": report.final_loss,
            });
            write_manifest(&common.out, "verify-score", &cfg, results)?;
            println!("mean cosine {:.4} (min {:.4})", report.mean_cosine, report.min_cosine);
        }
        Command::Ablate { common, corpus, grid, steps } => {
            let mut cfg = base_config(&common)?;
            cfg.total_steps = steps.unwrap_or(cfg.total_steps);
            let (data, _) = load_corpus(corpus.as_deref(), cfg.dataset.as_deref())?;
            let axes = match grid.as_str() {
                "lambda-depth" => vec![AblationAxis::Lambda(vec![1.0, 1.5]), AblationAxis::DecoderDepth(vec![3, 4, 5])],
                "rec-weight" => vec![AblationAxis::RecWeight(vec![0.40, 0.45, 0.50])],
                "rec-only" => vec![AblationAxis::CleanWeight(vec![cfg.weights.w_cln, 0.0])],
                other => return Err(CliError::Usage(format!("unknown grid `{other}`"))),
            };
            let rows = ablation_grid(&cfg, &data, &axes)?;
            create_dir(&common.out)?;
            write_ablation_csv(&common.out.join("ablation.csv"), &rows)?;
            write_manifest(&common.out, "ablate", &cfg, json!({ "grid": grid, "cells": rows.len() }))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_flag_parses_triples_only() {
        assert_eq!(parse_weights("1, 0.45,0.1").unwrap(), LossWeights::default());
        assert!(parse_weights("1,0").is_err());
        assert!(parse_weights("1,-1,0").is_err());
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(run(["georecon"]), 1);
        assert_eq!(run(["georecon", "frobnicate", "--out", "x"]), 1);
        assert_eq!(run(["georecon", "synth", "--out", "x", "--bogus"]), 1);
    }
}

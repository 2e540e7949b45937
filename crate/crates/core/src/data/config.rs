//! Line-based `key = value` run configuration.
//!
//! Keys from the reference training tables are accepted under their original
//! names. Keys that configure machinery this crate does not have (attention
//! heads, worker counts, EMA of labels, ...) parse and produce a warning, so a
//! table copied verbatim never fails and never silently drops a setting.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::objectives::LossWeights;
use crate::train::{Mode, RunConfig, TrainError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`{}", suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default())]
    UnknownKey { key: String, line: usize, suggestion: Option<String> },
    #[error("line {line}: `{key}` expects {expected}, found `{value}`")]
    InvalidValue { key: String, line: usize, expected: &'static str, value: String },
    #[error("line {line}: `{key}` already set on line {first}")]
    Duplicate { key: String, line: usize, first: usize },
    #[error(transparent)]
    Invalid(#[from] TrainError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub warnings: Vec<String>,
}

/// Accepted for compatibility; they have no counterpart here.
const IGNORED: &[(&str, &str)] = &[
    ("cutoff_lower", "neighbors always start at distance 0"),
    ("ema_alpha_dy", "label EMA is not implemented"),
    ("ema_alpha_y", "label EMA is not implemented"),
    ("energy_weight", "there is no force-matching finetune head"),
    ("force_weight", "there is no force-matching finetune head"),
    ("inference_batch_size", "evaluation is per molecule"),
    ("lr_patience", "the schedule is fixed, not plateau-driven"),
    ("max_num_neighbors", "the radius graph is not truncated"),
    ("num_heads", "the encoder uses gated message passing without attention heads"),
    ("num_nodes", "training is single-process"),
    ("num_workers", "parallelism is set through GEORECON_THREADS"),
    ("precision", "all arithmetic is f64"),
    ("save_interval", "only the final checkpoint is written"),
    ("test_interval", "evaluation follows the finetune epoch boundaries"),
];

const KNOWN: &[&str] = &[
    "avg_neighbors",
    "batch_size",
    "cutoff_upper",
    "dataset",
    "decoder_depth",
    "decoder_width",
    "denoising_weight",
    "embedding_dimension",
    "finetune_denoising",
    "finetune_steps",
    "lambda",
    "lr",
    "lr_cosine_length",
    "lr_min",
    "lr_schedule",
    "lr_warmup_steps",
    "max_z",
    "mode",
    "num_layers",
    "num_rbf",
    "position_noise_scale",
    "probe_epochs",
    "probe_lr",
    "seed",
    "target",
    "total_steps",
    "w_cln",
    "w_nsd",
    "w_rec",
    "weights",
];

struct Entry<'a> {
    line: usize,
    value: &'a str,
}

impl Entry<'_> {
    fn parse<T: FromStr>(&self, key: &str, expected: &'static str) -> Result<T, ConfigError> {
        self.value.parse().map_err(|_| ConfigError::InvalidValue {
            key: key.into(),
            line: self.line,
            expected,
            value: self.value.into(),
        })
    }

    fn invalid(&self, key: &str, expected: &'static str) -> ConfigError {
        ConfigError::InvalidValue { key: key.into(), line: self.line, expected, value: self.value.into() }
    }
}

fn suggest(key: &str) -> Option<String> {
    KNOWN
        .iter()
        .chain(IGNORED.iter().map(|(k, _)| k))
        .map(|k| (strsim::jaro_winkler(key, k), *k))
        .filter(|(score, _)| *score > 0.8)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k.to_string())
}

/// Parses configuration text. Absent keys keep [`RunConfig::default`].
pub fn parse_config(text: &str) -> Result<LoadedConfig, ConfigError> {
    let mut entries: HashMap<&str, Entry> = HashMap::new();
    let mut warnings = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim().trim_matches('"')))
            .filter(|(k, _)| !k.is_empty())
            .ok_or_else(|| ConfigError::Syntax { line, text: raw.trim().into() })?;
        if let Some((_, why)) = IGNORED.iter().find(|(k, _)| *k == key) {
            warnings.push(format!("line {line}: `{key}` is accepted but ignored: {why}"));
            continue;
        }
        if !KNOWN.contains(&key) {
            return Err(ConfigError::UnknownKey { key: key.into(), line, suggestion: suggest(key) });
        }
        if let Some(first) = entries.get(key) {
            return Err(ConfigError::Duplicate { key: key.into(), line, first: first.line });
        }
        entries.insert(key, Entry { line, value });
    }

    let mut cfg = RunConfig::default();
    let get = |key: &str| entries.get(key);
    macro_rules! set {
        ($key:literal, $expected:literal => $field:expr) => {
            if let Some(e) = get($key) {
                $field = e.parse($key, $expected)?;
            }
        };
    }
    set!("seed", "an unsigned integer" => cfg.seed);
    set!("batch_size", "a positive integer" => cfg.batch_size);
    set!("total_steps", "a positive integer" => cfg.total_steps);
    set!("finetune_steps", "an unsigned integer" => cfg.finetune_steps);
    set!("lambda", "a number" => cfg.lambda);
    set!("embedding_dimension", "a positive integer" => cfg.encoder.hidden_dim);
    set!("num_layers", "a positive integer" => cfg.encoder.num_layers);
    set!("num_rbf", "a positive integer" => cfg.encoder.num_rbf);
    set!("cutoff_upper", "a number" => cfg.encoder.cutoff);
    set!("max_z", "an unsigned integer" => cfg.encoder.max_z);
    set!("avg_neighbors", "a number" => cfg.encoder.avg_neighbors);
    set!("decoder_depth", "a positive integer" => cfg.decoder.depth);
    set!("decoder_width", "a positive integer" => cfg.decoder.width);
    set!("lr", "a number" => cfg.schedule.peak_lr);
    set!("lr_min", "a number" => cfg.schedule.lr_min);
    set!("lr_warmup_steps", "an unsigned integer" => cfg.schedule.warmup_steps);
    set!("lr_cosine_length", "a positive integer" => cfg.schedule.cosine_length);
    set!("target", "a label name" => cfg.target);
    set!("probe_epochs", "an unsigned integer" => cfg.probe_epochs);
    set!("probe_lr", "a number" => cfg.probe_lr);
    set!("finetune_denoising", "true or false" => cfg.finetune_denoising);
    set!("w_nsd", "a number" => cfg.weights.w_nsd);
    set!("w_rec", "a number" => cfg.weights.w_rec);
    set!("w_cln", "a number" => cfg.weights.w_cln);
    if let Some(e) = get("dataset") {
        cfg.dataset = Some(PathBuf::from(e.value));
    }
    if let Some(e) = get("lr_schedule") {
        // Both names denote the same warmup-then-cosine curve; the warmup
        // length comes from `lr_warmup_steps`.
        if !matches!(e.value, "cosine_warmup" | "cosine") {
            return Err(e.invalid("lr_schedule", "`cosine_warmup` or `cosine`"));
        }
    }
    if let Some(e) = get("mode") {
        cfg.mode = match e.value {
            "pretrain" => Mode::Pretrain,
            "finetune" => Mode::Finetune,
            "linear_probe" => Mode::LinearProbe,
            _ => return Err(e.invalid("mode", "`pretrain`, `finetune` or `linear_probe`")),
        };
    }
    if let Some(e) = get("weights") {
        let parts: Vec<f64> = e
            .value
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|_| e.invalid("weights", "three comma-separated numbers"))?;
        let [w_nsd, w_rec, w_cln] = parts[..] else {
            return Err(e.invalid("weights", "three comma-separated numbers"));
        };
        cfg.weights = LossWeights { w_nsd, w_rec, w_cln };
    }

    // Noise scale and denoising weight mean different things per mode: in
    // pretraining they set σ and the denoising loss weight; when finetuning
    // they configure the auxiliary denoising term, where 0 switches it off.
    let noise: Option<f64> = get("position_noise_scale").map(|e| e.parse("position_noise_scale", "a number")).transpose()?;
    let weight: Option<f64> = get("denoising_weight").map(|e| e.parse("denoising_weight", "a number")).transpose()?;
    match cfg.mode {
        Mode::Pretrain => {
            if let Some(s) = noise {
                cfg.sigma = s;
            }
            if let Some(w) = weight {
                cfg.weights.w_nsd = w;
            }
        }
        Mode::Finetune | Mode::LinearProbe => {
            if let Some(w) = weight {
                cfg.denoising_weight = w;
                cfg.finetune_denoising |= w > 0.0 && get("finetune_denoising").is_none();
            }
            match noise {
                Some(s) if s > 0.0 => cfg.sigma = s,
                Some(_) => {
                    if cfg.finetune_denoising {
                        warnings.push("position_noise_scale = 0 disables auxiliary denoising".into());
                    }
                    cfg.finetune_denoising = false;
                }
                None => {}
            }
        }
    }
    cfg.validate()?;
    Ok(LoadedConfig { config: cfg, warnings })
}

pub fn load_config(path: impl AsRef<Path>) -> Result<LoadedConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_keys_map_onto_fields() {
        let text = "position_noise_scale = 0.04\nlr = 0.0004\nlr_min = 1e-7\nembedding_dimension = 32\n\
                    cutoff_upper = 5\nlr_schedule = cosine\nlr_warmup_steps = 100\nlr_cosine_length = 2000\n";
        let cfg = parse_config(text).unwrap().config;
        assert_eq!(cfg.sigma, 0.04);
        assert_eq!(cfg.schedule.peak_lr, 4e-4);
        assert_eq!(cfg.schedule.lr_min, 1e-7);
        assert_eq!(cfg.encoder.hidden_dim, 32);
        assert_eq!(cfg.encoder.cutoff, 5.0);
    }

    #[test]
    fn unsupported_keys_warn() {
        let loaded = parse_config("num_heads = 8\n# comment\n\nprecision = 32").unwrap();
        assert_eq!(loaded.config, RunConfig::default());
        assert_eq!(loaded.warnings.len(), 2);
        assert!(loaded.warnings[0].contains("num_heads"));
    }

    #[test]
    fn unknown_key_gets_a_suggestion() {
        let err = parse_config("seed = 1\nnum_layer = 3").unwrap_err();
        assert!(matches!(&err, ConfigError::UnknownKey { line: 2, suggestion: Some(s), .. } if s == "num_layers"), "{err}");
    }

    #[test]
    fn type_errors_carry_key_and_line() {
        let err = parse_config("\nbatch_size = eight").unwrap_err();
        assert_eq!(err.to_string(), "line 2: `batch_size` expects a positive integer, found `eight`");
        assert!(matches!(parse_config("lr_schedule = step"), Err(ConfigError::InvalidValue { .. })));
        assert!(matches!(parse_config("just text"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(parse_config("seed = 1\nseed = 2"), Err(ConfigError::Duplicate { first: 1, line: 2, .. })));
        assert!(matches!(parse_config("batch_size = 0"), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn denoising_keys_depend_on_mode() {
        let pre = parse_config("denoising_weight = 1\nweights = 1, 0.45, 0.1").unwrap().config;
        assert_eq!(pre.weights, LossWeights::default());
        let fine = parse_config("mode = finetune\nposition_noise_scale = 0.005\ndenoising_weight = 0.1").unwrap().config;
        assert!(fine.finetune_denoising);
        assert_eq!((fine.sigma, fine.denoising_weight), (0.005, 0.1));
        let off = parse_config("mode = finetune\nposition_noise_scale = 0\ndenoising_weight = 0.1").unwrap();
        assert!(!off.config.finetune_denoising);
        assert_eq!(off.config.sigma, RunConfig::default().sigma);
    }
}

//! `key = value` run configuration.
//!
//! One assignment per line; `#` starts a comment; string values may be
//! double-quoted. Unknown and repeated keys are errors. A relative `dataset`
//! path is resolved against the config file's directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mhyper::model::Ablation;
use mhyper::train::{Precision, TrainConfig};

use crate::CliError;

/// Every accepted key with a one-line description, in snapshot order.
pub const KEYS: &[(&str, &str)] = &[
    ("dataset", "dataset directory (train.tsv, valid.tsv, test.tsv, visual.mhft, textual.mhft)"),
    ("alpha", "Adagrad learning rate, > 0"),
    ("d", "complex dimension per block, >= 1"),
    ("lambda", "N3 regularization weight, >= 0"),
    ("beta", "fraction of batch entities that receive noise, in [0, 1]"),
    ("batch_size", "training triples per batch, >= 1"),
    ("epochs", "number of epochs, >= 0"),
    ("eval_every", "validation interval in epochs, >= 1"),
    ("seed", "master seed for every random stream"),
    ("precision", "f32 or f64"),
    ("weight_triple", "weight of the 1-vs-all triple loss"),
    ("weight_recon", "weight of the cross-modal reconstruction loss"),
    ("weight_distill", "weight of the self-distillation loss"),
    ("weight_reg", "weight of the N3 term"),
    ("ablation", "none, no-joint, no-struct, no-vision, no-text, no-ferf, no-noise, no-gate, no-translation or no-rotation"),
    ("patience", "evaluations without improvement before stopping, or none"),
    ("grad_cap", "global gradient-norm cap, or none"),
    ("pca_init", "PCA-initialize the visual and textual task embeddings (true/false)"),
    ("threads", "worker threads; 1 keeps runs bit-reproducible"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub dataset: Option<PathBuf>,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            dataset: None,
            threads: 1,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("`{key}` expects a number, got `{v}`"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("`{key}` expects true or false, got `{v}`")),
    }
}

fn parse_opt<T: FromStr>(key: &str, v: &str) -> Result<Option<T>, String> {
    if v == "none" {
        Ok(None)
    } else {
        parse_num(key, v).map(Some)
    }
}

fn unquote(v: &str) -> Result<&str, String> {
    match v.strip_prefix('"') {
        Some(rest) => rest
            .strip_suffix('"')
            .ok_or_else(|| format!("unterminated string {v}")),
        None => Ok(v),
    }
}

impl RunConfig {
    /// Applies one assignment.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), String> {
        let t = &mut self.train;
        let v = unquote(value)?;
        match key {
            "dataset" => self.dataset = Some(base.join(v)),
            "alpha" => t.alpha = parse_num(key, v)?,
            "d" => t.d = parse_num(key, v)?,
            "lambda" => t.lambda = parse_num(key, v)?,
            "beta" => t.beta = parse_num(key, v)?,
            "batch_size" => t.batch_size = parse_num(key, v)?,
            "epochs" => t.epochs = parse_num(key, v)?,
            "eval_every" => t.eval_every = parse_num(key, v)?,
            "seed" => t.seed = parse_num(key, v)?,
            "precision" => t.precision = Precision::from_str(v).map_err(|e| e.to_string())?,
            "weight_triple" => t.weights.triple = parse_num(key, v)?,
            "weight_recon" => t.weights.recon = parse_num(key, v)?,
            "weight_distill" => t.weights.distill = parse_num(key, v)?,
            "weight_reg" => t.weights.reg = parse_num(key, v)?,
            "ablation" => t.ablation = Ablation::from_str(v).map_err(|e| e.to_string())?,
            "patience" => t.patience = parse_opt(key, v)?,
            "grad_cap" => t.grad_cap = parse_opt(key, v)?,
            "pca_init" => t.pca_init = parse_bool(key, v)?,
            "threads" => self.threads = parse_num(key, v)?,
            _ => {
                let known: Vec<&str> = KEYS.iter().map(|(k, _)| *k).collect();
                return Err(format!("unknown key `{key}` (known keys: {})", known.join(", ")));
            }
        }
        Ok(())
    }

    /// Parses config text; `base` anchors relative paths.
    pub fn parse(text: &str, base: &Path, origin: &Path) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let at = |msg: String| CliError::Usage(format!("{}:{}: {msg}", origin.display(), i + 1));
            let line = match raw.find('#') {
                Some(p) if !raw[..p].contains('"') => &raw[..p],
                _ => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(at(format!("key `{key}` set twice")));
            }
            cfg.set(key, value, base).map_err(at)?;
            seen.push(key.to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, path)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.threads == 0 {
            return Err(CliError::Usage("threads must be >= 1".into()));
        }
        self.train.validate().map_err(CliError::from)
    }

    /// Every key in canonical order; parsing the result gives back `self`.
    pub fn snapshot(&self) -> String {
        let t = &self.train;
        let opt = |x: Option<String>| x.unwrap_or_else(|| "none".into());
        let mut s = String::new();
        for (key, _) in KEYS {
            let value = match *key {
                "dataset" => match &self.dataset {
                    Some(p) => format!("\"{}\"", p.display()),
                    None => continue,
                },
                "alpha" => t.alpha.to_string(),
                "d" => t.d.to_string(),
                "lambda" => t.lambda.to_string(),
                "beta" => t.beta.to_string(),
                "batch_size" => t.batch_size.to_string(),
                "epochs" => t.epochs.to_string(),
                "eval_every" => t.eval_every.to_string(),
                "seed" => t.seed.to_string(),
                "precision" => match t.precision {
                    Precision::F32 => "f32".into(),
                    Precision::F64 => "f64".into(),
                },
                "weight_triple" => t.weights.triple.to_string(),
                "weight_recon" => t.weights.recon.to_string(),
                "weight_distill" => t.weights.distill.to_string(),
                "weight_reg" => t.weights.reg.to_string(),
                "ablation" => t.ablation.name().into(),
                "patience" => opt(t.patience.map(|p| p.to_string())),
                "grad_cap" => opt(t.grad_cap.map(|c| c.to_string())),
                "pca_init" => t.pca_init.to_string(),
                "threads" => self.threads.to_string(),
                _ => unreachable!("snapshot misses key {key}"),
            };
            let _ = writeln!(s, "{key} = {value}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, CliError> {
        RunConfig::parse(text, Path::new("/base"), Path::new("test.conf"))
    }

    #[test]
    fn defaults_and_overrides() {
        let c = parse("# comment\n\nd = 16\nbatch_size = 32 # trailing\ndataset = \"toy\"\npca_init = false\n").unwrap();
        assert_eq!(c.train.d, 16);
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.train.alpha, 0.1);
        assert!(!c.train.pca_init);
        assert_eq!(c.dataset, Some(PathBuf::from("/base/toy")));
    }

    #[test]
    fn unknown_key_is_a_usage_error() {
        let e = parse("learning_rate = 0.1\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("test.conf:1"), "{e}");
        assert!(e.to_string().contains("learning_rate"), "{e}");
    }

    #[test]
    fn bad_values_are_rejected() {
        for text in ["d = sixteen", "beta = 1.5", "alpha = 0", "pca_init = yes", "d = 1\nd = 2", "no equals"] {
            assert_eq!(parse(text).unwrap_err().exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn snapshot_round_trips() {
        let c = parse("d = 16\npatience = 20\ngrad_cap = 5\nablation = no-gate\nprecision = f64\ndataset = x\n").unwrap();
        let again = RunConfig::parse(&c.snapshot(), Path::new("/elsewhere"), Path::new("snap")).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn every_key_is_accepted() {
        let c = RunConfig::default();
        for (key, _) in KEYS {
            let mut probe = c.clone();
            let value = match *key {
                "precision" => "f32",
                "ablation" => "none",
                "pca_init" => "true",
                "dataset" => "x",
                _ => "1",
            };
            probe.set(key, value, Path::new(".")).unwrap();
        }
    }
}

//! Config file handling and flag/file/default precedence.
//!
//! Every knob resolves as: explicit flag > config-file value > built-in
//! default. The resolved values actually used by a run are echoed to
//! `effective-config.toml` in the output directory.

use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde::Deserialize;

/// Optional values loaded from the TOML config file. Unknown keys are
/// rejected so typos fail loudly.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub shared: SharedSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub sweep: SweepSection,
    pub icp: IcpSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SharedSection {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub k: Option<usize>,
    pub estimator: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub alphas: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub feature_dim: Option<usize>,
    pub heads: Option<usize>,
    pub mlp_widths: Option<[usize; 3]>,
    pub ffn_hidden: Option<usize>,
    pub fc_widths: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub lr_decay_factor: Option<f64>,
    pub lr_decay_epochs: Option<Vec<usize>>,
    pub freeze_temperature: Option<bool>,
    pub shapes_per_kind: Option<usize>,
    pub points_per_shape: Option<usize>,
    pub patches_per_shape: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub ks: Option<Vec<usize>>,
    pub estimators: Option<Vec<String>>,
    pub samples_per_cloud: Option<usize>,
    pub shape_count: Option<usize>,
    pub points_per_shape: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpSection {
    pub stop_threshold: Option<f64>,
    pub max_iterations: Option<usize>,
    pub lm_damping_init: Option<f64>,
    pub lm_damping_up: Option<f64>,
    pub lm_damping_down: Option<f64>,
    pub lm_max_inner: Option<usize>,
    pub lm_max_retries: Option<usize>,
    pub lm_step_tol: Option<f64>,
    pub rot_deg: Option<[f64; 3]>,
    pub trans: Option<[f64; 3]>,
    pub normal_source: Option<String>,
    pub shape_count: Option<usize>,
    pub points_per_shape: Option<usize>,
}

/// Resolved run context shared by every subcommand.
pub struct Context {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub file: FileConfig,
}

impl Context {
    pub fn resolve(
        seed_flag: Option<u64>,
        out_dir_flag: Option<PathBuf>,
        config_path: Option<&Path>,
    ) -> anyhow::Result<Self> {
        let file = match config_path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config file {}", path.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing config file {}", path.display()))?
            }
            None => FileConfig::default(),
        };
        let seed = seed_flag.or(file.shared.seed).unwrap_or(0);
        let out_dir = out_dir_flag
            .or_else(|| file.shared.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&out_dir)
            .with_context(|| format!("creating output directory {}", out_dir.display()))?;
        Ok(Context {
            seed,
            out_dir,
            file,
        })
    }

    /// Writes the resolved settings for this run next to its outputs.
    pub fn echo_effective(&self, command: &str, settings: &[(&str, toml::Value)]) -> anyhow::Result<()> {
        let mut table = toml::value::Table::new();
        table.insert("command".into(), toml::Value::String(command.into()));
        table.insert("seed".into(), toml::Value::Integer(self.seed as i64));
        table.insert(
            "out_dir".into(),
            toml::Value::String(self.out_dir.display().to_string()),
        );
        for (key, value) in settings {
            table.insert((*key).into(), value.clone());
        }
        let path = self.out_dir.join("effective-config.toml");
        let text = toml::to_string_pretty(&toml::Value::Table(table))
            .context("serializing effective config")?;
        std::fs::write(&path, text)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

/// flag > config file > default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// flag > config file, no default (caller handles absence).
pub fn pick_opt<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

pub fn toml_f64_list(values: &[f64]) -> toml::Value {
    toml::Value::Array(values.iter().map(|&v| toml::Value::Float(v)).collect())
}

pub fn toml_usize_list(values: &[usize]) -> toml::Value {
    toml::Value::Array(
        values
            .iter()
            .map(|&v| toml::Value::Integer(v as i64))
            .collect(),
    )
}

pub fn toml_str(s: impl AsRef<str>) -> toml::Value {
    toml::Value::String(s.as_ref().to_string())
}

pub fn toml_int(v: usize) -> toml::Value {
    toml::Value::Integer(v as i64)
}

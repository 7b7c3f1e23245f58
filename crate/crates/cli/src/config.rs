//! Optional TOML configuration. Every table and key is optional; command-line
//! flags win over the file, and built-in defaults fill whatever is left. The
//! resolved values are written back in the same format, so a resolved file
//! can be passed to `--config` to repeat a run.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ddm_core::{Dimension, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// Provenance only; ignored when read back.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<toml::Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluate: Option<EvaluateSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub dataset: Option<String>,
    pub n: Option<usize>,
    pub n_a: Option<usize>,
    pub seed: Option<u64>,
    pub label_column: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub q: Option<f64>,
    pub sigma: Option<f64>,
    pub alpha: Option<f64>,
    pub t: Option<u32>,
    pub d: Option<DimSetting>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub hidden: Option<Vec<usize>>,
    pub output_dim: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub validation_fraction: Option<f64>,
    pub seed: Option<u64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_epsilon: Option<f64>,
    pub loss_scale: Option<f64>,
    pub standardize_inputs: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub confidence: Option<f64>,
    pub resamples: Option<usize>,
    pub seed: Option<u64>,
    pub exclude_zero: Option<bool>,
}

/// `d = 2` or `d = "auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "toml::Value", into = "toml::Value")]
pub struct DimSetting(pub Dimension);

impl TryFrom<toml::Value> for DimSetting {
    type Error = String;

    fn try_from(v: toml::Value) -> Result<Self, String> {
        match v {
            toml::Value::Integer(d) if d >= 1 => Ok(DimSetting(Dimension::Fixed(d as usize))),
            toml::Value::String(s) => s.parse(),
            other => Err(format!("d must be a positive integer or \"auto\", got {other}")),
        }
    }
}

impl From<DimSetting> for toml::Value {
    fn from(d: DimSetting) -> Self {
        match d.0 {
            Dimension::Auto => toml::Value::String("auto".into()),
            Dimension::Fixed(d) => toml::Value::Integer(d as i64),
        }
    }
}

impl FromStr for DimSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(DimSetting(Dimension::Auto));
        }
        match s.parse::<usize>() {
            Ok(d) if d >= 1 => Ok(DimSetting(Dimension::Fixed(d))),
            _ => Err(format!("d must be a positive integer or `auto`, got `{s}`")),
        }
    }
}

impl fmt::Display for DimSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Dimension::Auto => f.write_str("auto"),
            Dimension::Fixed(d) => write!(f, "{d}"),
        }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = toml::to_string(self).map_err(|e| CliError::usage(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }
}

/// Keeps `current` unless the flag was given.
pub fn pick<T>(flag: Option<T>, current: Option<T>) -> Option<T> {
    flag.or(current)
}

impl KernelSection {
    /// Bandwidth flags replace the file's bandwidth as a unit, so `--sigma`
    /// beats `q` from the file and the other way round.
    pub fn merge_bandwidth(&mut self, q: Option<f64>, sigma: Option<f64>) -> Result<(), CliError> {
        if q.is_some() && sigma.is_some() {
            return Err(CliError::usage("give either --q or --sigma, not both"));
        }
        if q.is_some() || sigma.is_some() {
            self.q = q;
            self.sigma = sigma;
        } else if self.q.is_some() && self.sigma.is_some() {
            return Err(CliError::usage("config sets both kernel.q and kernel.sigma"));
        }
        Ok(())
    }
}

impl TrainSection {
    /// Fills every unset field from `base`.
    pub fn resolve(&mut self, base: &TrainConfig) -> TrainConfig {
        let d = base.clone();
        let c = TrainConfig {
            hidden: self.hidden.clone().unwrap_or(d.hidden),
            output_dim: self.output_dim.unwrap_or(d.output_dim),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            validation_fraction: self.validation_fraction.unwrap_or(d.validation_fraction),
            seed: self.seed.unwrap_or(d.seed),
            adam_beta1: self.adam_beta1.unwrap_or(d.adam_beta1),
            adam_beta2: self.adam_beta2.unwrap_or(d.adam_beta2),
            adam_epsilon: self.adam_epsilon.unwrap_or(d.adam_epsilon),
            loss_scale: self.loss_scale.or(d.loss_scale),
            standardize_inputs: self.standardize_inputs.unwrap_or(d.standardize_inputs),
        };
        *self = TrainSection::from(&c);
        c
    }
}

impl From<&TrainConfig> for TrainSection {
    fn from(c: &TrainConfig) -> Self {
        Self {
            hidden: Some(c.hidden.clone()),
            output_dim: Some(c.output_dim),
            learning_rate: Some(c.learning_rate),
            batch_size: Some(c.batch_size),
            epochs: Some(c.epochs),
            validation_fraction: Some(c.validation_fraction),
            seed: Some(c.seed),
            adam_beta1: Some(c.adam_beta1),
            adam_beta2: Some(c.adam_beta2),
            adam_epsilon: Some(c.adam_epsilon),
            loss_scale: c.loss_scale,
            standardize_inputs: Some(c.standardize_inputs),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_accepts_integer_or_auto() {
        let k: KernelSection = toml::from_str("d = \"auto\"").unwrap();
        assert_eq!(k.d, Some(DimSetting(Dimension::Auto)));
        let k: KernelSection = toml::from_str("d = 3").unwrap();
        assert_eq!(k.d, Some(DimSetting(Dimension::Fixed(3))));
        assert!(toml::from_str::<KernelSection>("d = 0").is_err());
        assert!(toml::from_str::<KernelSection>("d = \"two\"").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[kernel]\nbandwidth = 1.0").is_err());
        assert!(toml::from_str::<FileConfig>("[optimizer]\nlr = 1.0").is_err());
    }

    #[test]
    fn resolved_file_reads_back() {
        let mut train = TrainSection {
            epochs: Some(7),
            ..Default::default()
        };
        let resolved = train.resolve(&TrainConfig::default());
        assert_eq!(resolved.epochs, 7);
        assert_eq!(resolved.hidden, TrainConfig::default().hidden);
        let cfg = FileConfig {
            train: Some(train),
            kernel: Some(KernelSection {
                q: Some(5e-3),
                alpha: Some(1.0),
                t: Some(100),
                d: Some(DimSetting(Dimension::Auto)),
                ..Default::default()
            }),
            ..Default::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<FileConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn bandwidth_flags_replace_the_file_pair() {
        let mut k = KernelSection {
            q: Some(0.1),
            ..Default::default()
        };
        k.merge_bandwidth(None, Some(2.0)).unwrap();
        assert_eq!((k.q, k.sigma), (None, Some(2.0)));
        assert!(k.merge_bandwidth(Some(0.1), Some(2.0)).is_err());
    }
}

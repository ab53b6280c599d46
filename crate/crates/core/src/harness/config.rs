use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::gan::TrainConfig;

/// Where the images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSpec {
    /// An `id,path,label` manifest.
    Manifest(PathBuf),
    /// A synthetic corpus rendered under `<output_dir>/corpus`.
    Synthetic { count: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "sclld")]
    Sclld,
    #[serde(rename = "gan-only")]
    GanOnly,
    #[serde(rename = "cnn")]
    Cnn,
    #[serde(rename = "gp")]
    Gp,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Sclld, Method::GanOnly, Method::Cnn, Method::Gp];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sclld => "sclld",
            Method::GanOnly => "gan-only",
            Method::Cnn => "cnn",
            Method::Gp => "gp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown method {s:?}; expected sclld, gan-only, cnn or gp")))
    }
}

/// One experiment, as a JSON document with exactly these keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusSpec,
    pub labelled_fraction: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub finetune_epochs_max: usize,
    pub early_stop_patience: usize,
    pub sobel: bool,
    pub method: Method,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            corpus: CorpusSpec::Synthetic { count: 2500, seed: 0 },
            labelled_fraction: 0.10,
            iterations: t.iterations,
            batch_size: t.batch_size,
            lr_g: t.lr_g,
            lr_d: t.lr_d,
            beta1: t.beta1,
            beta2: t.beta2,
            finetune_epochs_max: t.finetune_epochs_max,
            early_stop_patience: t.early_stop_patience,
            sobel: true,
            method: Method::Sclld,
            output_dir: PathBuf::from("runs/default"),
            seed: t.seed,
        }
    }
}

impl ExperimentConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            batch_size: self.batch_size,
            lr_g: self.lr_g,
            lr_d: self.lr_d,
            beta1: self.beta1,
            beta2: self.beta2,
            seed: self.seed,
            finetune_epochs_max: self.finetune_epochs_max,
            early_stop_patience: self.early_stop_patience,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.labelled_fraction > 0.0 && self.labelled_fraction <= 1.0) {
            return Err(HarnessError::Config(format!(
                "labelled_fraction must lie in (0, 1], got {}",
                self.labelled_fraction
            )));
        }
        if let CorpusSpec::Synthetic { count, .. } = self.corpus {
            if count == 0 || count % 2 != 0 {
                return Err(HarnessError::Config(format!("synthetic count must be even and positive, got {count}")));
            }
        }
        self.train_config().validate()?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_roundtrip_and_strict_keys() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
        let mut v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
        v["foo"] = 1.into();
        let err = ExperimentConfig::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("foo"), "{err}");
        let mut v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
        v.as_object_mut().unwrap().remove("seed");
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn defaults_follow_the_reference_settings() {
        let c = ExperimentConfig::default();
        assert_eq!((c.batch_size, c.iterations, c.lr_g, c.lr_d), (32, 4000, 1e-3, 1e-3));
        assert_eq!((c.beta1, c.beta2), (0.9, 0.999));
        assert!(c.sobel);
        assert_eq!("gan-only".parse::<Method>().unwrap(), Method::GanOnly);
        assert!("svm".parse::<Method>().is_err());
    }

    #[test]
    fn json_shape() {
        let c = ExperimentConfig {
            corpus: CorpusSpec::Manifest("data/m.csv".into()),
            ..ExperimentConfig::default()
        };
        let v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(v["corpus"]["manifest"], "data/m.csv");
        assert_eq!(v["method"], "sclld");
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys.len(), 14);
    }
}

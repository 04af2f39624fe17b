//! Run configuration: a TOML file supplies defaults, command-line flags
//! override them.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub workdir: Option<PathBuf>,
    #[serde(default)]
    pub gen_data: GenDataSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub tighten: TightenSection,
    #[serde(default)]
    pub verify: VerifySection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataSection {
    pub grid: Option<String>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub hidden: Option<Vec<usize>>,
    pub lr: Option<f64>,
    pub patience: Option<usize>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub objective: Option<String>,
    pub starts: Option<usize>,
    pub lambda: Option<f64>,
    pub iters: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TightenSection {
    pub method: Option<String>,
    pub budget_sec: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub target: Option<String>,
    pub line: Option<usize>,
    pub bounds: Option<PathBuf>,
    pub warm: Option<PathBuf>,
    pub time_limit: Option<f64>,
    pub gap: Option<f64>,
    pub max_nodes: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Artifact locations inside the working directory.
#[derive(Debug, Clone)]
pub struct Workdir(pub PathBuf);

impl Workdir {
    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    pub fn grid(&self) -> PathBuf {
        self.path("grid.json")
    }

    pub fn dataset(&self) -> PathBuf {
        self.path("dataset.jsonl")
    }

    pub fn model(&self) -> PathBuf {
        self.path("model.json")
    }

    pub fn train_report(&self) -> PathBuf {
        self.path("train-report.json")
    }

    pub fn attack(&self, objective: &str) -> PathBuf {
        self.path(&format!("attack-{objective}.json"))
    }

    pub fn bounds(&self, method: &str) -> PathBuf {
        self.path(&format!("bounds-{method}.json"))
    }

    pub fn verify(&self, target: &str, bounds: &str) -> PathBuf {
        self.path(&format!("verify-{target}-{bounds}.json"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_parse() {
        let c: FileConfig = toml::from_str(
            r#"
            seed = 7
            [train]
            hidden = [8, 8]
            lr = 0.01
            [verify]
            target = "all-lines"
            gap = 1e-5
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.train.hidden, Some(vec![8, 8]));
        assert_eq!(c.verify.target.as_deref(), Some("all-lines"));
        assert_eq!(c.attack.starts, None);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<FileConfig>("[train]\nlearning = 1").is_err());
    }

    #[test]
    fn missing_file_is_default() {
        assert!(FileConfig::load(None).unwrap().seed.is_none());
    }
}

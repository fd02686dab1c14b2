//! Effective settings per subcommand: command-line flag, then the `--config`
//! TOML file, then the built-in default.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodeSettings {
    pub conf: f64,
    pub iou: f64,
    pub kpt_conf: f64,
    pub max_det: usize,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        DecodeSettings {
            conf: 0.25,
            iou: 0.65,
            kpt_conf: 0.5,
            max_det: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSettings {
    pub area_range: String,
    pub max_det: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            area_range: "all".into(),
            max_det: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSettings {
    pub seed: u64,
    pub images: usize,
    pub min_persons: usize,
    pub max_persons: usize,
    pub min_height: f64,
    pub max_height: f64,
    pub image_size: u32,
    pub occlusion: f64,
    pub out_of_view: f64,
    pub outside_box: f64,
    /// Also write ideal head tensors and their manifest.
    pub heads: bool,
    pub saturation: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            seed: 0,
            images: 10,
            min_persons: 1,
            max_persons: 4,
            min_height: 64.0,
            max_height: 160.0,
            image_size: 320,
            occlusion: 0.1,
            out_of_view: 0.05,
            outside_box: 0.0,
            heads: true,
            saturation: 8.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSettings {
    pub loss: String,
    pub steps: usize,
    pub lr: f64,
    pub schedule: String,
    /// `jitter` or `prior`.
    pub init: String,
    pub jitter: f64,
    pub seed: u64,
    pub input_size: u32,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            loss: "oks".into(),
            steps: 2000,
            lr: 0.05,
            schedule: "constant".into(),
            init: "jitter".into(),
            jitter: 0.05,
            seed: 0,
            input_size: 320,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblateSettings {
    pub steps: usize,
    pub lr: f64,
    pub schedule: String,
    pub init: String,
    pub jitter: f64,
    pub seed: u64,
    pub input_size: u32,
}

impl Default for AblateSettings {
    fn default() -> Self {
        AblateSettings {
            steps: 1000,
            lr: 0.5,
            schedule: "constant".into(),
            init: "jitter".into(),
            jitter: 0.05,
            seed: 0,
            input_size: 320,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradcheckSettings {
    pub trials: usize,
    pub seed: u64,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        GradcheckSettings { trials: 100, seed: 1 }
    }
}

/// Parsed `--config` file: one optional table per subcommand.
#[derive(Debug, Default)]
pub struct ConfigFile {
    table: toml::Table,
    origin: String,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new("io", format!("{origin}: {e}")))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::new("config", format!("{origin}: {}", e.message())))?;
        Ok(ConfigFile { table, origin })
    }

    /// Defaults overlaid with the `[section]` table. Unknown keys are rejected.
    pub fn section<S: Serialize + DeserializeOwned + Default>(&self, section: &str) -> Result<S, CliError> {
        let mut merged = toml::Table::try_from(S::default()).expect("settings serialize to a table");
        if let Some(v) = self.table.get(section) {
            let t = v
                .as_table()
                .ok_or_else(|| CliError::new("config", format!("{}: [{section}] must be a table", self.origin)))?;
            for (k, v) in t {
                if !merged.contains_key(k) {
                    return Err(CliError::new(
                        "config",
                        format!("{}: unknown key '{k}' in [{section}]", self.origin),
                    ));
                }
                merged.insert(k.clone(), v.clone());
            }
        }
        merged
            .try_into()
            .map_err(|e: toml::de::Error| CliError::new("config", format!("{}: [{section}]: {}", self.origin, e.message())))
    }
}

/// Effective settings rendered as a TOML section.
pub fn render<S: Serialize>(section: &str, s: &S) -> String {
    let mut outer = toml::Table::new();
    outer.insert(
        section.into(),
        toml::Value::Table(toml::Table::try_from(s).expect("settings serialize to a table")),
    );
    toml::to_string(&outer).expect("serializable")
}

/// `flag` when given, else the configured value.
pub fn pick<T>(flag: Option<T>, configured: T) -> T {
    flag.unwrap_or(configured)
}

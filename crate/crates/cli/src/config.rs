//! TOML run configuration. Every field is optional; command-line flags
//! override whatever the file sets.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hallsand::dynamics::Params;
use hallsand::experiments::{PhaseGridSpec, ScenarioSpec};
use hallsand::exposure::{ExposureConfig, DEFAULT_EPSILON, DEFAULT_FLOOR};
use hallsand::operators::OperatorKind;
use hallsand::tail::TailConfig;
use serde::Deserialize;

pub const DEFAULT_OUTPUT_DIR: &str = "out";
pub const DEFAULT_SYNTH_DENSITY: f64 = 0.1;
pub const DEFAULT_EXPOSURE_FIELD: f64 = 1.0;
pub const DEFAULT_TOP_NODES: usize = 15;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub substrate: SubstrateConfig,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub exposure: ExposureSettings,
    #[serde(default)]
    pub scenarios: Vec<ScenarioSpec>,
    pub grid: Option<PhaseGridSpec>,
    #[serde(default)]
    pub tail: TailConfig,
    pub output_dir: Option<PathBuf>,
    /// Applied to every scenario and grid cell when set.
    pub master_seed: Option<u64>,
    #[serde(default)]
    pub operator_kind: OperatorKind,
}

/// Either a long-format flow file or a synthetic network.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubstrateConfig {
    pub flows: Option<PathBuf>,
    pub year: Option<i32>,
    pub synth: Option<SynthSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_density() -> f64 {
    DEFAULT_SYNTH_DENSITY
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExposureSettings {
    pub redundancy_floor: f64,
    pub capacity_floor: f64,
    /// Field intensity at which the `exposure` command evaluates stress.
    pub field: f64,
    pub top: usize,
}

impl Default for ExposureSettings {
    fn default() -> Self {
        ExposureSettings {
            redundancy_floor: DEFAULT_FLOOR,
            capacity_floor: DEFAULT_FLOOR,
            field: DEFAULT_EXPOSURE_FIELD,
            top: DEFAULT_TOP_NODES,
        }
    }
}

impl RunConfig {
    /// Reads `path`; relative paths inside the file resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("{}: cannot read config", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("{}: invalid config", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(f) = &cfg.substrate.flows {
            cfg.substrate.flows = Some(base.join(f));
        }
        if let Some(o) = &cfg.output_dir {
            cfg.output_dir = Some(base.join(o));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.substrate.flows.is_some() && self.substrate.synth.is_some() {
            bail!("substrate: set either flows or synth, not both");
        }
        if let Some(f) = &self.substrate.flows {
            if !f.is_file() {
                bail!("{}: flow file not found", f.display());
            }
        }
        for s in &self.scenarios {
            s.validate()?;
        }
        if let Some(g) = &self.grid {
            g.validate()?;
        }
        Ok(())
    }

    /// Exposure settings with the regularisation taken from the dynamics
    /// parameters, so one epsilon governs both.
    pub fn exposure_config(&self, params: &Params) -> ExposureConfig {
        ExposureConfig {
            redundancy_floor: self.exposure.redundancy_floor,
            capacity_floor: self.exposure.capacity_floor,
            epsilon: if params.epsilon > 0.0 {
                params.epsilon
            } else {
                DEFAULT_EPSILON
            },
        }
    }
}

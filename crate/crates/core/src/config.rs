//! Pipeline configuration file and seed derivation.

use crate::augment::AugmentSpec;
use crate::distortion::CorruptionSpec;
use crate::error::{Error, Result};
use crate::lpd::{ActionSpace, AgentConfig, LpdConfig};
use crate::pointcloud::{SceneSpec, NUM_SCENE_CLASSES};
use crate::rng::derive_seed;
use crate::surrogate::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const DEFAULT_IGNORE_LABEL: u16 = 255;

/// File name of the resolved config written next to every job's outputs.
pub const RESOLVED_CONFIG_NAME: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSet {
    pub count: usize,
    pub spec: SceneSpec,
}

impl Default for SceneSet {
    fn default() -> Self {
        Self {
            count: 16,
            spec: SceneSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct LpdSection {
    pub agent: AgentConfig,
    pub space: ActionSpace,
    pub forced_action: Option<usize>,
    pub sj_update: bool,
}

/// Everything a batch job needs.
///
/// Every seed used by a job is derived from `seed` with
/// [`PipelineConfig::sub_seed`]; the seed fields inside the nested specs are
/// overwritten when the config is resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub num_classes: usize,
    pub ignore_label: u16,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub scenes: SceneSet,
    pub corruptions: Vec<CorruptionSpec>,
    pub augment: AugmentSpec,
    pub train: TrainConfig,
    pub lpd: LpdSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_classes: NUM_SCENE_CLASSES,
            ignore_label: DEFAULT_IGNORE_LABEL,
            input: None,
            output: None,
            scenes: SceneSet::default(),
            corruptions: Vec::new(),
            augment: AugmentSpec::default(),
            train: TrainConfig::default(),
            lpd: LpdSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// `hash(seed, index, tag)`.
    pub fn sub_seed(&self, index: u64, tag: &str) -> u64 {
        derive_seed(self.seed, index, tag)
    }

    /// Copies the shared class settings and derived seeds into the nested specs.
    pub fn resolve(mut self) -> Result<Self> {
        self.train.num_classes = self.num_classes;
        self.train.ignore_label = self.ignore_label;
        self.train.seed = self.sub_seed(0, "train");
        self.lpd.agent.seed = self.sub_seed(0, "agent");
        self.augment.seed = self.sub_seed(0, "augment");
        self.scenes.spec.seed = self.sub_seed(0, "scenes");
        for (j, c) in self.corruptions.iter_mut().enumerate() {
            c.seed = derive_seed(self.seed, j as u64, "corruption");
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::InvalidSpec("num_classes must be > 0".into()));
        }
        if usize::from(self.ignore_label) < self.num_classes {
            return Err(Error::InvalidSpec(format!(
                "ignore label {} collides with a class id",
                self.ignore_label
            )));
        }
        for c in &self.corruptions {
            c.validate()?;
        }
        self.scenes.spec.validate()?;
        self.lpd_config().validate()
    }

    pub fn lpd_config(&self) -> LpdConfig {
        LpdConfig {
            train: self.train.clone(),
            augment: self.augment,
            agent: self.lpd.agent.clone(),
            space: self.lpd.space.clone(),
            forced_action: self.lpd.forced_action,
            sj_update: self.lpd.sj_update,
            seed: self.sub_seed(0, "lpd"),
        }
    }

    /// Spec of the `index`-th generated scene.
    pub fn scene_spec(&self, index: usize) -> SceneSpec {
        self.scenes.spec.clone().with_seed(self.sub_seed(index as u64, "scene"))
    }

    /// Seed for applying corruption `j` to scan `index`.
    pub fn corruption_seed(&self, j: usize, index: usize) -> u64 {
        derive_seed(self.corruptions[j].seed, index as u64, "corrupt")
    }

    pub fn augment_seed(&self, index: usize) -> u64 {
        self.sub_seed(index as u64, "augment")
    }
}

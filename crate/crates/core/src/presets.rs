//! Bundled configurations: the seven reference architectures and a
//! desk-scale comparison.

use serde::{Deserialize, Serialize};

use crate::budget::ModelSkeleton;
use crate::error::{Error, Result};
use crate::profiles::ScalingSpec;
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportedCounts {
    pub params_m: f64,
    pub non_embed_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedSpec {
    pub name: String,
    pub spec: ScalingSpec,
    /// Published parameter counts, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported: Option<ReportedCounts>,
}

/// A set of variants sharing one skeleton, optionally with training settings
/// and the variant whose budget the others are equalized to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresetFile {
    pub skeleton: ModelSkeleton,
    pub variants: Vec<NamedSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
}

impl PresetFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn pairs(&self) -> Vec<(String, ScalingSpec)> {
        self.variants.iter().map(|v| (v.name.clone(), v.spec.clone())).collect()
    }

    pub fn variant(&self, name: &str) -> Option<&NamedSpec> {
        self.variants.iter().find(|v| v.name == name)
    }
}

const REFERENCE_JSON: &str = include_str!("../presets/reference.json");
const DESK_JSON: &str = include_str!("../presets/desk.json");

/// The seven reference architectures at full width (768, 50,279 vocab).
pub fn reference_architectures() -> PresetFile {
    PresetFile::from_json(REFERENCE_JSON).expect("bundled preset parses")
}

/// Baseline, vanilla, reverse and crown at d_model 64, 8 layers, 2 KV heads.
pub fn desk_comparison() -> PresetFile {
    PresetFile::from_json(DESK_JSON).expect("bundled preset parses")
}

/// Preset names accepted by [`lookup`].
pub fn preset_names() -> Vec<String> {
    let mut names = vec!["reference".to_string(), "desk".to_string()];
    names.extend(reference_architectures().variants.into_iter().map(|v| v.name));
    names
}

/// Resolves a preset name: a whole set (`reference`, `desk`) or a single
/// reference architecture such as `crown-18l`.
pub fn lookup(name: &str) -> Result<PresetFile> {
    match name {
        "reference" => Ok(reference_architectures()),
        "desk" => Ok(desk_comparison()),
        _ => {
            let mut all = reference_architectures();
            all.variants.retain(|v| v.name == name);
            if all.variants.is_empty() {
                Err(Error::invalid(format!(
                    "unknown preset {name:?}; available: {}",
                    preset_names().join(", ")
                )))
            } else {
                Ok(all)
            }
        }
    }
}

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use vidscene::instancelift::LiftParams;
use vidscene::reconstruction::ReconstructParams;
use vidscene::synth::SynthConfig;
use vidscene::vln::VlnParams;
use vidscene::vqa::GenConfig;

/// Everything a run can tune. Missing keys take their defaults and unknown
/// keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Seeds synthesis and question sampling; `--seed` overrides it.
    pub seed: u64,
    pub synth_scenes: usize,
    pub synth: SynthConfig,
    pub reconstruct: ReconstructParams,
    pub lift: LiftParams,
    pub vln: VlnParams,
    /// `vqa.seed` is replaced by the pipeline seed.
    pub vqa: GenConfig,
    pub det_iou_thresholds: Vec<f64>,
    pub success_radius: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synth_scenes: 1,
            synth: SynthConfig::default(),
            reconstruct: ReconstructParams::default(),
            lift: LiftParams::default(),
            vln: VlnParams::default(),
            vqa: GenConfig::default(),
            det_iou_thresholds: vec![0.25, 0.5],
            success_radius: vidscene::metrics::SUCCESS_RADIUS,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg: PipelineConfig = match path {
            Some(p) => vidscene::io::read_json(p).with_context(|| format!("loading config {}", p.display()))?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.vqa.seed = cfg.seed;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"sed": 1}"#).is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"lift": {"min_pixel": 3}}"#).is_err());
        let cfg: PipelineConfig = serde_json::from_str(r#"{"lift": {"min_pixels": 3}}"#).unwrap();
        assert_eq!(cfg.lift.min_pixels, 3);
        assert_eq!(cfg.lift.merge_threshold, LiftParams::default().merge_threshold);
    }

    #[test]
    fn empty_object_is_the_default() {
        assert_eq!(serde_json::from_str::<PipelineConfig>("{}").unwrap(), PipelineConfig::default());
    }
}

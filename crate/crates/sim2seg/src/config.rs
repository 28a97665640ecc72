//! Strict JSON pipeline configuration.
//!
//! Every section may be omitted and then takes its defaults, but a section
//! that is present must list all of its fields. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sim2seg_core::eval::EvalOptions;
use sim2seg_core::imaging::PreprocessSpec;
use sim2seg_core::postproc::PostprocSpec;
use sim2seg_core::synth::SceneConfig;

use crate::dataset::RenderBackend;
use crate::error::{Error, Result};
use crate::segmentation::SegHyper;
use crate::translation::TranslationHyper;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub synth_dataset: PathBuf,
    pub real_images: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            synth_dataset: "data/synth".into(),
            real_images: "data/real".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub scene: SceneConfig,
    pub render_backend: RenderBackend,
    pub preprocess: PreprocessSpec,
    pub translation: TranslationHyper,
    pub segmentation: SegHyper,
    pub postproc: PostprocSpec,
    pub eval: EvalOptions,
    pub paths: Paths,
    pub seed: u64,
    /// Inference and generation threads; logical cores when unset.
    pub workers: Option<usize>,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.preprocess.validate()?;
        self.translation.validate()?;
        self.segmentation.validate()?;
        self.postproc.validate()?;
        if self.segmentation.image_size != self.translation.image_size {
            return Err(Error::config(
                "segmentation.image_size",
                format!("must equal translation.image_size ({})", self.translation.image_size),
            ));
        }
        if self.workers == Some(0) {
            return Err(Error::config("workers", "must be >= 1"));
        }
        let p = &self.paths;
        let all = [
            ("paths.synth_dataset", &p.synth_dataset),
            ("paths.real_images", &p.real_images),
            ("paths.checkpoints", &p.checkpoints),
            ("paths.reports", &p.reports),
        ];
        for (i, (name, a)) in all.iter().enumerate() {
            if all[..i].iter().any(|(_, b)| b == a) {
                return Err(Error::config(*name, "paths must be distinct"));
            }
        }
        Ok(())
    }

    /// Parse and validate; relative paths are resolved against `base`.
    pub fn from_json(text: &str, base: Option<&Path>) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.to_string();
            let field = match missing_field(&msg) {
                Some(f) if path == "." => f.to_string(),
                Some(f) => format!("{path}.{f}"),
                None => path,
            };
            Error::config(field, msg)
        })?;
        if let Some(base) = base {
            let p = &mut cfg.paths;
            for path in [&mut p.synth_dataset, &mut p.real_images, &mut p.checkpoints, &mut p.reports] {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn missing_field(msg: &str) -> Option<&str> {
    let rest = msg.strip_prefix("missing field `")?;
    rest.split('`').next()
}

/// Read a config file; relative paths inside it are taken relative to its directory.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::config("config", format!("{} does not exist", path.display()))
        } else {
            Error::io(path, e)
        }
    })?;
    PipelineConfig::from_json(&text, path.parent())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_all_defaults() {
        let cfg = PipelineConfig::from_json("{}", None).unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        let echo: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(echo["scene"]["spawn_box"], serde_json::json!([0.4, 0.4, 0.45]));
        assert_eq!(echo["translation"]["lambda_cycle"], 10.0);
        assert_eq!(echo["segmentation"]["lambda_l1"], 100.0);
        assert_eq!(echo["postproc"]["binarize_threshold"], 32);
    }

    #[test]
    fn missing_field_is_named() {
        let mut v: serde_json::Value = serde_json::from_str(&PipelineConfig::default().to_json()).unwrap();
        v["scene"].as_object_mut().unwrap().remove("spawn_box");
        match PipelineConfig::from_json(&v.to_string(), None) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "scene.spawn_box"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_fatal() {
        for text in [r#"{"sead": 1}"#, r#"{"postproc": {"binarize_threshold": 32, "marker_min_distance": 9.0, "min_instance_area": 50, "mode": "watershed", "extra": 1}}"#] {
            let err = PipelineConfig::from_json(text, None).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{err}");
        }
    }

    #[test]
    fn invalid_values_and_shared_paths() {
        let mut c = PipelineConfig::default();
        c.scene.spawn_box = [0.4, 0.0, 0.45];
        assert!(matches!(PipelineConfig::from_json(&c.to_json(), None), Err(e) if e.exit_code() == 2));
        let mut c = PipelineConfig::default();
        c.paths.reports = c.paths.checkpoints.clone();
        assert!(matches!(c.validate(), Err(Error::Config { field, .. }) if field == "paths.reports"));
    }

    #[test]
    fn round_trip_is_a_fixed_point() {
        let mut c = PipelineConfig::default();
        c.seed = 42;
        c.translation.n_blocks = Some(6);
        c.workers = Some(3);
        let once = PipelineConfig::from_json(&c.to_json(), None).unwrap();
        let twice = PipelineConfig::from_json(&once.to_json(), None).unwrap();
        assert_eq!(once, c);
        assert_eq!(twice, once);
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, "{}").unwrap();
        let c = load_config(&path).unwrap();
        assert_eq!(c.paths.checkpoints, dir.path().join("checkpoints"));
        assert_eq!(load_config(&dir.path().join("none.json")).unwrap_err().exit_code(), 2);
    }
}

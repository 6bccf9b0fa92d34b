//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::Window;
use crate::fbp::FilterKind;
use crate::geometry::FanBeamGeometry;
use crate::momentum::NetConfig;
use crate::nn::{TrainHyper, Variant};
use crate::noise::NoiseModel;
use crate::rng;

/// Which phantoms make up the cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub train_patients: Vec<u64>,
    pub test_patients: Vec<u64>,
    /// Total training slices, spread as evenly as possible over the train patients.
    pub train_slices: usize,
    pub test_slices_per_patient: usize,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            train_patients: vec![1, 2, 3, 4, 5, 6],
            test_patients: vec![7, 8, 9, 10],
            train_slices: 20,
            test_slices_per_patient: 3,
        }
    }
}

impl CohortConfig {
    /// Slice count for the `k`-th train patient.
    pub fn train_slices_for(&self, k: usize) -> usize {
        let n = self.train_patients.len();
        self.train_slices / n + usize::from(k < self.train_slices % n)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    /// Every pixel.
    #[default]
    Full,
    /// Pixels whose centres lie inside the inscribed field-of-view circle.
    Fov,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub window: Window,
    pub mask: MaskKind,
    /// Save every layer's image next to the trace.
    pub keep_layer_images: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FbpConfig {
    pub filter: FilterKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub variant: Variant,
    pub dataset_dir: PathBuf,
    pub output_dir: PathBuf,
    pub geometry: FanBeamGeometry,
    pub noise: NoiseModel,
    #[serde(default)]
    pub cohort: CohortConfig,
    #[serde(default)]
    pub fbp: FbpConfig,
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default)]
    pub train: TrainHyper,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    /// Parse and validate; relative paths are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.dataset_dir = base.join(&cfg.dataset_dir);
        cfg.output_dir = base.join(&cfg.output_dir);
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.derive_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every stochastic component draws from the one master seed.
    fn derive_seeds(&mut self) {
        self.noise.seed = rng::mix(self.seed, 1);
        self.net.seed = rng::mix(self.seed, 2);
        self.train.seed = rng::mix(self.seed, 3);
        self.net.variant = self.variant;
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self.net.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.geometry.validate().map_err(cfg_err)?;
        self.noise.validate().map_err(cfg_err)?;
        self.net.validate().map_err(cfg_err)?;
        self.train.validate().map_err(cfg_err)?;
        self.eval.window.validate().map_err(cfg_err)?;
        if self.geometry.n_pixels < 16 {
            return Err(Error::Config("geometry.n_pixels must be at least 16 for phantoms".into()));
        }
        let c = &self.cohort;
        if c.train_patients.is_empty() || c.test_patients.is_empty() {
            return Err(Error::Config("cohort needs at least one train and one test patient".into()));
        }
        if let Some(p) = c.train_patients.iter().find(|p| c.test_patients.contains(p)) {
            return Err(Error::Config(format!("patient {p} is in both the train and test split")));
        }
        if c.train_slices == 0 || c.test_slices_per_patient == 0 {
            return Err(Error::Config("cohort slice counts must be at least 1".into()));
        }
        Ok(())
    }

    /// Fails unless the dataset directory exists.
    pub fn require_dataset(&self) -> Result<&Path> {
        if !self.dataset_dir.is_dir() {
            return Err(Error::Config(format!(
                "dataset directory {} does not exist (run simulate first)",
                self.dataset_dir.display()
            )));
        }
        Ok(&self.dataset_dir)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
seed = 11
variant = "simplecnn-rsn"
dataset_dir = "data"
output_dir = "runs"

[geometry]
n_pixels = 32
pixel_pitch = 11.04
n_views = 48
n_detectors = 64
detector_pitch = 11.0
source_to_iso = 595.0
source_to_detector = 1085.6

[noise]
incident_photons = 1e4
electronic_variance = 25.0

[net]
layers = 3
channels = 8

[train]
epochs = 2
"#;

    #[test]
    fn parses_and_derives_seeds() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.variant, Variant::SimpleCnnRsn);
        assert_eq!(cfg.net.variant, Variant::SimpleCnnRsn);
        assert_eq!(cfg.net.layers, 3);
        assert_eq!(cfg.train.batch_size, 5);
        assert_eq!(cfg.noise.clamp_epsilon, 0.1);
        assert_ne!(cfg.noise.seed, cfg.train.seed);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        for (from, to) in [
            ("variant = \"simplecnn-rsn\"", "variant = \"unet\""),
            ("layers = 3", "layers = 0"),
            ("n_views = 48", "n_views = 0"),
            ("electronic_variance = 25.0", "electronic_variance = -1.0"),
            ("epochs = 2", "epochs = 2\nbogus = 1"),
        ] {
            let text = SAMPLE.replace(from, to);
            assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Config(_))), "{to}");
        }
        let overlap = format!("{SAMPLE}\n[cohort]\ntrain_patients = [1, 2]\ntest_patients = [2, 3]\n");
        assert!(ExperimentConfig::from_toml(&overlap).is_err());
    }

    #[test]
    fn slices_spread_over_patients() {
        let c = CohortConfig::default();
        let counts: Vec<usize> = (0..6).map(|k| c.train_slices_for(k)).collect();
        assert_eq!(counts, vec![4, 4, 3, 3, 3, 3]);
    }

    #[test]
    fn missing_dataset_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, SAMPLE).unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.dataset_dir, dir.path().join("data"));
        assert!(matches!(cfg.require_dataset(), Err(Error::Config(_))));
    }
}

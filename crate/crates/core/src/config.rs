//! Pipeline settings and their TOML file form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boundary::{DEFAULT_GAP_THRESHOLD, DEFAULT_K, DEFAULT_PIXEL_THRESHOLD};
use crate::contour::{AlphaPolicy, DEFAULT_NC};
use crate::error::{Error, Result};
use crate::matching::ShiftSearch;
use crate::metrics::{EvalOptions, DEFAULT_ACCURACY_PERCENTILE, DEFAULT_COMPLETENESS_THRESHOLD};
use crate::registration::BbicpConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryParams {
    /// Neighbors examined around each candidate point.
    pub k: usize,
    /// Angular gap in radians above which a point counts as boundary.
    pub gap_threshold: f64,
    /// Maximum pixel distance to a mask contour for a point to stay a candidate.
    pub pixel_threshold: f64,
}

impl Default for BoundaryParams {
    fn default() -> Self {
        BoundaryParams {
            k: DEFAULT_K,
            gap_threshold: DEFAULT_GAP_THRESHOLD,
            pixel_threshold: DEFAULT_PIXEL_THRESHOLD,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationParams {
    pub completeness_threshold: f64,
    pub accuracy_percentile: f64,
    /// Refine the merged model onto the ground truth with trimmed ICP before scoring.
    pub align: bool,
    pub align_trim_fraction: f64,
}

impl Default for EvaluationParams {
    fn default() -> Self {
        EvaluationParams {
            completeness_threshold: DEFAULT_COMPLETENESS_THRESHOLD,
            accuracy_percentile: DEFAULT_ACCURACY_PERCENTILE,
            align: true,
            align_trim_fraction: 0.9,
        }
    }
}

impl EvaluationParams {
    pub fn options(&self) -> EvalOptions {
        EvalOptions {
            completeness_threshold: self.completeness_threshold,
            accuracy_percentile: self.accuracy_percentile,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Contour samples per scan.
    pub n_c: usize,
    pub shift_search: ShiftSearch,
    /// Worker threads for per-fragment stages; 0 uses every core.
    pub jobs: usize,
    pub seed: u64,
    pub alpha: AlphaPolicy,
    pub boundary: BoundaryParams,
    pub bbicp: BbicpConfig,
    pub evaluation: EvaluationParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n_c: DEFAULT_NC,
            shift_search: ShiftSearch::default(),
            jobs: 0,
            seed: 0,
            alpha: AlphaPolicy::default(),
            boundary: BoundaryParams::default(),
            bbicp: BbicpConfig::default(),
            evaluation: EvaluationParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_c < 8 {
            return Err(Error::Config(format!("n_c = {}, need at least 8", self.n_c)));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config("seed must fit in a signed 64-bit integer".into()));
        }
        let a = &self.alpha;
        if !(a.spacing_factor > 0.0 && a.min_alpha > 0.0 && a.min_alpha <= a.max_alpha && a.max_alpha.is_finite()) {
            return Err(Error::Config(format!("invalid alpha policy {a:?}")));
        }
        let b = &self.boundary;
        if b.k < 4 {
            return Err(Error::Config(format!("boundary.k = {}, need at least 4", b.k)));
        }
        if !(b.gap_threshold > 0.0 && b.gap_threshold < std::f64::consts::TAU) {
            return Err(Error::Config(format!("boundary.gap_threshold = {} out of (0, 2π)", b.gap_threshold)));
        }
        if !(b.pixel_threshold >= 0.0 && b.pixel_threshold.is_finite()) {
            return Err(Error::Config(format!("boundary.pixel_threshold = {}", b.pixel_threshold)));
        }
        self.bbicp.validate().map_err(|e| Error::Config(format!("bbicp: {e}")))?;
        self.evaluation
            .options()
            .validate()
            .map_err(|e| Error::Config(format!("evaluation: {e}")))?;
        let trim = self.evaluation.align_trim_fraction;
        if !(trim > 0.0 && trim <= 1.0) {
            return Err(Error::Config(format!("evaluation.align_trim_fraction = {trim} out of (0, 1]")));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let text = c.to_toml_string().unwrap();
        assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), c);
        assert_eq!(c.n_c, 200);
        assert_eq!(c.boundary.k, 16);
        assert_eq!(c.evaluation.completeness_threshold, 0.5);
        assert_eq!(c.evaluation.accuracy_percentile, 90.0);
    }

    #[test]
    fn partial_file_falls_back_to_defaults() {
        let c = PipelineConfig::from_toml_str("n_c = 64\n[bbicp]\nmax_iterations = 7\n").unwrap();
        assert_eq!(c.n_c, 64);
        assert_eq!(c.bbicp.max_iterations, 7);
        assert_eq!(c.bbicp.convergence_tol, BbicpConfig::default().convergence_tol);
        assert_eq!(c.alpha, AlphaPolicy::default());
    }

    #[test]
    fn bad_files_rejected() {
        for text in [
            "n_c = 3",
            "unknown = 1",
            "[boundary]\nk = 2",
            "[boundary]\ngap_threshold = 7.0",
            "[evaluation]\naccuracy_percentile = 120.0",
            "[bbicp]\ncorrespondence_reject_distance = -1.0",
            "n_c = \"many\"",
        ] {
            assert!(matches!(PipelineConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sherd.toml");
        let mut c = PipelineConfig::default();
        c.bbicp.correspondence_reject_distance = Some(2.5);
        c.save(&path).unwrap();
        assert_eq!(PipelineConfig::load(&path).unwrap(), c);
    }

    fn config_strategy() -> impl Strategy<Value = PipelineConfig> {
        (
            (8usize..1000, any::<bool>(), 0usize..64, 0..=i64::MAX as u64),
            (0.1..20.0f64, 0.01..1.0f64, 1.0..50.0f64),
            (4usize..64, 0.1..6.0f64, 0.0..20.0f64),
            (1usize..500, 1e-12..1e-2f64, prop::option::of(0.01..100.0f64), 0.5..50.0f64, 0usize..100),
            (0.01..5.0f64, 0.0..=100.0f64, any::<bool>(), 0.01..=1.0f64),
        )
            .prop_map(|(top, alpha, boundary, bbicp, eval)| PipelineConfig {
                n_c: top.0,
                shift_search: if top.1 { ShiftSearch::Exhaustive } else { ShiftSearch::Descriptor },
                jobs: top.2,
                seed: top.3,
                alpha: AlphaPolicy {
                    spacing_factor: alpha.0,
                    min_alpha: alpha.1,
                    max_alpha: alpha.2,
                },
                boundary: BoundaryParams {
                    k: boundary.0,
                    gap_threshold: boundary.1,
                    pixel_threshold: boundary.2,
                },
                bbicp: BbicpConfig {
                    max_iterations: bbicp.0,
                    convergence_tol: bbicp.1,
                    correspondence_reject_distance: bbicp.2,
                    reject_median_factor: bbicp.3,
                    min_correspondences: bbicp.4,
                },
                evaluation: EvaluationParams {
                    completeness_threshold: eval.0,
                    accuracy_percentile: eval.1,
                    align: eval.2,
                    align_trim_fraction: eval.3,
                },
            })
    }

    proptest! {
        #[test]
        fn toml_round_trip_is_lossless(c in config_strategy()) {
            c.validate().unwrap();
            let text = c.to_toml_string().unwrap();
            prop_assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), c);
        }
    }
}

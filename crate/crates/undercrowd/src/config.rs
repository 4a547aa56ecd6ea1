//! TOML run configuration. Command-line flags override file values, which
//! override defaults.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use undercrowd_core::aggregate::ThresholdConfig;
use undercrowd_core::eval::DegreeSearch;
use undercrowd_core::features::ModelSpec;
use undercrowd_core::glmm::GlmmOptions;
use undercrowd_core::gmerf::GmerfParams;
use undercrowd_core::ride_analysis::Scenario;
use undercrowd_core::synth::SynthScenario;
use undercrowd_core::validate::{StatusMap, ValidationConfig};

use crate::artifacts::sha256_hex;
use crate::error::{AppError, Result};
use crate::io::CsvSchema;
use crate::weather::WeatherEndpoint;

/// Input files. Relative paths resolve against the working directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub signals: Option<PathBuf>,
    /// Route, timetable and capacities (JSON).
    pub network: Option<PathBuf>,
    /// Rides written by `ingest`.
    pub rides: Option<PathBuf>,
    /// Rides kept by `validate`.
    pub clean_rides: Option<PathBuf>,
    pub weather: Option<PathBuf>,
    pub calendar: Option<PathBuf>,
    pub observations: Option<PathBuf>,
    /// Fitted GLMM or GMERF artifact.
    pub model: Option<PathBuf>,
    /// Ride split written by `fit-glmm` or `fit-gmerf`.
    pub split: Option<PathBuf>,
    /// Scenario file for `simulate` (JSON or TOML).
    pub scenario: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Share of rides used for training.
    pub fraction: f64,
    /// Classification threshold on the predicted probability.
    pub f: f64,
    pub degrees: DegreeSearch,
    /// Quantiles of the Wald interval columns.
    pub wald_quantiles: (f64, f64),
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            fraction: 0.7,
            f: 0.5,
            degrees: DegreeSearch::default(),
            wald_quantiles: (0.05, 0.95),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RideReportConfig {
    /// Levels with a distribution report.
    pub levels: Vec<f64>,
    pub grid_step: f64,
}

impl Default for RideReportConfig {
    fn default() -> Self {
        Self {
            levels: vec![0.05, 0.1],
            grid_step: 0.005,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(flatten)]
    pub scenario: Scenario,
    /// Segments to predict; all segments of the model when absent.
    #[serde(default)]
    pub segments: Option<Vec<u16>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives every random choice: simulation, splits, folds and forests.
    pub seed: u64,
    /// Worker threads; 0 lets the runtime choose.
    pub threads: usize,
    /// Fail on the first malformed input row instead of skipping it.
    pub strict: bool,
    pub out: Option<PathBuf>,
    pub paths: Paths,
    pub csv: CsvSchema,
    /// Date of week 1; the first calendar date when absent.
    pub calendar_anchor: Option<NaiveDate>,
    pub weather_endpoint: Option<WeatherEndpoint>,
    pub threshold: ThresholdConfig,
    pub validation: ValidationConfig,
    pub statuses: StatusMap,
    pub model: ModelSpec,
    pub glmm: GlmmOptions,
    pub gmerf: GmerfParams,
    pub eval: EvalConfig,
    pub ride_report: RideReportConfig,
    pub scenario: Option<ScenarioConfig>,
    pub synth: SynthScenario,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        toml::from_str(&text).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))
    }

    /// Copies the top-level seed into every seeded component.
    pub fn propagate_seed(&mut self) {
        self.synth.seed = self.seed;
        self.gmerf.forest.seed = self.seed;
        self.eval.degrees.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.threshold.validate()?;
        self.validation.validate()?;
        self.model.validate()?;
        // mtry is checked against the feature count at fit time.
        self.gmerf.forest.validate(usize::MAX)?;
        if !(self.eval.fraction > 0.0 && self.eval.fraction < 1.0) {
            return Err(AppError::Config(format!("eval.fraction {} not in (0, 1)", self.eval.fraction)));
        }
        if !(self.eval.f > 0.0 && self.eval.f < 1.0) {
            return Err(AppError::Config(format!("eval.f {} not in (0, 1)", self.eval.f)));
        }
        let (lo, hi) = self.eval.wald_quantiles;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(AppError::Config(String::from("eval.wald_quantiles must satisfy 0 < low < high < 1")));
        }
        if !(self.ride_report.grid_step > 0.0 && self.ride_report.grid_step <= 1.0) {
            return Err(AppError::Config(String::from("ride_report.grid_step must lie in (0, 1]")));
        }
        if self.ride_report.levels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(AppError::Config(String::from("ride_report.levels must lie in [0, 1]")));
        }
        Ok(())
    }

    /// SHA-256 of the compact JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn require<'a>(&self, p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
        p.as_deref()
            .ok_or_else(|| AppError::Config(format!("no {what} path: set paths.{what} or pass --{}", what.replace('_', "-"))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn partial_sections_fill_in() {
        let c: RunConfig = toml::from_str(
            "seed = 9\n[model]\nslot_degree = 2\n[gmerf.forest]\nn_trees = 20\n[eval]\nf = 0.4\n",
        )
        .unwrap();
        assert_eq!(c.model.slot_degree, 2);
        assert_eq!(c.model.week_degree, 3);
        assert_eq!(c.gmerf.forest.n_trees, 20);
        assert_eq!(c.eval.f, 0.4);
        assert!(toml::from_str::<RunConfig>("bogus = 1\n").is_err());
    }

    #[test]
    fn hash_matches_recomputation_and_tracks_changes() {
        let mut c = RunConfig::default();
        let h = c.hash();
        assert_eq!(h, sha256_hex(&serde_json::to_vec(&c).unwrap()));
        c.seed = 1;
        assert_ne!(h, c.hash());
    }

    #[test]
    fn scenario_section_parses() {
        let c: RunConfig = toml::from_str(
            "[scenario]\nday_type = \"holiday\"\ntime_slot = 9\nweek = 3\nsegments = [1, 2]\n[scenario.weather]\ntemperature = 20.0\nwind_speed = 5.0\ncloud_coverage = 10.0\nhumidity = 50.0\nrain = 1.0\n",
        )
        .unwrap();
        let s = c.scenario.unwrap();
        assert_eq!(s.segments, Some(vec![1, 2]));
        assert_eq!(s.scenario.weather.rain, 1.0);
    }
}

//! TOML run configuration with `[scenario]`, `[em]`, `[quad]` and `[sweep]`
//! sections. Every key is optional.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::EmConfig;
use crate::experiments::{log_spaced_grid, SweepConfig};
use crate::metrics::QuadratureConfig;
use crate::sampler::{Scenario, ScenarioTag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub tag: ScenarioTag,
    pub d: usize,
    pub drift_exponent: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let s = Scenario::new(ScenarioTag::DistinguishableLaplace, 8);
        ScenarioSection {
            tag: s.tag,
            d: s.d,
            drift_exponent: s.drift_exponent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Explicit grid; overrides `n_min`, `n_max` and `n_points`.
    pub n_grid: Option<Vec<usize>>,
    pub n_min: usize,
    pub n_max: usize,
    pub n_points: usize,
    pub trials: usize,
    pub base_seed: u64,
    pub compute_hellinger: bool,
    pub out_dir: PathBuf,
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
    pub record_timing: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            n_grid: None,
            n_min: 1_000,
            n_max: 100_000,
            n_points: 20,
            trials: 40,
            base_seed: 0,
            compute_hellinger: false,
            out_dir: PathBuf::from("results"),
            threads: None,
            record_timing: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSection,
    pub em: EmConfig,
    pub quad: QuadratureConfig,
    pub sweep: SweepSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Input(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e.message().to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            tag: self.scenario.tag,
            d: self.scenario.d,
            drift_exponent: self.scenario.drift_exponent,
        }
    }

    pub fn n_grid(&self) -> Result<Vec<usize>> {
        match &self.sweep.n_grid {
            Some(g) => Ok(g.clone()),
            None => log_spaced_grid(self.sweep.n_min, self.sweep.n_max, self.sweep.n_points),
        }
    }

    pub fn sweep_config(&self) -> Result<SweepConfig> {
        let cfg = SweepConfig {
            scenario: self.scenario(),
            n_grid: self.n_grid()?,
            trials: self.sweep.trials,
            em: self.em,
            quad: self.quad,
            base_seed: self.sweep.base_seed,
            compute_hellinger: self.sweep.compute_hellinger,
            out_dir: self.sweep.out_dir.clone(),
            record_timing: self.sweep.record_timing,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let sweep = cfg.sweep_config().unwrap();
        assert_eq!(sweep.n_grid.len(), 20);
        assert_eq!(sweep.trials, 40);
        assert_eq!(sweep.scenario.d, 8);
    }

    #[test]
    fn sections_parse() {
        let cfg = RunConfig::from_toml_str(
            r#"
            [scenario]
            tag = "b2"
            d = 4
            [em]
            max_iter = 50
            [em.mstep]
            max_iter = 20
            grad_tol = 1e-6
            [quad]
            x_mc_samples = 100
            [sweep]
            n_min = 1000
            n_max = 30000
            n_points = 12
            trials = 10
            base_seed = 7
            "#,
        )
        .unwrap();
        assert_eq!(cfg.scenario.tag, ScenarioTag::NonDistNuDrift);
        assert_eq!(cfg.em.max_iter, 50);
        assert_eq!(cfg.em.mstep.max_iter, 20);
        assert_eq!(cfg.em.rel_tol, EmConfig::default().rel_tol);
        assert_eq!(cfg.quad.x_mc_samples, 100);
        let grid = cfg.n_grid().unwrap();
        assert_eq!((grid.len(), grid[0], grid[11]), (12, 1000, 30000));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml_str("[sweep]\ntrails = 3\n").is_err());
        assert!(RunConfig::from_toml_str("[scenario]\ntag = \"c\"\n").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.sweep.n_grid = Some(vec![100, 200]);
        cfg.sweep.threads = Some(2);
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_grid_is_validation_error() {
        let cfg = RunConfig::from_toml_str("[sweep]\nn_grid = [500, 100]\n").unwrap();
        assert!(matches!(cfg.sweep_config(), Err(Error::Input(_))));
    }
}

//! Run configuration: an optional TOML file overlaid by command-line flags.
//!
//! ```toml
//! policy = "cv"            # replay | cv | external
//! cmd = "python client.py" # external policies only
//! horizon = 4.0            # seconds, one of 0.5 1 2 3 4
//! seed = 0
//! noise = 0.0              # waypoint noise sigma in meters
//! squared = false
//! png = false
//! rasters = "inline"       # none | inline | files:<dir>
//! timeout_ms = 5000
//! jobs = 8
//!
//! [sim]                    # any SimConfig field
//! replan_period = 0.1
//! bounds_mode = "rescale"
//! end_velocity = "zero"
//! ```

use std::path::Path;
use std::time::Duration;

use bevdrive::metrics::HORIZONS_S;
use bevdrive::policy::external::{ExternalConfig, RasterTransfer};
use bevdrive::policy::PolicyOptions;
use bevdrive::sim::SimConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliResult, Failure};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub policy: Option<String>,
    pub cmd: Option<String>,
    pub horizon: Option<f64>,
    pub seed: Option<u64>,
    pub noise: Option<f64>,
    pub squared: Option<bool>,
    pub png: Option<bool>,
    pub rasters: Option<String>,
    pub timeout_ms: Option<u64>,
    pub jobs: Option<usize>,
    pub sim: Option<SimConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        toml::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
    }
}

/// Effective settings of a policy-driven run, recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSettings {
    pub policy: String,
    pub cmd: Option<String>,
    pub horizon: f64,
    pub seed: u64,
    pub noise: f64,
    pub squared: bool,
    pub png: bool,
    pub rasters: String,
    pub timeout_ms: u64,
    pub sim: SimConfig,
    #[serde(skip)]
    pub jobs: usize,
}

/// Flag values; `None` means not given.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub policy: Option<String>,
    pub cmd: Option<String>,
    pub horizon: Option<f64>,
    pub seed: Option<u64>,
    pub noise: Option<f64>,
    pub squared: bool,
    pub png: bool,
    pub rasters: Option<String>,
    pub timeout_ms: Option<u64>,
    pub jobs: Option<usize>,
}

impl RunSettings {
    pub fn resolve(file: Option<FileConfig>, flags: Overrides) -> CliResult<Self> {
        let file = file.unwrap_or_default();
        let horizon = flags.horizon.or(file.horizon).unwrap_or(4.0);
        if !HORIZONS_S.iter().any(|h| (h - horizon).abs() < 1e-9) {
            return Err(Failure::usage(format!(
                "--horizon must be one of 0.5, 1, 2, 3, 4 (got {horizon})"
            )));
        }
        let mut sim = file.sim.unwrap_or_default();
        sim.duration = horizon;
        let png = flags.png || file.png.unwrap_or(false);
        if png {
            sim.keep_rasters = true;
        }
        let noise = flags.noise.or(file.noise).unwrap_or(0.0);
        if !(noise.is_finite() && noise >= 0.0) {
            return Err(Failure::usage(format!("--noise must be non-negative (got {noise})")));
        }
        let jobs = flags
            .jobs
            .or(file.jobs)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if jobs == 0 {
            return Err(Failure::usage("--jobs must be at least 1"));
        }
        let settings = Self {
            policy: flags.policy.or(file.policy).unwrap_or_else(|| "replay".into()),
            cmd: flags.cmd.or(file.cmd),
            horizon,
            seed: flags.seed.or(file.seed).unwrap_or(0),
            noise,
            squared: flags.squared || file.squared.unwrap_or(false),
            png,
            rasters: flags.rasters.or(file.rasters).unwrap_or_else(|| "inline".into()),
            timeout_ms: flags
                .timeout_ms
                .or(file.timeout_ms)
                .unwrap_or(bevdrive::policy::external::DEFAULT_TIMEOUT.as_millis() as u64),
            sim,
            jobs,
        };
        settings.raster_transfer()?;
        settings.sim.validate().map_err(|e| Failure::usage(e.to_string()))?;
        Ok(settings)
    }

    pub fn raster_transfer(&self) -> CliResult<RasterTransfer> {
        self.rasters.parse().map_err(|e: String| Failure::usage(e))
    }

    /// Options for the policy of scene number `index`.
    pub fn policy_options(&self, index: usize, scene_id: &str) -> CliResult<PolicyOptions> {
        let rasters = match self.raster_transfer()? {
            RasterTransfer::Files(dir) => {
                let dir = dir.join(crate::output::file_stem(scene_id));
                std::fs::create_dir_all(&dir).map_err(|e| Failure::io(&dir, e))?;
                RasterTransfer::Files(dir)
            }
            other => other,
        };
        Ok(PolicyOptions {
            cmd: self.cmd.clone(),
            external: ExternalConfig {
                timeout: Duration::from_millis(self.timeout_ms),
                rasters,
                history_len: 1,
            },
            noise_sigma: self.noise,
            seed: self.seed.wrapping_add(index as u64),
        })
    }

    pub fn report_horizons(&self) -> Vec<f64> {
        HORIZONS_S
            .iter()
            .copied()
            .filter(|h| *h <= self.horizon + 1e-9)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let file: FileConfig =
            toml::from_str("policy = \"cv\"\nhorizon = 2.0\nseed = 9\n[sim]\nreplan_period = 0.5\n").unwrap();
        let flags = Overrides {
            horizon: Some(1.0),
            jobs: Some(1),
            ..Default::default()
        };
        let s = RunSettings::resolve(Some(file), flags).unwrap();
        assert_eq!(s.policy, "cv");
        assert_eq!(s.horizon, 1.0);
        assert_eq!(s.sim.duration, 1.0);
        assert_eq!(s.sim.replan_period, 0.5);
        assert_eq!(s.seed, 9);
        assert_eq!(s.report_horizons(), vec![0.5, 1.0]);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = |o: Overrides| RunSettings::resolve(None, o).unwrap_err().exit;
        assert_eq!(
            bad(Overrides {
                horizon: Some(1.5),
                ..Default::default()
            }),
            1
        );
        assert_eq!(
            bad(Overrides {
                rasters: Some("carrier-pigeon".into()),
                ..Default::default()
            }),
            1
        );
        assert!(toml::from_str::<FileConfig>("polcy = \"cv\"").is_err());
    }
}

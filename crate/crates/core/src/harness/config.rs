use std::path::PathBuf;

use super::{preset, ScenarioConfig, Seeds};
use crate::error::{OmecError, Result};
use crate::omec::Estimator;

/// Run settings shared by the command line and `key=value` config files.
/// Unset fields keep the preset's value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub preset: Option<String>,
    pub seed_truth: Option<u64>,
    pub seed_noise: Option<u64>,
    pub out: Option<PathBuf>,
    pub max_iter: Option<usize>,
    pub neighbors: Option<usize>,
    pub delays: Option<usize>,
    pub steps: Option<usize>,
    pub no_adaptive: Option<bool>,
    pub diag_linear_system: Option<bool>,
    /// Hand the filter the true observation function.
    pub control: Option<bool>,
    /// Use the linear-system estimator inside the loop.
    pub linear_system: Option<bool>,
}

impl RunOptions {
    /// Parses a config file. Keys match the long command line flags
    /// (`seed-truth=7`, `no-adaptive=true`); `_` may stand for `-`. Blank
    /// lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut o = RunOptions::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| OmecError::Config(format!("line {}: {msg}", lineno + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
            let key = key.trim().replace('_', "-");
            let value = value.trim();
            let int = |v: &str| v.parse::<u64>().map_err(|e| err(format!("{key}: {e}")));
            let flag = |v: &str| v.parse::<bool>().map_err(|e| err(format!("{key}: {e}")));
            match key.as_str() {
                "preset" => o.preset = Some(value.to_string()),
                "seed-truth" => o.seed_truth = Some(int(value)?),
                "seed-noise" => o.seed_noise = Some(int(value)?),
                "out" => o.out = Some(PathBuf::from(value)),
                "max-iter" => o.max_iter = Some(int(value)? as usize),
                "neighbors" => o.neighbors = Some(int(value)? as usize),
                "delays" => o.delays = Some(int(value)? as usize),
                "steps" => o.steps = Some(int(value)? as usize),
                "no-adaptive" => o.no_adaptive = Some(flag(value)?),
                "diag-linear-system" => o.diag_linear_system = Some(flag(value)?),
                "control" => o.control = Some(flag(value)?),
                "linear-system" => o.linear_system = Some(flag(value)?),
                _ => return Err(err(format!("unknown key {key:?}"))),
            }
        }
        Ok(o)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OmecError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// `self` with every field set in `over` replaced.
    pub fn overridden_by(self, over: RunOptions) -> Self {
        RunOptions {
            preset: over.preset.or(self.preset),
            seed_truth: over.seed_truth.or(self.seed_truth),
            seed_noise: over.seed_noise.or(self.seed_noise),
            out: over.out.or(self.out),
            max_iter: over.max_iter.or(self.max_iter),
            neighbors: over.neighbors.or(self.neighbors),
            delays: over.delays.or(self.delays),
            steps: over.steps.or(self.steps),
            no_adaptive: over.no_adaptive.or(self.no_adaptive),
            diag_linear_system: over.diag_linear_system.or(self.diag_linear_system),
            control: over.control.or(self.control),
            linear_system: over.linear_system.or(self.linear_system),
        }
    }

    /// The named preset with these options applied, validated.
    pub fn scenario(&self) -> Result<ScenarioConfig> {
        let name = self
            .preset
            .as_deref()
            .ok_or_else(|| OmecError::Config("no preset given".into()))?;
        let mut c = preset(name)?;
        self.apply(&mut c);
        c.validate()?;
        Ok(c)
    }

    pub fn apply(&self, c: &mut ScenarioConfig) {
        let defaults = Seeds::derived(self.seed_truth.unwrap_or(c.seeds.truth));
        if self.seed_truth.is_some() {
            c.seeds = defaults;
        }
        if let Some(s) = self.seed_noise {
            c.seeds.noise = s;
        }
        if let Some(dir) = &self.out {
            c.output_dir = Some(dir.clone());
        }
        if let Some(m) = self.max_iter {
            c.omec.max_iterations = m;
        }
        if let Some(n) = self.neighbors {
            c.omec.neighbors = n;
        }
        if let Some(d) = self.delays {
            c.omec.delays = d;
        }
        if let Some(t) = self.steps {
            c.steps = t;
        }
        if self.no_adaptive == Some(true) {
            c.filter.adaptive = false;
        }
        if let Some(d) = self.diag_linear_system {
            c.diag_linear_system = d;
        }
        if self.control == Some(true) {
            c.wrong_obs = c.true_obs.clone();
        }
        if self.linear_system == Some(true) {
            c.omec.estimator = Estimator::LinearSystem;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flags_and_comments() {
        let o = RunOptions::parse("# comment\npreset = l63\nseed_truth=7\nno-adaptive=true\n\nmax-iter=3\n").unwrap();
        assert_eq!(o.preset.as_deref(), Some("l63"));
        assert_eq!(o.seed_truth, Some(7));
        assert_eq!(o.no_adaptive, Some(true));
        assert_eq!(o.max_iter, Some(3));
        assert_eq!(o.neighbors, None);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunOptions::parse("colour=red").is_err());
        assert!(RunOptions::parse("neighbors=many").is_err());
        assert!(RunOptions::parse("neighbors").is_err());
    }

    #[test]
    fn command_line_wins() {
        let file = RunOptions::parse("preset=l63\nneighbors=50\ndelays=3").unwrap();
        let cli = RunOptions {
            neighbors: Some(80),
            ..RunOptions::default()
        };
        let o = file.overridden_by(cli);
        assert_eq!((o.neighbors, o.delays), (Some(80), Some(3)));
        let c = o.scenario().unwrap();
        assert_eq!((c.omec.neighbors, c.omec.delays), (80, 3));
    }

    #[test]
    fn seed_truth_derives_noise_seed() {
        let o = RunOptions::parse("preset=l63\nseed-truth=9").unwrap();
        assert_eq!(o.scenario().unwrap().seeds, Seeds { truth: 9, noise: 109 });
        let o = RunOptions::parse("preset=l63\nseed-truth=9\nseed-noise=4").unwrap();
        assert_eq!(o.scenario().unwrap().seeds, Seeds { truth: 9, noise: 4 });
    }

    #[test]
    fn control_uses_true_map() {
        let o = RunOptions::parse("preset=l63\ncontrol=true").unwrap();
        let c = o.scenario().unwrap();
        assert_eq!(obs(&c.wrong_obs), obs(&c.true_obs));
    }

    fn obs(f: &crate::observation::ObservationFunction) -> String {
        format!("{f:?}")
    }

    #[test]
    fn invalid_combination_is_a_config_error() {
        let o = RunOptions::parse("preset=l63\nsteps=10\nneighbors=100").unwrap();
        assert!(matches!(o.scenario(), Err(OmecError::Config(_))));
        assert!(matches!(RunOptions::default().scenario(), Err(OmecError::Config(_))));
    }
}

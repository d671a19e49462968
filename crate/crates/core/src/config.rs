//! Run configuration: one flat TOML table per section. Unknown keys are
//! rejected, and `section.key = value` overrides apply on top of the file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DataConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::rsd::DistillConfig;
use crate::schedule::{ScheduleBounds, ScheduleShape, ShiftingSchedule};
use crate::teacher::TeacherTrainConfig;
use crate::vsd::VsdConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    #[serde(rename = "T")]
    pub steps: usize,
    pub eta_1: f64,
    #[serde(rename = "eta_T")]
    pub eta_last: f64,
    pub kappa: f64,
    pub shape: ScheduleShape,
    pub eta_low_max: f64,
    pub eta_high_min: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let b = ScheduleBounds::default();
        ScheduleConfig {
            steps: 15,
            eta_1: 1e-3,
            eta_last: 0.999,
            kappa: 1.0,
            shape: ScheduleShape::LogLinear,
            eta_low_max: b.eta_low_max,
            eta_high_min: b.eta_high_min,
        }
    }
}

impl ScheduleConfig {
    /// Build the schedule and fail on any bound violation.
    pub fn build(&self) -> Result<ShiftingSchedule> {
        let s = ShiftingSchedule::build(self.steps, self.eta_1, self.eta_last, self.kappa, self.shape)?;
        let bad = s.validate(&self.bounds());
        if !bad.is_empty() {
            return Err(Error::Config(bad.join("; ")));
        }
        Ok(s)
    }

    pub fn bounds(&self) -> ScheduleBounds {
        ScheduleBounds { eta_low_max: self.eta_low_max, eta_high_min: self.eta_high_min }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schedule: ScheduleConfig,
    pub data: DataConfig,
    pub teacher: TeacherTrainConfig,
    pub distill: DistillConfig,
    pub vsd: VsdConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with(text, &[])
    }

    /// Parse `text`, then apply `section.key=value` overrides. Values are
    /// read as TOML; anything that does not parse is taken as a string.
    pub fn parse_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        // re-serialize so type errors in overrides are reported like file errors
        let merged = if overrides.is_empty() { text.to_string() } else { table.to_string() };
        let cfg: RunConfig = toml::from_str(&merged).map_err(|e| {
            if overrides.is_empty() {
                Error::Config(e.to_string())
            } else {
                Error::Config(format!("after overrides {overrides:?}: {e}"))
            }
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_with(&text, overrides).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn check(&self) -> Result<()> {
        let s = self.schedule.build()?;
        self.teacher.check()?;
        self.teacher.arch([3, self.data.size, self.data.size])?;
        self.distill.check()?;
        self.distill.timesteps(&s)?;
        self.vsd.check()?;
        if self.eval.seeds.is_empty() {
            return Err(Error::Config("eval.seeds must not be empty".into()));
        }
        Ok(())
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not of the form section.key=value")))?;
    let (section, field) = key
        .trim()
        .split_once('.')
        .ok_or_else(|| Error::Config(format!("override key {key:?} must be section.key")))?;
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let entry = table.entry(section.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match entry {
        toml::Value::Table(t) => {
            t.insert(field.to_string(), value);
            Ok(())
        }
        _ => Err(Error::Config(format!("{section} is not a section"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn distillation_keys() {
        let c = RunConfig::parse("[distill]\nK = 5\nlambda1 = 2\nlambda2 = 0.003\n").unwrap();
        assert_eq!(c.distill.k, 5);
        assert_eq!((c.distill.lambda1, c.distill.lambda2), (2.0, 0.003));
        let dotted = RunConfig::parse("distill.K = 7\n").unwrap();
        assert_eq!(dotted.distill.k, 7);
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let e = RunConfig::parse("[teacher]\nsteps = 3\nlearning_rate = 0.1\n").unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("learning_rate"), "{e}");
        let e = RunConfig::parse("[schedule]\nT = \"many\"\n").unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
    }

    #[test]
    fn round_trip_is_idempotent() {
        let c = RunConfig::parse("[schedule]\nkappa = 0.5\n[distill]\ntimesteps = [3, 15]\nN = 2\n").unwrap();
        let text = c.to_toml();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn overrides_beat_the_file() {
        let c = RunConfig::parse_with("[teacher]\nsteps = 3\n", &["teacher.steps=9".into(), "data.kind=shapes".into()]);
        let c = c.unwrap();
        assert_eq!(c.teacher.steps, 9);
        assert!(RunConfig::parse_with("", &["teacher.nope=1".into()]).is_err());
        assert!(RunConfig::parse_with("", &["steps=1".into()]).is_err());
    }

    #[test]
    fn schedule_bounds_are_enforced() {
        assert!(RunConfig::parse("[schedule]\neta_T = 0.5\n").is_err());
        assert!(RunConfig::parse("[schedule]\nT = 1\n").is_err());
    }
}

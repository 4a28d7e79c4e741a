//! Scenarios bundled with the crate, one per acceptance property.

use crate::scenario::{ConfigError, ScenarioConfig};

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../scenarios/", $name, ".toml")))),*]
    };
}

pub const BUNDLED: &[(&str, &str)] = bundled![
    "synchronous-baseline",
    "sync-unsized-churn",
    "sync-private-attack",
    "partition-private-attack",
    "partition-recovery",
    "partition-recovery-long",
    "partition-equivocation",
    "deadlock-flush",
    "grandpa-rollback",
    "grandpa-rollback-p3",
    "honest-mining-stats",
];

pub fn names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str, overrides: &[String]) -> Result<ScenarioConfig, ConfigError> {
    let text = source(name).ok_or_else(|| ConfigError::Invalid(format!("no bundled scenario named `{name}`")))?;
    ScenarioConfig::from_toml_with_overrides(text, overrides)
}

pub fn all() -> Vec<ScenarioConfig> {
    names().map(|n| load(n, &[]).expect("bundled scenarios are valid")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bundled_scenario_parses_under_its_own_name() {
        for (name, _) in BUNDLED {
            let cfg = load(name, &[]).unwrap();
            assert_eq!(cfg.name, *name);
        }
    }

    #[test]
    fn unknown_name_is_an_error() {
        assert!(load("nope", &[]).is_err());
    }
}

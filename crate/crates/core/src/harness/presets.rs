//! Named presets embedded at build time from `presets/*.json`.

use super::sweep::SweepSpec;
use super::HarnessError;
use crate::config::ExperimentConfig;

/// Configuration presets.
pub const CONFIGS: &[(&str, &str)] = &[
    ("default", include_str!("../../presets/default.json")),
    ("calibrated", include_str!("../../presets/calibrated.json")),
];

/// Sweep presets, one per figure analogue.
pub const SWEEPS: &[(&str, &str)] = &[
    ("fig3", include_str!("../../presets/fig3.json")),
    ("fig4", include_str!("../../presets/fig4.json")),
    ("fig6", include_str!("../../presets/fig6.json")),
    ("fig7", include_str!("../../presets/fig7.json")),
    ("fig8", include_str!("../../presets/fig8.json")),
    ("fig9", include_str!("../../presets/fig9.json")),
    ("fig10", include_str!("../../presets/fig10.json")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    CONFIGS.iter().chain(SWEEPS).map(|(n, _)| *n)
}

/// Raw JSON of any preset.
pub fn text(name: &str) -> Result<&'static str, HarnessError> {
    CONFIGS
        .iter()
        .chain(SWEEPS)
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| HarnessError::UnknownPreset(name.to_string()))
}

pub fn config(name: &str) -> Result<ExperimentConfig, HarnessError> {
    let (_, t) = CONFIGS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| HarnessError::UnknownPreset(name.to_string()))?;
    Ok(ExperimentConfig::from_json(t)?)
}

pub fn sweep(name: &str) -> Result<SweepSpec, HarnessError> {
    let (_, t) = SWEEPS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| HarnessError::UnknownPreset(name.to_string()))?;
    SweepSpec::from_json(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses_and_expands() {
        for (name, _) in CONFIGS {
            config(name).unwrap().validate().unwrap();
        }
        for (name, _) in SWEEPS {
            let s = sweep(name).unwrap();
            assert!(!s.expand().unwrap().is_empty(), "{name}");
            assert!(s.plot.is_some(), "{name} has a plot");
        }
    }

    #[test]
    fn unknown_preset_is_named() {
        assert_eq!(config("fig99").unwrap_err().to_string(), "unknown preset `fig99`");
    }
}

#![allow(dead_code)]

use std::path::PathBuf;

use procopt::PipelineConfig;

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden")
}

pub fn golden_config_path() -> PathBuf {
    golden_dir().join("config.toml")
}

/// The bundled configuration with its sources embedded.
pub fn golden_config() -> PipelineConfig {
    PipelineConfig::load(&golden_config_path()).expect("golden config loads")
}

/// A configuration as TOML, with its sources inlined so it can be written
/// anywhere or posted to the API.
pub fn to_toml(config: &PipelineConfig) -> String {
    toml::to_string(config).expect("config serializes")
}

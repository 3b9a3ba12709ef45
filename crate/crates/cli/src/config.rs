//! TOML run configuration.
//!
//! Layering: built-in defaults, then the preset, then the config file, then
//! explicit command-line flags. Unknown keys and unsupported versions are
//! rejected so typos fail loudly instead of being ignored.

use std::collections::BTreeMap;
use std::path::Path;

use locred::models::{CompressorDefaults, Model, Scale};
use locred::reduction::LocalReductionConfig;
use serde::Deserialize;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub version: u32,
    #[serde(default)]
    pub problem: ProblemSection,
    #[serde(default)]
    pub reduction: ReductionSection,
    #[serde(default)]
    pub lower: SolverSection,
    #[serde(default)]
    pub upper: SolverSection,
    /// Named scalar overrides for the compressor model parameters.
    #[serde(default)]
    pub compressor: BTreeMap<String, f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub model: Option<String>,
    pub scale: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionSection {
    pub epsilon: Option<f64>,
    pub tol_g: Option<f64>,
    pub max_iterations: Option<usize>,
    pub multistarts: Option<usize>,
    pub scenarios_per_iteration: Option<usize>,
    pub component_budget: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub tolerance: Option<f64>,
    pub max_outer_iterations: Option<usize>,
    pub max_inner_iterations: Option<usize>,
}

pub fn parse_model(name: &str) -> Result<Model, String> {
    match name {
        "building" => Ok(Model::Building),
        "compressor" => Ok(Model::Compressor),
        "example1" => Ok(Model::Example1),
        other => Err(format!(
            "unknown model '{other}' (expected building, compressor, or example1)"
        )),
    }
}

pub fn parse_scale(name: &str) -> Result<Scale, String> {
    match name {
        "desk" => Ok(Scale::Desk),
        "paper" => Ok(Scale::Paper),
        other => Err(format!("unknown scale '{other}' (expected desk or paper)")),
    }
}

pub fn load(path: &Path) -> Result<FileConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let config: FileConfig =
        toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))?;
    if config.version != CONFIG_VERSION {
        return Err(format!(
            "config {} has version {}, this build supports version {CONFIG_VERSION}",
            path.display(),
            config.version
        ));
    }
    Ok(config)
}

impl FileConfig {
    /// Fold the file's reduction/solver sections into `config`.
    pub fn apply_reduction(&self, config: &mut LocalReductionConfig) {
        let r = &self.reduction;
        if let Some(v) = r.epsilon {
            config.epsilon = v;
        }
        if let Some(v) = r.tol_g {
            config.tol_g = v;
        }
        if let Some(v) = r.max_iterations {
            config.max_iterations = v;
        }
        if let Some(v) = r.multistarts {
            config.multistarts = v;
        }
        if let Some(v) = r.scenarios_per_iteration {
            config.scenarios_per_iteration = v;
        }
        if let Some(v) = r.component_budget {
            config.component_budget = v;
        }
        if let Some(v) = r.seed {
            config.seed = v;
        }
        if let Some(v) = self.lower.tolerance {
            config.lower_options.tolerance = v;
        }
        if let Some(v) = self.lower.max_outer_iterations {
            config.lower_options.max_outer_iterations = v;
        }
        if let Some(v) = self.lower.max_inner_iterations {
            config.lower_options.max_inner_iterations = v;
        }
        if let Some(v) = self.upper.tolerance {
            config.upper_options.tolerance = v;
        }
        if let Some(v) = self.upper.max_outer_iterations {
            config.upper_options.max_outer_iterations = v;
        }
        if let Some(v) = self.upper.max_inner_iterations {
            config.upper_options.max_inner_iterations = v;
        }
    }

    /// Fold the `[compressor]` table into model defaults. Errors on names
    /// the model does not recognize.
    pub fn apply_compressor(&self, defaults: &mut CompressorDefaults) -> Result<(), String> {
        for (name, value) in &self.compressor {
            if !defaults.set_by_name(name, *value) {
                return Err(format!("unknown compressor parameter '{name}'"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn load_str(text: &str) -> Result<FileConfig, String> {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        load(f.path())
    }

    #[test]
    fn full_config_parses_and_applies() {
        let cfg = load_str(
            r#"
version = 1
[problem]
model = "compressor"
scale = "desk"
[reduction]
epsilon = 1e-4
multistarts = 3
seed = 7
[lower]
tolerance = 1e-7
[compressor]
a1 = 0.002
torque_ff = 650.0
"#,
        )
        .unwrap();
        let mut reduction = LocalReductionConfig::default();
        cfg.apply_reduction(&mut reduction);
        assert_eq!(reduction.epsilon, 1e-4);
        assert_eq!(reduction.multistarts, 3);
        assert_eq!(reduction.seed, 7);
        assert_eq!(reduction.lower_options.tolerance, 1e-7);
        let mut defaults = CompressorDefaults::default();
        cfg.apply_compressor(&mut defaults).unwrap();
        assert_eq!(defaults.a1, 0.002);
        assert_eq!(defaults.torque_ff, 650.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = load_str("version = 1\n[reduction]\nepsilonn = 1e-4\n").unwrap_err();
        assert!(err.contains("epsilonn"), "{err}");
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let err = load_str("version = 99\n").unwrap_err();
        assert!(err.contains("version"), "{err}");
    }

    #[test]
    fn unknown_compressor_parameter_is_rejected() {
        let cfg = load_str("version = 1\n[compressor]\nbogus = 1.0\n").unwrap();
        let mut defaults = CompressorDefaults::default();
        assert!(cfg.apply_compressor(&mut defaults).is_err());
    }
}

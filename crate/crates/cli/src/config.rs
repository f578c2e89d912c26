//! Run configuration: defaults, then the `--config` file, then dotted-key
//! overrides from the command line.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use speckle_ptycho::recon::ReconConfig;
use speckle_ptycho::register::RegistrationMode;
use speckle_ptycho::simulate::{DiffuserSpec, NoiseModel, ObjectSource, Optics, SceneSpec, SimulationConfig, TrajectorySpec};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Registration {
    pub mode: RegistrationMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Evaluation {
    /// Side of the central evaluation region as a fraction of the grid.
    pub mask_fraction: f64,
}

impl Default for Evaluation {
    fn default() -> Self {
        Self { mask_fraction: 0.5 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub optics: Optics,
    pub scene: SceneSpec,
    pub diffuser: DiffuserSpec,
    pub trajectory: TrajectorySpec,
    pub noise: NoiseModel,
    pub recon: ReconConfig,
    pub registration: Registration,
    pub evaluation: Evaluation,
}

impl RunConfig {
    pub fn simulation(&self) -> SimulationConfig {
        SimulationConfig {
            optics: self.optics.clone(),
            scene: self.scene.clone(),
            diffuser: self.diffuser.clone(),
            trajectory: self.trajectory.clone(),
            noise: self.noise.clone(),
        }
    }

    /// Every seed in the configuration.
    pub fn set_seed(&mut self, seed: u64) {
        self.diffuser.seed = seed;
        self.trajectory.seed = seed;
        self.noise.seed = seed;
        self.recon.order_seed = seed;
        if let ObjectSource::Cells { seed: s, .. } = &mut self.scene.object {
            *s = seed;
        }
    }

    /// Seeds as `(name, value)` pairs, for logging.
    pub fn seeds(&self) -> Vec<(&'static str, u64)> {
        let mut out = vec![
            ("diffuser", self.diffuser.seed),
            ("trajectory", self.trajectory.seed),
            ("noise", self.noise.seed),
            ("frame order", self.recon.order_seed),
        ];
        if let ObjectSource::Cells { seed, .. } = &self.scene.object {
            out.push(("cells", *seed));
        }
        out
    }
}

/// Resolves the full configuration before any work starts.
pub fn resolve(file: Option<&Path>, overrides: &[(String, String)], seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut value = serde_json::to_value(RunConfig::default()).expect("default config serializes");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let patch: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if !patch.is_object() {
            return Err(CliError::Usage(format!("{}: config must be a JSON object", path.display())));
        }
        merge(&mut value, patch);
    }
    for (key, raw) in overrides {
        set_dotted(&mut value, key, parse_value(raw))?;
    }
    let mut config: RunConfig =
        serde_json::from_value(value).map_err(|e| CliError::Usage(format!("configuration: {e}")))?;
    if let Some(seed) = seed {
        config.set_seed(seed);
    }
    config.recon.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    config.optics.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if !(config.evaluation.mask_fraction > 0.0 && config.evaluation.mask_fraction <= 1.0) {
        return Err(CliError::Usage("evaluation.mask_fraction must lie in (0, 1]".into()));
    }
    Ok(config)
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Numbers, booleans, `null` and JSON literals are parsed; anything else is a string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_dotted(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("malformed config key '{key}'")));
    }
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let Value::Object(map) = node else {
            return Err(CliError::Usage(format!(
                "config key '{key}': '{}' is not a section",
                parts[..i].join(".")
            )));
        };
        if i + 1 == parts.len() {
            // A new variant tag discards the previous variant's fields.
            if *part == "kind" && map.get("kind") != Some(&value) {
                map.clear();
            }
            map.insert(part.to_string(), value);
            return Ok(());
        }
        if i == 0 && !map.contains_key(*part) {
            return Err(CliError::Usage(format!("unknown config key '{key}'")));
        }
        node = map.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("key has at least one part")
}

/// Pulls `--section.key value` and `--section.key=value` pairs out of the
/// argument list, leaving everything else for the regular parser.
pub fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (key, inline) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if !key.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .ok_or_else(|| CliError::Usage(format!("--{key} needs a value")))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

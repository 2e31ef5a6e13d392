use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Everything needed to re-run a command: the resolved argument list, the
/// effective configuration and where each numerical default came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments as given on the command line, defaults filled in.
    pub args: Vec<String>,
    pub config: BTreeMap<String, Value>,
    /// `flag`, `env` or `default` for the settings that have env overrides.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sources: BTreeMap<String, String>,
    pub artifacts: Vec<PathBuf>,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            args: vec![command.into()],
            config: BTreeMap::new(),
            sources: BTreeMap::new(),
            artifacts: Vec::new(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    /// Record `--flag value` in both the argument list and the config.
    pub fn flag(&mut self, name: &str, value: impl Serialize + ToString) {
        self.args.push(format!("--{name}"));
        self.args.push(value.to_string());
        self.set(name, value);
    }

    pub fn set(&mut self, name: &str, value: impl Serialize) {
        self.config.insert(
            name.replace('-', "_"),
            serde_json::to_value(value).expect("serializable config value"),
        );
    }

    /// Finds the manifest in a trajectory, a verify report or a sidecar file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let inner = value.get("manifest").cloned().unwrap_or(value);
        serde_json::from_value(inner)
            .map_err(|e| CliError::Usage(format!("{}: no run manifest ({e})", path.display())))
    }
}

/// Sidecar manifest path for outputs whose schema has no manifest slot.
pub fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// A numerical setting resolved from flag, then environment, then default.
pub fn resolve(
    flag: Option<f64>,
    var: &str,
    default: f64,
) -> Result<(f64, &'static str), CliError> {
    if let Some(v) = flag {
        return Ok((v, "flag"));
    }
    match std::env::var(var) {
        Ok(s) => s
            .trim()
            .parse::<f64>()
            .map(|v| (v, "env"))
            .map_err(|_| CliError::Usage(format!("{var}={s:?} is not a number"))),
        Err(_) => Ok((default, "default")),
    }
}

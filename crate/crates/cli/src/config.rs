//! Config-file merging. The file is TOML with one table per subcommand
//! (`[simulate]`, `[run-llm]`, ...) using the flag names with `_` for `-`,
//! plus an optional top-level `jobs`. Flags given on the command line win.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug, Default)]
pub struct ConfigFile {
    root: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        match serde_json::to_value(table)? {
            Value::Object(root) => Ok(ConfigFile { root }),
            _ => bail!("config root must be a table"),
        }
    }

    pub fn jobs(&self) -> Option<usize> {
        self.root.get("jobs").and_then(Value::as_u64).map(|j| j as usize)
    }

    /// Overlays the flags set on the command line onto `[section]`.
    pub fn resolve<T: Serialize + DeserializeOwned>(&self, section: &str, cli: &T) -> Result<T> {
        let mut merged = match self.root.get(section) {
            Some(Value::Object(m)) => m.clone(),
            Some(_) => bail!("config section [{section}] must be a table"),
            None => Map::new(),
        };
        let Value::Object(flags) = serde_json::to_value(cli)? else {
            bail!("internal: arguments must serialize to a map");
        };
        for (k, v) in flags {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
        serde_json::from_value(Value::Object(merged)).with_context(|| format!("invalid value in config section [{section}]"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Args {
        runs: Option<usize>,
        seed: Option<u64>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        cors: bool,
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "jobs = 2\n[simulate]\nruns = 10\nseed = 5\ncors = true\n").unwrap();
        let cfg = ConfigFile::load(&p).unwrap();
        assert_eq!(cfg.jobs(), Some(2));
        let cli = Args {
            seed: Some(9),
            ..Default::default()
        };
        let got = cfg.resolve("simulate", &cli).unwrap();
        assert_eq!(
            got,
            Args {
                runs: Some(10),
                seed: Some(9),
                cors: true
            }
        );
        assert_eq!(cfg.resolve("fit", &cli).unwrap(), cli);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[simulate]\nrunz = 10\n").unwrap();
        assert!(ConfigFile::load(&p).unwrap().resolve("simulate", &Args::default()).is_err());
    }
}

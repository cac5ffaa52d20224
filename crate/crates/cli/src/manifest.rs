use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::failure::Failure;

/// Resolved parameters, seeds and outputs of one run. `--jobs` is left out
/// so that manifests agree across thread counts.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub sub_seeds: BTreeMap<String, u64>,
    pub params: Value,
    pub outputs: Vec<String>,
    pub results: Value,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, params: &impl Serialize) -> Self {
        Manifest {
            tool: "floorloc",
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            seed,
            sub_seeds: BTreeMap::new(),
            params: serde_json::to_value(params).unwrap_or(Value::Null),
            outputs: Vec::new(),
            results: Value::Null,
        }
    }

    /// Derives and records a named sub-seed.
    pub fn sub_seed(&mut self, name: &str) -> u64 {
        let s = floorloc::seed::sub_seed(self.seed, name);
        self.sub_seeds.insert(name.into(), s);
        s
    }

    /// Writes `contents` under `dir` and lists it as an output.
    pub fn write(&mut self, dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Failure::io(&path, e))?;
        self.outputs.push(name.into());
        Ok(())
    }

    pub fn finish(self, dir: &Path) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(&self).map_err(|e| Failure::new("internal", e.to_string()))?;
        let path = dir.join("manifest.json");
        std::fs::write(&path, text + "\n").map_err(|e| Failure::io(&path, e))
    }
}

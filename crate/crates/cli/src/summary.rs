//! Machine-readable run summary printed to stdout.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct PhaseTiming {
    pub name: String,
    pub elapsed_ms: f64,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub command: String,
    pub phases: Vec<PhaseTiming>,
    pub total_ms: f64,
    pub outputs: BTreeMap<String, String>,
    pub result: Value,
    #[serde(skip)]
    started: Instant,
}

impl Summary {
    pub fn new(command: &str) -> Self {
        Summary {
            schema_version: SUMMARY_SCHEMA_VERSION,
            command: command.into(),
            phases: Vec::new(),
            total_ms: 0.0,
            outputs: BTreeMap::new(),
            result: Value::Null,
            started: Instant::now(),
        }
    }

    /// Runs `f` as a named phase and records its wall time.
    pub fn phase<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.phases.push(PhaseTiming {
            name: name.into(),
            elapsed_ms: t.elapsed().as_secs_f64() * 1e3,
        });
        out
    }

    pub fn output(&mut self, role: &str, path: &Path) {
        self.outputs.insert(role.into(), path.display().to_string());
    }

    pub fn finish(mut self, result: Value) -> Self {
        self.result = result;
        self.total_ms = self.started.elapsed().as_secs_f64() * 1e3;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("summary serializes")
    }
}

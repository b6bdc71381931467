//! Run metadata written next to the results.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub config_path: String,
    pub config_sha256: String,
    pub master_seed: u64,
    pub workers: usize,
    pub started: f64,
    pub experiments: Vec<Value>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn to_json(&self, exit_status: i32, message: Option<&str>) -> Value {
        let finished = unix_now();
        json!({
            "tool": "tiltray",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": self.config_path,
            "config_sha256": self.config_sha256,
            "master_seed": self.master_seed,
            "workers": self.workers,
            "started_unix": self.started,
            "finished_unix": finished,
            "wall_seconds": finished - self.started,
            "exit_status": exit_status,
            "message": message,
            "experiments": self.experiments,
            "outputs": self.outputs,
        })
    }

    /// Writes `manifest.json` into `dir` through a temporary file and rename.
    pub fn write(&self, dir: &Path, exit_status: i32, message: Option<&str>) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json(exit_status, message))? + "\n";
        let tmp = dir.join(".manifest.json.tmp");
        std::fs::write(&tmp, text)?;
        std::fs::rename(tmp, dir.join("manifest.json"))
    }
}

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use tcb_core::Result;

#[derive(Serialize)]
pub struct RunManifest<'a, C: Serialize> {
    pub command: &'a str,
    pub config: &'a C,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub timestamp_unix: f64,
    pub wall_time_seconds: f64,
    pub version: &'static str,
}

pub struct Recorder {
    start: Instant,
}

impl Recorder {
    pub fn start() -> Self {
        Recorder { start: Instant::now() }
    }

    pub fn write<C: Serialize>(
        &self,
        path: &Path,
        command: &str,
        config: &C,
        seed: Option<u64>,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
    ) -> Result<()> {
        let m = RunManifest {
            command,
            config,
            seed,
            inputs,
            outputs,
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0),
            wall_time_seconds: self.start.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION"),
        };
        std::fs::write(path, serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(())
    }
}

/// `out.json` → `out.manifest.json`.
pub fn sibling_manifest(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.manifest.json"))
}

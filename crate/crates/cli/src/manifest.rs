use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Result;
use diffboot_core::config::FlatConfig;

pub const BUILD_ID: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Resolved settings plus provenance of one run.
///
/// Everything outside the comment header is plain config text, so
/// `--config manifest.txt` replays the run.
#[derive(Debug)]
pub struct RunManifest {
    pub command: String,
    pub config: FlatConfig,
    pub started: u64,
    pub finished: Option<u64>,
    pub stage_seeds: Vec<(String, u64)>,
    pub status: String,
}

impl RunManifest {
    pub fn new(command: &str, config: FlatConfig) -> Self {
        Self {
            command: command.to_string(),
            config,
            started: unix_now(),
            finished: None,
            stage_seeds: Vec::new(),
            status: "running".into(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("# command: {}\n", self.command));
        s.push_str(&format!("# build: {BUILD_ID}\n"));
        s.push_str(&format!("# started_unix: {}\n", self.started));
        if let Some(f) = self.finished {
            s.push_str(&format!("# finished_unix: {f}\n"));
        }
        s.push_str(&format!("# status: {}\n", self.status));
        for (stage, seed) in &self.stage_seeds {
            s.push_str(&format!("# seed.{stage}: {seed}\n"));
        }
        s.push_str(&self.config.to_text());
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("manifest.txt"), self.to_text())?;
        Ok(())
    }
}

use std::path::{Path, PathBuf};

use serde::Serialize;

#[derive(Serialize)]
pub struct RunLog<'a, A: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub seed: u64,
    pub threads: usize,
    pub args: &'a A,
    /// Effective configuration after defaults and parsing.
    pub effective: serde_json::Value,
}

impl<A: Serialize> RunLog<'_, A> {
    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// `--log` if given, else `<out>.log.json`.
pub fn path_for(explicit: Option<&Path>, out: &Path) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let mut s = out.as_os_str().to_owned();
            s.push(".log.json");
            PathBuf::from(s)
        }
    }
}

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::config::RunConfig;

pub const ROOT_ENV: &str = "MIXCOMP_RUN_ROOT";
pub const LOCK_FILE: &str = ".lock";
pub const CONFIG_ECHO: &str = "config.json";

/// A freshly created output directory, locked for the lifetime of the value.
#[derive(Debug)]
pub struct RunDir {
    pub path: PathBuf,
    lock: PathBuf,
}

impl RunDir {
    /// Creates `root/name`, or `root/name-1`, `root/name-2`, … if taken.
    /// `root` defaults to `$MIXCOMP_RUN_ROOT`, then `runs`.
    pub fn create(root: Option<&Path>, name: &str) -> Result<Self> {
        let root = match root {
            Some(r) => r.to_path_buf(),
            None => std::env::var_os(ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from),
        };
        fs::create_dir_all(&root).with_context(|| format!("creating run root {}", root.display()))?;
        let mut path = root.join(name);
        let mut k = 0;
        loop {
            match fs::create_dir(&path) {
                Ok(()) => break,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    k += 1;
                    path = root.join(format!("{name}-{k}"));
                }
                Err(e) => return Err(e).with_context(|| format!("creating run directory {}", path.display())),
            }
        }
        let lock = path.join(LOCK_FILE);
        if let Err(e) = OpenOptions::new().write(true).create_new(true).open(&lock) {
            bail!("run directory {} is locked: {e}", path.display());
        }
        Ok(Self { path, lock })
    }

    pub fn join(&self, name: impl AsRef<Path>) -> PathBuf {
        self.path.join(name)
    }

    pub fn echo_config(&self, cfg: &RunConfig) -> Result<()> {
        let text = serde_json::to_string_pretty(cfg)?;
        fs::write(self.join(CONFIG_ECHO), text + "\n").with_context(|| format!("writing {CONFIG_ECHO}"))?;
        Ok(())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

use std::fmt::Display;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use iaa_core::dataset::{load_manifest, FileCheck, Manifest};
use iaa_core::CanonicalGrid;
use serde::Serialize;

use crate::cli::Global;

/// Shared state for one invocation: global flags and the warning count.
pub struct Ctx {
    pub global: Global,
    pub warnings: usize,
}

impl Ctx {
    pub fn new(global: Global) -> Self {
        Self { global, warnings: 0 }
    }

    pub fn init_threads(&self) -> Result<()> {
        if let Some(n) = self.global.threads {
            if n == 0 {
                bail!("--threads must be at least 1");
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring thread pool")?;
        }
        Ok(())
    }

    pub fn warn(&mut self, msg: impl Display) {
        eprintln!("warning: {msg}");
        self.warnings += 1;
    }

    pub fn seed(&self, command: &str) -> Result<u64> {
        match self.global.seed {
            Some(s) => Ok(s),
            None => bail!("--seed is required for `{command}`"),
        }
    }

    pub fn grid(&self) -> Result<CanonicalGrid> {
        Ok(CanonicalGrid::new(self.global.grid)?)
    }

    /// Path inside the output directory, creating the directory.
    pub fn out_file(&self, name: &str) -> Result<PathBuf> {
        let dir = &self.global.out;
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir.join(name))
    }

    /// `given`, or `<out>/<name>` if not given.
    pub fn input(&self, given: &Option<PathBuf>, name: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.global.out.join(name))
    }

    /// Loads `--manifest`, falling back to `<out>/manifest.json`.
    pub fn manifest(&mut self, check: FileCheck) -> Result<Manifest> {
        let path = self.input(&self.global.manifest, "manifest.json");
        if self.global.manifest.is_none() && !path.exists() {
            bail!("--manifest is required (no {} found)", path.display());
        }
        let manifest = load_manifest(&path, check).with_context(|| format!("loading manifest {}", path.display()))?;
        for w in &manifest.warnings {
            self.warn(w);
        }
        Ok(manifest)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(std::io::BufWriter::new(f))
}

pub fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(std::io::BufReader::new(f))
}

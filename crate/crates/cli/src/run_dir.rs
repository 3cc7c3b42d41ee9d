//! Output run directories: artifacts plus a manifest.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{json, Value};

pub const MANIFEST: &str = "manifest.json";

pub struct RunDir {
    root: PathBuf,
    command: &'static str,
    artifacts: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path, command: &'static str) -> Result<Self> {
        std::fs::create_dir_all(root)
            .with_context(|| format!("cannot create {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            command,
            artifacts: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes `contents` to `name` (relative, `/`-separated) and records it.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("cannot create {}", parent.display()))?;
        }
        std::fs::write(&path, contents)
            .with_context(|| format!("cannot write {}", path.display()))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    /// Writes the manifest; `config` names the echoed effective config file.
    pub fn finish(mut self, config: &str, extra: Value) -> Result<()> {
        self.artifacts.sort();
        let mut manifest = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "artifacts": self.artifacts,
        });
        if let (Value::Object(m), Value::Object(e)) = (&mut manifest, extra) {
            m.extend(e);
        }
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.root.join(MANIFEST);
        std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
    }
}

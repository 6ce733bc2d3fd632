use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use vcm_core::basis::QuadratureSpec;

pub const QUAD_ENV: &str = "VCM_QUAD_NODES";

/// Reads a JSON argument given either inline (starting with `{`) or as a file path.
pub fn load_json<T: DeserializeOwned>(arg: &str, what: &str) -> Result<T> {
    let (text, origin) = read_arg(arg, what)?;
    serde_json::from_str(&text).with_context(|| format!("{what} ({origin}) is invalid"))
}

/// Raw text of a JSON argument and a label for error messages.
pub fn read_arg(arg: &str, what: &str) -> Result<(String, String)> {
    if arg.trim_start().starts_with('{') {
        Ok((arg.to_string(), "inline".into()))
    } else {
        let text = fs::read_to_string(arg).with_context(|| format!("cannot read {what} file '{arg}'"))?;
        Ok((text, arg.to_string()))
    }
}

pub fn read_text(path: &Path, what: &str) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {what} file '{}'", path.display()))
}

/// Quadrature override from the environment, if set.
pub fn quad_override() -> Result<Option<QuadratureSpec>> {
    match std::env::var(QUAD_ENV) {
        Ok(v) => {
            let nodes: usize = v
                .trim()
                .parse()
                .with_context(|| format!("{QUAD_ENV} must be a positive integer, got '{v}'"))?;
            if nodes == 0 {
                bail!("{QUAD_ENV} must be a positive integer, got '{v}'");
            }
            Ok(Some(QuadratureSpec::with_nodes(nodes)))
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => bail!("{QUAD_ENV}: {e}"),
    }
}

/// Output directory that receives files through temp file + rename.
pub struct OutDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory '{}'", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let target = self.dir.join(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)
            .with_context(|| format!("output directory '{}' is not writable", self.dir.display()))?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&target)
            .with_context(|| format!("cannot write '{}'", target.display()))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }
}

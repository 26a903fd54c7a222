use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use screener_core::Result;

use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.json";

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a, A: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    arguments: &'a A,
    config: &'a RunConfig,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

/// Output directory of one command. Files go through here so the manifest
/// can list their digests.
pub struct RunDir {
    root: Option<PathBuf>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl RunDir {
    pub fn new(root: Option<&Path>) -> Result<Self> {
        if let Some(root) = root {
            fs::create_dir_all(root)?;
        }
        Ok(RunDir {
            root: root.map(Path::to_path_buf),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    /// Records an input file's digest under the path it was given as.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        if let Some(root) = &self.root {
            fs::write(root.join(name), bytes)?;
            self.outputs.insert(name.to_string(), sha256_hex(bytes));
        }
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> Result<()>,
    ) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write_bytes(name, &buf)
    }

    pub fn finish<A: Serialize>(self, command: &str, arguments: &A, config: &RunConfig) -> Result<()> {
        let Some(root) = &self.root else { return Ok(()) };
        let digests = |m: &BTreeMap<String, String>| {
            m.iter()
                .map(|(p, h)| FileDigest {
                    path: p.clone(),
                    sha256: h.clone(),
                })
                .collect()
        };
        let manifest = Manifest {
            tool: "screener",
            version: env!("CARGO_PKG_VERSION"),
            command,
            arguments,
            config,
            inputs: digests(&self.inputs),
            outputs: digests(&self.outputs),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(root.join(MANIFEST), text)?;
        Ok(())
    }
}

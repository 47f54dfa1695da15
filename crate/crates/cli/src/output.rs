use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// What identifies a run. The output directory is left out of the hash so
/// a rerun elsewhere reproduces the same bytes.
#[derive(Serialize)]
struct Identity<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    config: &'a RunConfig,
}

#[derive(Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub manifest_sha256: String,
    pub config: RunConfig,
    pub outputs: Vec<String>,
}

pub struct Sink {
    dir: PathBuf,
    pub hash: String,
    command: String,
    config: RunConfig,
    outputs: Vec<String>,
}

impl Sink {
    pub fn new(command: &str, config: &RunConfig) -> Result<Self> {
        let mut hashed = config.clone();
        hashed.out = PathBuf::new();
        let id = Identity { tool: "decotree", version: env!("CARGO_PKG_VERSION"), command, config: &hashed };
        let hash = hex::encode(Sha256::digest(serde_json::to_vec(&id)?));
        fs::create_dir_all(&config.out).with_context(|| format!("creating {}", config.out.display()))?;
        Ok(Sink { dir: config.out.clone(), hash, command: command.into(), config: config.clone(), outputs: Vec::new() })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        self.outputs.push(name.into());
        Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
    }

    /// CSV with a `# manifest_sha256=` comment line above the header.
    pub fn csv<R: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = R>) -> Result<()> {
        let mut f = self.create(name)?;
        writeln!(f, "# manifest_sha256={}", self.hash)?;
        let mut w = csv::Writer::from_writer(f);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// JSON object with the manifest hash added as a field.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut v = serde_json::to_value(value)?;
        if let Some(obj) = v.as_object_mut() {
            obj.insert("manifest_sha256".into(), self.hash.clone().into());
        }
        let mut f = self.create(name)?;
        serde_json::to_writer_pretty(&mut f, &v)?;
        writeln!(f)?;
        Ok(())
    }

    pub fn text(&mut self, name: &str, content: &str) -> Result<()> {
        let mut f = self.create(name)?;
        f.write_all(content.as_bytes())?;
        Ok(())
    }

    pub fn finish(self) -> Result<PathBuf> {
        let m = Manifest {
            tool: "decotree".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command,
            manifest_sha256: self.hash,
            config: self.config,
            outputs: self.outputs,
        };
        let path = self.dir.join("manifest.json");
        let mut f = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut f, &m)?;
        writeln!(f)?;
        Ok(path)
    }
}

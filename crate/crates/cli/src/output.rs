use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use anyhow::Context;
use serde::Serialize;

use seqedit::config::BenchConfig;
use seqedit::seed::fnv1a64;

/// Bad flags or arguments; maps to exit code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(bytes)
        .and_then(|()| f.sync_all())
        .with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn file_digest(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}

pub fn timestamp(t: SystemTime) -> String {
    humantime::format_rfc3339_seconds(t).to_string()
}

#[derive(Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub fnv1a64: String,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub methods: Vec<String>,
    pub config: BenchConfig,
    pub started: String,
    pub finished: String,
    pub files: Vec<FileEntry>,
}

/// Collects every file written during a run, in write order.
pub struct OutDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl OutDir {
    pub fn create(root: &Path) -> anyhow::Result<OutDir> {
        for sub in ["stages", "tables", "checkpoints"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(OutDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> anyhow::Result<()> {
        write_atomic(&self.root.join(rel), bytes)?;
        self.files.retain(|f| f.path != rel);
        self.files.push(FileEntry {
            path: rel.to_string(),
            bytes: bytes.len() as u64,
            fnv1a64: file_digest(bytes),
        });
        Ok(())
    }

    pub fn finish(self, mut manifest: RunManifest) -> anyhow::Result<()> {
        manifest.files = self.files;
        manifest.finished = timestamp(SystemTime::now());
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        write_atomic(&self.root.join("manifest.json"), &bytes)
    }
}

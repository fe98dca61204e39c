use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{PipelineError, Stage};
use crate::ContentHash;

const MANIFEST: &str = "manifest.txt";

/// Record written after a stage's artifacts; its presence marks the stage complete.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub stage: Stage,
    pub key: ContentHash,
    pub upstream: Vec<(Stage, ContentHash)>,
    pub artifacts: Vec<(String, ContentHash)>,
    /// Canonical config lines the key was computed from.
    pub config: String,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = format!("stage = {}\nkey = {}\n", self.stage, self.key);
        for (s, h) in &self.upstream {
            out += &format!("upstream.{s} = {h}\n");
        }
        for (name, h) in &self.artifacts {
            out += &format!("artifact.{name} = {h}\n");
        }
        for line in self.config.lines() {
            out += &format!("config.{line}\n");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut stage = None;
        let mut key = None;
        let mut upstream = Vec::new();
        let mut artifacts = Vec::new();
        let mut config = String::new();
        for line in text.lines() {
            let (k, v) = line.split_once(" = ").ok_or_else(|| format!("malformed line `{line}`"))?;
            let hash = || v.parse::<ContentHash>().map_err(|e| format!("{k}: {e}"));
            if k == "stage" {
                stage = Some(v.parse::<Stage>()?);
            } else if k == "key" {
                key = Some(hash()?);
            } else if let Some(s) = k.strip_prefix("upstream.") {
                upstream.push((s.parse::<Stage>()?, hash()?));
            } else if let Some(a) = k.strip_prefix("artifact.") {
                artifacts.push((a.to_string(), hash()?));
            } else if let Some(c) = k.strip_prefix("config.") {
                config += &format!("{c} = {v}\n");
            } else {
                return Err(format!("unknown manifest entry `{k}`"));
            }
        }
        Ok(Self {
            stage: stage.ok_or("missing stage")?,
            key: key.ok_or("missing key")?,
            upstream,
            artifacts,
            config,
        })
    }

    pub fn upstream(&self, stage: Stage) -> Option<ContentHash> {
        self.upstream.iter().find(|(s, _)| *s == stage).map(|(_, h)| *h)
    }
}

/// `workdir/<kind>/<short key>/`.
pub fn stage_dir(workdir: &Path, stage: Stage, key: &ContentHash) -> PathBuf {
    workdir.join(stage.directory()).join(key.short())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| PipelineError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
}

/// Writes the artifacts then the manifest.
pub fn commit(dir: &Path, manifest_base: Manifest, files: &[(&str, Vec<u8>)]) -> Result<Manifest, PipelineError> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let _ = fs::remove_file(dir.join(MANIFEST));
    let mut manifest = manifest_base;
    manifest.artifacts.clear();
    for (name, bytes) in files {
        write_atomic(&dir.join(name), bytes)?;
        manifest.artifacts.push((name.to_string(), ContentHash::of_bytes(bytes)));
    }
    write_atomic(&dir.join(MANIFEST), manifest.to_text().as_bytes())?;
    Ok(manifest)
}

pub enum Status {
    Missing,
    Complete,
    Corrupt(String),
}

/// Reads a stage's manifest and re-hashes every artifact it lists.
pub fn check(dir: &Path, stage: Stage, key: &ContentHash) -> Status {
    let Ok(text) = fs::read_to_string(dir.join(MANIFEST)) else {
        return Status::Missing;
    };
    let manifest = match Manifest::parse(&text) {
        Ok(m) => m,
        Err(e) => return Status::Corrupt(format!("manifest: {e}")),
    };
    if manifest.stage != stage || manifest.key != *key {
        return Status::Corrupt(format!("manifest belongs to {} {}", manifest.stage, manifest.key.short()));
    }
    for (name, expected) in &manifest.artifacts {
        match fs::read(dir.join(name)) {
            Ok(bytes) if ContentHash::of_bytes(&bytes) == *expected => {}
            Ok(_) => return Status::Corrupt(format!("{name} does not match its recorded hash")),
            Err(e) => return Status::Corrupt(format!("{name}: {e}")),
        }
    }
    Status::Complete
}

/// Exclusive claim on a workdir, released on drop.
#[derive(Debug)]
pub struct WorkdirLock {
    path: PathBuf,
}

impl WorkdirLock {
    pub fn acquire(workdir: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(workdir).map_err(|e| PipelineError::io(workdir, e))?;
        let path = workdir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(path)),
            Err(e) => Err(PipelineError::io(&path, e)),
        }
    }
}

impl Drop for WorkdirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

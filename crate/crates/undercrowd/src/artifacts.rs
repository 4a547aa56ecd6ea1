//! Run directories, provenance blocks and atomic artifact writes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, Result};

pub const TOOL: &str = "undercrowd";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| AppError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| AppError::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub sha256: String,
}

/// Everything needed to reproduce an artifact. Holds no timestamps or
/// absolute paths, so identical runs give identical bytes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub inputs: Vec<InputDigest>,
}

impl Provenance {
    pub fn new(subcommand: &str, config_hash: &str, seed: u64, threads: usize) -> Self {
        Self {
            tool: String::from(TOOL),
            version: String::from(env!("CARGO_PKG_VERSION")),
            subcommand: String::from(subcommand),
            config_hash: String::from(config_hash),
            seed,
            threads,
            inputs: Vec::new(),
        }
    }

    /// Records the digest of an input file.
    pub fn record_input(&mut self, role: &str, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
        self.inputs.push(InputDigest {
            role: String::from(role),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }
}

/// A JSON artifact: payload plus the provenance of the run that made it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub provenance: Provenance,
    pub data: T,
}

/// Reads the payload of a JSON artifact written by [`RunDir::write_json`].
pub fn read_artifact<T: DeserializeOwned>(path: &Path) -> Result<Artifact<T>> {
    crate::io::read_json(path)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub provenance: Provenance,
    pub files: Vec<FileEntry>,
}

/// Output directory of one subcommand run.
pub struct RunDir {
    pub dir: PathBuf,
    pub provenance: Provenance,
    files: Vec<FileEntry>,
}

impl RunDir {
    /// `<out>/<subcommand>-<first 8 hex of the config hash>/`, or `out`
    /// itself when `in_place`.
    pub fn create(out: &Path, provenance: Provenance, in_place: bool) -> Result<Self> {
        let dir = if in_place {
            out.to_path_buf()
        } else {
            out.join(format!("{}-{}", provenance.subcommand, &provenance.config_hash[..8]))
        };
        fs::create_dir_all(&dir).map_err(|e| AppError::io(&dir, e))?;
        Ok(Self {
            dir,
            provenance,
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.files.retain(|f| f.name != name);
        self.files.push(FileEntry {
            name: String::from(name),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, data: &T) -> Result<()> {
        let art = Artifact {
            provenance: self.provenance.clone(),
            data,
        };
        let mut bytes = serde_json::to_vec_pretty(&art).map_err(|e| AppError::schema(name, e.to_string()))?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
        let bytes = crate::io::to_csv(rows)?;
        self.write_bytes(name, &bytes)
    }

    /// Writes `manifest.json` listing every artifact with its digest.
    pub fn finish(mut self) -> Result<PathBuf> {
        self.files.sort_by(|a, b| a.name.cmp(&b.name));
        let m = Manifest {
            provenance: self.provenance.clone(),
            files: self.files.clone(),
        };
        let mut bytes = serde_json::to_vec_pretty(&m).map_err(|e| AppError::schema("manifest.json", e.to_string()))?;
        bytes.push(b'\n');
        write_atomic(&self.dir.join("manifest.json"), &bytes)?;
        Ok(self.dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dir_is_stamped_and_manifest_lists_files() {
        let tmp = tempfile::tempdir().unwrap();
        let prov = Provenance::new("ingest", &sha256_hex(b"cfg"), 7, 1);
        let mut run = RunDir::create(tmp.path(), prov.clone(), false).unwrap();
        assert!(run.dir.ends_with(format!("ingest-{}", &prov.config_hash[..8])));
        run.write_json("a.json", &vec![1, 2, 3]).unwrap();
        run.write_bytes("b.csv", b"x\n1\n").unwrap();
        let dir = run.finish().unwrap();
        let m: Manifest = crate::io::read_json(&dir.join("manifest.json")).unwrap();
        assert_eq!(m.files.len(), 2);
        assert_eq!(m.files[1].sha256, sha256_hex(b"x\n1\n"));
        let a: Artifact<Vec<i32>> = read_artifact(&dir.join("a.json")).unwrap();
        assert_eq!(a.data, vec![1, 2, 3]);
        assert_eq!(a.provenance, prov);
        assert!(!dir.join(".a.json.tmp").exists());
    }
}

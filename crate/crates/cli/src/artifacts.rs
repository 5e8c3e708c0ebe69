//! On-disk artifacts: a binary matrix container, JSON documents and
//! per-stage manifests.
//!
//! Matrix container layout (all integers little-endian):
//!
//! | offset | size | field                                  |
//! |-------:|-----:|----------------------------------------|
//! | 0      | 8    | magic `MSSDMAT1`                       |
//! | 8      | 8    | rows (u64)                             |
//! | 16     | 8    | cols (u64)                             |
//! | 24     | 4    | dtype (u32, `1` = f64 little-endian)   |
//! | 28     | 4    | reserved, zero                         |
//! | 32     | ...  | row-major payload                      |

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MATRIX_MAGIC: &[u8; 8] = b"MSSDMAT1";
pub const DTYPE_F64_LE: u32 = 1;
const HEADER_LEN: usize = 32;

pub fn encode_matrix(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    out.extend_from_slice(&DTYPE_F64_LE.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Result<DMatrix<f64>, CliError> {
    let bad = |msg: &str| CliError::Data(format!("matrix container: {msg}"));
    if bytes.len() < HEADER_LEN || &bytes[..8] != MATRIX_MAGIC {
        return Err(bad("bad magic"));
    }
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let (rows, cols) = (u64_at(8) as usize, u64_at(16) as usize);
    let dtype = u32::from_le_bytes(bytes[24..28].try_into().expect("4 bytes"));
    if dtype != DTYPE_F64_LE {
        return Err(bad(&format!("unsupported dtype {dtype}")));
    }
    let expected = rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or_else(|| bad("dimensions overflow"))?;
    if bytes.len() - HEADER_LEN != expected {
        return Err(bad(&format!("payload is {} bytes, header implies {expected}", bytes.len() - HEADER_LEN)));
    }
    let data: Vec<f64> =
        bytes[HEADER_LEN..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = File::open(path).map_err(|e| CliError::io(path.display(), e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(path.display(), e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent.display(), e))?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(|e| CliError::io(path.display(), e))?);
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| CliError::io(path.display(), e))
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(value).expect("artifact types serialize");
    s.push(b'\n');
    s
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path.display(), e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Provenance record written next to every stage's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub tool_version: String,
    pub stage_version: u32,
    pub seed: u64,
    pub config_sha256: String,
    pub config: RunConfig,
    /// Input name to content hash.
    pub inputs: BTreeMap<String, String>,
    /// Output file name (relative to the stage directory) to content hash.
    pub outputs: BTreeMap<String, String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Collects a stage's outputs and writes them with a manifest.
pub struct StageWriter {
    dir: PathBuf,
    stage: &'static str,
    stage_version: u32,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl StageWriter {
    pub fn new(run_dir: &Path, stage: &'static str, stage_version: u32) -> Result<Self, CliError> {
        let dir = run_dir.join(stage);
        fs::create_dir_all(&dir).map_err(|e| CliError::io(dir.display(), e))?;
        // a stale manifest must not vouch for half-written outputs
        let _ = fs::remove_file(dir.join(MANIFEST_FILE));
        Ok(Self { dir, stage, stage_version, inputs: BTreeMap::new(), outputs: BTreeMap::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn input_hash(&mut self, name: impl Into<String>, hash: String) {
        self.inputs.insert(name.into(), hash);
    }

    pub fn input_file(&mut self, name: impl Into<String>, path: &Path) -> Result<(), CliError> {
        let h = sha256_file(path)?;
        self.inputs.insert(name.into(), h);
        Ok(())
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        write_bytes(&path, bytes)?;
        self.outputs.insert(name.to_owned(), sha256_bytes(bytes));
        Ok(path)
    }

    pub fn finish(self, config: &RunConfig) -> Result<Manifest, CliError> {
        let canonical = config.canonical();
        let manifest = Manifest {
            stage: self.stage.to_owned(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            stage_version: self.stage_version,
            seed: config.seed,
            config_sha256: sha256_bytes(canonical.to_toml().as_bytes()),
            config: canonical,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        write_bytes(&self.dir.join(MANIFEST_FILE), &to_json(&manifest))?;
        Ok(manifest)
    }
}

/// Reads a stage manifest and checks every listed output against its hash.
pub fn load_stage(run_dir: &Path, stage: &str, command: &str) -> Result<Manifest, CliError> {
    let dir = run_dir.join(stage);
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(CliError::Data(format!(
            "missing {stage} artifacts in {}: run `modssd {command}` first",
            run_dir.display()
        )));
    }
    let manifest: Manifest = read_json(&path)?;
    for (name, want) in &manifest.outputs {
        let file = dir.join(name);
        if !file.exists() {
            return Err(CliError::Data(format!("{} is missing: rerun `modssd {command}`", file.display())));
        }
        if &sha256_file(&file)? != want {
            return Err(CliError::Data(format!(
                "{} does not match its manifest: rerun `modssd {command}`",
                file.display()
            )));
        }
    }
    Ok(manifest)
}

/// Exclusive lock on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

pub const LOCK_FILE: &str = ".lock";

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(run_dir).map_err(|e| CliError::io(run_dir.display(), e))?;
        let path = run_dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Data(format!(
                "run directory {} is locked by another stage; remove {} if no stage is running",
                run_dir.display(),
                path.display()
            ))),
            Err(e) => Err(CliError::io(path.display(), e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

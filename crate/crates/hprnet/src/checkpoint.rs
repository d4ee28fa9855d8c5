//! Parameter files: one JSON manifest line, then little-endian f32 values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArchConfig, HprNet};

pub const FORMAT: &str = "cardiodx-hprnet";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub arch: ArchConfig,
    pub tensors: Vec<TensorShape>,
    pub num_params: usize,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(net: &HprNet, w: &mut W) -> Result<()> {
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        arch: net.arch.clone(),
        tensors: net.layout.entries.iter().map(|e| TensorShape { name: e.name.clone(), shape: e.shape.clone() }).collect(),
        num_params: net.num_params(),
    };
    serde_json::to_writer(&mut *w, &manifest)?;
    w.write_all(b"\n")?;
    for &p in &net.params {
        w.write_all(&(p as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(r: &mut R) -> Result<HprNet> {
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(bad("missing manifest line"));
    }
    let value: serde_json::Value = serde_json::from_slice(&line).map_err(|e| bad(format!("manifest: {e}")))?;
    match value.get("version").and_then(|v| v.as_u64()) {
        None => return Err(bad("manifest has no version")),
        Some(v) if v != u64::from(VERSION) => return Err(bad(format!("unsupported version {v}"))),
        Some(_) => {}
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| bad(format!("manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(bad(format!("unknown format {:?}", manifest.format)));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != manifest.num_params * 4 {
        return Err(bad(format!("payload holds {} bytes, expected {}", payload.len(), manifest.num_params * 4)));
    }
    let params = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let net = HprNet::from_params(manifest.arch, params).map_err(|e| bad(e.to_string()))?;
    let shapes: Vec<TensorShape> = net.layout.entries.iter().map(|e| TensorShape { name: e.name.clone(), shape: e.shape.clone() }).collect();
    if shapes != manifest.tensors {
        return Err(bad("tensor shapes disagree with the architecture"));
    }
    Ok(net)
}

pub fn save_checkpoint(net: &HprNet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(net, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<HprNet> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_f32_exact() {
        let net = HprNet::new(ArchConfig::default(), 9).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back.arch, net.arch);
        for (a, b) in back.params.iter().zip(&net.params) {
            assert_eq!(*a, f64::from(*b as f32));
        }
    }

    #[test]
    fn rejects_damaged_files() {
        let net = HprNet::new(ArchConfig::default(), 9).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        let truncated = &buf[..buf.len() - 3];
        assert!(read_checkpoint(&mut &truncated[..]).is_err());

        let text = String::from_utf8_lossy(&buf[..buf.iter().position(|&b| b == b'\n').unwrap()]).to_string();
        let no_version = text.replace("\"version\":1,", "");
        let mut v = no_version.into_bytes();
        v.push(b'\n');
        assert!(matches!(read_checkpoint(&mut v.as_slice()), Err(Error::Checkpoint(m)) if m.contains("version")));

        let future = text.replace("\"version\":1", "\"version\":2");
        let mut v = future.into_bytes();
        v.push(b'\n');
        assert!(read_checkpoint(&mut v.as_slice()).is_err());
        assert!(read_checkpoint(&mut &b"no newline"[..]).is_err());
    }
}

//! Checkpoints: a flat little-endian binary of parameter values plus a
//! text manifest (name, dtype, byte offset, shape).

use std::fs;
use std::io::Write;
use std::path::Path;

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MANIFEST: &str = "manifest.tsv";
const WEIGHTS: &str = "params.bin";

/// Writes `dir/manifest.tsv` and `dir/params.bin`. Atomic per file:
/// write to a temp name, then rename.
pub fn save(params: &ParamSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    let mut blob: Vec<u8> = Vec::new();
    for p in params.iter() {
        let offset = blob.len();
        for &v in p.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        let shape = p
            .value
            .shape()
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        manifest.push_str(&format!("{}\tf64\t{}\t{}\n", p.name, offset, shape));
    }
    write_atomic(&dir.join(MANIFEST), manifest.as_bytes())?;
    write_atomic(&dir.join(WEIGHTS), &blob)?;
    Ok(())
}

/// Loads values back into a ParamSet with matching names and shapes.
pub fn load(params: &mut ParamSet, dir: &Path) -> Result<()> {
    let manifest = fs::read_to_string(dir.join(MANIFEST))?;
    let blob = fs::read(dir.join(WEIGHTS))?;
    for (lineno, line) in manifest.lines().enumerate() {
        let mut fields = line.split('\t');
        let (name, dtype, offset, shape) = match (
            fields.next(),
            fields.next(),
            fields.next(),
            fields.next(),
        ) {
            (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
            _ => {
                return Err(Error::data(format!(
                    "malformed manifest line {}",
                    lineno + 1
                )))
            }
        };
        if dtype != "f64" {
            return Err(Error::data(format!("unsupported dtype {dtype} for {name}")));
        }
        let offset: usize = offset
            .parse()
            .map_err(|_| Error::data(format!("bad offset on manifest line {}", lineno + 1)))?;
        let shape: Vec<usize> = shape
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::data(format!("bad shape on manifest line {}", lineno + 1)))?;
        let n: usize = shape.iter().product();
        let end = offset + n * 8;
        if end > blob.len() {
            return Err(Error::data(format!("weights file truncated at {name}")));
        }
        let data: Vec<f64> = blob[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape.clone(), data);
        match params.by_name(name) {
            Some(p) if p.value.shape() == shape.as_slice() => {}
            Some(p) => {
                return Err(Error::data(format!(
                    "shape mismatch for {name}: checkpoint {:?} vs model {:?}",
                    shape,
                    p.value.shape()
                )))
            }
            None => return Err(Error::data(format!("unknown parameter {name} in checkpoint"))),
        }
        for p in params.iter_mut() {
            if p.name == name {
                p.value = tensor;
                break;
            }
        }
    }
    Ok(())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

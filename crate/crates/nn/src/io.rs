//! Weight files: a text manifest (name, shape, byte offset) followed by a raw
//! little-endian `f32` payload. Save/load round-trips `f32` tensors bit-exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::network::Network;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &str = "apfrl-weights 1";

/// Writes named tensors plus free-form metadata lines.
pub fn save_entries<S: Scalar>(
    path: &Path,
    entries: &[(String, &Tensor<S>)],
    meta: &[(String, String)],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{MAGIC}")?;
    for (k, v) in meta {
        writeln!(w, "meta {k} {v}")?;
    }
    let mut offset = 0usize;
    for (name, t) in entries {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        writeln!(w, "tensor {name} {} {offset}", dims.join(","))?;
        offset += t.len() * 4;
    }
    writeln!(w, "payload {offset}")?;
    for (_, t) in entries {
        for v in t.data() {
            w.write_all(&v.to_storage_f32().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub struct LoadedWeights {
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
    pub meta: BTreeMap<String, String>,
}

impl LoadedWeights {
    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
    }
}

pub fn load_entries(path: &Path) -> Result<LoadedWeights> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(NnError::Format(format!(
            "{}: expected `{MAGIC}` header",
            path.display()
        )));
    }
    let mut meta = BTreeMap::new();
    let mut manifest: Vec<(String, Vec<usize>, usize)> = Vec::new();
    let payload_len;
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(NnError::Format("truncated manifest".into()));
        }
        let line = line.trim_end();
        if let Some(rest) = line.strip_prefix("meta ") {
            if let Some((k, v)) = rest.split_once(' ') {
                meta.insert(k.to_string(), v.to_string());
            }
        } else if let Some(rest) = line.strip_prefix("tensor ") {
            let parts: Vec<&str> = rest.split(' ').collect();
            if parts.len() != 3 {
                return Err(NnError::Format(format!("bad tensor line: {line}")));
            }
            let shape: Vec<usize> = parts[1]
                .split(',')
                .map(|d| d.parse().map_err(|_| NnError::Format(format!("bad shape: {line}"))))
                .collect::<Result<_>>()?;
            let offset = parts[2]
                .parse()
                .map_err(|_| NnError::Format(format!("bad offset: {line}")))?;
            manifest.push((parts[0].to_string(), shape, offset));
        } else if let Some(rest) = line.strip_prefix("payload ") {
            payload_len = rest
                .parse::<usize>()
                .map_err(|_| NnError::Format(format!("bad payload line: {line}")))?;
            break;
        } else {
            return Err(NnError::Format(format!("unexpected manifest line: {line}")));
        }
    }
    let mut payload = vec![0u8; payload_len];
    r.read_exact(&mut payload)
        .map_err(|_| NnError::Format("payload shorter than manifest declares".into()))?;
    let mut tensors = Vec::with_capacity(manifest.len());
    for (name, shape, offset) in manifest {
        let count: usize = shape.iter().product();
        let end = offset + count * 4;
        if end > payload.len() {
            return Err(NnError::Format(format!("tensor {name} overruns payload")));
        }
        let data: Vec<f32> = payload[offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push((name, shape, data));
    }
    Ok(LoadedWeights { tensors, meta })
}

impl<S: Scalar> Network<S> {
    pub fn save_weights(&self, path: &Path, meta: &[(String, String)]) -> Result<()> {
        save_entries(path, &self.param_entries(), meta)
    }

    /// Loads weights saved by [`Self::save_weights`]; names and shapes must
    /// match this network exactly.
    pub fn load_weights(&mut self, path: &Path) -> Result<()> {
        let loaded = load_entries(path)?;
        load_into(&loaded, "", self.param_entries_mut())
    }
}

/// Assigns loaded tensors onto `entries`, with `prefix` prepended to each
/// entry name when looking it up.
pub fn load_into<S: Scalar>(
    loaded: &LoadedWeights,
    prefix: &str,
    entries: Vec<(String, &mut Tensor<S>)>,
) -> Result<()> {
    for (name, dst) in entries {
        let full = format!("{prefix}{name}");
        let (shape, data) = loaded
            .tensor(&full)
            .ok_or_else(|| NnError::Format(format!("weight file is missing tensor {full}")))?;
        if shape != dst.shape() {
            return Err(NnError::Format(format!(
                "tensor {full} has shape {shape:?}, expected {:?}",
                dst.shape()
            )));
        }
        *dst = Tensor::from_vec(shape, data.iter().map(|&v| S::from_storage_f32(v)).collect())?;
    }
    Ok(())
}

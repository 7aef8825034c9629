//! Frame-corpus files for encoder pretraining: a text manifest followed by the
//! raw frames as little-endian f32, plus a delimited-text sidecar of oracle
//! feature vectors.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::GameFrame;
use crate::error::{CoreError, Result};

const MAGIC: &str = "apfrl-frames 1";

pub fn write_corpus(path: &Path, frames: &[GameFrame], meta: &[(String, String)]) -> Result<()> {
    let Some(first) = frames.first() else {
        return Err(CoreError::Usage("refusing to write an empty corpus".into()));
    };
    if frames.iter().any(|f| f.height != first.height || f.width != first.width) {
        return Err(CoreError::Data("corpus frames must share dimensions".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{MAGIC}")?;
    for (k, v) in meta {
        writeln!(w, "meta {k} {v}")?;
    }
    writeln!(w, "count {}", frames.len())?;
    writeln!(w, "height {}", first.height)?;
    writeln!(w, "width {}", first.width)?;
    for f in frames {
        for v in &f.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Vec<GameFrame>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(CoreError::Data(format!(
            "{}: expected `{MAGIC}` header",
            path.display()
        )));
    }
    let (mut count, mut height) = (None, None);
    let width;
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(CoreError::Data("truncated corpus manifest".into()));
        }
        let t = line.trim_end();
        if t.starts_with("meta ") {
            continue;
        }
        let Some((key, value)) = t.split_once(' ') else {
            return Err(CoreError::Data(format!("bad manifest line: {t}")));
        };
        let v: usize = value
            .parse()
            .map_err(|_| CoreError::Data(format!("bad manifest line: {t}")))?;
        match key {
            "count" => count = Some(v),
            "height" => height = Some(v),
            "width" => {
                width = Some(v);
                break;
            }
            _ => return Err(CoreError::Data(format!("unknown manifest key: {key}"))),
        }
    }
    let (count, height, width) = match (count, height, width) {
        (Some(c), Some(h), Some(w)) => (c, h, w),
        _ => return Err(CoreError::Data("manifest missing count/height/width".into())),
    };
    let frame_len = 3 * height * width;
    let mut payload = vec![0u8; count * frame_len * 4];
    r.read_exact(&mut payload)
        .map_err(|_| CoreError::Data("corpus payload shorter than manifest declares".into()))?;
    let mut frames = Vec::with_capacity(count);
    for i in 0..count {
        let bytes = &payload[i * frame_len * 4..(i + 1) * frame_len * 4];
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        frames.push(GameFrame { height, width, data });
    }
    Ok(frames)
}

/// Path of the oracle-feature sidecar that accompanies a corpus file.
pub fn features_path(corpus: &Path) -> PathBuf {
    let mut name = corpus.file_name().unwrap_or_default().to_os_string();
    name.push(".features.tsv");
    corpus.with_file_name(name)
}

pub fn write_features(path: &Path, names: &[&str], rows: &[Vec<f32>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", names.join("\t"))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join("\t"))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<(Vec<String>, Vec<Vec<f32>>)> {
    let r = BufReader::new(File::open(path)?);
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| CoreError::Data("empty features file".into()))??;
    let names: Vec<String> = header.split('\t').map(String::from).collect();
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let row: Vec<f32> = line
            .split('\t')
            .map(|c| c.parse().map_err(|_| CoreError::Data(format!("bad feature cell: {c}"))))
            .collect::<Result<_>>()?;
        if row.len() != names.len() {
            return Err(CoreError::Data("feature row width mismatch".into()));
        }
        rows.push(row);
    }
    Ok((names, rows))
}

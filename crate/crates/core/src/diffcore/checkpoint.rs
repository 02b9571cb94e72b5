//! `cppo-ckpt-v1` parameter files.
//!
//! Layout: the header line `cppo-ckpt-v1`, one manifest line per tensor
//! (`name<TAB>shape`, shape written as `2x3`, or `scalar`), a terminator
//! line `end`, then every tensor's data as little-endian `f64`, concatenated
//! in manifest order.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_HEADER: &str = "cppo-ckpt-v1";

fn format_shape(shape: &[usize]) -> String {
    if shape.is_empty() {
        "scalar".to_string()
    } else {
        shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
    }
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    if s == "scalar" {
        return Ok(Vec::new());
    }
    s.split('x')
        .map(|d| {
            d.parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::Checkpoint(format!("bad shape entry `{d}` in `{s}`")))
        })
        .collect()
}

pub fn write_checkpoint<W: Write>(mut out: W, tensors: &[(String, &Tensor)]) -> Result<()> {
    writeln!(out, "{CHECKPOINT_HEADER}")?;
    for (name, t) in tensors {
        if name.contains(['\t', '\n']) || name.is_empty() {
            return Err(Error::Checkpoint(format!("invalid tensor name {name:?}")));
        }
        writeln!(out, "{name}\t{}", format_shape(t.shape()))?;
    }
    writeln!(out, "end")?;
    for (_, t) in tensors {
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<Vec<(String, Tensor)>> {
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != CHECKPOINT_HEADER {
        return Err(Error::Checkpoint(format!(
            "expected header `{CHECKPOINT_HEADER}`, found `{}`",
            line.trim_end()
        )));
    }
    let mut manifest = Vec::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::Checkpoint("manifest is missing its `end` line".into()));
        }
        let entry = line.trim_end_matches('\n');
        if entry == "end" {
            break;
        }
        let (name, shape) = entry
            .split_once('\t')
            .ok_or_else(|| Error::Checkpoint(format!("malformed manifest line `{entry}`")))?;
        manifest.push((name.to_string(), parse_shape(shape)?));
    }
    let mut out = Vec::with_capacity(manifest.len());
    let mut buf = [0u8; 8];
    for (name, shape) in manifest {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            reader
                .read_exact(&mut buf)
                .map_err(|_| Error::Checkpoint(format!("payload truncated inside `{name}`")))?;
            data.push(f64::from_le_bytes(buf));
        }
        out.push((name, Tensor::new(&shape, data)?));
    }
    if reader.read(&mut buf)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, tensors: &[(String, &Tensor)]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(&mut w, tensors)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    read_checkpoint(std::fs::File::open(path)?)
}

//! Checkpoint container.
//!
//! ```text
//! TUVF-CHECKPOINT 1
//! entries <count>
//! <name> <shape> <byte-offset>      # one line per tensor, lexicographic by name
//! payload <byte-length>
//! <raw little-endian IEEE-754 f32 values>
//! ```
//!
//! `<shape>` is extents joined by `x` (`2562x32`), or `-` for a scalar. Byte
//! offsets are relative to the first payload byte. Every header line ends in a
//! single `\n`; the payload follows the `payload` line directly.

use std::fs;
use std::path::Path;

use crate::error::{Result, TuvfError};
use crate::params::ParamStore;
use crate::tensor::{numel, Tensor};

const MAGIC: &str = "TUVF-CHECKPOINT 1";

pub fn to_bytes(store: &ParamStore) -> Vec<u8> {
    let mut header = format!("{MAGIC}\nentries {}\n", store.len());
    let mut payload = Vec::with_capacity(store.numel() * 4);
    for (name, t) in store.iter() {
        let shape = if t.shape().is_empty() {
            "-".to_string()
        } else {
            t.shape().iter().map(ToString::to_string).collect::<Vec<_>>().join("x")
        };
        header.push_str(&format!("{name} {shape} {}\n", payload.len()));
        for v in t.data() {
            payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    header.push_str(&format!("payload {}\n", payload.len()));
    let mut out = header.into_bytes();
    out.extend_from_slice(&payload);
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> TuvfError {
    TuvfError::Parse {
        source_name: "checkpoint".into(),
        line,
        message: message.into(),
    }
}

fn read_line<'a>(bytes: &'a [u8], pos: &mut usize, line_no: usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| parse_err(line_no, "truncated header"))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| parse_err(line_no, "header is not utf-8"))
}

pub fn from_bytes(bytes: &[u8]) -> Result<ParamStore> {
    let mut pos = 0;
    if read_line(bytes, &mut pos, 1)? != MAGIC {
        return Err(parse_err(1, "bad magic"));
    }
    let count: usize = read_line(bytes, &mut pos, 2)?
        .strip_prefix("entries ")
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| parse_err(2, "expected `entries <count>`"))?;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let line_no = 3 + i;
        let line = read_line(bytes, &mut pos, line_no)?;
        let mut parts = line.split(' ');
        let (Some(name), Some(shape), Some(off), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(line_no, format!("malformed entry `{line}`")));
        };
        let shape: Vec<usize> = if shape == "-" {
            Vec::new()
        } else {
            shape
                .split('x')
                .map(|d| d.parse().map_err(|_| parse_err(line_no, format!("bad extent `{d}`"))))
                .collect::<Result<_>>()?
        };
        let off: usize = off.parse().map_err(|_| parse_err(line_no, "bad offset"))?;
        entries.push((name.to_string(), shape, off));
    }
    let line_no = 3 + count;
    let len: usize = read_line(bytes, &mut pos, line_no)?
        .strip_prefix("payload ")
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| parse_err(line_no, "expected `payload <bytes>`"))?;
    let payload = &bytes[pos..];
    if payload.len() != len {
        return Err(parse_err(line_no, format!("payload is {} bytes, header says {len}", payload.len())));
    }
    let mut store = ParamStore::new();
    for (name, shape, off) in entries {
        let n = numel(&shape);
        let end = off + 4 * n;
        if end > payload.len() {
            return Err(parse_err(line_no, format!("entry `{name}` overruns payload")));
        }
        let data = payload[off..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        store.insert(name, Tensor::new(shape, data)?.with_grad());
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| TuvfError::io(dir, e))?;
    }
    fs::write(path, to_bytes(store)).map_err(|e| TuvfError::io(path, e))
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let bytes = fs::read(path).map_err(|e| TuvfError::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        TuvfError::Parse { line, message, .. } => TuvfError::Parse {
            source_name: path.display().to_string(),
            line,
            message,
        },
        other => other,
    })
}

//! Named-tensor checkpoints.
//!
//! A checkpoint `<base>` is two files:
//!
//! * `<base>.bin`: tensors back to back, each as
//!   `rank: u32 LE`, `dims: rank x u64 LE`, then `prod(dims) x f64 LE`.
//! * `<base>.index`: UTF-8 text, a header line followed by one line per
//!   tensor: `name<TAB>byte offset<TAB>dims joined by 'x'`.
//!
//! Both files are written to a temporary sibling and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::Tensor;
use crate::error::{Error, Result};

const INDEX_HEADER: &str = "# tensor-manifest v1";

/// Writes `bytes` to `path` via a temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn encode_tensor(t: &Tensor, out: &mut Vec<u8>) {
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Decodes one tensor starting at `bytes[0]`; returns it and the bytes used.
pub fn decode_tensor(bytes: &[u8]) -> Result<(Tensor, usize)> {
    let truncated = || Error::parse("tensor blob", "truncated record");
    let mut pos = 0;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(truncated)?;
        pos += n;
        Ok(s)
    };
    let rank = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
    }
    let n: usize = shape.iter().product();
    let raw = take(n * 8)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((Tensor::new(shape, data)?, pos))
}

fn with_ext(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

pub fn blob_path(base: &Path) -> PathBuf {
    with_ext(base, ".bin")
}

pub fn index_path(base: &Path) -> PathBuf {
    with_ext(base, ".index")
}

fn shape_string(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

/// Saves named tensors as `<base>.bin` plus `<base>.index`.
pub fn save_named(base: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut blob = Vec::new();
    let mut index = String::from(INDEX_HEADER);
    index.push('\n');
    for (name, t) in tensors {
        if name.is_empty() || name.contains(['\t', '\n']) {
            return Err(Error::invalid(format!("bad tensor name {name:?}")));
        }
        index.push_str(&format!(
            "{name}\t{}\t{}\n",
            blob.len(),
            shape_string(t.shape())
        ));
        encode_tensor(t, &mut blob);
    }
    write_atomic(&blob_path(base), &blob)?;
    write_atomic(&index_path(base), index.as_bytes())
}

/// Loads a checkpoint written by [`save_named`], in index order.
pub fn load_named(base: &Path) -> Result<Vec<(String, Tensor)>> {
    let index = fs::read_to_string(index_path(base))?;
    let blob = fs::read(blob_path(base))?;
    let mut lines = index.lines();
    if lines.next() != Some(INDEX_HEADER) {
        return Err(Error::parse("tensor index", "missing header"));
    }
    let mut out = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split('\t').collect();
        let [name, offset, shape] = fields[..] else {
            return Err(Error::parse("tensor index", format!("bad line {line:?}")));
        };
        let offset: usize = offset
            .parse()
            .map_err(|_| Error::parse("tensor index", format!("bad offset in {line:?}")))?;
        let (t, _) = decode_tensor(blob.get(offset..).unwrap_or_default())?;
        if shape_string(t.shape()) != shape {
            return Err(Error::parse(
                "tensor index",
                format!("{name}: index says {shape}, blob says {:?}", t.shape()),
            ));
        }
        out.push((name.to_string(), t));
    }
    Ok(out)
}

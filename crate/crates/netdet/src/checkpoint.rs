//! Checkpoints: a human-readable manifest of parameter names and shapes,
//! followed by raw little-endian f64 data in manifest order. Loading is
//! by name so it survives reordering but not renaming.

use crate::error::{NetError, Result};
use crate::tensor::{ParamStore, Tensor};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &str = "netdet-checkpoint v1";

pub fn save<W: Write>(w: &mut W, store: &ParamStore) -> Result<()> {
    writeln!(w, "{MAGIC}")?;
    for (_, p) in store.iter() {
        write!(w, "{}", p.name)?;
        for d in p.value.shape() {
            write!(w, " {d}")?;
        }
        writeln!(w)?;
    }
    writeln!(w, "DATA")?;
    for (_, p) in store.iter() {
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_file(path: &Path, store: &ParamStore) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    save(&mut w, store)
}

pub fn load<R: Read>(r: R) -> Result<Vec<(String, Tensor)>> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(NetError::Checkpoint(format!("bad magic line: {:?}", line.trim_end())));
    }
    let mut entries: Vec<(String, Vec<usize>)> = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(NetError::Checkpoint("missing DATA marker".into()));
        }
        let line = line.trim_end();
        if line == "DATA" {
            break;
        }
        let mut parts = line.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| NetError::Checkpoint("empty manifest line".into()))?
            .to_string();
        let shape: Vec<usize> = parts
            .map(|p| {
                p.parse()
                    .map_err(|_| NetError::Checkpoint(format!("bad dimension `{p}` for {name}")))
            })
            .collect::<Result<_>>()?;
        if shape.is_empty() {
            return Err(NetError::Checkpoint(format!("no shape for {name}")));
        }
        entries.push((name, shape));
    }
    let mut out = Vec::with_capacity(entries.len());
    for (name, shape) in entries {
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| NetError::Checkpoint(format!("truncated data for {name}")))?;
        let data: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn load_file(path: &Path) -> Result<Vec<(String, Tensor)>> {
    load(File::open(path)?)
}

/// Overwrite a freshly built store's values from loaded tensors. Every
/// store parameter must be present with a matching shape; extras are errors.
pub fn restore(store: &mut ParamStore, loaded: Vec<(String, Tensor)>) -> Result<()> {
    let mut by_name: std::collections::HashMap<String, Tensor> = loaded.into_iter().collect();
    let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in ids {
        let t = by_name
            .remove(&name)
            .ok_or_else(|| NetError::Checkpoint(format!("checkpoint missing parameter {name}")))?;
        if t.shape() != store.value(id).shape() {
            return Err(NetError::Checkpoint(format!(
                "shape mismatch for {name}: checkpoint {:?} vs model {:?}",
                t.shape(),
                store.value(id).shape()
            )));
        }
        *store.value_mut(id) = t;
    }
    if let Some(name) = by_name.keys().next() {
        return Err(NetError::Checkpoint(format!("checkpoint has unknown parameter {name}")));
    }
    Ok(())
}

//! Binary checkpoint format for models.
//!
//! Layout (all integers little-endian):
//!   magic "ODSENET\x01", format version u32,
//!   config: 9 x u64 (seq_len, dim, heads, encoder_layers, head_layers,
//!                    window, vocab, constraint_dim, out_dim),
//!   meta count u32, then per entry key/value as u32-length-prefixed UTF-8,
//!   tensor count u32, then per tensor: name (length-prefixed), rows u32,
//!   cols u32, rows*cols f64 values.
//!
//! Metadata is free-form string pairs; callers use it for the token
//! dictionary, target metric, parameter subset, and similar bindings.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{Model, ModelConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ODSENET\x01";
const VERSION: u32 = 1;

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let bytes = s.as_bytes();
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    if len > 1 << 24 {
        return Err(Error::Checkpoint("unreasonable string length".to_string()));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("invalid UTF-8 string".to_string()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Write the model and metadata pairs to `path`.
pub fn save_checkpoint(model: &Model, meta: &[(String, String)], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let c = &model.config;
    for v in [
        c.seq_len,
        c.dim,
        c.heads,
        c.encoder_layers,
        c.head_layers,
        c.window,
        c.vocab,
        c.constraint_dim,
        c.out_dim,
    ] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    for (k, v) in meta {
        write_str(&mut w, k)?;
        write_str(&mut w, v)?;
    }
    let tensors = model.tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        write_str(&mut w, &name)?;
        w.write_all(&(t.rows as u32).to_le_bytes())?;
        w.write_all(&(t.cols as u32).to_le_bytes())?;
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Load a checkpoint: reconstructs the model and returns the metadata.
pub fn load_checkpoint(path: &Path) -> Result<(Model, Vec<(String, String)>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: not a model checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let vals: Vec<u64> = (0..9).map(|_| read_u64(&mut r)).collect::<Result<_>>()?;
    let config = ModelConfig {
        seq_len: vals[0] as usize,
        dim: vals[1] as usize,
        heads: vals[2] as usize,
        encoder_layers: vals[3] as usize,
        head_layers: vals[4] as usize,
        window: vals[5] as usize,
        vocab: vals[6] as usize,
        constraint_dim: vals[7] as usize,
        out_dim: vals[8] as usize,
    };
    config.validate().map_err(|e| Error::Checkpoint(format!("invalid stored config: {e}")))?;
    let n_meta = read_u32(&mut r)? as usize;
    let mut meta = Vec::with_capacity(n_meta);
    for _ in 0..n_meta {
        let k = read_str(&mut r)?;
        let v = read_str(&mut r)?;
        meta.push((k, v));
    }
    // Build a zero model of the right shape, then fill tensors by name.
    let mut model = Model::new(config, 0)?;
    model.zero_();
    let n_tensors = read_u32(&mut r)? as usize;
    let mut expected: std::collections::HashMap<String, usize> = model
        .tensors()
        .iter()
        .enumerate()
        .map(|(i, (n, _))| (n.clone(), i))
        .collect();
    let n_model_tensors = expected.len();
    if n_tensors != n_model_tensors {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {n_tensors} tensors, model needs {n_model_tensors}"
        )));
    }
    for _ in 0..n_tensors {
        let name = read_str(&mut r)?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let idx = expected
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected or duplicate tensor '{name}'")))?;
        let mut tensors = model.tensors_mut();
        let t = &mut tensors[idx].1;
        if t.rows != rows || t.cols != cols {
            return Err(Error::Checkpoint(format!(
                "tensor '{name}' has shape {rows}x{cols}, expected {}x{}",
                t.rows, t.cols
            )));
        }
        let mut buf = [0u8; 8];
        for v in t.data.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
    }
    if !expected.is_empty() {
        let mut missing: Vec<&String> = expected.keys().collect();
        missing.sort();
        return Err(Error::Checkpoint(format!("checkpoint is missing tensors: {missing:?}")));
    }
    // Trailing garbage means a corrupt or truncated-then-extended file.
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after checkpoint payload".to_string()));
    }
    Ok((model, meta))
}

/// Serialize a string list for a metadata value; [`split_meta_list`]
/// inverts it. Items must not contain ';'.
pub fn join_meta_list(items: &[String]) -> String {
    items.join(";")
}

pub fn split_meta_list(s: &str) -> Vec<String> {
    if s.is_empty() {
        Vec::new()
    } else {
        s.split(';').map(str::to_string).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample_model() -> Model {
        Model::new(
            ModelConfig {
                seq_len: 6,
                dim: 8,
                heads: 2,
                encoder_layers: 1,
                head_layers: 2,
                window: 2,
                vocab: 5,
                constraint_dim: 1,
                out_dim: 2,
            },
            42,
        )
        .unwrap()
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = sample_model();
        let meta = vec![
            ("mode".to_string(), "p".to_string()),
            ("dict".to_string(), join_meta_list(&["add".into(), "sub".into()])),
        ];
        save_checkpoint(&model, &meta, &path).unwrap();
        let (back, meta_back) = load_checkpoint(&path).unwrap();
        assert_eq!(meta_back, meta);
        assert_eq!(back.config, model.config);
        for ((n1, t1), (n2, t2)) in back.tensors().iter().zip(model.tensors().iter()) {
            assert_eq!(n1, n2);
            // Bit-exact.
            let b1: Vec<u64> = t1.data.iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u64> = t2.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2, "tensor {n1}");
        }
        // Loaded model predicts identically.
        let toks = vec![1, 2, 3, 4, 4, 4];
        let (y1, _) = model.forward(&toks, &[0.5]).unwrap();
        let (y2, _) = back.forward(&toks, &[0.5]).unwrap();
        assert_eq!(y1, y2);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&sample_model(), &[], &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Bad magic.
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
        // Truncation.
        bytes.truncate(bytes.len() - 9);
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn meta_list_round_trips() {
        let items = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        assert_eq!(split_meta_list(&join_meta_list(&items)), items);
        assert!(split_meta_list("").is_empty());
    }
}

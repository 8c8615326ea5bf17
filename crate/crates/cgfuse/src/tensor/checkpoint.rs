//! Named-tensor checkpoint container.
//!
//! Layout: magic `CGCK`, format version, tensor count, then per tensor the
//! UTF-8 name, the dims, and the raw little-endian `f32` payload. Tensors are
//! written in name order so identical parameter maps produce identical bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{Tensor, TensorError};

const MAGIC: &[u8; 4] = b"CGCK";
const VERSION: u32 = 1;

pub fn save_tensors(path: &Path, tensors: &BTreeMap<String, Tensor>) -> Result<(), TensorError> {
    let io_err = |e: std::io::Error| TensorError::Io(format!("{}: {e}", path.display()));
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    f.write_all(MAGIC).map_err(io_err)?;
    f.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    f.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(io_err)?;
    for (name, t) in tensors {
        f.write_all(&(name.len() as u32).to_le_bytes()).map_err(io_err)?;
        f.write_all(name.as_bytes()).map_err(io_err)?;
        f.write_all(&(t.shape().len() as u32).to_le_bytes()).map_err(io_err)?;
        for &d in t.shape() {
            f.write_all(&(d as u64).to_le_bytes()).map_err(io_err)?;
        }
        for &v in t.data() {
            f.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<BTreeMap<String, Tensor>, TensorError> {
    let io_err = |e: std::io::Error| TensorError::Io(format!("{}: {e}", path.display()));
    let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(io_err)?);

    fn take<const N: usize>(
        f: &mut impl Read,
        what: &str,
    ) -> Result<[u8; N], TensorError> {
        let mut buf = [0u8; N];
        f.read_exact(&mut buf)
            .map_err(|_| TensorError::Format(format!("truncated while reading {what}")))?;
        Ok(buf)
    }

    if &take::<4>(&mut f, "magic")? != MAGIC {
        return Err(TensorError::Format("bad magic, not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(take::<4>(&mut f, "version")?);
    if version != VERSION {
        return Err(TensorError::Format(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(take::<4>(&mut f, "count")?);
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take::<4>(&mut f, "name length")?) as usize;
        if name_len > 4096 {
            return Err(TensorError::Format(format!("implausible name length {name_len}")));
        }
        let mut name_buf = vec![0u8; name_len];
        f.read_exact(&mut name_buf)
            .map_err(|_| TensorError::Format("truncated name".into()))?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| TensorError::Format("tensor name is not UTF-8".into()))?;
        let ndim = u32::from_le_bytes(take::<4>(&mut f, "rank")?) as usize;
        if ndim > 8 {
            return Err(TensorError::Format(format!("implausible rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(take::<8>(&mut f, "dim")?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f32::from_le_bytes(take::<4>(&mut f, "payload")?));
        }
        out.insert(name, Tensor::new(shape, data));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn round_trip_preserves_names_shapes_and_bits() {
        let dir = std::env::temp_dir().join("cgfuse_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.ckpt");
        let mut r = Rng::seeded(4, "ckpt");
        let mut map = BTreeMap::new();
        map.insert("plm.embed.tok".to_string(), Tensor::randn(vec![11, 6], 1.0, &mut r));
        map.insert("gnn.l0.self".to_string(), Tensor::randn(vec![6, 6], 0.3, &mut r));
        map.insert("scalarish".to_string(), Tensor::scalar(0.25));
        save_tensors(&path, &map).unwrap();
        let back = load_tensors(&path).unwrap();
        assert_eq!(map, back);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = std::env::temp_dir().join("cgfuse_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("garbage.ckpt");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        match load_tensors(&path) {
            Err(TensorError::Format(msg)) => assert!(msg.contains("magic"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
        std::fs::remove_file(&path).ok();
    }
}

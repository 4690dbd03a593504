//! Checkpoint file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   5 bytes  "DLAB1"
//! count   u32      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8), rank u32, dims (rank x u32),
//!   payload (prod(dims) x f32, little-endian)
//! ```
//!
//! Tensors are written in parameter-store order, so a save/load round trip
//! reproduces the store bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::params::ParameterStore;
use crate::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 5] = b"DLAB1";

pub fn save(store: &ParameterStore<f32>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(store.len() as u32).to_le_bytes()).map_err(io)?;
    for (name, tensor) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        let shape = tensor.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes()).map_err(io)?;
        for d in shape {
            w.write_all(&(*d as u32).to_le_bytes()).map_err(io)?;
        }
        for v in tensor.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load(path: &Path) -> Result<ParameterStore<f32>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 5];
    read_exact(&mut r, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected {:?}",
            path.display(),
            magic,
            MAGIC
        )));
    }
    let count = read_u32(&mut r, path)?;
    let mut store = ParameterStore::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r, path)? as usize;
        if name_len > 4096 {
            return Err(Error::Format(format!(
                "{}: unreasonable name length {name_len}",
                path.display()
            )));
        }
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes, path)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| Error::Format(format!("{}: invalid name: {e}", path.display())))?;
        let rank = read_u32(&mut r, path)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r, path)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 4];
        for _ in 0..n {
            read_exact(&mut r, &mut buf, path)?;
            data.push(f32::from_le_bytes(buf));
        }
        store.insert(&name, Tensor::new(shape, data))?;
    }
    Ok(store)
}

/// Load a checkpoint into an already built store: every file tensor must
/// match an existing name and shape. Extra store entries are untouched.
pub fn load_into(path: &Path, store: &mut ParameterStore<f32>) -> Result<()> {
    let loaded = load(path)?;
    for (name, tensor) in loaded.iter() {
        match store.get(name) {
            Some(existing) if existing.shape() == tensor.shape() => {
                store.assign(name, tensor)?;
            }
            Some(existing) => {
                return Err(Error::shape(existing.shape(), tensor.shape()));
            }
            None => {
                return Err(Error::Format(format!(
                    "{}: tensor {name} has no home in the target architecture",
                    path.display()
                )));
            }
        }
    }
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        Error::Format(format!("{}: truncated or corrupt checkpoint: {e}", path.display()))
    })
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, path)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn temp_path(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("dlab-ckpt-{}-{name}", std::process::id()));
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParameterStore::new();
        store
            .insert("enc.conv1.w", Tensor::new(vec![2, 3], (0..6).map(|_| rng.gen::<f32>()).collect()))
            .unwrap();
        store
            .insert("enc.conv1.b", Tensor::new(vec![3], vec![f32::MIN_POSITIVE, -0.0, 1e30]))
            .unwrap();
        let path = temp_path("roundtrip");
        save(&store, &path).unwrap();
        let loaded = load(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(loaded.len(), store.len());
        for ((n1, t1), (n2, t2)) in store.iter().zip(loaded.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            for (a, b) in t1.data().iter().zip(t2.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let path = temp_path("magic");
        std::fs::write(&path, b"NOTIT\x00\x00\x00\x00").unwrap();
        let err = load(&path).unwrap_err();
        std::fs::remove_file(&path).ok();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }

    #[test]
    fn load_into_rejects_shape_mismatch() {
        let mut on_disk = ParameterStore::new();
        on_disk.insert("w", Tensor::<f32>::zeros(vec![2, 2])).unwrap();
        let path = temp_path("mismatch");
        save(&on_disk, &path).unwrap();
        let mut target = ParameterStore::new();
        target.insert("w", Tensor::<f32>::zeros(vec![3])).unwrap();
        let err = load_into(&path, &mut target).unwrap_err();
        std::fs::remove_file(&path).ok();
        assert!(matches!(err, Error::Shape { .. }), "{err}");
    }
}

//! Versioned binary checkpoint: a caller-supplied header string (typically
//! JSON describing the model config) followed by named parameter blocks.

use crate::store::ParamStore;
use crate::tape::Arr;
use ndarray::IxDyn;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"TAPECKPT";
const VERSION: u32 = 1;

pub fn save(path: &Path, header: &str, store: &ParamStore) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let hb = header.as_bytes();
    w.write_all(&(hb.len() as u64).to_le_bytes())?;
    w.write_all(hb)?;
    w.write_all(&(store.entries.len() as u64).to_le_bytes())?;
    for e in &store.entries {
        let nb = e.name.as_bytes();
        w.write_all(&(nb.len() as u32).to_le_bytes())?;
        w.write_all(nb)?;
        let flags: u8 = u8::from(e.buffer) | (u8::from(e.trainable) << 1);
        w.write_all(&[flags])?;
        w.write_all(&(e.value.ndim() as u32).to_le_bytes())?;
        for d in e.value.shape() {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for v in e.value.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn load(path: &Path) -> io::Result<(String, ParamStore)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "not a checkpoint file"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let hlen = read_u64(&mut r)? as usize;
    let mut hb = vec![0u8; hlen];
    r.read_exact(&mut hb)?;
    let header = String::from_utf8(hb)
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "checkpoint header not UTF-8"))?;
    let n = read_u64(&mut r)? as usize;
    let mut store = ParamStore::new();
    for _ in 0..n {
        let name_len = read_u32(&mut r)? as usize;
        let mut nb = vec![0u8; name_len];
        r.read_exact(&mut nb)?;
        let name = String::from_utf8(nb)
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "parameter name not UTF-8"))?;
        let mut flags = [0u8; 1];
        r.read_exact(&mut flags)?;
        let buffer = flags[0] & 1 != 0;
        let trainable = flags[0] & 2 != 0;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let count: usize = shape.iter().product();
        let mut data = vec![0.0f64; count];
        let mut buf = [0u8; 8];
        for slot in &mut data {
            r.read_exact(&mut buf)?;
            *slot = f64::from_le_bytes(buf);
        }
        let arr = Arr::from_shape_vec(IxDyn(&shape), data)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        let id = if buffer {
            store.register_buffer(&name, arr)
        } else {
            store.register(&name, arr)
        };
        store.entries[id.0].trainable = !buffer && trainable;
    }
    Ok((header, store))
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn round_trip_preserves_values_and_header() {
        let dir = std::env::temp_dir().join("tapegrad_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        let mut store = ParamStore::new();
        let a = Arr::from_shape_vec(IxDyn(&[2, 3]), vec![1.0, -2.5, 3.25, 0.0, 9.5, -0.125]).unwrap();
        store.register("layer.w", a.clone());
        store.register_buffer("layer.running_mean", Arr::zeros(IxDyn(&[3])));
        save(&path, "{\"kind\":\"test\"}", &store).unwrap();
        let (header, loaded) = load(&path).unwrap();
        assert_eq!(header, "{\"kind\":\"test\"}");
        assert_eq!(loaded.len(), 2);
        let id = loaded.id_of("layer.w").unwrap();
        assert_eq!(loaded.value(id), &a);
        assert_eq!(loaded.content_hash(), store.content_hash());
    }
}

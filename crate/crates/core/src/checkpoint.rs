//! `BLAB` checkpoint files.
//!
//! Layout, all integers little-endian: magic `BLAB`, version `u32`, tensor
//! count `u32`, then per tensor a `u16` name length, the UTF-8 name, a `u8`
//! rank, `rank` `u32` extents and the `f32` data. Batch-norm running
//! statistics are stored as `<norm>.running_mean` / `<norm>.running_var`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::RunningStats;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::vessel::Model;

pub const MAGIC: &[u8; 4] = b"BLAB";
pub const VERSION: u32 = 1;

pub type NamedTensors = Vec<(String, Tensor<f32>)>;

pub fn write_tensors<W: Write>(mut w: W, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let count = u32::try_from(tensors.len()).map_err(|_| Error::Checkpoint("too many tensors".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for (name, t) in tensors {
        let len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("name `{name}` is too long")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::Checkpoint(format!("rank of `{name}`")))?;
        w.write_all(&[rank])?;
        for &e in t.shape() {
            let e = u32::try_from(e).map_err(|_| Error::Checkpoint(format!("extent of `{name}`")))?;
            w.write_all(&e.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R, what: &str) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated while reading {what}: {e}")))?;
    Ok(b)
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<NamedTensors> {
    if &read_exact::<_, 4>(&mut r, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a BLAB file".into()));
    }
    let version = u32::from_le_bytes(read_exact(&mut r, "version")?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let count = u32::from_le_bytes(read_exact(&mut r, "tensor count")?);
    let mut out = Vec::with_capacity(count.min(4096) as usize);
    for _ in 0..count {
        let len = u16::from_le_bytes(read_exact(&mut r, "name length")?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?;
        let [rank] = read_exact::<_, 1>(&mut r, "rank")?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(read_exact(&mut r, "extent")?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)
            .map_err(|e| Error::Checkpoint(format!("truncated data for `{name}`: {e}")))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
        out.push((name, t));
    }
    Ok(out)
}

/// Parameters followed by running statistics, in registry order.
pub fn store_tensors(store: &ParamStore<f32>) -> NamedTensors {
    let mut out: NamedTensors = store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    for (name, s) in store.stats_iter() {
        out.push((format!("{name}.running_mean"), s.mean.clone()));
        out.push((format!("{name}.running_var"), s.var.clone()));
    }
    out
}

/// Overwrite `store` from `tensors`. Every name must be present with a
/// matching shape; anything else is an [`Error::Mismatch`].
pub fn restore_store(store: &mut ParamStore<f32>, tensors: NamedTensors) -> Result<()> {
    let expected = store.len() + 2 * store.stats_names().len();
    if tensors.len() != expected {
        return Err(Error::Mismatch(format!(
            "checkpoint holds {} tensors, model expects {expected}",
            tensors.len()
        )));
    }
    let mut map: std::collections::HashMap<String, Tensor<f32>> = tensors.into_iter().collect();
    let mut take = |name: &str, shape: &[usize]| -> Result<Tensor<f32>> {
        let t = map
            .remove(name)
            .ok_or_else(|| Error::Mismatch(format!("checkpoint has no tensor `{name}`")))?;
        if t.shape() != shape {
            return Err(Error::Mismatch(format!(
                "`{name}` has shape {:?}, model expects {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let t = take(store.name(id), store.get(id).shape())?;
        *store.get_mut(id) = t;
    }
    let names = store.stats_names().to_vec();
    for (i, name) in names.iter().enumerate() {
        let c = store.stats_mut()[i].mean.shape().to_vec();
        let momentum = store.stats_mut()[i].momentum;
        let mean = take(&format!("{name}.running_mean"), &c)?;
        let var = take(&format!("{name}.running_var"), &c)?;
        store.set_stats(i, RunningStats { mean, var, momentum });
    }
    Ok(())
}

pub fn save_model(model: &Model<f32>, path: &Path) -> Result<()> {
    let tmp = path.with_extension("blab.tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        write_tensors(&mut f, &store_tensors(&model.store))?;
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_model(model: &mut Model<f32>, path: &Path) -> Result<()> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    restore_store(&mut model.store, read_tensors(f)?)
}

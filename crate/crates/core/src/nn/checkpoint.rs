//! Flat binary parameter files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "RKSM" | version: u32 | count: u32 |
//!   count × ( name_len: u32 | name: UTF-8 | rank: u32 | dims: rank × u64 | payload: f64 LE )
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::autograd::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RKSM";
pub const VERSION: u32 = 1;

pub fn write_tensors<'a, W: Write>(
    mut w: W,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<()> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::InputFormat("not a checkpoint file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::InputFormat(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::InputFormat("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.push((name, Tensor::new(&shape, data)?));
    }
    Ok(out)
}

pub fn save(params: &ParamSet, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_tensors(std::io::BufWriter::new(file), params.named())
}

/// Loads values into an existing set by name; every parameter must be present
/// with a matching shape.
pub fn load_into(params: &mut ParamSet, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::open(path)?;
    let tensors = read_tensors(std::io::BufReader::new(file))?;
    if tensors.len() != params.len() {
        return Err(Error::InputFormat(format!(
            "checkpoint holds {} tensors, model has {}",
            tensors.len(),
            params.len()
        )));
    }
    for (name, t) in tensors {
        let id = params
            .find(&name)
            .ok_or_else(|| Error::InputFormat(format!("unexpected parameter {name}")))?;
        params.set(id, t)?;
    }
    Ok(())
}

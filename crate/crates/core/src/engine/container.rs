//! Flat binary parameter container.
//!
//! All integers are little-endian `u32`.
//!
//! ```text
//! magic        4 bytes  "XMPC"
//! version      u32      1
//! elem_bytes   u32      4 (f32) or 8 (f64)
//! node_count   u32
//! per node, in id order:
//!   id_len     u32
//!   id         id_len bytes of UTF-8
//!   tensors    u32      tensor count
//!   trainable  u32      leading tensors that are trainable
//!   per tensor:
//!     rank     u32
//!     dims     rank x u32
//!     data     product(dims) x elem_bytes, little-endian IEEE 754
//! ```
//!
//! Batchnorm nodes store four tensors: scale, shift, running mean and
//! running variance (the last two are not trainable).

use std::io::{Read, Write};

use super::{EngineError, NodeParams, ParamMap, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"XMPC";
pub const CONTAINER_VERSION: u32 = 1;

fn put(w: &mut impl Write, v: usize) -> Result<(), EngineError> {
    let v = u32::try_from(v).map_err(|_| EngineError::Container(format!("{v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get(r: &mut impl Read) -> Result<usize, EngineError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn truncated(e: std::io::Error) -> EngineError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        EngineError::Container("truncated container".into())
    } else {
        EngineError::Io(e)
    }
}

pub fn write_params<T: Scalar>(
    params: &ParamMap<T>,
    w: &mut impl Write,
) -> Result<(), EngineError> {
    w.write_all(MAGIC)?;
    put(w, CONTAINER_VERSION as usize)?;
    put(w, T::BYTES)?;
    put(w, params.len())?;
    let mut buf = Vec::new();
    for (id, node) in params {
        put(w, id.len())?;
        w.write_all(id.as_bytes())?;
        put(w, node.tensors.len())?;
        put(w, node.trainable)?;
        for t in &node.tensors {
            put(w, t.shape().len())?;
            for &d in t.shape() {
                put(w, d)?;
            }
            buf.clear();
            for &v in t.data() {
                v.write_le(&mut buf);
            }
            w.write_all(&buf)?;
        }
    }
    Ok(())
}

pub fn read_params<T: Scalar>(r: &mut impl Read) -> Result<ParamMap<T>, EngineError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(EngineError::Container("not a parameter container".into()));
    }
    let version = get(r)? as u32;
    if version != CONTAINER_VERSION {
        return Err(EngineError::Container(format!(
            "unsupported container version {version}"
        )));
    }
    let bytes = get(r)?;
    if bytes != T::BYTES {
        return Err(EngineError::Container(format!(
            "container holds {bytes}-byte elements, expected {}",
            T::BYTES
        )));
    }
    let nodes = get(r)?;
    let mut params = ParamMap::new();
    for _ in 0..nodes {
        let len = get(r)?;
        let mut id = vec![0u8; len];
        r.read_exact(&mut id).map_err(truncated)?;
        let id = String::from_utf8(id)
            .map_err(|_| EngineError::Container("node id is not UTF-8".into()))?;
        let count = get(r)?;
        let trainable = get(r)?;
        if trainable > count {
            return Err(EngineError::Container(format!(
                "node `{id}` declares {trainable} trainable of {count} tensors"
            )));
        }
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let rank = get(r)?;
            let shape = (0..rank).map(|_| get(r)).collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * T::BYTES];
            r.read_exact(&mut raw).map_err(truncated)?;
            let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
            tensors.push(Tensor::new(shape, data)?);
        }
        params.insert(id, NodeParams { tensors, trainable });
    }
    Ok(params)
}

pub fn save_params<T: Scalar>(
    params: &ParamMap<T>,
    path: &std::path::Path,
) -> Result<(), EngineError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_params(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_params<T: Scalar>(path: &std::path::Path) -> Result<ParamMap<T>, EngineError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    read_params(&mut r)
}

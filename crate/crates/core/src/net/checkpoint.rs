use std::path::Path;

use super::{Network, NetworkConfig};
use crate::binio::{check_header, put_f32s, put_string, put_u32, put_u64, write_atomic, ByteReader};
use crate::error::{Error, Result};
use crate::tensor::{Adam, ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"SMEICKPT";
const VERSION: u32 = 1;

/// A trained network with optional optimizer state.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub network: Network,
    pub optimizer: Option<Adam>,
}

/// Layout: magic, version, model JSON, named tensors (name, trainable flag,
/// shape, f32 data), then optional Adam moments.
pub fn write_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let json = serde_json::to_string(ck.network.config()).map_err(|e| Error::Format(e.to_string()))?;
    put_string(&mut out, &json);
    let store = ck.network.store();
    put_u32(&mut out, store.len() as u32);
    for id in store.ids() {
        let t = store.get(id);
        put_string(&mut out, store.name(id));
        out.push(store.is_trainable(id) as u8);
        put_u32(&mut out, t.shape().len() as u32);
        for &d in t.shape() {
            put_u64(&mut out, d as u64);
        }
        put_f32s(&mut out, t.data());
    }
    match &ck.optimizer {
        None => out.push(0),
        Some(opt) => {
            out.push(1);
            put_u64(&mut out, opt.steps_taken());
            let (m, v) = opt.state();
            put_u32(&mut out, m.len() as u32);
            for (a, b) in m.iter().zip(v) {
                put_u64(&mut out, a.len() as u64);
                put_f32s(&mut out, a);
                put_f32s(&mut out, b);
            }
        }
    }
    Ok(out)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = ByteReader::new(bytes, "checkpoint");
    check_header(&mut r, MAGIC, VERSION)?;
    let config: NetworkConfig = serde_json::from_str(&r.string()?).map_err(|e| Error::Format(format!("checkpoint model description: {e}")))?;
    let n = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..n {
        let name = r.string()?;
        let trainable = r.u8()? != 0;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Format(format!("{name}: shape overflow")))?;
        let data = r.f32s(numel)?;
        store.add(name, Tensor::new(&shape, data)?, trainable).map_err(|e| Error::Format(e.to_string()))?;
    }
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let count = r.u32()? as usize;
            let mut m = Vec::with_capacity(count);
            let mut v = Vec::with_capacity(count);
            for _ in 0..count {
                let len = r.u64()? as usize;
                m.push(r.f32s(len)?);
                v.push(r.f32s(len)?);
            }
            let mut opt = Adam::new();
            opt.restore(step, m, v);
            Some(opt)
        }
        f => return Err(Error::Format(format!("checkpoint optimizer flag {f} is invalid"))),
    };
    r.finish()?;
    let network = Network::from_store(config, store)?;
    Ok(Checkpoint { network, optimizer })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, &write_checkpoint(ck)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

//! "CSCK" checkpoints: little-endian, `magic, u32 version, u32 config
//! length, model config JSON, u32 count`, then per tensor `u16 name length,
//! name, u8 rank, u32 dims…, f32 data…`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::encoder::{CSiamModel, ModelConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::{AdamState, TrainState};

const MAGIC: &[u8; 4] = b"CSCK";
const VERSION: u32 = 1;
const STEP_KEY: &str = "__meta.step";

/// Named tensors plus the model layout they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::MalformedCheckpoint(msg.into())
}

impl Checkpoint {
    pub fn write(&self, mut w: impl Write) -> Result<()> {
        let cfg = serde_json::to_vec(&self.config)?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(cfg.len() as u32).to_le_bytes())?;
        w.write_all(&cfg)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            let n = u16::try_from(name.len()).map_err(|_| bad(format!("name too long: {name}")))?;
            w.write_all(&n.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[t.rank() as u8])?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor {
            bytes: &bytes,
            pos: 0,
        };
        if cur.take(4)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let cfg_len = cur.u32()? as usize;
        let config: ModelConfig = serde_json::from_slice(cur.take(cfg_len)?)?;
        let count = cur.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
            let name =
                String::from_utf8(cur.take(n)?.to_vec()).map_err(|_| bad("name is not UTF-8"))?;
            let rank = cur.take(1)?[0] as usize;
            let shape = (0..rank)
                .map(|_| cur.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let data = cur
                .take(len.checked_mul(4).ok_or_else(|| bad("tensor too large"))?)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if cur.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { config, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(fs::File::open(path)?)
    }

    /// Parameters, Adam moments (`<name>.m`, `<name>.v`) and the step count.
    pub fn from_state<S: Scalar>(state: &TrainState<S>) -> Self {
        let params = &state.model.params;
        let mut tensors = Vec::with_capacity(3 * params.len() + 1);
        tensors.push((STEP_KEY.to_string(), Tensor::scalar(state.step as f32)));
        for (id, p) in params.iter() {
            tensors.push((p.name.clone(), p.tensor.cast()));
            tensors.push((format!("{}.m", p.name), state.adam.m[id.index()].cast()));
            tensors.push((format!("{}.v", p.name), state.adam.v[id.index()].cast()));
        }
        Self {
            config: state.model.cfg.clone(),
            tensors,
        }
    }

    /// Rebuilds the training state; every parameter and moment must be
    /// present with its expected shape.
    pub fn to_state<S: Scalar>(&self) -> Result<TrainState<S>> {
        let find = |name: &str| -> Result<&Tensor<f32>> {
            self.tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::UnknownParameter(name.to_string()))
        };
        let mut model = CSiamModel::<S>::new(self.config.clone(), 0)?;
        let mut adam = AdamState::zeros_like(&model.params);
        let ids: Vec<_> = model
            .params
            .iter()
            .map(|(id, p)| (id, p.name.clone()))
            .collect();
        for (id, name) in &ids {
            let want = model.params.get(*id).tensor.shape().to_vec();
            for (slot, key) in [
                (0, name.clone()),
                (1, format!("{name}.m")),
                (2, format!("{name}.v")),
            ] {
                let t = find(&key)?;
                if t.shape() != want.as_slice() {
                    return Err(Error::ShapeMismatch {
                        op: "checkpoint",
                        left: t.shape().to_vec(),
                        right: want.clone(),
                    });
                }
                let t = t.cast::<S>();
                match slot {
                    0 => model.params.get_mut(*id).tensor = t,
                    1 => adam.m[id.index()] = t,
                    _ => adam.v[id.index()] = t,
                }
            }
        }
        if self.tensors.len() != 3 * ids.len() + 1 {
            return Err(bad("unexpected tensors in checkpoint"));
        }
        let step = find(STEP_KEY)?.item();
        if !(step >= 0.0) || step.fract() != 0.0 {
            return Err(bad("invalid step"));
        }
        Ok(TrainState {
            step: step as u64,
            model,
            adam,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| bad("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::RunConfig;

    fn state() -> TrainState<f32> {
        let cfg = RunConfig::toy();
        let mut s = TrainState::new(CSiamModel::new(cfg.model_config(), 5).unwrap());
        s.step = 17;
        s.adam.m[0].data_mut()[0] = 0.25;
        s
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ck = Checkpoint::from_state(&state());
        let mut a = Vec::new();
        ck.write(&mut a).unwrap();
        let back = Checkpoint::read(a.as_slice())
            .unwrap()
            .to_state::<f32>()
            .unwrap();
        assert_eq!(back.step, 17);
        let mut b = Vec::new();
        Checkpoint::from_state(&back).write(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_corruption() {
        let mut a = Vec::new();
        Checkpoint::from_state(&state()).write(&mut a).unwrap();
        assert!(Checkpoint::read(&a[..a.len() - 3]).is_err());
        let mut c = a.clone();
        c[0] = b'X';
        assert!(Checkpoint::read(c.as_slice()).is_err());
        let mut ck = Checkpoint::from_state(&state());
        ck.tensors.pop();
        assert!(ck.to_state::<f32>().is_err());
    }
}

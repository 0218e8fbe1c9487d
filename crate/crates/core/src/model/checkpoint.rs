use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::autodiff::Array;
use crate::error::{Error, Result};
use crate::postproc::NmsConfig;

const MAGIC: &[u8; 4] = b"BTFD";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Model,
    /// Emits ground-truth maps; carries no network weights.
    Oracle,
}

/// JSON header echoed into every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub kind: CheckpointKind,
    pub model: ModelConfig,
    pub epoch: usize,
    pub step: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nms: Option<NmsConfig>,
}

/// Header plus named arrays, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub arrays: Vec<(String, Array)>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Array> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    /// Arrays whose names start with `prefix`, prefix stripped.
    pub fn with_prefix(&self, prefix: &str) -> Vec<(String, Array)> {
        self.arrays
            .iter()
            .filter_map(|(n, a)| n.strip_prefix(prefix).map(|s| (s.to_string(), a.clone())))
            .collect()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta)?;
        put_u32(&mut out, meta.len())?;
        out.extend_from_slice(&meta);
        put_u32(&mut out, self.arrays.len())?;
        for (name, a) in &self.arrays {
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, a.shape().len())?;
            for &d in a.shape() {
                put_u32(&mut out, d)?;
            }
            for x in a.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let n = r.u32()?;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(n)?)?;
        let count = r.u32()?;
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u32()?;
            let name = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| Error::Format("array name is not UTF-8".into()))?;
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let data = r
                .take(len.checked_mul(8).ok_or_else(|| Error::Format("array too large".into()))?)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            arrays.push((name, Array::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self { meta, arrays })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

/// Prefix of network parameters inside a checkpoint.
pub const PARAM_PREFIX: &str = "param.";

impl Model {
    pub fn named_params(&self) -> Vec<(String, Array)> {
        self.params()
            .names()
            .iter()
            .zip(self.params().arrays())
            .map(|(n, a)| (format!("{PARAM_PREFIX}{n}"), a.clone()))
            .collect()
    }

    /// Rebuilds a model from a checkpoint, rejecting it unless its config
    /// equals `expected` (when given).
    pub fn from_checkpoint(ck: &Checkpoint, expected: Option<&ModelConfig>) -> Result<Self> {
        if ck.meta.kind != CheckpointKind::Model {
            return Err(Error::Format("checkpoint holds no network weights".into()));
        }
        if let Some(e) = expected {
            if *e != ck.meta.model {
                return Err(Error::Config(format!(
                    "checkpoint config {:?} does not match {:?}",
                    ck.meta.model, e
                )));
            }
        }
        let mut m = Model::new(ck.meta.model.clone(), 0)?;
        m.params_mut().replace(ck.with_prefix(PARAM_PREFIX))?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_mismatch() {
        let m = Model::new(ModelConfig::tiny(), 3).unwrap();
        let ck = Checkpoint {
            meta: CheckpointMeta {
                kind: CheckpointKind::Model,
                model: ModelConfig::tiny(),
                epoch: 2,
                step: 10,
                seed: 3,
                nms: Some(NmsConfig::default()),
            },
            arrays: m.named_params(),
        };
        let bytes = ck.encode().unwrap();
        assert_eq!(&bytes[..4], b"BTFD");
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        let m2 = Model::from_checkpoint(&back, Some(&ModelConfig::tiny())).unwrap();
        assert_eq!(m2.params(), m.params());
        let other = ModelConfig { c_f: 6, ..ModelConfig::tiny() };
        assert!(matches!(Model::from_checkpoint(&back, Some(&other)), Err(Error::Config(_))));
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 3]).is_err());
    }
}

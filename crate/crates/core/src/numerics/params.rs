use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, `fan_in = shape[0]`.
    Uniform,
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn weight(name: impl Into<String>, shape: &[usize]) -> Self {
        ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init: Init::Uniform,
        }
    }

    pub fn bias(name: impl Into<String>, shape: &[usize]) -> Self {
        ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init: Init::Zeros,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Slot {
    pub(crate) value: Tensor,
    pub(crate) m: Tensor,
    pub(crate) v: Tensor,
}

/// Named parameters with their AdamW moment buffers.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore {
    pub(crate) slots: BTreeMap<String, Slot>,
    pub(crate) step: u64,
    seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            slots: BTreeMap::new(),
            step: 0,
            seed,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.slots.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter '{name}'")));
        }
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        self.slots.insert(name, Slot { value, m, v });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slots.get(name).map(|s| &s.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.slots.get_mut(name).map(|s| &mut s.value)
    }

    /// Replaces a parameter value, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .slots
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))?;
        if slot.value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter '{name}' is {:?}, got {:?}",
                slot.value.shape(),
                value.shape()
            )));
        }
        slot.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.slots.iter().map(|(k, s)| (k.as_str(), &s.value))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn numel(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    /// (first moment, second moment) for one parameter.
    pub fn moments(&self, name: &str) -> Option<(&Tensor, &Tensor)> {
        self.slots.get(name).map(|s| (&s.m, &s.v))
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, slot) in &self.slots {
            h.update(name.as_bytes());
            for &d in slot.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &x in slot.value.data() {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, encode_checkpoint(self)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_checkpoint(&bytes)
    }
}

/// Each parameter draws from its own stream derived from `(seed, name)`, so
/// adding a parameter never perturbs the others.
pub fn seeded_init(specs: &[ParamSpec], seed: u64) -> Result<ParamStore> {
    let mut store = ParamStore::new(seed);
    for spec in specs {
        let n: usize = spec.shape.iter().product();
        let data = match spec.init {
            Init::Zeros => vec![0.0; n],
            Init::Uniform => {
                let fan_in = spec.shape.first().copied().unwrap_or(1).max(1);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut rng = seed::rng(seed::labeled(seed, &spec.name));
                (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
            }
        };
        store.insert(spec.name.clone(), Tensor::new(spec.shape.clone(), data)?)?;
    }
    Ok(store)
}

const MAGIC: &[u8; 8] = b"VQSPARAM";
const VERSION: u32 = 1;

/// Layout (all little-endian): magic, u32 version, u64 step, u64 seed,
/// u32 count, then per parameter `u32 name_len, name, u32 ndim, u64 dims...`,
/// then every value as f64 in name order, then a SHA-256 of all prior bytes.
pub fn encode_checkpoint(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&store.step.to_le_bytes());
    out.extend_from_slice(&store.seed.to_le_bytes());
    out.extend_from_slice(&(store.slots.len() as u32).to_le_bytes());
    for (name, slot) in &store.slots {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(slot.value.shape().len() as u32).to_le_bytes());
        for &d in slot.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for slot in store.slots.values() {
        for &x in slot.value.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamStore> {
    if bytes.len() < MAGIC.len() + 32 {
        return Err(Error::Checkpoint("file too short".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader {
        bytes: body,
        pos: 0,
    };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let step = r.u64()?;
    let seed = r.u64()?;
    let count = r.u32()? as usize;
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("parameter name is not utf-8".into()))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        table.push((name, shape));
    }
    let mut store = ParamStore::new(seed);
    store.step = step;
    for (name, shape) in table {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| r.u64().map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        store.insert(name, Tensor::new(shape, data)?)?;
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs() -> Vec<ParamSpec> {
        vec![
            ParamSpec::weight("a.w", &[100, 100]),
            ParamSpec::bias("a.b", &[100]),
            ParamSpec::weight("b.w", &[3, 2]),
        ]
    }

    #[test]
    fn same_seed_same_store() {
        let a = seeded_init(&specs(), 11).unwrap();
        let b = seeded_init(&specs(), 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, seeded_init(&specs(), 12).unwrap());
    }

    #[test]
    fn biases_zero_and_weights_bounded() {
        let s = seeded_init(&specs(), 3).unwrap();
        assert!(s.get("a.b").unwrap().data().iter().all(|&v| v == 0.0));
        let w = s.get("a.w").unwrap();
        let bound = 1.0 / 10.0;
        let mean = w.sum() / w.len() as f64;
        assert!(mean.abs() < 0.02);
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        // sample variance of U(-a, a) is a^2 / 3
        let var = w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
        assert!((var - bound * bound / 3.0).abs() < 0.1 * bound * bound / 3.0);
    }

    #[test]
    fn streams_are_per_name() {
        let full = seeded_init(&specs(), 5).unwrap();
        let partial = seeded_init(&specs()[2..], 5).unwrap();
        assert_eq!(full.get("b.w"), partial.get("b.w"));
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let mut s = seeded_init(&specs(), 9).unwrap();
        s.step = 17;
        let bytes = encode_checkpoint(&s);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.step(), 17);
        assert_eq!(back.seed(), 9);
        assert_eq!(back.digest(), s.digest());
        let mut bad = bytes.clone();
        bad[40] ^= 1;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Checkpoint(_))));
        assert!(decode_checkpoint(&bytes[..20]).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new(0);
        s.insert("x", Tensor::scalar(1.0)).unwrap();
        assert!(s.insert("x", Tensor::scalar(2.0)).is_err());
        assert!(s.set("x", Tensor::vector(vec![1.0, 2.0])).is_err());
    }
}

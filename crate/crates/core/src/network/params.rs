//! Named parameter storage, seeded initialization and the `LDWN` checkpoint
//! format.
//!
//! Checkpoint layout (all integers little-endian `u32`):
//!
//! ```text
//! "LDWN" | version | { name_len | name (UTF-8) | rank | extent... | f32 LE payload }*
//! ```
//!
//! Entries run to end of file. The network configuration travels as an
//! ordinary entry named [`CONFIG_ENTRY`].

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{BiasConvention, BranchLayout, LayerKind, NetworkConfig, NetworkGraph};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LDWN";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CONFIG_ENTRY: &str = "__config__";

/// Name → tensor map for every learned parameter and batch-norm statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore<T = f32> {
    pub tensors: BTreeMap<String, Tensor<T>>,
    pub seed: u64,
}

/// Gradients keyed like [`ParameterStore::tensors`] (running statistics excluded).
pub type Gradients<T> = BTreeMap<String, Tensor<T>>;

pub fn weight_key(layer: &str) -> String {
    format!("{layer}.weight")
}

pub fn bias_key(layer: &str) -> String {
    format!("{layer}.bias")
}

pub const BN_KEYS: [&str; 4] = ["gamma", "beta", "running_mean", "running_var"];

pub fn bn_key(layer: &str, field: &str) -> String {
    format!("{layer}.{field}")
}

/// True for entries an optimizer should update.
pub fn is_trainable(key: &str) -> bool {
    !(key.ends_with(".running_mean") || key.ends_with(".running_var"))
}

/// Uniform `±sqrt(6 / fan_in)` weights, zero biases, unit BN scale.
pub fn init_parameters<T: Real>(graph: &NetworkGraph, seed: u64) -> ParameterStore<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    let mut uniform = |shape: &[usize], fan_in: usize| {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect();
        Tensor::from_vec(shape, data).expect("shape product matches")
    };
    for l in &graph.layers {
        match &l.kind {
            LayerKind::Conv(s) => {
                let fan_in = s.in_per_group() * s.kernel_volume();
                tensors.insert(weight_key(&l.name), uniform(&s.weight_shape(), fan_in));
                if s.has_bias {
                    tensors.insert(bias_key(&l.name), Tensor::zeros(&[s.out_channels]));
                }
            }
            LayerKind::FullyConnected { inputs, outputs } => {
                tensors.insert(weight_key(&l.name), uniform(&[*inputs, *outputs], *inputs));
                tensors.insert(bias_key(&l.name), Tensor::zeros(&[*outputs]));
            }
            LayerKind::BatchNorm(s) => {
                let c = s.channels;
                tensors.insert(bn_key(&l.name, "gamma"), Tensor::full(&[c], T::ONE));
                tensors.insert(bn_key(&l.name, "beta"), Tensor::zeros(&[c]));
                tensors.insert(bn_key(&l.name, "running_mean"), Tensor::zeros(&[c]));
                tensors.insert(bn_key(&l.name, "running_var"), Tensor::full(&[c], T::ONE));
            }
            _ => {}
        }
    }
    ParameterStore { tensors, seed }
}

impl<T: Real> ParameterStore<T> {
    pub fn get(&self, key: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(key)
            .ok_or_else(|| Error::Config(format!("parameter `{key}` missing from store")))
    }

    pub fn get_mut(&mut self, key: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(key)
            .ok_or_else(|| Error::Config(format!("parameter `{key}` missing from store")))
    }

    /// Learned scalars (weights, biases, BN scale/shift).
    pub fn trainable_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|(k, _)| is_trainable(k))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Every parameter a graph needs is present with the right shape, and
    /// nothing else is.
    pub fn check_against(&self, graph: &NetworkGraph) -> Result<()> {
        let expected = init_parameters::<T>(graph, 0);
        for (k, t) in &expected.tensors {
            let have = self.get(k)?;
            if have.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "parameter `{k}` has shape {:?}, graph needs {:?}",
                    have.shape(),
                    t.shape()
                )));
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !expected.tensors.contains_key(*k)) {
            return Err(Error::Config(format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            seed: self.seed,
        }
    }
}

fn config_tensor(cfg: &NetworkConfig) -> Tensor<f32> {
    let vals = [
        cfg.patch,
        cfg.bands,
        cfg.num_classes,
        cfg.stem_channels,
        cfg.expand_channels,
        cfg.branch_channels,
        cfg.head_channels,
        cfg.groups,
        cfg.stem_kernel_depth,
        cfg.stem_stride,
        cfg.bias.code() as usize,
        cfg.layout.code() as usize,
    ];
    Tensor::from_vec(&[vals.len()], vals.iter().map(|&v| v as f32).collect()).expect("rank 1")
}

fn config_from_tensor(t: &Tensor<f32>) -> Result<NetworkConfig> {
    let v: Vec<usize> = t.data().iter().map(|&x| x as usize).collect();
    if v.len() != 12 {
        return Err(Error::Format(format!("config entry has {} values, expected 12", v.len())));
    }
    let cfg = NetworkConfig {
        patch: v[0],
        bands: v[1],
        num_classes: v[2],
        stem_channels: v[3],
        expand_channels: v[4],
        branch_channels: v[5],
        head_channels: v[6],
        groups: v[7],
        stem_kernel_depth: v[8],
        stem_stride: v[9],
        bias: BiasConvention::from_code(v[10] as u32)?,
        layout: BranchLayout::from_code(v[11] as u32)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Write the raw entry list. Payload values are stored as `f32`.
pub fn write_entries<W: Write>(mut w: W, entries: &BTreeMap<String, Tensor<f32>>) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for (name, t) in entries {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &e in t.shape() {
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        let mut payload = Vec::with_capacity(t.numel() * 4);
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&payload)?;
    }
    Ok(())
}

fn read_u32(buf: &[u8], pos: &mut usize) -> Result<u32> {
    let b = buf
        .get(*pos..*pos + 4)
        .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
    *pos += 4;
    Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
}

pub fn read_entries<R: Read>(mut r: R) -> Result<BTreeMap<String, Tensor<f32>>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.get(..4) != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::Format("not an LDWN checkpoint (bad magic)".into()));
    }
    let mut pos = 4;
    let version = read_u32(&buf, &mut pos)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut out = BTreeMap::new();
    while pos < buf.len() {
        let len = read_u32(&buf, &mut pos)? as usize;
        let name = buf
            .get(pos..pos + len)
            .ok_or_else(|| Error::Format("checkpoint truncated in entry name".into()))?;
        let name = String::from_utf8(name.to_vec())
            .map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
        pos += len;
        let rank = read_u32(&buf, &mut pos)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&buf, &mut pos)? as usize);
        }
        let n: usize = shape.iter().product();
        let bytes = buf
            .get(pos..pos + 4 * n)
            .ok_or_else(|| Error::Format(format!("payload of `{name}` truncated")))?;
        pos += 4 * n;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::from_vec(&shape, data).map_err(|e| Error::Format(format!("entry `{name}`: {e}")))?;
        if out.insert(name.clone(), t).is_some() {
            return Err(Error::Format(format!("duplicate entry `{name}`")));
        }
    }
    Ok(out)
}

/// Persist a network configuration and its parameters.
pub fn save_checkpoint<T: Real, W: Write>(w: W, cfg: &NetworkConfig, params: &ParameterStore<T>) -> Result<()> {
    let mut entries: BTreeMap<String, Tensor<f32>> =
        params.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect();
    entries.insert(CONFIG_ENTRY.to_string(), config_tensor(cfg));
    write_entries(w, &entries)
}

/// Load a checkpoint and verify its parameters fit the stored configuration.
pub fn load_checkpoint<T: Real, R: Read>(r: R) -> Result<(NetworkConfig, ParameterStore<T>)> {
    let mut entries = read_entries(r)?;
    let cfg_t = entries
        .remove(CONFIG_ENTRY)
        .ok_or_else(|| Error::Format("checkpoint has no configuration entry".into()))?;
    let cfg = config_from_tensor(&cfg_t)?;
    let store = ParameterStore {
        tensors: entries.into_iter().map(|(k, v)| (k, v.cast())).collect(),
        seed: 0,
    };
    let graph = super::graph::build_network(&cfg)?;
    store.check_against(&graph)?;
    Ok((cfg, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::graph::build_network;

    fn graph() -> NetworkGraph {
        build_network(&NetworkConfig::new(5, 16, 3)).unwrap()
    }

    #[test]
    fn same_seed_same_store() {
        let g = graph();
        assert_eq!(init_parameters::<f64>(&g, 7), init_parameters::<f64>(&g, 7));
        assert_ne!(init_parameters::<f64>(&g, 7), init_parameters::<f64>(&g, 8));
    }

    #[test]
    fn weights_bounded_by_fan_in() {
        let g = graph();
        let p = init_parameters::<f64>(&g, 3);
        for l in &g.layers {
            let fan_in = match &l.kind {
                LayerKind::Conv(s) => s.in_per_group() * s.kernel_volume(),
                LayerKind::FullyConnected { inputs, .. } => *inputs,
                _ => continue,
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = p.get(&weight_key(&l.name)).unwrap();
            assert!(w.data().iter().all(|v| v.abs() <= bound), "{}", l.name);
            if let Ok(b) = p.get(&bias_key(&l.name)) {
                assert!(b.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn store_matches_graph() {
        let g = graph();
        let p = init_parameters::<f32>(&g, 1);
        p.check_against(&g).unwrap();
        let mut q = p.clone();
        q.tensors.remove("fc.bias");
        assert!(q.check_against(&g).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let cfg = NetworkConfig::new(5, 16, 3).with_bias(BiasConvention::Everywhere);
        let g = build_network(&cfg).unwrap();
        let p = init_parameters::<f32>(&g, 11);
        let mut buf = Vec::new();
        save_checkpoint(&mut buf, &cfg, &p).unwrap();
        assert_eq!(&buf[..4], b"LDWN");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        let (cfg2, p2) = load_checkpoint::<f32, _>(buf.as_slice()).unwrap();
        assert_eq!(cfg2, cfg);
        for (k, v) in &p.tensors {
            let w = &p2.tensors[k];
            assert_eq!(v.shape(), w.shape());
            for (a, b) in v.data().iter().zip(w.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        let mut again = Vec::new();
        save_checkpoint(&mut again, &cfg2, &p2).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(read_entries(&b"NOPE\x01\0\0\0"[..]).is_err());
        let cfg = NetworkConfig::new(5, 16, 3);
        let p = init_parameters::<f32>(&build_network(&cfg).unwrap(), 0);
        let mut buf = Vec::new();
        save_checkpoint(&mut buf, &cfg, &p).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(load_checkpoint::<f32, _>(buf.as_slice()).is_err());
    }
}

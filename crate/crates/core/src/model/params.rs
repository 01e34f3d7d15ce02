//! Parameter storage: named tensors owned per network, selectors for the
//! three optimizers, content hashing, and the checkpoint archive format.

use super::{discriminator_time_chain, ModelConfig, ModelDims};
use crate::data::container::Archive;
use crate::error::{Error, Result};
use crate::graph::{Arr, Graph, Var};
use ndarray::IxDyn;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

/// Which network owns a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Net {
    Extractor,
    Classifier,
    Discriminator,
}

/// Trainable parameters get gradients and optimizer state; buffers are
/// running statistics updated outside the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TensorKind {
    Trainable,
    Buffer,
}

#[derive(Debug, Clone)]
pub(crate) struct TensorEntry {
    pub name: String,
    pub net: Net,
    pub kind: TensorKind,
    pub value: Arr,
}

/// All learnable state of the three networks, addressable by canonical name
/// (e.g. `extractor.stem.0.weight`) and by owning network.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub config: ModelConfig,
    pub(crate) entries: Vec<TensorEntry>,
    index: BTreeMap<String, usize>,
}

fn he_uniform(rng: &mut ChaCha20Rng, shape: &[usize], fan_in: usize) -> Arr {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Arr::from_shape_vec(IxDyn(shape), vals).expect("init shape")
}

impl ModelParams {
    /// Initialize all parameters for the given dimensions. Convolutions in
    /// front of batch norm carry no bias (the normalization cancels a
    /// per-channel shift); the attention K and V projections carry none
    /// either (row-softmax and the following batch norm cancel them).
    pub fn init(dims: ModelDims, config: ModelConfig, rng: &mut ChaCha20Rng) -> Result<Self> {
        dims.validate()?;
        config.validate()?;
        let mut p = ModelParams {
            dims: dims.clone(),
            config: config.clone(),
            entries: Vec::new(),
            index: BTreeMap::new(),
        };
        let c0 = config.stem_channels;
        for (i, (_, ch)) in dims.sensors.iter().enumerate() {
            p.add_param(Net::Extractor, format!("extractor.stem.{i}.weight"), he_uniform(rng, &[c0, *ch, 3], ch * 3));
            p.add_param(Net::Extractor, format!("extractor.stem.{i}.bias"), Arr::zeros(IxDyn(&[c0])));
        }
        let widths = [c0, 2 * c0, 4 * c0, 8 * c0];
        for b in 0..3 {
            let (ci, co) = (widths[b], widths[b + 1]);
            let pre = format!("extractor.block{b}");
            for proj in ["q", "k", "v"] {
                p.add_param(Net::Extractor, format!("{pre}.{proj}.weight"), he_uniform(rng, &[ci, ci], ci));
            }
            p.add_param(Net::Extractor, format!("{pre}.q.bias"), Arr::zeros(IxDyn(&[ci])));
            p.add_bn(Net::Extractor, &format!("{pre}.bn"), ci);
            let k = config.temporal_kernel;
            p.add_param(Net::Extractor, format!("{pre}.temporal.weight"), he_uniform(rng, &[co, ci, k], ci * k));
            p.add_param(Net::Extractor, format!("{pre}.temporal.bias"), Arr::zeros(IxDyn(&[co])));
        }

        let d_embed = 8 * c0;
        p.add_param(Net::Classifier, "classifier.fc.weight".into(), he_uniform(rng, &[dims.n_activities, d_embed], d_embed));
        p.add_param(Net::Classifier, "classifier.fc.bias".into(), Arr::zeros(IxDyn(&[dims.n_activities])));

        let d_widths = [d_embed, 32, 64, 128];
        for i in 0..3 {
            let (ci, co) = (d_widths[i], d_widths[i + 1]);
            p.add_param(Net::Discriminator, format!("discriminator.conv{i}.weight"), he_uniform(rng, &[co, ci, 5], ci * 5));
            p.add_bn(Net::Discriminator, &format!("discriminator.conv{i}.bn"), co);
        }
        let t3 = discriminator_time_chain(dims.window)[2];
        let fc1_in = 128 * t3;
        p.add_param(Net::Discriminator, "discriminator.fc1.weight".into(), he_uniform(rng, &[10, fc1_in], fc1_in));
        p.add_param(Net::Discriminator, "discriminator.fc1.bias".into(), Arr::zeros(IxDyn(&[10])));
        p.add_param(Net::Discriminator, "discriminator.fc2.weight".into(), he_uniform(rng, &[dims.n_domains, 10], 10));
        p.add_param(Net::Discriminator, "discriminator.fc2.bias".into(), Arr::zeros(IxDyn(&[dims.n_domains])));
        Ok(p)
    }

    fn add_param(&mut self, net: Net, name: String, value: Arr) {
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(TensorEntry {
            name,
            net,
            kind: TensorKind::Trainable,
            value,
        });
    }

    fn add_buffer(&mut self, net: Net, name: String, value: Arr) {
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(TensorEntry {
            name,
            net,
            kind: TensorKind::Buffer,
            value,
        });
    }

    fn add_bn(&mut self, net: Net, prefix: &str, channels: usize) {
        self.add_param(net, format!("{prefix}.gamma"), Arr::ones(IxDyn(&[channels])));
        self.add_param(net, format!("{prefix}.beta"), Arr::zeros(IxDyn(&[channels])));
        self.add_buffer(net, format!("{prefix}.running_mean"), Arr::zeros(IxDyn(&[channels])));
        self.add_buffer(net, format!("{prefix}.running_var"), Arr::ones(IxDyn(&[channels])));
    }

    pub fn idx(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
    }

    pub fn value(&self, name: &str) -> &Arr {
        &self.entries[self.idx(name)].value
    }

    pub fn value_at(&self, idx: usize) -> &Arr {
        &self.entries[idx].value
    }

    pub fn set_at(&mut self, idx: usize, value: Arr) {
        debug_assert_eq!(self.entries[idx].value.shape(), value.shape());
        self.entries[idx].value = value;
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.iter().map(|e| &e.name)
    }

    /// Indices of the trainable parameters of one network, in declaration
    /// order. Every trainable tensor belongs to exactly one selector.
    pub fn trainable(&self, net: Net) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| (e.net == net && e.kind == TensorKind::Trainable).then_some(i))
            .collect()
    }

    /// Content hash over values (bit patterns) of one network or of all
    /// tensors, buffers included.
    pub fn content_hash(&self, net: Option<Net>) -> u64 {
        self.hash_filtered(net, None)
    }

    /// Content hash restricted to trainable parameters (running statistics
    /// excluded), the sense in which sub-steps own their network.
    pub fn trainable_hash(&self, net: Net) -> u64 {
        self.hash_filtered(Some(net), Some(TensorKind::Trainable))
    }

    fn hash_filtered(&self, net: Option<Net>, kind: Option<TensorKind>) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for e in &self.entries {
            if net.map_or(true, |n| e.net == n) && kind.map_or(true, |k| e.kind == k) {
                e.name.hash(&mut h);
                for v in e.value.iter() {
                    v.to_bits().hash(&mut h);
                }
            }
        }
        h.finish()
    }

    fn meta_json(&self) -> serde_json::Value {
        let config_json = serde_json::to_value(&self.config).expect("config serializes");
        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        config_json.to_string().hash(&mut hasher);
        serde_json::json!({
            "kind": "checkpoint",
            "window": self.dims.window,
            "sensors": self.dims.sensors,
            "n_activities": self.dims.n_activities,
            "n_domains": self.dims.n_domains,
            "config": config_json,
            "config_hash": format!("{:016x}", hasher.finish()),
            "tensors": self.entries.iter().map(|e| serde_json::json!({
                "name": e.name,
                "net": e.net,
                "kind": e.kind,
            })).collect::<Vec<_>>(),
        })
    }

    /// Single-archive checkpoint: shape-tagged arrays keyed by canonical
    /// name plus a manifest of dimensions and config.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut archive = Archive::new(self.meta_json());
        for e in &self.entries {
            archive.put_f64(e.name.clone(), e.value.clone());
        }
        archive.write(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let archive = Archive::read(path)?;
        let meta = &archive.meta;
        if meta["kind"] != "checkpoint" {
            return Err(Error::Archive("not a checkpoint archive".into()));
        }
        let dims = ModelDims {
            window: meta["window"].as_u64().ok_or_else(|| Error::Archive("missing window".into()))? as usize,
            sensors: serde_json::from_value(meta["sensors"].clone())?,
            n_activities: meta["n_activities"].as_u64().unwrap_or(0) as usize,
            n_domains: meta["n_domains"].as_u64().unwrap_or(0) as usize,
        };
        let config: ModelConfig = serde_json::from_value(meta["config"].clone())?;
        let mut entries = Vec::new();
        let mut index = BTreeMap::new();
        for t in meta["tensors"]
            .as_array()
            .ok_or_else(|| Error::Archive("missing tensor manifest".into()))?
        {
            let name = t["name"].as_str().unwrap_or_default().to_string();
            let value = archive.get_f64(&name)?.clone();
            index.insert(name.clone(), entries.len());
            entries.push(TensorEntry {
                name,
                net: serde_json::from_value(t["net"].clone())?,
                kind: serde_json::from_value(t["kind"].clone())?,
                value,
            });
        }
        let p = ModelParams {
            dims,
            config,
            entries,
            index,
        };
        p.dims.validate()?;
        Ok(p)
    }
}

/// Tape bindings of a parameter set: leaves for the networks being trained,
/// constants for everything else.
pub struct Bound {
    vars: Vec<Var>,
    name_to_slot: BTreeMap<String, usize>,
}

impl Bound {
    /// Bind every tensor into `g`; tensors of networks in `trainable_nets`
    /// become gradient leaves.
    pub fn new(g: &mut Graph, params: &ModelParams, trainable_nets: &[Net]) -> Self {
        let mut vars = Vec::with_capacity(params.entries.len());
        let mut name_to_slot = BTreeMap::new();
        for (i, e) in params.entries.iter().enumerate() {
            let v = if e.kind == TensorKind::Trainable && trainable_nets.contains(&e.net) {
                g.leaf(e.value.clone())
            } else {
                g.constant(e.value.clone())
            };
            name_to_slot.insert(e.name.clone(), i);
            vars.push(v);
        }
        Bound { vars, name_to_slot }
    }

    pub fn var(&self, name: &str) -> Var {
        let slot = *self
            .name_to_slot
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter '{name}'"));
        self.vars[slot]
    }

    /// `(entry index, var)` pairs, aligned with the parameter storage.
    pub fn slots(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.vars.iter().copied().enumerate()
    }
}

/// Pending running-statistics updates gathered during a train-mode forward.
#[derive(Default)]
pub struct BnUpdates {
    pub(crate) updates: Vec<(usize, Arr)>,
}

impl BnUpdates {
    pub fn push(&mut self, entry_idx: usize, value: Arr) {
        self.updates.push((entry_idx, value));
    }

    /// Apply updates whose tensors belong to `net`, discarding the rest.
    pub fn apply(self, params: &mut ModelParams, net: Net) {
        for (idx, value) in self.updates {
            if params.entries[idx].net == net {
                params.entries[idx].value = value;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn dims() -> ModelDims {
        ModelDims {
            window: 64,
            sensors: vec![("a".into(), 3), ("b".into(), 2)],
            n_activities: 4,
            n_domains: 3,
        }
    }

    #[test]
    fn selectors_partition_trainables() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let p = ModelParams::init(dims(), ModelConfig::default(), &mut rng).unwrap();
        let (e, c, d) = (
            p.trainable(Net::Extractor),
            p.trainable(Net::Classifier),
            p.trainable(Net::Discriminator),
        );
        let total = p
            .entries
            .iter()
            .filter(|t| t.kind == TensorKind::Trainable)
            .count();
        assert_eq!(e.len() + c.len() + d.len(), total);
        let mut all: Vec<usize> = e.iter().chain(&c).chain(&d).copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), total);
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn parameter_shapes_follow_dims() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let p = ModelParams::init(dims(), ModelConfig::default(), &mut rng).unwrap();
        assert_eq!(p.value("extractor.stem.0.weight").shape(), &[32, 3, 3]);
        assert_eq!(p.value("extractor.stem.1.weight").shape(), &[32, 2, 3]);
        assert_eq!(p.value("extractor.block2.temporal.weight").shape(), &[256, 128, 5]);
        assert_eq!(p.value("classifier.fc.weight").shape(), &[4, 256]);
        assert_eq!(p.value("discriminator.conv0.weight").shape(), &[32, 256, 5]);
        // W=64 -> t3 = 1 -> fc1 input 128.
        assert_eq!(p.value("discriminator.fc1.weight").shape(), &[10, 128]);
        assert_eq!(p.value("discriminator.fc2.weight").shape(), &[3, 10]);
    }

    #[test]
    fn content_hash_tracks_changes() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut p = ModelParams::init(dims(), ModelConfig::default(), &mut rng).unwrap();
        let h0 = p.content_hash(Some(Net::Extractor));
        let hc = p.content_hash(Some(Net::Classifier));
        let idx = p.idx("classifier.fc.bias");
        let mut v = p.value_at(idx).clone();
        v[[0]] += 1.0;
        p.set_at(idx, v);
        assert_eq!(p.content_hash(Some(Net::Extractor)), h0);
        assert_ne!(p.content_hash(Some(Net::Classifier)), hc);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let p = ModelParams::init(dims(), ModelConfig::default(), &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        p.save(&path).unwrap();
        let q = ModelParams::load(&path).unwrap();
        assert_eq!(p.dims, q.dims);
        assert_eq!(p.content_hash(None), q.content_hash(None));
    }
}

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// How a parameter is initialized, and whether SGD touches it.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    /// Uniform(−1/√fan_in, 1/√fan_in).
    Uniform { fan_in: usize },
    Zeros,
    Ones,
    /// Batch-norm running statistic; not trained.
    Buffer(f64),
}

/// Named tensors of a model: learnable weights plus batch-norm buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T: Scalar = f64> {
    tensors: BTreeMap<String, Tensor<T>>,
    buffers: BTreeSet<String>,
}

impl<T: Scalar> Params<T> {
    pub fn from_parts(tensors: BTreeMap<String, Tensor<T>>, buffer_names: &[String]) -> Self {
        Params {
            tensors,
            buffers: buffer_names.iter().cloned().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("no parameter named `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("no parameter named `{name}`")))
    }

    /// Replaces a tensor, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(Error::dim(
                "Params::set",
                format!("`{name}` has shape {:?}, got {:?}", slot.shape(), value.shape()),
            ));
        }
        *slot = value;
        Ok(())
    }

    pub fn is_buffer(&self, name: &str) -> bool {
        self.buffers.contains(name)
    }

    /// All tensors in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    /// Learnable tensors in name order.
    pub fn trainable(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter().filter(|(n, _)| !self.is_buffer(n))
    }

    pub fn buffer_names(&self) -> Vec<String> {
        self.buffers.iter().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.trainable().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
            buffers: self.buffers.clone(),
        }
    }
}

fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = Vec::new();
    let linear = |out: &mut Vec<_>, prefix: &str, d_in: usize, d_out: usize, bias: bool| {
        out.push((format!("{prefix}.weight"), vec![d_in, d_out], Init::Uniform { fan_in: d_in }));
        if bias {
            out.push((format!("{prefix}.bias"), vec![d_out], Init::Zeros));
        }
    };
    let d = config.d_model;

    for i in 0..config.mlp_layers {
        let d_in = if i == 0 { config.raw_len } else { config.mlp_hidden };
        let d_out = if i + 1 == config.mlp_layers { d } else { config.mlp_hidden };
        linear(&mut out, &format!("raw.mlp.{i}"), d_in, d_out, true);
    }
    out.push(("raw.norm.gamma".into(), vec![d], Init::Ones));
    out.push(("raw.norm.beta".into(), vec![d], Init::Zeros));
    for p in ["wq", "wk", "wv"] {
        linear(&mut out, &format!("raw.attn.{p}"), d, d, false);
    }

    let mut c_in = config.charts();
    for (i, &c_out) in config.conv_channels.iter().enumerate() {
        let fan_in = c_in * 9;
        out.push((format!("vision.conv.{i}.weight"), vec![c_out, c_in, 3, 3], Init::Uniform { fan_in }));
        out.push((format!("vision.conv.{i}.bias"), vec![c_out], Init::Zeros));
        out.push((format!("vision.bn.{i}.gamma"), vec![c_out], Init::Ones));
        out.push((format!("vision.bn.{i}.beta"), vec![c_out], Init::Zeros));
        out.push((format!("vision.bn.{i}.running_mean"), vec![c_out], Init::Buffer(0.0)));
        out.push((format!("vision.bn.{i}.running_var"), vec![c_out], Init::Buffer(1.0)));
        c_in = c_out;
    }
    linear(&mut out, "vision.proj", c_in, d, true);
    for p in ["wq", "wk", "wv"] {
        linear(&mut out, &format!("vision.attn.{p}"), d, d, false);
    }

    let hidden = d * config.ffn_mult;
    for l in 0..config.fusion_blocks {
        let pre = format!("fusion.{l}");
        out.push((format!("{pre}.ln1.gamma"), vec![d], Init::Ones));
        out.push((format!("{pre}.ln1.beta"), vec![d], Init::Zeros));
        for p in ["wq", "wk", "wv", "wo"] {
            linear(&mut out, &format!("{pre}.attn.{p}"), d, d, false);
        }
        out.push((format!("{pre}.ln2.gamma"), vec![d], Init::Ones));
        out.push((format!("{pre}.ln2.beta"), vec![d], Init::Zeros));
        linear(&mut out, &format!("{pre}.ffn.0"), d, hidden, true);
        linear(&mut out, &format!("{pre}.ffn.1"), hidden, d, true);
    }
    linear(&mut out, "head", d, config.grid, true);
    out
}

/// Initializes every parameter of `config`; deterministic in `seed`.
///
/// Weights are drawn in layout order from one ChaCha8 stream.
pub fn init_params<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<Params<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    let mut buffers = BTreeSet::new();
    for (name, shape, init) in layout(config) {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match init {
            Init::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n)
                    .map(|_| T::from_f64(rng.random_range(-bound..bound)))
                    .collect()
            }
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Buffer(v) => {
                buffers.insert(name.clone());
                vec![T::from_f64(v); n]
            }
        };
        let prev = tensors.insert(name.clone(), Tensor::from_vec(shape, data)?);
        debug_assert!(prev.is_none(), "duplicate parameter {name}");
    }
    Ok(Params { tensors, buffers })
}

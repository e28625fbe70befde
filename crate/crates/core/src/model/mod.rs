//! The two-branch regression network.
//!
//! ```text
//! raw [B×n] ──MLP(σ)×N──LN──attn──┐ output1 [B×1×d]
//!                                 ├─concat─[Transformer×L]─mean─head─► q [B×G]
//! charts [B×K×H×W] ──(conv·BN·ReLU·pool)×N──avg──proj──attn──┘ output2 [B×1×d]
//! ```

mod config;
mod layers;
mod params;

use std::cell::RefCell;
use std::collections::BTreeMap;

pub use config::{Backbone, ModelConfig, Readout, Variant};
pub use layers::{
    attention, fusion_transformer, mse_loss, multi_head_attention, predict, predict_mlp_attn,
    predict_mlp_only, predict_vars, raw_branch, raw_mlp, vision_branch, vision_features,
};
pub use params::{init_params, Params};

use crate::error::{Error, Result};
use crate::tensor::{BatchNormStats, Graph, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch-norm uses batch statistics and updates running stats.
    Train,
    /// Batch-norm uses running stats; the forward pass is a pure function.
    Eval,
}

/// Model inputs for one batch. `charts` may be absent for raw-only variants.
#[derive(Clone, Debug)]
pub struct Inputs<T: Scalar = f64> {
    /// `B×n`
    pub raw: Tensor<T>,
    /// `B×K×H×W`
    pub charts: Option<Tensor<T>>,
}

impl<T: Scalar> Inputs<T> {
    pub fn batch_size(&self) -> usize {
        self.raw.shape()[0]
    }
}

/// Parameters of one forward pass, bound to graph nodes on first use.
///
/// Tracks which parameters the pass touched and collects batch-norm
/// running-stat updates so the caller can apply them afterwards.
pub struct Bound<'g, 'p, T: Scalar> {
    graph: &'g Graph<T>,
    params: &'p Params<T>,
    config: &'p ModelConfig,
    mode: Mode,
    trainable: bool,
    vars: RefCell<BTreeMap<String, Var<'g, T>>>,
    stats: RefCell<Vec<(usize, BatchNormStats<T>)>>,
}

impl<'g, 'p, T: Scalar> Bound<'g, 'p, T> {
    /// Parameters become leaves when `trainable`, constants otherwise.
    pub fn new(
        graph: &'g Graph<T>,
        params: &'p Params<T>,
        config: &'p ModelConfig,
        mode: Mode,
        trainable: bool,
    ) -> Self {
        Bound {
            graph,
            params,
            config,
            mode,
            trainable,
            vars: RefCell::new(BTreeMap::new()),
            stats: RefCell::new(Vec::new()),
        }
    }

    /// Uses `vars` for the named parameters instead of binding from `params`.
    pub fn with_vars(mut self, vars: BTreeMap<String, Var<'g, T>>) -> Self {
        self.vars = RefCell::new(vars);
        self
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn config(&self) -> &'p ModelConfig {
        self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn param(&self, name: &str) -> Result<Var<'g, T>> {
        if let Some(v) = self.vars.borrow().get(name) {
            return Ok(*v);
        }
        let t = self.params.get(name)?.clone();
        let v = if self.trainable {
            self.graph.leaf(t)
        } else {
            self.graph.constant(t)
        };
        self.vars.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    pub(crate) fn batchnorm(&self, x: Var<'g, T>, stage: usize) -> Result<Var<'g, T>> {
        let gamma = self.param(&format!("vision.bn.{stage}.gamma"))?;
        let beta = self.param(&format!("vision.bn.{stage}.beta"))?;
        let mut stats = BatchNormStats {
            mean: self.params.get(&format!("vision.bn.{stage}.running_mean"))?.clone(),
            var: self.params.get(&format!("vision.bn.{stage}.running_var"))?.clone(),
        };
        let training = self.mode == Mode::Train;
        let y = x.batchnorm2d(
            gamma,
            beta,
            &mut stats,
            training,
            self.config.bn_momentum,
            self.config.bn_eps,
        )?;
        if training {
            self.stats.borrow_mut().push((stage, stats));
        }
        Ok(y)
    }

    /// Parameters bound so far.
    pub fn bound_vars(&self) -> BTreeMap<String, Var<'g, T>> {
        self.vars.borrow().clone()
    }

    /// Gradients of every bound parameter after `graph.backward`.
    ///
    /// Parameters the loss does not depend on are omitted.
    pub fn grads(&self) -> BTreeMap<String, Tensor<T>> {
        self.vars
            .borrow()
            .iter()
            .filter_map(|(n, &v)| self.graph.grad(v).map(|g| (n.clone(), g)))
            .collect()
    }

    /// Running-stat updates produced by training-mode batch norms.
    pub fn stat_updates(&self) -> Vec<(String, Tensor<T>)> {
        self.stats
            .borrow()
            .iter()
            .flat_map(|(stage, s)| {
                [
                    (format!("vision.bn.{stage}.running_mean"), s.mean.clone()),
                    (format!("vision.bn.{stage}.running_var"), s.var.clone()),
                ]
            })
            .collect()
    }
}

/// A configuration together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Scalar = f64> {
    pub config: ModelConfig,
    pub params: Params<T>,
}

/// Result of a training-mode forward pass.
pub struct Forward<'g, T: Scalar> {
    pub pred: Var<'g, T>,
    pub params: BTreeMap<String, Var<'g, T>>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Model { config, params })
    }

    /// Records a forward pass whose parameters are graph leaves.
    ///
    /// In [`Mode::Train`] the batch-norm running stats in `self.params` are
    /// updated.
    pub fn forward<'g>(
        &mut self,
        graph: &'g Graph<T>,
        inputs: &Inputs<T>,
        variant: Variant,
        mode: Mode,
    ) -> Result<Forward<'g, T>> {
        let (pred, params, updates) = {
            let bound = Bound::new(graph, &self.params, &self.config, mode, true);
            let pred = predict(&bound, inputs, variant)?;
            (pred, bound.bound_vars(), bound.stat_updates())
        };
        for (name, value) in updates {
            self.params.set(&name, value)?;
        }
        Ok(Forward { pred, params })
    }

    /// Eval-mode prediction without gradient tracking.
    pub fn predict_eval(&self, inputs: &Inputs<T>, variant: Variant) -> Result<Tensor<T>> {
        let graph = Graph::new();
        let bound = Bound::new(&graph, &self.params, &self.config, Mode::Eval, false);
        Ok(predict(&bound, inputs, variant)?.value())
    }

    /// Checks that `inputs` match the configured extents.
    pub fn check_inputs(&self, inputs: &Inputs<T>, variant: Variant) -> Result<()> {
        let c = &self.config;
        let raw = inputs.raw.shape();
        if raw.len() != 2 || raw[1] != c.raw_len {
            return Err(Error::dim(
                "inputs",
                format!("raw batch {raw:?} does not match raw_len {}", c.raw_len),
            ));
        }
        if variant.uses_charts() {
            let charts = inputs
                .charts
                .as_ref()
                .ok_or_else(|| Error::dim("inputs", "multimodal variant needs charts"))?;
            let expected = [raw[0], c.charts(), c.height, c.width];
            if charts.shape() != expected {
                return Err(Error::dim(
                    "inputs",
                    format!("charts {:?} do not match {expected:?}", charts.shape()),
                ));
            }
        }
        Ok(())
    }
}

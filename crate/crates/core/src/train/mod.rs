//! SGD training, evaluation, metrics and checkpoints.

mod checkpoint;
mod metrics;

use std::cell::Cell;
use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, Checkpoint, RngState,
    CHECKPOINT_VERSION,
};
pub use metrics::{MetricsLog, MetricsRow, Split, METRICS_HEADER};

use crate::charts::render_charts;
use crate::data::{vectorize_raw_into, Dataset, RawRecord};
use crate::error::{Error, Result};
use crate::model::{mse_loss, Inputs, Mode, Model, ModelConfig, Params, Variant};
use crate::tensor::{DType, Graph, Scalar, Tensor};

/// Stream of the shuffle generator; parameter init uses stream 0.
const SHUFFLE_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub variant: Variant,
    #[serde(default)]
    pub dtype: DType,
    /// Evaluate the test split every this many epochs (and after the last).
    pub eval_every: usize,
    /// Record wall-clock seconds in the metrics; off gives reproducible logs.
    #[serde(default = "default_timing")]
    pub timing: bool,
}

fn default_timing() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 130,
            lr: 0.001,
            batch_size: 16,
            seed: 0,
            variant: Variant::Multimodal,
            dtype: DType::F64,
            eval_every: 1,
            timing: true,
        }
    }
}

impl TrainConfig {
    /// Desk-scale schedule paired with [`ModelConfig::desk`]: 30 epochs at
    /// lr 0.05 in 32-bit.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 0.05,
            dtype: DType::F32,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// `p ← p − lr·g` for every trainable tensor; batch-norm buffers are skipped.
pub fn sgd_step<T: Scalar>(
    params: &mut Params<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    lr: f64,
) -> Result<()> {
    let names: Vec<String> = params.trainable().map(|(n, _)| n.clone()).collect();
    if let Some(missing) = names.iter().find(|n| !grads.contains_key(*n)) {
        return Err(Error::MissingGradient(missing.clone()));
    }
    let lr = T::from_f64(lr);
    for name in names {
        let g = &grads[&name];
        let p = params.get_mut(&name)?;
        if p.shape() != g.shape() {
            return Err(Error::dim(
                "sgd_step",
                format!("`{name}` has shape {:?}, gradient {:?}", p.shape(), g.shape()),
            ));
        }
        for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv = *pv - lr * gv;
        }
    }
    Ok(())
}

/// Turns records into model inputs, counting chart renders.
pub struct BatchBuilder<'c> {
    config: &'c ModelConfig,
    variant: Variant,
    rendered: Cell<usize>,
}

impl<'c> BatchBuilder<'c> {
    pub fn new(config: &'c ModelConfig, variant: Variant) -> Self {
        BatchBuilder {
            config,
            variant,
            rendered: Cell::new(0),
        }
    }

    /// Chart stacks rendered so far.
    pub fn charts_rendered(&self) -> usize {
        self.rendered.get()
    }

    /// Inputs and `B×G` targets for `records`.
    ///
    /// Raw vectors follow the truncate/pad rule at any configured length.
    pub fn build<T: Scalar>(&self, records: &[&RawRecord]) -> Result<(Inputs<T>, Tensor<T>)> {
        let c = self.config;
        let b = records.len();
        let mut raw = vec![0.0; b * c.raw_len];
        let mut gt = Vec::with_capacity(b * c.grid);
        for (r, row) in records.iter().zip(raw.chunks_mut(c.raw_len)) {
            vectorize_raw_into(r, row)?;
            if r.q.len() != c.grid {
                return Err(Error::dim(
                    "batch",
                    format!("record `{}` has {} q points, model grid is {}", r.id, r.q.len(), c.grid),
                ));
            }
            gt.extend(r.q.iter().map(|&v| T::from_f64(v)));
        }
        let raw = Tensor::from_vec(vec![b, c.raw_len], raw.into_iter().map(T::from_f64).collect())?;
        let charts = if self.variant.uses_charts() {
            let plane = c.charts() * c.height * c.width;
            let mut px = vec![T::zero(); b * plane];
            for (r, out) in records.iter().zip(px.chunks_mut(plane)) {
                let stack = render_charts(r, &c.chart_selection, c.sampling(), c.height, c.width)?;
                stack.write_into(out);
                self.rendered.set(self.rendered.get() + 1);
            }
            Some(Tensor::from_vec(vec![b, c.charts(), c.height, c.width], px)?)
        } else {
            None
        };
        Ok((Inputs { raw, charts }, Tensor::from_vec(vec![b, c.grid], gt)?))
    }
}

/// Mean squared error of `model` over `dataset`, in eval mode.
///
/// Errors are accumulated per element in record order, so the result does
/// not depend on `batch_size`.
pub fn evaluate_model<T: Scalar>(
    model: &Model<T>,
    variant: Variant,
    dataset: &Dataset,
    batch_size: usize,
) -> Result<f64> {
    evaluate_with(model, &BatchBuilder::new(&model.config, variant), dataset, batch_size)
}

fn evaluate_with<T: Scalar>(
    model: &Model<T>,
    builder: &BatchBuilder<'_>,
    dataset: &Dataset,
    batch_size: usize,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let records: Vec<&RawRecord> = dataset.records().iter().collect();
    let mut sse = 0.0;
    let mut count = 0usize;
    for chunk in records.chunks(batch_size) {
        let (inputs, gt) = builder.build::<T>(chunk)?;
        model.check_inputs(&inputs, builder.variant)?;
        let pred = model.predict_eval(&inputs, builder.variant)?;
        for (p, g) in pred.data().iter().zip(gt.data()) {
            let d = p.as_f64() - g.as_f64();
            sse += d * d;
        }
        count += gt.len();
    }
    Ok(sse / count as f64)
}

/// Test MSE of a checkpoint, at the dtype it was trained with.
pub fn evaluate(checkpoint: &Checkpoint, dataset: &Dataset, batch_size: usize) -> Result<f64> {
    match checkpoint.train.dtype {
        DType::F64 => evaluate_model(&checkpoint.model::<f64>(), checkpoint.train.variant, dataset, batch_size),
        DType::F32 => evaluate_model(&checkpoint.model::<f32>(), checkpoint.train.variant, dataset, batch_size),
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: MetricsLog,
    /// Chart stacks rendered during training and evaluation.
    pub charts_rendered: usize,
}

/// Trains from freshly initialized parameters.
///
/// Epoch 0 rows hold the eval-mode MSE before any step; later train rows
/// hold the record-weighted mean of that epoch's batch losses.
pub fn train(
    model_config: &ModelConfig,
    config: &TrainConfig,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
) -> Result<TrainOutcome> {
    model_config.validate()?;
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    match config.dtype {
        DType::F64 => train_typed::<f64>(model_config, config, train_set, test_set),
        DType::F32 => train_typed::<f32>(model_config, config, train_set, test_set),
    }
}

fn train_typed<T: Scalar>(
    model_config: &ModelConfig,
    config: &TrainConfig,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
) -> Result<TrainOutcome> {
    let start = Instant::now();
    let elapsed = || if config.timing { start.elapsed().as_secs_f64() } else { 0.0 };
    let mut model = Model::<T>::new(model_config.clone(), config.seed)?;
    let builder = BatchBuilder::new(model_config, config.variant);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut log = MetricsLog::default();
    let bs = config.batch_size;

    let initial = evaluate_with(&model, &builder, train_set, bs)?;
    log.push(0, Split::Train, initial, elapsed());
    if let Some(test) = test_set {
        log.push(0, Split::Test, evaluate_with(&model, &builder, test, bs)?, elapsed());
    }

    let trainable: Vec<(String, Vec<usize>)> = model
        .params
        .trainable()
        .map(|(n, t)| (n.clone(), t.shape().to_vec()))
        .collect();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for (batch, chunk) in order.chunks(bs).enumerate() {
            let records: Vec<&RawRecord> = chunk.iter().map(|&i| &train_set.records()[i]).collect();
            let (inputs, gt) = builder.build::<T>(&records)?;
            model.check_inputs(&inputs, config.variant)?;
            let non_finite = |e: Error| match e {
                Error::Numeric { .. } => Error::NonFiniteLoss {
                    epoch,
                    batch,
                    detail: e.to_string(),
                },
                other => other,
            };
            let graph = Graph::new();
            let fwd = model
                .forward(&graph, &inputs, config.variant, Mode::Train)
                .map_err(non_finite)?;
            let loss = mse_loss(fwd.pred, graph.constant(gt)).map_err(non_finite)?;
            let value = loss.value().item()?.as_f64();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch,
                    detail: format!("loss = {value}"),
                });
            }
            graph.backward(loss)?;
            // Parameters outside the variant's path get zero gradients.
            let grads: BTreeMap<String, Tensor<T>> = trainable
                .iter()
                .map(|(name, shape)| {
                    let g = fwd
                        .params
                        .get(name)
                        .and_then(|&v| graph.grad(v))
                        .unwrap_or_else(|| Tensor::zeros(shape.clone()));
                    (name.clone(), g)
                })
                .collect();
            sgd_step(&mut model.params, &grads, config.lr)?;
            weighted += value * records.len() as f64;
        }
        log.push(epoch, Split::Train, weighted / train_set.len() as f64, elapsed());
        if let Some(test) = test_set {
            if epoch % config.eval_every == 0 || epoch == config.epochs {
                log.push(epoch, Split::Test, evaluate_with(&model, &builder, test, bs)?, elapsed());
            }
        }
    }

    let checkpoint = Checkpoint {
        model: model_config.clone(),
        train: config.clone(),
        epoch: config.epochs,
        params: model.params.cast(),
        rng: RngState::capture(config.seed, &rng),
    };
    Ok(TrainOutcome {
        checkpoint,
        metrics: log,
        charts_rendered: builder.charts_rendered(),
    })
}

#[cfg(test)]
mod tests;

//! Builds the model, runs one forward/backward pass by hand and takes an SGD
//! step.
//!
//! ```text
//! cargo run --release --example forward_pass
//! ```

use std::collections::BTreeMap;

use qdist::data::{synthesize_dataset, GeneratorParams};
use qdist::model::{mse_loss, Mode, Model, ModelConfig, Variant};
use qdist::tensor::{Graph, Tensor};
use qdist::train::{sgd_step, BatchBuilder};

fn main() -> qdist::Result<()> {
    let config = ModelConfig::tiny();
    let data = synthesize_dataset(&GeneratorParams { num_records: 4, grid: config.grid, ..GeneratorParams::default() }, 0)?;
    let mut model = Model::<f64>::new(config.clone(), 0)?;
    println!("{} parameters", model.params.trainable().map(|(_, t)| t.len()).sum::<usize>());

    let builder = BatchBuilder::new(&config, Variant::Multimodal);
    let records: Vec<_> = data.records().iter().collect();
    let (inputs, gt) = builder.build::<f64>(&records)?;
    println!("raw {:?}, charts {:?}", inputs.raw.shape(), inputs.charts.as_ref().map(|c| c.shape().to_vec()));

    for variant in Variant::ALL {
        let pred = model.predict_eval(&inputs, variant)?;
        println!("{:<10} prediction {:?}", variant.as_str(), pred.shape());
    }

    let g = Graph::new();
    let fwd = model.forward(&g, &inputs, Variant::Multimodal, Mode::Train)?;
    let loss = mse_loss(fwd.pred, g.constant(gt))?;
    let before = loss.value().item()?;
    g.backward(loss)?;
    let grads: BTreeMap<String, Tensor<f64>> = model
        .params
        .trainable()
        .map(|(n, t)| {
            let grad = fwd.params.get(n).and_then(|&v| g.grad(v));
            (n.clone(), grad.unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        })
        .collect();
    sgd_step(&mut model.params, &grads, 0.05)?;

    let g = Graph::new();
    let (inputs, gt) = builder.build::<f64>(&records)?;
    let fwd = model.forward(&g, &inputs, Variant::Multimodal, Mode::Train)?;
    let after = mse_loss(fwd.pred, g.constant(gt))?.value().item()?;
    println!("batch loss {before:.4} -> {after:.4} after one step");
    Ok(())
}

//! Trains briefly, saves a checkpoint, reloads it and shows that corruption
//! is detected.
//!
//! ```text
//! cargo run --release --example checkpoint -- [path]
//! ```

use qdist::data::{split, synthesize_dataset, GeneratorParams};
use qdist::model::ModelConfig;
use qdist::train::{evaluate, load_checkpoint, parse_checkpoint, save_checkpoint, train, TrainConfig};

fn main() -> qdist::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "tiny.qdf".into());
    let data = synthesize_dataset(&GeneratorParams { num_records: 24, grid: 5, ..GeneratorParams::default() }, 3)?;
    let (tr, te) = split(&data, 0.25, 0)?;
    let config = TrainConfig { epochs: 5, lr: 0.05, batch_size: 4, timing: false, ..TrainConfig::default() };
    let out = train(&ModelConfig::tiny(), &config, &tr, Some(&te))?;

    save_checkpoint(&out.checkpoint, &path)?;
    let back = load_checkpoint(&path)?;
    let (a, b) = (evaluate(&out.checkpoint, &te, 16)?, evaluate(&back, &te, 16)?);
    println!("test mse before save {a:?}, after load {b:?}, identical: {}", a.to_bits() == b.to_bits());
    println!("{} tensors, {} bytes", back.params.iter().count(), std::fs::metadata(&path)?.len());

    let mut bytes = std::fs::read(&path)?;
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    match parse_checkpoint(&bytes) {
        Err(e) => println!("flipped one payload bit: {e}"),
        Ok(_) => println!("corruption went unnoticed"),
    }
    Ok(())
}

//! Memorizes eight synthetic records with the tiny model.
//!
//! ```text
//! cargo run --release --example overfit_tiny [epochs] [lr] [batch] [seed]
//! ```
//!
//! Defaults: 500 epochs, lr 0.05, batch 2, seed 0. Prints the train MSE
//! every 50 epochs, then the eval-mode MSE on the same records.

use qdist::data::{synthesize_dataset, GeneratorParams};
use qdist::model::{ModelConfig, Variant};
use qdist::train::{evaluate, train, Split, TrainConfig};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> qdist::Result<()> {
    let seed = arg(4, 0u64);
    let data = synthesize_dataset(&GeneratorParams { num_records: 8, grid: 5, ..GeneratorParams::default() }, seed)?;
    let config = TrainConfig {
        epochs: arg(1, 500),
        lr: arg(2, 0.05),
        batch_size: arg(3, 2),
        seed,
        variant: Variant::Multimodal,
        timing: false,
        ..TrainConfig::default()
    };
    let t = std::time::Instant::now();
    let out = train(&ModelConfig::tiny(), &config, &data, None)?;
    for row in out.metrics.rows_for(Split::Train).filter(|r| r.epoch % 50 == 0) {
        println!("epoch {:>4}  train mse {:.4e}", row.epoch, row.mse);
    }
    let first = out.metrics.first(Split::Train).unwrap();
    let last = out.metrics.last(Split::Train).unwrap();
    let eval = evaluate(&out.checkpoint, &data, 8)?;
    println!("train mse {first:.4e} -> {last:.4e} ({:.0}x lower)", first / last);
    println!("eval-mode mse on the same records {eval:.4e}");
    println!("{:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}

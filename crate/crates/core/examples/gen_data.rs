//! Generates a synthetic dataset and writes it as JSON Lines.
//!
//! ```text
//! cargo run --release --example gen_data -- [out.jsonl] [records] [seed]
//! ```

use qdist::data::{load_dataset, save_dataset, synthesize_dataset, GeneratorParams};

fn main() -> qdist::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.first().cloned().unwrap_or_else(|| "synthetic.jsonl".into());
    let params = GeneratorParams {
        num_records: args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1200),
        ..GeneratorParams::default()
    };
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);

    let ds = synthesize_dataset(&params, seed)?;
    save_dataset(&ds, &out)?;

    let r = &ds.records()[0];
    let lens: Vec<usize> = r.indicators.values().map(Vec::len).collect();
    println!("{} records, {} indicators each, q on {} points", ds.len(), lens.len(), r.q.len());
    println!("series lengths {}..={}", lens.iter().min().unwrap(), lens.iter().max().unwrap());
    println!("{} distractor indicators", params.distractors().len());
    println!("first record `{}`: q(0) = {:.3}, q(1) = {:.3}", r.id, r.q[0], r.q[r.q.len() - 1]);

    // Reading it back gives the same records.
    assert_eq!(load_dataset(&out)?.records(), ds.records());
    println!("wrote {out}");
    Ok(())
}

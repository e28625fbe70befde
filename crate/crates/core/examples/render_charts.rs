//! Renders the chart stack of one synthetic record and writes it as PGM.
//!
//! ```text
//! cargo run --release --example render_charts -- [out_dir] [resolution] [max_points]
//! ```

use qdist::charts::{export_pgm, interval_sample, render_charts, SamplingPolicy};
use qdist::data::{default_chart_selection, synthesize_dataset, GeneratorParams};

fn main() -> qdist::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = args.first().cloned().unwrap_or_else(|| "charts".into());
    let res: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(224);
    let m: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(100);

    let ds = synthesize_dataset(&GeneratorParams { num_records: 1, ..GeneratorParams::default() }, 0)?;
    let record = &ds.records()[0];
    let selection = default_chart_selection();

    // Interval sampling keeps at most M points at a regular stride.
    let longest = selection.iter().max_by_key(|n| record.indicator(n).map_or(0, <[f64]>::len)).unwrap();
    let series = record.indicator(longest).unwrap();
    let sampled = interval_sample(series, m)?;
    println!("`{longest}`: {} points -> {}", series.len(), sampled.len());

    let stack = render_charts(record, &selection, SamplingPolicy::new(m)?, res, res)?;
    println!(
        "{} charts at {res}x{res}, {} line pixels ({:.2}% of the stack)",
        stack.channels(),
        stack.set_pixels(),
        100.0 * stack.set_pixels() as f64 / stack.pixels().len() as f64
    );
    let paths = export_pgm(&stack, &record.id, &selection, &dir)?;
    println!("wrote {} files, e.g. {}", paths.len(), paths[0].display());
    Ok(())
}

//! Runs one ablation study at desk scale on the default synthetic dataset
//! (1,200 records split 1,000 / 200) and prints per-setting medians.
//!
//! ```text
//! cargo run --release --example ablation -- [study] [epochs] [seeds]
//! cargo run --release --example ablation -- components 30 0,1,2
//! cargo run --release --example ablation -- blocks 10 0
//! ```
//!
//! `components` over three seeds takes a few minutes on one core.

use qdist::data::{split, synthesize_dataset, GeneratorParams};
use qdist::study::{run_study, StudyKind, StudySpec};

fn main() -> qdist::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let kind: StudyKind = args
        .first()
        .map(|s| s.parse())
        .transpose()
        .map_err(qdist::Error::Config)?
        .unwrap_or(StudyKind::Components);
    let mut spec = StudySpec::desk(kind);
    if let Some(e) = args.get(1).and_then(|s| s.parse().ok()) {
        spec.train.epochs = e;
    }
    if let Some(s) = args.get(2) {
        spec.seeds = s.split(',').filter_map(|v| v.parse().ok()).collect();
    }

    let data = synthesize_dataset(&GeneratorParams::default(), 0)?;
    let (train, test) = split(&data, 1.0 / 6.0, 0)?;
    println!("{kind}: {} settings x {} seeds, {} train / {} test", spec.settings.len(), spec.seeds.len(), train.len(), test.len());

    let result = run_study(&spec, &train, &test, |r| {
        let mse = r.test_mse.map_or("-".to_string(), |v| format!("{v:.4e}"));
        println!("  {:<11} seed {}  test mse {mse}  {:.1}s  {}", r.setting, r.seed, r.wall_seconds, r.status);
    })?;
    println!("median test mse:");
    for (setting, m) in result.medians() {
        println!("  {setting:<11} {}", m.map_or("-".to_string(), |v| format!("{v:.4e}")));
    }
    Ok(())
}

//! The fixed chart record and the checks pinned against it.
//!
//! The record is built from closed-form series, so the goldens do not move
//! when the synthetic generator does. Set `QDIST_BLESS=1` to rewrite the
//! golden files after an intentional rendering change.

use std::collections::BTreeMap;
use std::path::PathBuf;

use qdist::charts::{encode_pgm, rasterize_polyline, render_charts, ChartStack, SamplingPolicy};
use qdist::data::{default_chart_selection, indicator_names, RawRecord};
use qdist::tensor::Tensor;

pub const RES: usize = 224;
pub const M: usize = 100;
/// Channels whose full PGM bytes are stored; the rest are pinned by CRC32.
pub const FULL: [usize; 4] = [1, 3, 4, 75];

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn fixed_record() -> RawRecord {
    const LENGTHS: [usize; 10] = [1, 2, 5, 20, 37, 100, 101, 150, 300, 517];
    let indicators: BTreeMap<String, Vec<f64>> = indicator_names()
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let n = LENGTHS[j % LENGTHS.len()];
            let series = (0..n)
                .map(|i| {
                    let t = i as f64;
                    match j % 5 {
                        0 => 3.0,
                        1 => (0.21 * t + 0.3 * j as f64).sin(),
                        2 => t * t - 4.0 * t,
                        3 => if (i / 7) % 2 == 0 { -1.0 } else { 2.5 },
                        _ => (0.05 * t).exp() * (0.4 * t).cos(),
                    }
                })
                .collect();
            (name.clone(), series)
        })
        .collect();
    let npsip: Vec<f64> = (0..5).map(|i| i as f64 / 4.0).collect();
    let q = npsip.iter().map(|x| 1.0 + 3.0 * x * x).collect();
    let r = RawRecord { id: "golden".into(), indicators, npsip, q };
    r.validate().unwrap();
    r
}

pub fn stack() -> (ChartStack, Vec<String>) {
    let selection = default_chart_selection();
    let s = render_charts(&fixed_record(), &selection, SamplingPolicy::new(M).unwrap(), RES, RES).unwrap();
    (s, selection)
}

fn manifest(stack: &ChartStack, selection: &[String]) -> String {
    selection
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let pgm = encode_pgm(stack.channel(k), RES, RES);
            format!("{k} {name} {:08x} {}\n", crc32fast::hash(&pgm), stack.channel(k).iter().filter(|&&p| p != 0).count())
        })
        .collect()
}

/// Every channel against the CRC manifest, `FULL` channels byte for byte.
pub fn check_frozen_stack() {
    let (stack, selection) = stack();
    let dir = golden_dir();
    let manifest_path = dir.join("stack_m100_224.txt");
    if std::env::var_os("QDIST_BLESS").is_some() {
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(&manifest_path, manifest(&stack, &selection)).unwrap();
        for k in FULL {
            std::fs::write(dir.join(format!("golden_{}.pgm", selection[k])), encode_pgm(stack.channel(k), RES, RES)).unwrap();
        }
    }
    let frozen = std::fs::read_to_string(&manifest_path).expect("golden manifest missing; run with QDIST_BLESS=1");
    assert_eq!(manifest(&stack, &selection), frozen);
    for k in FULL {
        let path = dir.join(format!("golden_{}.pgm", selection[k]));
        let frozen = std::fs::read(&path).unwrap();
        assert_eq!(encode_pgm(stack.channel(k), RES, RES), frozen, "{}", path.display());
    }
}

fn set_pixels(img: &Tensor<f64>) -> Vec<(usize, usize)> {
    let w = img.shape()[1];
    img.data().iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| (i / w, i % w)).collect()
}

pub fn check_constant_row() {
    // Normalized to 0.5 everywhere: row (H−1) − round(0.5·(H−1)).
    for (h, w) in [(224, 224), (56, 56), (7, 10), (8, 3)] {
        let row = (h - 1) - ((h - 1) as f64 * 0.5).round() as usize;
        for n in [2, 3, 50] {
            let img = rasterize_polyline(&vec![0.5; n], h, w).unwrap();
            let want: Vec<_> = (0..w).map(|c| (row, c)).collect();
            assert_eq!(set_pixels(&img), want, "{h}x{w} n={n}");
        }
    }
    let (stack, selection) = stack();
    let rec = fixed_record();
    let k = selection
        .iter()
        .position(|n| rec.indicator(n).unwrap().len() > 1 && rec.indicator(n).unwrap().iter().all(|&v| v == 3.0))
        .unwrap();
    let lit: Vec<usize> = stack.channel(k).iter().enumerate().filter(|(_, &p)| p != 0).map(|(i, _)| i).collect();
    assert_eq!(lit, (0..RES).map(|c| 111 * RES + c).collect::<Vec<_>>());
}

pub fn check_diagonals() {
    // (0 → bottom-left, 1 → top-right): every pixel with row + col = N − 1.
    for n in [224, 56, 9, 2] {
        let img = rasterize_polyline(&[0.0, 1.0], n, n).unwrap();
        let want: Vec<_> = (0..n).map(|r| (r, n - 1 - r)).collect();
        assert_eq!(set_pixels(&img), want, "{n}");
        let img = rasterize_polyline(&[1.0, 0.0], n, n).unwrap();
        let want: Vec<_> = (0..n).map(|r| (r, r)).collect();
        assert_eq!(set_pixels(&img), want, "{n}");
    }
}

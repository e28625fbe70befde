//! Runs the finite-difference gradient suite and prints the per-op table.
//!
//! ```text
//! cargo run --release --example grad_check
//! ```
//!
//! A custom op can be checked the same way with [`qdist::tensor::grad_check`];
//! the second half shows a deliberately wrong derivative being caught.

use qdist::gradsuite::{run_suite, SuiteOptions};
use qdist::tensor::{grad_check, Tensor};

fn main() -> qdist::Result<()> {
    let report = run_suite(&SuiteOptions::default())?;
    println!("{report}\n");

    let x = Tensor::from_vec(vec![4], vec![0.3, -1.2, 0.7, 2.0])?;
    // d/dx x³ is 3x², not 2x².
    let r = grad_check(|_, v| v[0].map_unary("cube", |a| a * a * a, |a| 2.0 * a * a)?.sum(), &[x], 1e-5)?;
    println!(
        "wrong cube derivative: rel error {:.3} at element {} (analytic {:.4}, numeric {:.4})",
        r.max_rel_error, r.worst_element, r.analytic, r.numeric
    );
    Ok(())
}

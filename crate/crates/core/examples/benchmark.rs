//! Mean target accuracy of every method on the rotated two-Gaussian
//! benchmark over a range of seeds.
//!
//! cargo run --release -p cswm-core --example benchmark -- [seeds]

use std::time::Instant;

use cswm_core::data::generate_synthetic;
use cswm_core::eval::{evaluate_on_hidden_labels, rotated_benchmark, Method};
use cswm_core::HyperParams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(20);
    let methods = [
        Method::Proposed,
        Method::NoMatching,
        Method::SourceOnly,
        Method::TargetOnly,
        Method::NoAdaptation,
    ];
    let hp = HyperParams::default();
    let mut sums = vec![0.0; methods.len()];
    let start = Instant::now();
    for seed in 0..seeds {
        let pair = generate_synthetic(&rotated_benchmark(seed))?;
        let accs = evaluate_on_hidden_labels(&pair.source, &pair.target, &pair.target_truth, &hp, &methods)?;
        let line: Vec<String> = accs.iter().map(|(m, a)| format!("{}={a:.4}", m.name())).collect();
        println!("seed {seed:>3}: {}", line.join(" "));
        for (s, (_, a)) in sums.iter_mut().zip(&accs) {
            *s += a;
        }
    }
    println!("mean over {seeds} seeds ({:.1}s):", start.elapsed().as_secs_f64());
    for (m, s) in methods.iter().zip(&sums) {
        println!("  {:<14} {:.6}", m.name(), s / seeds as f64);
    }
    Ok(())
}

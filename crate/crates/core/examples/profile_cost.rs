//! Parameter and MAC counts per stage, and how the width multiplier scales them.

use lmk::model::ModelConfig;
use lmk::profile::{profile, REFERENCE_MACS, REFERENCE_PARAMS};

fn main() {
    let report = profile(&ModelConfig::student());
    print!("{}", report.to_table());
    println!(
        "params {:+.2}% and MACs {:+.2}% against the published totals",
        100.0 * (report.params as f64 / REFERENCE_PARAMS as f64 - 1.0),
        100.0 * (report.macs as f64 / REFERENCE_MACS as f64 - 1.0)
    );
    for alpha in [0.5, 0.75, 1.0] {
        let r = profile(&ModelConfig::student_with_alpha(alpha));
        println!("alpha {alpha:<4}  {:>9} params  {:.3} GFLOPs", r.params, r.gflops());
    }
}

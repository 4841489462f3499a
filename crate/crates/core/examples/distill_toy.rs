//! Distills a small student head from synthetic teacher heatmaps.

use lmk::distill::{toy_distill_run_with, ToyConfig};

fn main() -> lmk::Result<()> {
    let cfg = ToyConfig::default();
    let run = toy_distill_run_with(&cfg, |r| {
        if r.step % 25 == 0 {
            println!("step {:>3}  kd {:.4}  reg {:.4}  total {:.4}", r.step, r.loss.kd, r.loss.reg, r.loss.total);
        }
    })?;
    let first = run.trajectory.first().map_or(0.0, |r| r.loss.total);
    let last = run.trajectory.last().map_or(0.0, |r| r.loss.total);
    println!("final / initial loss = {:.3}", last / first);
    Ok(())
}

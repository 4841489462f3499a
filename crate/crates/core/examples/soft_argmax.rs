//! Sub-pixel decoding of heatmaps.

use lmk::distill::render_gaussians;
use lmk::model::{soft_argmax, DecodeGrid, DecodeMode};
use lmk::Tensor;

fn main() -> lmk::Result<()> {
    let truth = [[100.3f32, 57.9], [20.0, 200.0]];
    let maps = render_gaussians(&truth, (64, 64), (4.0, 4.0), 1.5);
    let grid = DecodeGrid::new(4.0, 4.0);
    let sum = soft_argmax(&maps, grid, DecodeMode::Sum { eps: 1e-6 })?;
    for (t, p) in truth.iter().zip(&sum.landmarks.points) {
        println!("true ({:.2}, {:.2})  decoded ({:.2}, {:.2})", t[0], t[1], p[0], p[1]);
    }
    let flat = Tensor::zeros(&[1, 64, 64])?;
    let fallback = soft_argmax(&flat, grid, DecodeMode::Sum { eps: 1e-6 })?;
    println!("empty map -> {:?}, fallback channels {:?}", fallback.landmarks.points[0], fallback.fallback_channels);
    Ok(())
}

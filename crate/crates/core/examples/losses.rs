//! Distillation and evaluation losses on hand-made inputs.

use lmk::loss::{kd_loss, kd_loss_with, l2_regression_loss, nme, KdMode, NmeNorm};
use lmk::model::LandmarkSet;
use lmk::Tensor;

fn main() -> lmk::Result<()> {
    let teacher = Tensor::full(&[2, 8, 8], 0.5)?;
    let student = Tensor::full(&[2, 8, 8], 0.25)?;
    println!("kd per-landmark L2: {}", kd_loss(&teacher, &student)?);
    println!("kd cell abs: {}", kd_loss_with(&teacher, &student, KdMode::CellAbs)?);

    let gt = LandmarkSet::new(vec![[0.0, 0.0], [30.0, 0.0], [30.0, 40.0]])?;
    let pred = LandmarkSet::new(vec![[3.0, 4.0], [30.0, 0.0], [30.0, 40.0]])?;
    println!("l2 regression: {}", l2_regression_loss(&pred, &gt)?);
    for norm in [NmeNorm::BboxDiag, NmeNorm::Interocular(0, 1), NmeNorm::Constant(1.0)] {
        println!("nme {norm:?}: {}", nme(&pred, &gt, norm)?);
    }
    Ok(())
}

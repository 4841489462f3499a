//! Landmarks for a face box in a synthetic image, using randomly initialized
//! student weights (pass a `.lmkw` path to use trained ones).

use lmk::data::{crop_resize, BBox};
use lmk::model::{ModelConfig, Student};
use lmk::weights::WeightStore;
use lmk::Tensor;

fn main() -> lmk::Result<()> {
    let config = ModelConfig::student();
    let student = match std::env::args().nth(1) {
        Some(path) => Student::new(config, WeightStore::load(path)?)?,
        None => Student::random(config, 0)?,
    };
    let image = Tensor::from_fn(&[3, 240, 320], |i| ((i[1] * 7 + i[2] * 3 + i[0] * 50) % 256) as f32 / 255.0)?;
    let crop = crop_resize(&image, BBox::new(80.0, 40.0, 160.0, 160.0)?, student.config().input_size.0)?;
    let pred = student.predict_full(&crop.image)?;
    let source = crop.to_source(&pred.landmarks)?;
    for (i, p) in source.points.iter().enumerate().take(5) {
        println!("landmark {i}: ({:.2}, {:.2})", p[0], p[1]);
    }
    println!("... {} landmarks, {} fell back to the grid centre", source.len(), pred.fallback_channels.len());
    Ok(())
}

//! Seeded augmentation: the image and its landmarks move together, and the
//! same (seed, index) pair always gives the same sample.

use lmk::data::{augment, sample_rng, AugmentPolicy, CropSample};
use lmk::model::LandmarkSet;
use lmk::Tensor;

fn main() -> lmk::Result<()> {
    let sample = CropSample {
        image: Tensor::from_fn(&[3, 128, 128], |i| ((i[1] ^ i[2]) & 255) as f32 / 255.0)?,
        landmarks: LandmarkSet::new(vec![[40.0, 50.0], [88.0, 50.0], [64.0, 90.0]])?,
    };
    let policy = AugmentPolicy { flip_permutation: Some(vec![1, 0, 2]), ..Default::default() };
    for index in 0..3 {
        let a = augment(&sample, &policy, &mut sample_rng(7, index))?;
        let again = augment(&sample, &policy, &mut sample_rng(7, index))?;
        println!(
            "sample {index}: flipped {:<5} gray {:<5} blur {:?} landmarks {:?} reproducible {}",
            a.flipped,
            a.gray,
            a.blurred.map(|s| (s * 100.0).round() / 100.0),
            a.landmarks.points.iter().map(|p| [p[0].round(), p[1].round()]).collect::<Vec<_>>(),
            a.image.bit_eq(&again.image)
        );
    }
    Ok(())
}

//! Training-time augmentation on 256x256 face crops.
//!
//! Fixed order: rotation, scaling and translation (one warp), then blur,
//! grayscale and occlusion, then horizontal flip with landmark re-indexing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::affine::Affine;
use super::warp;
use crate::error::{Error, Result};
use crate::model::config::check_involution;
use crate::model::LandmarkSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPolicy {
    /// Rotation drawn from `U(-r, r)` degrees about the crop centre.
    pub rotation_deg: f64,
    /// Scale factor drawn from `U(1 - s, 1 + s)`.
    pub scale_jitter: f64,
    /// Per-axis shift drawn from `U(-t, t)` of the crop side.
    pub translate: f64,
    pub blur_prob: f64,
    pub blur_sigma: (f64, f64),
    pub gray_prob: f64,
    pub occlusion_prob: f64,
    /// Rectangle side range as a fraction of the crop side.
    pub occlusion_side: (f64, f64),
    pub hflip_prob: f64,
    pub flip_permutation: Option<Vec<usize>>,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            rotation_deg: 45.0,
            scale_jitter: 0.10,
            translate: 0.18,
            blur_prob: 0.40,
            blur_sigma: (0.1, 2.0),
            gray_prob: 0.20,
            occlusion_prob: 0.40,
            occlusion_side: (0.10, 0.30),
            hflip_prob: 0.50,
            flip_permutation: None,
        }
    }
}

impl AugmentPolicy {
    pub fn with_flip(permutation: Vec<usize>) -> Self {
        AugmentPolicy { flip_permutation: Some(permutation), ..Default::default() }
    }

    /// No-op policy; fields can be switched on individually.
    pub fn identity() -> Self {
        AugmentPolicy {
            rotation_deg: 0.0,
            scale_jitter: 0.0,
            translate: 0.0,
            blur_prob: 0.0,
            gray_prob: 0.0,
            occlusion_prob: 0.0,
            hflip_prob: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self, num_landmarks: usize) -> Result<()> {
        let err = |d: String| Err(Error::invalid("augment_policy", d));
        for (name, p) in [
            ("blur_prob", self.blur_prob),
            ("gray_prob", self.gray_prob),
            ("occlusion_prob", self.occlusion_prob),
            ("hflip_prob", self.hflip_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return err(format!("{name} = {p} outside [0, 1]"));
            }
        }
        for (name, v) in [("rotation_deg", self.rotation_deg), ("scale_jitter", self.scale_jitter), ("translate", self.translate)] {
            if !(v >= 0.0 && v.is_finite()) {
                return err(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        if self.scale_jitter >= 1.0 {
            return err(format!("scale_jitter {} would allow non-positive scale", self.scale_jitter));
        }
        let (s0, s1) = self.blur_sigma;
        if !(s0 > 0.0 && s0 <= s1) {
            return err(format!("blur_sigma range ({s0}, {s1}) invalid"));
        }
        let (o0, o1) = self.occlusion_side;
        if !(0.0 < o0 && o0 <= o1 && o1 <= 1.0) {
            return err(format!("occlusion_side range ({o0}, {o1}) invalid"));
        }
        match &self.flip_permutation {
            Some(p) => check_involution(p, num_landmarks)?,
            None if self.hflip_prob > 0.0 => {
                return err("hflip_prob > 0 requires a flip_permutation".into());
            }
            None => {}
        }
        Ok(())
    }
}

/// Generator for sample `index` of a run seeded with `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A square crop with landmarks in crop pixels.
#[derive(Debug, Clone)]
pub struct CropSample {
    pub image: Tensor,
    pub landmarks: LandmarkSet,
}

#[derive(Debug, Clone)]
pub struct Augmented {
    pub image: Tensor,
    pub landmarks: LandmarkSet,
    /// Crop pixels → augmented pixels, including the flip when applied.
    pub geometry: Affine,
    pub flipped: bool,
    pub blurred: Option<f64>,
    pub gray: bool,
    /// `(x, y, w, h)` in augmented pixels.
    pub occlusion: Option<[usize; 4]>,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

fn gaussian_blur(image: &Tensor, sigma: f64) -> Tensor {
    let [c, h, w] = image.dims3("blur").expect("rank-3 image");
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let src = image.values();
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0f32; src.len()];
    let mut out = vec![0f32; src.len()];
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..h {
            for x in 0..w {
                let acc: f64 =
                    kernel.iter().enumerate().map(|(k, &kv)| kv * src[base + y * w + clamp(x as i64 + k as i64 - radius, w)] as f64).sum();
                tmp[base + y * w + x] = acc as f32;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let acc: f64 =
                    kernel.iter().enumerate().map(|(k, &kv)| kv * tmp[base + clamp(y as i64 + k as i64 - radius, h) * w + x] as f64).sum();
                out[base + y * w + x] = acc as f32;
            }
        }
    }
    Tensor::new(&[c, h, w], out).expect("same shape")
}

fn grayscale(image: &Tensor) -> Tensor {
    let [c, h, w] = image.dims3("gray").expect("rank-3 image");
    let v = image.values();
    let n = h * w;
    let lum: Vec<f32> = (0..n).map(|i| 0.299 * v[i] + 0.587 * v[n + i] + 0.114 * v[2 * n + i]).collect();
    Tensor::new(&[c, h, w], lum.iter().copied().cycle().take(c * n).collect()).expect("same shape")
}

fn hflip(image: &Tensor) -> Tensor {
    let [c, h, w] = image.dims3("hflip").expect("rank-3 image");
    let v = image.values();
    Tensor::from_fn(&[c, h, w], |i| v[(i[0] * h + i[1]) * w + (w - 1 - i[2])]).expect("same shape")
}

/// Applies `policy` to `sample`. All scalar draws happen up front in a fixed
/// order whether or not the corresponding op fires.
pub fn augment(sample: &CropSample, policy: &AugmentPolicy, rng: &mut ChaCha8Rng) -> Result<Augmented> {
    let [c, h, w] = sample.image.dims3("augment")?;
    if c != 3 || h != w {
        return Err(Error::shape("augment", format!("expected a square [3, S, S] crop, got {:?}", sample.image.shape())));
    }
    policy.validate(sample.landmarks.len())?;
    let side = w as f64;

    let angle = uniform(rng, -policy.rotation_deg, policy.rotation_deg).to_radians();
    let scale = uniform(rng, 1.0 - policy.scale_jitter, 1.0 + policy.scale_jitter);
    let tx = uniform(rng, -policy.translate, policy.translate) * side;
    let ty = uniform(rng, -policy.translate, policy.translate) * side;
    let blur_draw = rng.gen::<f64>();
    let sigma = uniform(rng, policy.blur_sigma.0, policy.blur_sigma.1);
    let gray_draw = rng.gen::<f64>();
    let occ_draw = rng.gen::<f64>();
    let occ_w = uniform(rng, policy.occlusion_side.0, policy.occlusion_side.1);
    let occ_h = uniform(rng, policy.occlusion_side.0, policy.occlusion_side.1);
    let occ_x = rng.gen::<f64>();
    let occ_y = rng.gen::<f64>();
    let flip_draw = rng.gen::<f64>();

    let centre = side / 2.0;
    let geometric = Affine::rotation(angle).then(&Affine::scaling(scale, scale)).about(centre, centre).then(&Affine::translation(tx, ty));
    let mut image = if geometric == Affine::IDENTITY { sample.image.clone() } else { warp(&sample.image, &geometric, h, w)? };

    let blurred = (blur_draw < policy.blur_prob).then_some(sigma);
    if let Some(s) = blurred {
        image = gaussian_blur(&image, s);
    }
    let gray = gray_draw < policy.gray_prob;
    if gray {
        image = grayscale(&image);
    }
    let occlusion = (occ_draw < policy.occlusion_prob).then(|| {
        let ow = ((occ_w * side).round() as usize).clamp(1, w);
        let oh = ((occ_h * side).round() as usize).clamp(1, h);
        let ox = ((occ_x * (w - ow + 1) as f64) as usize).min(w - ow);
        let oy = ((occ_y * (h - oh + 1) as f64) as usize).min(h - oh);
        [ox, oy, ow, oh]
    });
    if let Some([ox, oy, ow, oh]) = occlusion {
        let mut v = image.into_values();
        for ch in 0..c {
            for y in oy..oy + oh {
                for x in ox..ox + ow {
                    v[(ch * h + y) * w + x] = rng.gen::<f32>();
                }
            }
        }
        image = Tensor::new(&[c, h, w], v)?;
    }

    let flipped = flip_draw < policy.hflip_prob;
    let mut geometry = geometric;
    let mut points: Vec<[f32; 2]> = sample.landmarks.points.iter().map(|&p| geometric.apply_f32(p)).collect();
    if flipped {
        let flip = Affine([[-1.0, 0.0, side], [0.0, 1.0, 0.0]]);
        geometry = geometry.then(&flip);
        image = hflip(&image);
        let perm = policy.flip_permutation.as_ref().expect("validated");
        let mirrored: Vec<[f32; 2]> = sample.landmarks.points.iter().map(|&p| geometry.apply_f32(p)).collect();
        points = perm.iter().map(|&j| mirrored[j]).collect();
    }

    Ok(Augmented { image, landmarks: LandmarkSet::new(points)?, geometry, flipped, blurred, gray, occlusion })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, seed: u64) -> CropSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CropSample {
            image: Tensor::new(&[3, 32, 32], (0..3 * 1024).map(|_| rng.gen()).collect()).unwrap(),
            landmarks: LandmarkSet::new((0..n).map(|_| [rng.gen_range(4.0..28.0), rng.gen_range(4.0..28.0)]).collect()).unwrap(),
        }
    }

    #[test]
    fn identity_policy_is_identity() {
        let s = sample(4, 1);
        let out = augment(&s, &AugmentPolicy::identity(), &mut sample_rng(0, 0)).unwrap();
        assert!(out.image.bit_eq(&s.image));
        assert_eq!(out.landmarks, s.landmarks);
        assert_eq!(out.geometry, Affine::IDENTITY);
    }

    #[test]
    fn double_flip_restores_landmarks() {
        let s = sample(4, 2);
        let policy = AugmentPolicy { hflip_prob: 1.0, flip_permutation: Some(vec![1, 0, 3, 2]), ..AugmentPolicy::identity() };
        let once = augment(&s, &policy, &mut sample_rng(0, 0)).unwrap();
        assert!(once.flipped);
        let twice = augment(&CropSample { image: once.image, landmarks: once.landmarks }, &policy, &mut sample_rng(0, 1)).unwrap();
        assert!(twice.image.bit_eq(&s.image));
        assert!(twice.landmarks.max_deviation(&s.landmarks) < 1e-5);
    }

    #[test]
    fn flip_requires_permutation() {
        let s = sample(3, 3);
        assert!(augment(&s, &AugmentPolicy::default(), &mut sample_rng(0, 0)).is_err());
        let bad = AugmentPolicy::with_flip(vec![1, 2, 0]);
        assert!(augment(&s, &bad, &mut sample_rng(0, 0)).is_err());
    }

    #[test]
    fn seeded_runs_are_identical_and_streams_differ() {
        let s = sample(4, 4);
        let policy = AugmentPolicy::with_flip(vec![1, 0, 3, 2]);
        let a = augment(&s, &policy, &mut sample_rng(9, 3)).unwrap();
        let b = augment(&s, &policy, &mut sample_rng(9, 3)).unwrap();
        assert_eq!(a.image.to_le_bytes(), b.image.to_le_bytes());
        assert_eq!(a.landmarks, b.landmarks);
        let c = augment(&s, &policy, &mut sample_rng(9, 4)).unwrap();
        assert_ne!(a.image.to_le_bytes(), c.image.to_le_bytes());
    }

    #[test]
    fn blur_preserves_constants_and_gray_equalizes() {
        let flat = Tensor::full(&[3, 9, 9], 0.4).unwrap();
        assert!(gaussian_blur(&flat, 1.3).max_abs_diff(&flat).unwrap() < 1e-6);
        let g = grayscale(&sample(1, 5).image);
        assert_eq!(g.channel(0).unwrap().values(), g.channel(2).unwrap().values());
    }

    #[test]
    fn occlusion_stays_inside() {
        let s = sample(2, 6);
        let policy = AugmentPolicy { occlusion_prob: 1.0, occlusion_side: (0.3, 0.3), ..AugmentPolicy::identity() };
        for i in 0..20 {
            let out = augment(&s, &policy, &mut sample_rng(1, i)).unwrap();
            let [x, y, w, h] = out.occlusion.unwrap();
            assert!(x + w <= 32 && y + h <= 32 && w == 10 && h == 10);
        }
    }
}

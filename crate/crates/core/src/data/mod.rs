//! Annotations, face crops, augmentation, splitting and teacher heatmaps.

mod affine;
mod augment;
mod image;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use affine::Affine;
pub use augment::{augment, sample_rng, AugmentPolicy, Augmented, CropSample};
pub use image::{decode_ppm, encode_ppm, load_image, save_image};

use crate::error::{Error, Result};
use crate::model::{HeatmapSet, LandmarkSet};
use crate::tensor::Tensor;
use crate::weights::WeightStore;

/// Side of the square network input.
pub const CROP_SIZE: usize = 256;

/// Axis-aligned box `(x, y, w, h)` in source pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f32; 4]", into = "[f32; 4]")]
pub struct BBox {
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
}

impl From<[f32; 4]> for BBox {
    fn from([x, y, w, h]: [f32; 4]) -> Self {
        BBox { x, y, w, h }
    }
}

impl From<BBox> for [f32; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub fn new(x: f32, y: f32, w: f32, h: f32) -> Result<Self> {
        let b = BBox { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite());
        if !finite || self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::invalid("bbox", format!("degenerate box {:?}", <[f32; 4]>::from(*self))));
        }
        Ok(())
    }

    /// Parses `x,y,w,h`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<f32> = s
            .split(',')
            .map(|p| p.trim().parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::invalid("bbox", format!("`{s}` is not x,y,w,h")))?;
        match parts[..] {
            [x, y, w, h] => BBox::new(x, y, w, h),
            _ => Err(Error::invalid("bbox", format!("`{s}` is not x,y,w,h"))),
        }
    }
}

/// One annotation record: `{"image", "bbox", "landmarks", "teacher"?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedSample {
    pub image: PathBuf,
    pub bbox: BBox,
    pub landmarks: Vec<[f32; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<PathBuf>,
}

impl AnnotatedSample {
    pub fn landmark_set(&self) -> Result<LandmarkSet> {
        LandmarkSet::new(self.landmarks.clone())
    }
}

/// Parses one-object-per-line annotations. Blank lines are skipped; relative
/// paths are resolved against `base_dir`.
pub fn parse_annotations(text: &str, base_dir: &Path, num_landmarks: Option<usize>) -> Result<Vec<AnnotatedSample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut s: AnnotatedSample = serde_json::from_str(line).map_err(|e| Error::Annotation { line: line_no, detail: e.to_string() })?;
        s.bbox.validate().map_err(|e| Error::Annotation { line: line_no, detail: e.to_string() })?;
        if let Some(n) = num_landmarks {
            if s.landmarks.len() != n {
                return Err(Error::Annotation { line: line_no, detail: format!("{} landmarks, expected {n}", s.landmarks.len()) });
            }
        }
        if s.landmarks.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Annotation { line: line_no, detail: "non-finite landmark".into() });
        }
        if s.image.is_relative() {
            s.image = base_dir.join(&s.image);
        }
        if let Some(t) = s.teacher.as_mut().filter(|t| t.is_relative()) {
            *t = base_dir.join(&*t);
        }
        out.push(s);
    }
    Ok(out)
}

pub fn read_annotations(path: impl AsRef<Path>, num_landmarks: Option<usize>) -> Result<Vec<AnnotatedSample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, path.parent().unwrap_or(Path::new(".")), num_landmarks)
}

pub fn write_annotations(path: impl AsRef<Path>, samples: &[AnnotatedSample]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for s in samples {
        text.push_str(&serde_json::to_string(s)?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Resamples `image` through `forward` (source → output coordinates) into an
/// `out_h x out_w` image. Bilinear, zero outside the source.
pub fn warp(image: &Tensor, forward: &Affine, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [c, h, w] = image.dims3("warp")?;
    let inv = forward.inverse()?;
    let v = image.values();
    let mut out = vec![0f32; c * out_h * out_w];
    for i in 0..out_h {
        for j in 0..out_w {
            let [sx, sy] = inv.apply([j as f64 + 0.5, i as f64 + 0.5]);
            for ch in 0..c {
                out[(ch * out_h + i) * out_w + j] = image::sample_bilinear(&v[ch * h * w..(ch + 1) * h * w], h, w, sx, sy);
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

/// A face crop and the affine relating it to the source image.
#[derive(Debug, Clone)]
pub struct Crop {
    pub image: Tensor,
    /// Source pixels → crop pixels.
    pub forward: Affine,
    /// Crop pixels → source pixels.
    pub inverse: Affine,
}

impl Crop {
    pub fn to_crop(&self, landmarks: &LandmarkSet) -> Result<LandmarkSet> {
        LandmarkSet::new(landmarks.points.iter().map(|&p| self.forward.apply_f32(p)).collect())
    }

    pub fn to_source(&self, landmarks: &LandmarkSet) -> Result<LandmarkSet> {
        LandmarkSet::new(landmarks.points.iter().map(|&p| self.inverse.apply_f32(p)).collect())
    }
}

/// Cuts `bbox` out of `image` (zero padding outside) and resizes it to
/// `size x size`.
pub fn crop_resize(image: &Tensor, bbox: BBox, size: usize) -> Result<Crop> {
    bbox.validate()?;
    let [_, h, w] = image.dims3("crop_resize")?;
    let (x1, y1) = (bbox.x + bbox.w, bbox.y + bbox.h);
    if x1 <= 0.0 || y1 <= 0.0 || bbox.x >= w as f32 || bbox.y >= h as f32 {
        return Err(Error::invalid("crop_resize", format!("box {:?} does not intersect the {w}x{h} image", <[f32; 4]>::from(bbox))));
    }
    let forward = Affine::translation(-bbox.x as f64, -bbox.y as f64)
        .then(&Affine::scaling(size as f64 / bbox.w as f64, size as f64 / bbox.h as f64));
    Ok(Crop { image: warp(image, &forward, size, size)?, forward, inverse: forward.inverse()? })
}

/// Deterministic `train:val` partition; `|val| = round(n * val / (train + val))`.
pub fn split_train_val<T>(samples: Vec<T>, ratio: (usize, usize), seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (tr, va) = ratio;
    let n = samples.len();
    if tr == 0 || va == 0 {
        return Err(Error::invalid("split_train_val", format!("ratio {tr}:{va} must be positive")));
    }
    if n < tr + va {
        return Err(Error::invalid("split_train_val", format!("{n} samples, need at least {}", tr + va)));
    }
    let n_val = ((n * va) as f64 / (tr + va) as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_val = vec![false; n];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let (mut train, mut val) = (Vec::with_capacity(n - n_val), Vec::with_capacity(n_val));
    for (s, v) in samples.into_iter().zip(is_val) {
        if v {
            val.push(s);
        } else {
            train.push(s);
        }
    }
    Ok((train, val))
}

/// Teacher maps from a container holding `point` `[N, H, W]` and
/// `edge` `[E, H, W]`. `expect` optionally pins `(N, E)`.
pub fn teacher_heatmaps_from_store(store: &WeightStore, expect: Option<(usize, usize)>) -> Result<HeatmapSet> {
    let fetch = |name: &str| -> Result<Tensor> {
        let t = store.get(name).map_err(|_| Error::MissingTensor(name.to_string()))?;
        if t.rank() != 3 {
            return Err(Error::shape("load_teacher_heatmaps", format!("`{name}` has shape {:?}, expected rank 3", t.shape())));
        }
        if !t.all_finite() {
            return Err(Error::NonFinite(format!("teacher tensor `{name}`")));
        }
        Ok(t.to_f32())
    };
    let (point, edge) = (fetch("point")?, fetch("edge")?);
    if let Some((n, e)) = expect {
        if point.shape()[0] != n || edge.shape()[0] != e {
            return Err(Error::shape(
                "load_teacher_heatmaps",
                format!("point {:?} / edge {:?}, expected {n} and {e} channels", point.shape(), edge.shape()),
            ));
        }
    }
    HeatmapSet::new(point, edge)
}

pub fn load_teacher_heatmaps(path: impl AsRef<Path>, expect: Option<(usize, usize)>) -> Result<HeatmapSet> {
    teacher_heatmaps_from_store(&WeightStore::load(path)?, expect)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn full_frame_crop_is_identity() {
        let img = Tensor::from_fn(&[3, 256, 256], |i| ((i[0] + i[1] * 3 + i[2] * 7) % 255) as f32 / 255.0).unwrap();
        let crop = crop_resize(&img, BBox::new(0.0, 0.0, 256.0, 256.0).unwrap(), 256).unwrap();
        assert_eq!(crop.forward, Affine::IDENTITY);
        assert!(crop.image.bit_eq(&img));
    }

    #[test]
    fn half_box_scales_by_two() {
        let img = Tensor::zeros(&[3, 300, 300]).unwrap();
        let crop = crop_resize(&img, BBox::new(0.0, 0.0, 128.0, 128.0).unwrap(), 256).unwrap();
        assert_eq!(crop.forward.apply([10.0, 10.0]), [20.0, 20.0]);
        let lm = LandmarkSet::new(vec![[10.0, 10.0]]).unwrap();
        let back = crop.to_source(&crop.to_crop(&lm).unwrap()).unwrap();
        assert_eq!(back, lm);
    }

    #[test]
    fn random_boxes_match_per_point_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Tensor::zeros(&[3, 64, 80]).unwrap();
        for _ in 0..50 {
            let b = BBox::new(rng.gen_range(-20.0..60.0), rng.gen_range(-20.0..50.0), rng.gen_range(5.0..90.0), rng.gen_range(5.0..90.0))
                .unwrap();
            let Ok(crop) = crop_resize(&img, b, 32) else { continue };
            let p: [f32; 2] = [rng.gen_range(-10.0..90.0), rng.gen_range(-10.0..70.0)];
            let q = crop.to_crop(&LandmarkSet::new(vec![p]).unwrap()).unwrap().points[0];
            let ex = (p[0] as f64 - b.x as f64) * 32.0 / b.w as f64;
            let ey = (p[1] as f64 - b.y as f64) * 32.0 / b.h as f64;
            assert!((q[0] as f64 - ex).abs() < 1e-4 && (q[1] as f64 - ey).abs() < 1e-4);
        }
    }

    #[test]
    fn out_of_bounds_crop_is_zero_padded() {
        let img = Tensor::full(&[3, 10, 10], 1.0).unwrap();
        let crop = crop_resize(&img, BBox::new(-10.0, 0.0, 20.0, 10.0).unwrap(), 20).unwrap();
        assert_eq!(crop.image.get(&[0, 5, 2]).unwrap(), 0.0);
        assert_eq!(crop.image.get(&[0, 5, 17]).unwrap(), 1.0);
        assert!(crop_resize(&img, BBox::new(50.0, 50.0, 5.0, 5.0).unwrap(), 8).is_err());
        assert!(BBox::new(0.0, 0.0, 0.0, 5.0).is_err());
    }

    #[test]
    fn split_sizes_and_partition() {
        for (n, val) in [(11usize, 1usize), (110, 10), (57, 5)] {
            let (tr, va) = split_train_val((0..n).collect::<Vec<_>>(), (10, 1), 3).unwrap();
            assert_eq!(va.len(), val);
            let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
        assert!(split_train_val(vec![0; 10], (10, 1), 0).is_err());
    }

    #[test]
    fn split_seed_dependence() {
        let run = |seed| split_train_val((0..110).collect::<Vec<_>>(), (10, 1), seed).unwrap().1;
        assert_eq!(run(5), run(5));
        let differing = (0..20u64).filter(|&s| run(s) != run(s + 100)).count();
        assert!(differing >= 19);
    }

    #[test]
    fn annotation_lines() {
        let text = "{\"image\":\"a.ppm\",\"bbox\":[1,2,3,4],\"landmarks\":[[1,2],[3,4]]}\n\n\
                    {\"image\":\"/abs/b.ppm\",\"bbox\":[0,0,5,5],\"landmarks\":[[0,0],[1,1]],\"teacher\":\"t.lmkw\"}\n";
        let s = parse_annotations(text, Path::new("/data"), Some(2)).unwrap();
        assert_eq!(s[0].image, PathBuf::from("/data/a.ppm"));
        assert_eq!(s[1].image, PathBuf::from("/abs/b.ppm"));
        assert_eq!(s[1].teacher.as_deref(), Some(Path::new("/data/t.lmkw")));
        assert_eq!(s[0].bbox, BBox { x: 1.0, y: 2.0, w: 3.0, h: 4.0 });

        match parse_annotations(text, Path::new("/"), Some(3)) {
            Err(Error::Annotation { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        let bad = "{\"image\":\"a\",\"bbox\":[0,0,-1,4],\"landmarks\":[]}";
        assert!(matches!(parse_annotations(bad, Path::new("/"), None), Err(Error::Annotation { line: 1, .. })));
    }

    #[test]
    fn teacher_errors_are_distinct() {
        let mut store = WeightStore::new();
        store.insert("point", Tensor::zeros(&[3, 8, 8]).unwrap()).unwrap();
        match teacher_heatmaps_from_store(&store, None) {
            Err(Error::MissingTensor(n)) => assert_eq!(n, "edge"),
            other => panic!("{other:?}"),
        }
        store.insert("edge", Tensor::zeros(&[2, 8, 8]).unwrap()).unwrap();
        let hm = teacher_heatmaps_from_store(&store, Some((3, 2))).unwrap();
        assert_eq!((hm.num_landmarks(), hm.num_edges()), (3, 2));
        assert!(matches!(teacher_heatmaps_from_store(&store, Some((4, 2))), Err(Error::Shape { .. })));
        store.replace("edge", Tensor::zeros(&[2, 4, 4]).unwrap()).unwrap();
        assert!(teacher_heatmaps_from_store(&store, None).is_err());
    }
}

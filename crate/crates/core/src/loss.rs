//! Distillation loss, coordinate regression loss and NME.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LandmarkSet;
use crate::tensor::Tensor;

/// How the per-cell heatmap distance is aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdMode {
    /// `Σ_i sqrt(Σ_k (T_ik - S_ik)²)`: one L2 norm per landmark map.
    #[default]
    PerLandmarkL2,
    /// `Σ_i Σ_k |T_ik - S_ik|`.
    CellAbs,
}

fn check_pair(op: &'static str, teacher: &Tensor, student: &Tensor) -> Result<()> {
    if teacher.shape() != student.shape() {
        return Err(Error::shape(op, format!("teacher {:?} vs student {:?}", teacher.shape(), student.shape())));
    }
    if teacher.rank() < 2 {
        return Err(Error::shape(op, format!("expected [N, ...] heatmaps, got {:?}", teacher.shape())));
    }
    if !teacher.all_finite() || !student.all_finite() {
        return Err(Error::NonFinite(format!("{op} input")));
    }
    Ok(())
}

/// Heatmap distillation loss over `[N, H, W]` maps.
pub fn kd_loss(teacher: &Tensor, student: &Tensor) -> Result<f32> {
    kd_loss_with(teacher, student, KdMode::PerLandmarkL2)
}

pub fn kd_loss_with(teacher: &Tensor, student: &Tensor, mode: KdMode) -> Result<f32> {
    check_pair("kd_loss", teacher, student)?;
    let plane: usize = teacher.shape()[1..].iter().product();
    let (t, s) = (teacher.values(), student.values());
    let total: f64 = t
        .chunks(plane)
        .zip(s.chunks(plane))
        .map(|(tc, sc)| {
            let cells = tc.iter().zip(sc).map(|(&a, &b)| a as f64 - b as f64);
            match mode {
                KdMode::PerLandmarkL2 => cells.map(|d| d * d).sum::<f64>().sqrt(),
                KdMode::CellAbs => cells.map(f64::abs).sum(),
            }
        })
        .sum();
    Ok(total as f32)
}

fn check_sets(op: &'static str, pred: &LandmarkSet, gt: &LandmarkSet) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::shape(op, format!("{} predicted vs {} reference landmarks", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::invalid(op, "empty landmark set"));
    }
    Ok(())
}

/// Mean squared Euclidean distance in pixels.
pub fn l2_regression_loss(pred: &LandmarkSet, gt: &LandmarkSet) -> Result<f32> {
    check_sets("l2_regression_loss", pred, gt)?;
    let sum: f64 = pred
        .points
        .iter()
        .zip(&gt.points)
        .map(|(p, g)| {
            let (dx, dy) = (p[0] as f64 - g[0] as f64, p[1] as f64 - g[1] as f64);
            dx * dx + dy * dy
        })
        .sum();
    Ok((sum / pred.len() as f64) as f32)
}

/// NME normalizer.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmeNorm {
    /// Diagonal of the reference landmarks' bounding box.
    #[default]
    BboxDiag,
    /// Distance between two reference landmarks (e.g. outer eye corners).
    Interocular(usize, usize),
    Constant(f32),
}

impl NmeNorm {
    pub fn distance(&self, gt: &LandmarkSet) -> Result<f64> {
        let d = match *self {
            NmeNorm::BboxDiag => {
                let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
                for p in &gt.points {
                    for a in 0..2 {
                        lo[a] = lo[a].min(p[a] as f64);
                        hi[a] = hi[a].max(p[a] as f64);
                    }
                }
                (hi[0] - lo[0]).hypot(hi[1] - lo[1])
            }
            NmeNorm::Interocular(i, j) => {
                let (a, b) = match (gt.points.get(i), gt.points.get(j)) {
                    (Some(a), Some(b)) => (a, b),
                    _ => {
                        return Err(Error::invalid(
                            "nme",
                            format!("interocular indices ({i}, {j}) out of range for {} landmarks", gt.len()),
                        ))
                    }
                };
                (a[0] as f64 - b[0] as f64).hypot(a[1] as f64 - b[1] as f64)
            }
            NmeNorm::Constant(c) => c as f64,
        };
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::invalid("nme", format!("normalizer {d} must be positive")));
        }
        Ok(d)
    }
}

/// Normalized mean error in percent.
pub fn nme(pred: &LandmarkSet, gt: &LandmarkSet, norm: NmeNorm) -> Result<f32> {
    check_sets("nme", pred, gt)?;
    let d = norm.distance(gt)?;
    let mean: f64 =
        pred.points.iter().zip(&gt.points).map(|(p, g)| (p[0] as f64 - g[0] as f64).hypot(p[1] as f64 - g[1] as f64)).sum::<f64>()
            / pred.len() as f64;
    Ok((100.0 * mean / d) as f32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub kd: f32,
    pub reg: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { kd: 1.0, reg: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub kd: f32,
    pub reg: f32,
    pub total: f32,
}

impl LossReport {
    pub fn new(kd: f32, reg: f32, w: LossWeights) -> Result<Self> {
        let total = w.kd * kd + w.reg * reg;
        if !(kd.is_finite() && reg.is_finite() && total.is_finite()) {
            return Err(Error::NonFinite(format!("loss report kd={kd} reg={reg}")));
        }
        Ok(LossReport { kd, reg, total })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(p: &[[f32; 2]]) -> LandmarkSet {
        LandmarkSet::new(p.to_vec()).unwrap()
    }

    #[test]
    fn kd_zero_on_identical() {
        let t = Tensor::from_fn(&[3, 8, 8], |i| (i[0] + i[1] * i[2]) as f32 * 0.01).unwrap();
        assert_eq!(kd_loss(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn kd_constant_offset_closed_form() {
        for c in [0.5f32, -0.25, 3.0] {
            let t = Tensor::from_fn(&[1, 64, 64], |i| ((i[1] * 7 + i[2]) % 13) as f32 / 13.0).unwrap();
            let s = t.map(|v| v + c);
            let got = kd_loss(&t, &s).unwrap();
            assert!((got - 64.0 * c.abs()).abs() <= 1e-5 * 64.0 * c.abs(), "{got}");
        }
    }

    #[test]
    fn kd_modes_differ_and_shape_checked() {
        let t = Tensor::zeros(&[1, 2, 2]).unwrap();
        let s = Tensor::new(&[1, 2, 2], vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        assert_eq!(kd_loss(&t, &s).unwrap(), 5.0);
        assert_eq!(kd_loss_with(&t, &s, KdMode::CellAbs).unwrap(), 7.0);
        assert!(kd_loss(&t, &Tensor::zeros(&[2, 2, 1]).unwrap()).is_err());
    }

    #[test]
    fn regression_three_four_five() {
        let a = set(&[[10.0, 10.0]]);
        let b = set(&[[13.0, 14.0]]);
        assert_eq!(l2_regression_loss(&a, &b).unwrap(), 25.0);
        assert_eq!(l2_regression_loss(&a, &a).unwrap(), 0.0);
        assert!(l2_regression_loss(&a, &set(&[[0.0, 0.0], [1.0, 1.0]])).is_err());
    }

    #[test]
    fn nme_constructed_one_percent() {
        let gt = set(&[[0.0, 0.0], [30.0, 40.0], [10.0, 5.0]]);
        // bbox diagonal is 50; shift each point by 0.5
        let pred = set(&[[0.3, 0.4], [30.3, 40.4], [10.3, 5.4]]);
        assert!((nme(&pred, &gt, NmeNorm::BboxDiag).unwrap() - 1.0).abs() < 1e-5);
        assert!((nme(&pred, &gt, NmeNorm::Interocular(0, 1)).unwrap() - 1.0).abs() < 1e-5);
        assert!((nme(&pred, &gt, NmeNorm::Constant(0.5)).unwrap() - 100.0).abs() < 1e-4);
        assert_eq!(nme(&gt, &gt, NmeNorm::BboxDiag).unwrap(), 0.0);
    }

    #[test]
    fn nme_rejects_bad_normalizer() {
        let gt = set(&[[1.0, 1.0], [1.0, 1.0]]);
        assert!(nme(&gt, &gt, NmeNorm::BboxDiag).is_err());
        assert!(nme(&gt, &gt, NmeNorm::Constant(0.0)).is_err());
        assert!(nme(&gt, &gt, NmeNorm::Constant(-2.0)).is_err());
        assert!(nme(&gt, &gt, NmeNorm::Interocular(0, 5)).is_err());
    }

    #[test]
    fn report_total() {
        let r = LossReport::new(2.0, 3.0, LossWeights { kd: 0.5, reg: 2.0 }).unwrap();
        assert_eq!(r.total, 7.0);
        assert!(LossReport::new(f32::NAN, 0.0, LossWeights::default()).is_err());
    }

    fn maps() -> impl Strategy<Value = (Vec<f32>, Vec<f32>, usize)> {
        (1usize..4).prop_flat_map(|n| {
            let len = n * 16;
            (prop::collection::vec(-2.0f32..2.0, len), prop::collection::vec(-2.0f32..2.0, len), Just(n))
        })
    }

    proptest! {
        #[test]
        fn kd_symmetric_nonnegative_and_linear((a, b, n) in maps(), c in 0.1f32..5.0) {
            let t = Tensor::new(&[n, 4, 4], a).unwrap();
            let s = Tensor::new(&[n, 4, 4], b).unwrap();
            let ab = kd_loss(&t, &s).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, kd_loss(&s, &t).unwrap());
            let tv = t.values();
            let scaled = Tensor::new(&[n, 4, 4], tv.iter().zip(s.values().iter()).map(|(x, y)| x + c * (y - x)).collect()).unwrap();
            let sc = kd_loss(&t, &scaled).unwrap();
            prop_assert!((sc - c * ab).abs() <= 1e-4 * (c * ab).max(1.0));
        }

        #[test]
        fn nme_translation_invariant(pts in prop::collection::vec((0.0f32..200.0, 0.0f32..200.0), 3..12),
                                     noise in prop::collection::vec((-3.0f32..3.0, -3.0f32..3.0), 12),
                                     shift in (-50.0f32..50.0, -50.0f32..50.0)) {
            let gt: Vec<[f32; 2]> = pts.iter().map(|&(x, y)| [x, y]).collect();
            let pred: Vec<[f32; 2]> = gt.iter().zip(&noise).map(|(g, &(dx, dy))| [g[0] + dx, g[1] + dy]).collect();
            let mv = |v: &[[f32; 2]]| set(&v.iter().map(|p| [p[0] + shift.0, p[1] + shift.1]).collect::<Vec<_>>());
            let (g, p) = (set(&gt), set(&pred));
            if let Ok(base) = nme(&p, &g, NmeNorm::BboxDiag) {
                let moved = nme(&mv(&pred), &mv(&gt), NmeNorm::BboxDiag).unwrap();
                prop_assert!((base - moved).abs() <= 1e-3 * base.max(1.0));
            }
        }
    }
}

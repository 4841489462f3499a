use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMode {
    Nearest,
    /// Half-pixel centers (`align_corners = false`).
    Bilinear,
}

/// Source coordinate and blend weight along one axis for bilinear sampling.
fn bilinear_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = in_len as f32 / out_len as f32;
    (0..out_len)
        .map(|o| {
            let src = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f32)
        })
        .collect()
}

pub fn upsample(x: &Tensor, target: (usize, usize), mode: UpsampleMode) -> Result<Tensor> {
    let [c, h, w] = x.dims3("upsample")?;
    let (oh, ow) = target;
    if oh < h || ow < w {
        return Err(Error::invalid("upsample", format!("target {oh}x{ow} is smaller than input {h}x{w}; downscaling is not supported")));
    }
    let v = x.values();
    let mut out = Vec::with_capacity(c * oh * ow);
    match mode {
        UpsampleMode::Nearest => {
            let ys: Vec<usize> = (0..oh).map(|o| o * h / oh).collect();
            let xs: Vec<usize> = (0..ow).map(|o| o * w / ow).collect();
            for ch in 0..c {
                let plane = &v[ch * h * w..(ch + 1) * h * w];
                for &sy in &ys {
                    out.extend(xs.iter().map(|&sx| plane[sy * w + sx]));
                }
            }
        }
        UpsampleMode::Bilinear => {
            let ys = bilinear_taps(oh, h);
            let xs = bilinear_taps(ow, w);
            for ch in 0..c {
                let plane = &v[ch * h * w..(ch + 1) * h * w];
                for &(y0, y1, fy) in &ys {
                    for &(x0, x1, fx) in &xs {
                        let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                        let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                        out.push(top * (1.0 - fy) + bot * fy);
                    }
                }
            }
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_replicates() {
        let x = Tensor::new(&[1, 1, 1], vec![2.5]).unwrap();
        let y = upsample(&x, (4, 4), UpsampleMode::Nearest).unwrap();
        assert_eq!(y.values().as_ref(), &[2.5; 16]);
    }

    #[test]
    fn same_size_is_identity() {
        let x = Tensor::new(&[1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        for m in [UpsampleMode::Nearest, UpsampleMode::Bilinear] {
            assert!(upsample(&x, (2, 2), m).unwrap().bit_eq(&x));
        }
    }

    /// Evaluates the half-pixel bilinear formula directly at each output centre.
    #[test]
    fn bilinear_matches_closed_form() {
        let grid = [[0.0f64, 1.0], [2.0, 3.0]];
        let x = Tensor::new(&[1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = upsample(&x, (4, 4), UpsampleMode::Bilinear).unwrap();
        let coord = |o: usize| ((o as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, 1.0);
        for oy in 0..4 {
            for ox in 0..4 {
                let (sy, sx) = (coord(oy), coord(ox));
                let e = grid[0][0] * (1.0 - sy) * (1.0 - sx)
                    + grid[0][1] * (1.0 - sy) * sx
                    + grid[1][0] * sy * (1.0 - sx)
                    + grid[1][1] * sy * sx;
                let got = y.get(&[0, oy, ox]).unwrap() as f64;
                assert!((got - e).abs() < 1e-6, "({oy},{ox}) {got} vs {e}");
            }
        }
        // corners clamp to the source corners, centre rows interpolate
        assert_eq!(y.get(&[0, 0, 0]).unwrap(), 0.0);
        assert_eq!(y.get(&[0, 0, 1]).unwrap(), 0.25);
    }

    #[test]
    fn downscale_rejected() {
        let x = Tensor::zeros(&[1, 4, 4]).unwrap();
        assert!(upsample(&x, (2, 4), UpsampleMode::Nearest).is_err());
    }
}

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Conv2dParams { stride: (1, 1), padding: (0, 0), groups: 1 }
    }
}

impl Conv2dParams {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Conv2dParams { stride: (stride, stride), padding: (padding, padding), groups }
    }

    pub fn output_size(&self, h: usize, w: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.padding.0;
        let pw = w + 2 * self.padding.1;
        if ph < kh || pw < kw || self.stride.0 == 0 || self.stride.1 == 0 {
            return None;
        }
        Some(((ph - kh) / self.stride.0 + 1, (pw - kw) / self.stride.1 + 1))
    }
}

/// 2-D cross-correlation of a `[C_in, H, W]` input with `[C_out, C_in/groups, kH, kW]`
/// weights and zero padding.
///
/// Each output element accumulates in a fixed order (input channel, kernel
/// row, kernel column), so results do not depend on how callers schedule
/// output channels.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, params: Conv2dParams) -> Result<Tensor> {
    let [c_in, h, w] = input.dims3("conv2d")?;
    let [c_out, c_per_group, kh, kw] = weight.dims4("conv2d")?;
    let groups = params.groups;
    if groups == 0 || c_in % groups != 0 {
        return Err(Error::shape("conv2d", format!("input channel axis ({c_in}) not divisible by groups ({groups})")));
    }
    if c_out % groups != 0 {
        return Err(Error::shape("conv2d", format!("weight output-channel axis ({c_out}) not divisible by groups ({groups})")));
    }
    if c_per_group != c_in / groups {
        return Err(Error::shape(
            "conv2d",
            format!("weight input-channel axis is {c_per_group}, expected C_in/groups = {}", c_in / groups),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::shape("conv2d", format!("bias shape {:?}, expected [{c_out}]", b.shape())));
        }
    }
    let (oh, ow) = params
        .output_size(h, w, kh, kw)
        .ok_or_else(|| Error::shape("conv2d", format!("kernel {kh}x{kw} larger than padded spatial axes {h}x{w}")))?;

    let x = input.values();
    let wt = weight.values();
    let bias_v = bias.map(|b| b.values());
    let (sh, sw) = params.stride;
    let (ph, pw) = params.padding;
    let out_per_group = c_out / groups;
    let mut out = vec![0f32; c_out * oh * ow];

    for oc in 0..c_out {
        let g = oc / out_per_group;
        let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        for icg in 0..c_per_group {
            let ic = g * c_per_group + icg;
            let src = &x[ic * h * w..(ic + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let k = wt[((oc * c_per_group + icg) * kh + ky) * kw + kx];
                    if sh == 1 && sw == 1 {
                        accumulate_unit_stride(plane, src, k, (h, w), (oh, ow), (ky, kx), (ph, pw));
                    } else {
                        for oy in 0..oh {
                            let iy = (oy * sh + ky) as isize - ph as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &src[iy as usize * w..(iy as usize + 1) * w];
                            let orow = &mut plane[oy * ow..(oy + 1) * ow];
                            for (ox, o) in orow.iter_mut().enumerate() {
                                let ix = (ox * sw + kx) as isize - pw as isize;
                                if ix >= 0 && ix < w as isize {
                                    *o += k * row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        if let Some(b) = &bias_v {
            let bv = b[oc];
            plane.iter_mut().for_each(|o| *o += bv);
        }
    }
    Tensor::new(&[c_out, oh, ow], out)
}

#[inline]
fn accumulate_unit_stride(
    plane: &mut [f32],
    src: &[f32],
    k: f32,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
    (ky, kx): (usize, usize),
    (ph, pw): (usize, usize),
) {
    // ix = ox + kx - pw must lie in [0, w)
    let ox_lo = pw.saturating_sub(kx);
    let ox_hi = (w + pw).saturating_sub(kx).min(ow);
    if ox_lo >= ox_hi {
        return;
    }
    for oy in 0..oh {
        let iy = (oy + ky) as isize - ph as isize;
        if iy < 0 || iy >= h as isize {
            continue;
        }
        let row = &src[iy as usize * w..(iy as usize + 1) * w];
        let ix0 = ox_lo + kx - pw;
        let len = ox_hi - ox_lo;
        let orow = &mut plane[oy * ow + ox_lo..oy * ow + ox_hi];
        for (o, &v) in orow.iter_mut().zip(&row[ix0..ix0 + len]) {
            *o += k * v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Six nested loops straight from the definition, f32 accumulation, bias last.
    fn reference(x: &Tensor, w: &Tensor, b: Option<&Tensor>, p: Conv2dParams) -> Vec<f32> {
        let [_, h, wd] = x.dims3("ref").unwrap();
        let [c_out, cpg, kh, kw] = w.dims4("ref").unwrap();
        let (oh, ow) = p.output_size(h, wd, kh, kw).unwrap();
        let opg = c_out / p.groups;
        let mut out = vec![0f32; c_out * oh * ow];
        for oc in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0f32;
                    for icg in 0..cpg {
                        let ic = (oc / opg) * cpg + icg;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * p.stride.0 + ky) as isize - p.padding.0 as isize;
                                let ix = (ox * p.stride.1 + kx) as isize - p.padding.1 as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.get(&[ic, iy as usize, ix as usize]).unwrap() * w.get(&[oc, icg, ky, kx]).unwrap();
                            }
                        }
                    }
                    out[(oc * oh + oy) * ow + ox] = acc + b.map(|b| b.get(&[oc]).unwrap()).unwrap_or(0.0);
                }
            }
        }
        out
    }

    #[test]
    fn scalar_case() {
        let x = Tensor::new(&[1, 1, 1], vec![1.0]).unwrap();
        let w = Tensor::new(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let b = Tensor::new(&[1], vec![3.0]).unwrap();
        let y = conv2d(&x, &w, Some(&b), Conv2dParams::default()).unwrap();
        assert_eq!(y.values().as_ref(), &[5.0]);
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[1, 5, 7], &mut rng);
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = Tensor::new(&[1, 1, 3, 3], k).unwrap();
        let y = conv2d(&x, &w, None, Conv2dParams::new(1, 1, 1)).unwrap();
        assert!(y.bit_eq(&x));
    }

    #[test]
    fn matches_nested_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[4, 8, 8], &mut rng);
        let w = random(&[6, 4, 3, 3], &mut rng);
        let b = random(&[6], &mut rng);
        for p in [Conv2dParams::default(), Conv2dParams::new(1, 1, 1), Conv2dParams::new(2, 1, 1)] {
            let y = conv2d(&x, &w, Some(&b), p).unwrap();
            let r = reference(&x, &w, Some(&b), p);
            for (a, e) in y.values().iter().zip(&r) {
                assert!((a - e).abs() < 1e-6, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn depthwise_matches_per_channel_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[5, 9, 6], &mut rng);
        let w = random(&[5, 1, 3, 3], &mut rng);
        for stride in [1, 2] {
            let y = conv2d(&x, &w, None, Conv2dParams::new(stride, 1, 5)).unwrap();
            for c in 0..5 {
                let xc = Tensor::new(&[1, 9, 6], x.channel(c).unwrap().into_values()).unwrap();
                let wc = Tensor::new(&[1, 1, 3, 3], w.values()[c * 9..c * 9 + 9].to_vec()).unwrap();
                let yc = conv2d(&xc, &wc, None, Conv2dParams::new(stride, 1, 1)).unwrap();
                assert_eq!(y.channel(c).unwrap().values(), yc.channel(0).unwrap().values());
            }
        }
    }

    #[test]
    fn rejects_mismatched_axes() {
        let x = Tensor::zeros(&[4, 8, 8]).unwrap();
        let w = Tensor::zeros(&[6, 3, 3, 3]).unwrap();
        let err = conv2d(&x, &w, None, Conv2dParams::default()).unwrap_err();
        assert!(err.to_string().contains("input-channel axis"), "{err}");
        let err = conv2d(&x, &Tensor::zeros(&[6, 1, 3, 3]).unwrap(), None, Conv2dParams::new(1, 1, 3)).unwrap_err();
        assert!(err.to_string().contains("divisible"), "{err}");
    }
}

use super::Tensor;
use crate::error::{Error, Result};

fn check_affine(op: &'static str, c: usize, gamma: &Tensor, beta: &Tensor) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(op, format!("affine parameters {:?}/{:?} do not match channel axis {c}", gamma.shape(), beta.shape())));
    }
    Ok(())
}

/// Per-channel normalization over the spatial axes of a `[C, H, W]` tensor,
/// using the population variance with `eps` inside the square root.
pub fn instance_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let [c, h, w] = x.dims3("instance_norm")?;
    check_affine("instance_norm", c, gamma, beta)?;
    let v = x.values();
    let g = gamma.values();
    let b = beta.values();
    let n = (h * w) as f32;
    let mut out = Vec::with_capacity(v.len());
    for ch in 0..c {
        let plane = &v[ch * h * w..(ch + 1) * h * w];
        let mean = plane.iter().sum::<f32>() / n;
        let var = plane.iter().map(|&p| (p - mean) * (p - mean)).sum::<f32>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        out.extend(plane.iter().map(|&p| (p - mean) * inv * g[ch] + b[ch]));
    }
    Tensor::new(x.shape(), out)
}

/// Normalizes every spatial position of a `[C, H, W]` tensor across its `C`
/// values (layer norm over the channel axis of each token).
pub fn layer_norm_channels(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let [c, h, w] = x.dims3("layer_norm_channels")?;
    check_affine("layer_norm_channels", c, gamma, beta)?;
    let v = x.values();
    let g = gamma.values();
    let b = beta.values();
    let hw = h * w;
    let mut out = vec![0f32; v.len()];
    for p in 0..hw {
        let mut mean = 0f32;
        for ch in 0..c {
            mean += v[ch * hw + p];
        }
        mean /= c as f32;
        let mut var = 0f32;
        for ch in 0..c {
            let d = v[ch * hw + p] - mean;
            var += d * d;
        }
        var /= c as f32;
        let inv = 1.0 / (var + eps).sqrt();
        for ch in 0..c {
            out[ch * hw + p] = (v[ch * hw + p] - mean) * inv * g[ch] + b[ch];
        }
    }
    Tensor::new(x.shape(), out)
}

/// `y[c] = x[c] * scale[c] + shift[c]`: inference-time batch norm with the
/// running statistics already folded into the affine.
pub fn affine_channels(x: &Tensor, scale: &Tensor, shift: &Tensor) -> Result<Tensor> {
    let [c, h, w] = x.dims3("affine_channels")?;
    check_affine("affine_channels", c, scale, shift)?;
    let v = x.values();
    let s = scale.values();
    let t = shift.values();
    let hw = h * w;
    let out = v.iter().enumerate().map(|(i, &x)| x * s[i / hw] + t[i / hw]).collect();
    Tensor::new(x.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let x = Tensor::full(&[2, 3, 3], 7.5).unwrap();
        let y = instance_norm(&x, &Tensor::full(&[2], 1.0).unwrap(), &Tensor::zeros(&[2]).unwrap(), 1e-5).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::new(&[2, 4, 4], (0..32).map(|_| rng.gen()).collect()).unwrap();
        let y = instance_norm(&x, &Tensor::zeros(&[2]).unwrap(), &Tensor::full(&[2], 5.0).unwrap(), 1e-5).unwrap();
        assert!(y.values().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn random_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::new(&[3, 4, 4], (0..48).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let y = instance_norm(&x, &Tensor::full(&[3], 1.0).unwrap(), &Tensor::zeros(&[3]).unwrap(), 1e-9).unwrap();
        for c in 0..3 {
            let p: Vec<f64> = y.channel(c).unwrap().values().iter().map(|&v| v as f64).collect();
            let mean = p.iter().sum::<f64>() / 16.0;
            let var = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-5, "var {var}");
        }
    }

    #[test]
    fn layer_norm_normalizes_each_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::new(&[5, 2, 3], (0..30).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let y = layer_norm_channels(&x, &Tensor::full(&[5], 1.0).unwrap(), &Tensor::zeros(&[5]).unwrap(), 1e-9).unwrap();
        for p in 0..6 {
            let col: Vec<f32> = (0..5).map(|c| y.values()[c * 6 + p]).collect();
            let mean: f32 = col.iter().sum::<f32>() / 5.0;
            assert!(mean.abs() < 1e-5);
        }
    }

    #[test]
    fn affine_shape_errors() {
        let x = Tensor::zeros(&[3, 2, 2]).unwrap();
        assert!(affine_channels(&x, &Tensor::zeros(&[2]).unwrap(), &Tensor::zeros(&[3]).unwrap()).is_err());
    }
}

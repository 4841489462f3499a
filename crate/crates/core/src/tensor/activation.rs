use super::Tensor;

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// `x * sigmoid(x)`.
pub fn silu(x: &Tensor) -> Tensor {
    x.map(|v| v * sigmoid_scalar(v))
}

#[inline]
pub(crate) fn sigmoid_scalar(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f32]) -> Tensor {
        Tensor::new(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn scalar_values() {
        assert_eq!(sigmoid(&t(&[0.0])).values()[0], 0.5);
        assert_eq!(relu(&t(&[-3.0, 3.0])).values().as_ref(), &[0.0, 3.0]);
        let s = silu(&t(&[1.0])).values()[0];
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((s as f64 - expected).abs() < 1e-7, "{s}");
        assert!((s - 0.731_058_6).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_saturates_without_nan() {
        let y = sigmoid(&t(&[-1000.0, 1000.0]));
        assert_eq!(y.values().as_ref(), &[0.0, 1.0]);
    }
}

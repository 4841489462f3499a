use super::{contiguous_strides, Tensor};
use crate::error::{Error, Result};

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        return Err(Error::invalid(op, format!("axis {axis} out of range for rank {}", t.rank())));
    }
    Ok(())
}

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
fn around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Numerically stable softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis("softmax", x, axis)?;
    let (outer, n, inner) = around(x.shape(), axis);
    let v = x.values();
    let mut out = vec![0f32; v.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let max = (0..n).map(|k| v[at(k)]).fold(f32::NEG_INFINITY, f32::max);
            let mut total = 0f32;
            for k in 0..n {
                let e = (v[at(k)] - max).exp();
                out[at(k)] = e;
                total += e;
            }
            for k in 0..n {
                out[at(k)] /= total;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

/// Sum along `axis`, keeping it with extent 1. Accumulates left to right.
pub fn sum(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis("sum", x, axis)?;
    let (outer, n, inner) = around(x.shape(), axis);
    let v = x.values();
    let mut out = vec![0f32; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let mut acc = 0f32;
            for k in 0..n {
                acc += v[(o * n + k) * inner + i];
            }
            out[o * inner + i] = acc;
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = 1;
    Tensor::new(&shape, out)
}

/// `[..., m, k] x [..., k, n] -> [..., m, n]` with identical leading axes.
pub fn matmul_batched(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() < 2 || a.rank() != b.rank() {
        return Err(Error::shape("matmul_batched", format!("operands {:?} and {:?} must share rank >= 2", a.shape(), b.shape())));
    }
    let r = a.rank();
    if a.shape()[..r - 2] != b.shape()[..r - 2] {
        return Err(Error::shape("matmul_batched", format!("batch axes differ: {:?} vs {:?}", a.shape(), b.shape())));
    }
    let (m, k) = (a.shape()[r - 2], a.shape()[r - 1]);
    let (k2, n) = (b.shape()[r - 2], b.shape()[r - 1]);
    if k != k2 {
        return Err(Error::shape("matmul_batched", format!("inner axes disagree: {k} vs {k2}")));
    }
    let batch: usize = a.shape()[..r - 2].iter().product();
    let av = a.values();
    let bv = b.values();
    let mut out = vec![0f32; batch * m * n];
    for bt in 0..batch {
        let ab = &av[bt * m * k..(bt + 1) * m * k];
        let bb = &bv[bt * k * n..(bt + 1) * k * n];
        let ob = &mut out[bt * m * n..(bt + 1) * m * n];
        for i in 0..m {
            for p in 0..k {
                let s = ab[i * k + p];
                for j in 0..n {
                    ob[i * n + j] += s * bb[p * n + j];
                }
            }
        }
    }
    let mut shape = a.shape()[..r - 2].to_vec();
    shape.extend([m, n]);
    Tensor::new(&shape, out)
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn broadcast_binary(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let out = a.values().iter().zip(b.values().iter()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape(), out);
    }
    let shape = broadcast_shape(a.shape(), b.shape())
        .ok_or_else(|| Error::shape(op, format!("{:?} and {:?} are not broadcastable", a.shape(), b.shape())))?;
    let r = shape.len();
    // Source strides padded to the output rank, zero on broadcast axes.
    let padded = |t: &Tensor| -> Vec<usize> {
        let s = contiguous_strides(t.shape());
        let lead = r - t.rank();
        (0..r).map(|i| if i < lead || t.shape()[i - lead] == 1 { 0 } else { s[i - lead] }).collect()
    };
    let (sa, sb) = (padded(a), padded(b));
    let (av, bv) = (a.values(), b.values());
    let n: usize = shape.iter().product();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; r];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..n {
        out.push(f(av[oa], bv[ob]));
        for ax in (0..r).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            oa -= sa[ax] * shape[ax];
            ob -= sb[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
    Tensor::new(&shape, out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    broadcast_binary("add", a, b, |x, y| x + y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    broadcast_binary("mul", a, b, |x, y| x * y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_symmetric_input() {
        let y = softmax(&Tensor::zeros(&[3]).unwrap(), 0).unwrap();
        for v in y.values().iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::new(&[3, 7, 5], (0..105).map(|_| rng.gen_range(-20.0..20.0)).collect()).unwrap();
        for axis in 0..3 {
            let y = softmax(&x, axis).unwrap();
            assert!(y.values().iter().all(|&v| v >= 0.0));
            let s = sum(&y, axis).unwrap();
            assert!(s.values().iter().all(|&v| (v - 1.0).abs() < 1e-6));
        }
    }

    #[test]
    fn identity_matmul() {
        let eye = Tensor::from_fn(&[3, 3], |i| if i[0] == i[1] { 1.0 } else { 0.0 }).unwrap();
        let m = Tensor::from_fn(&[3, 4], |i| (i[0] * 4 + i[1]) as f32 - 5.0).unwrap();
        assert!(matmul_batched(&eye, &m).unwrap().bit_eq(&m));
        assert!(matmul_batched(&m, &eye).is_err());
    }

    #[test]
    fn broadcast_add_matches_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let bias = Tensor::new(&[4, 1, 1], (0..4).map(|_| rng.gen()).collect()).unwrap();
        let x = Tensor::new(&[4, 3, 5], (0..60).map(|_| rng.gen()).collect()).unwrap();
        let y = add(&bias, &x).unwrap();
        assert_eq!(y.shape(), &[4, 3, 5]);
        for c in 0..4 {
            for h in 0..3 {
                for w in 0..5 {
                    let e = bias.get(&[c, 0, 0]).unwrap() + x.get(&[c, h, w]).unwrap();
                    assert_eq!(y.get(&[c, h, w]).unwrap(), e);
                }
            }
        }
        let row = Tensor::new(&[5], (0..5).map(|i| i as f32).collect()).unwrap();
        let z = mul(&x, &row).unwrap();
        assert_eq!(z.get(&[2, 1, 3]).unwrap(), x.get(&[2, 1, 3]).unwrap() * 3.0);
        assert!(add(&x, &Tensor::zeros(&[2]).unwrap()).is_err());
    }

    #[test]
    fn sum_keeps_axis() {
        let x = Tensor::from_fn(&[2, 3], |i| (i[0] * 3 + i[1]) as f32).unwrap();
        let s = sum(&x, 1).unwrap();
        assert_eq!(s.shape(), &[2, 1]);
        assert_eq!(s.values().as_ref(), &[3.0, 12.0]);
    }
}

use super::{contiguous_strides, Tensor, MAX_RANK};
use crate::error::{Error, Result};

/// Reinterprets the buffer under `new_shape`; element count must be unchanged.
/// Half-precision storage is preserved.
pub fn reshape(x: &Tensor, new_shape: &[usize]) -> Result<Tensor> {
    let n: usize = new_shape.iter().product();
    if n != x.numel() {
        return Err(Error::shape("reshape", format!("cannot reshape {:?} ({} elements) to {new_shape:?} ({n})", x.shape(), x.numel())));
    }
    relabel(x, new_shape)
}

fn relabel(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    match x.as_f16() {
        Some(h) => Tensor::from_f16(shape, h.to_vec()),
        None => Tensor::new(shape, x.as_f32().expect("f32 storage").to_vec()),
    }
}

fn validate_order(op: &'static str, rank: usize, order: &[usize]) -> Result<()> {
    let mut seen = [false; MAX_RANK];
    if order.len() != rank {
        return Err(Error::invalid(op, format!("axis order {order:?} has length {}, tensor rank {rank}", order.len())));
    }
    for &a in order {
        if a >= rank || seen[a] {
            return Err(Error::invalid(op, format!("axis order {order:?} is not a permutation of 0..{rank}")));
        }
        seen[a] = true;
    }
    Ok(())
}

/// Gathers `x` so that output axis `i` is input axis `order[i]`.
pub fn permute(x: &Tensor, order: &[usize]) -> Result<Tensor> {
    validate_order("permute", x.rank(), order)?;
    let src_strides = contiguous_strides(x.shape());
    let shape: Vec<usize> = order.iter().map(|&a| x.shape()[a]).collect();
    let strides: Vec<usize> = order.iter().map(|&a| src_strides[a]).collect();
    let n = x.numel();
    let mut gather = Vec::with_capacity(n);
    let r = shape.len();
    let mut idx = vec![0usize; r];
    let mut off = 0usize;
    for _ in 0..n {
        gather.push(off);
        for ax in (0..r).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            off -= strides[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
    match x.as_f16() {
        Some(h) => Tensor::from_f16(&shape, gather.iter().map(|&i| h[i]).collect()),
        None => {
            let v = x.as_f32().expect("f32 storage");
            Tensor::new(&shape, gather.iter().map(|&i| v[i]).collect())
        }
    }
}

fn slice_axis(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    let shape = x.shape();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let n = shape[axis];
    let v = x.values();
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        out.extend_from_slice(&v[base..base + len * inner]);
    }
    let mut s = shape.to_vec();
    s[axis] = len;
    Tensor::new(&s, out)
}

/// Splits `x` along `axis` into `parts` equal pieces.
pub fn split(x: &Tensor, axis: usize, parts: usize) -> Result<Vec<Tensor>> {
    if axis >= x.rank() {
        return Err(Error::invalid("split", format!("axis {axis} out of range for rank {}", x.rank())));
    }
    let n = x.shape()[axis];
    if parts == 0 || n % parts != 0 {
        return Err(Error::shape("split", format!("axis {axis} extent {n} not divisible into {parts} parts")));
    }
    let len = n / parts;
    (0..parts).map(|p| slice_axis(x, axis, p * len, len)).collect()
}

pub fn concat(xs: &[Tensor], axis: usize) -> Result<Tensor> {
    let first = xs.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
    if axis >= first.rank() {
        return Err(Error::invalid("concat", format!("axis {axis} out of range for rank {}", first.rank())));
    }
    for (i, t) in xs.iter().enumerate() {
        let agree = t.rank() == first.rank() && t.shape().iter().zip(first.shape()).enumerate().all(|(a, (p, q))| a == axis || p == q);
        if !agree {
            return Err(Error::shape(
                "concat",
                format!("input {i} has shape {:?}, incompatible with {:?} off axis {axis}", t.shape(), first.shape()),
            ));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let total: usize = xs.iter().map(|t| t.shape()[axis]).sum();
    let vals: Vec<_> = xs.iter().map(|t| t.values()).collect();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (t, v) in xs.iter().zip(&vals) {
            let chunk = t.shape()[axis] * inner;
            out.extend_from_slice(&v[o * chunk..(o + 1) * chunk]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(&shape, out)
}

/// Removes `axis`, which must have extent 1.
pub fn squeeze(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() || x.shape()[axis] != 1 || x.rank() == 1 {
        return Err(Error::invalid("squeeze", format!("cannot squeeze axis {axis} of {:?}", x.shape())));
    }
    let mut s = x.shape().to_vec();
    s.remove(axis);
    relabel(x, &s)
}

/// Inserts a unit axis at position `axis` (0..=rank).
pub fn unsqueeze(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis > x.rank() || x.rank() == MAX_RANK {
        return Err(Error::invalid("unsqueeze", format!("cannot insert axis {axis} into {:?}", x.shape())));
    }
    let mut s = x.shape().to_vec();
    s.insert(axis, 1);
    relabel(x, &s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sorted_bits(t: &Tensor) -> Vec<u32> {
        let mut v: Vec<u32> = t.values().iter().map(|x| x.to_bits()).collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn reshape_round_trip() {
        let x = Tensor::from_fn(&[2, 3], |i| (i[0] * 3 + i[1]) as f32).unwrap();
        let y = reshape(&reshape(&x, &[3, 2]).unwrap(), &[2, 3]).unwrap();
        assert!(y.bit_eq(&x));
        assert!(reshape(&x, &[4, 2]).is_err());
    }

    #[test]
    fn transpose_twice_is_identity() {
        let x = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = permute(&x, &[1, 0]).unwrap();
        assert_eq!(t.values().as_ref(), &[1.0, 3.0, 2.0, 4.0]);
        assert!(permute(&t, &[1, 0]).unwrap().bit_eq(&x));
        assert!(permute(&x, &[0, 0]).is_err());
        assert!(permute(&x, &[0]).is_err());
    }

    #[test]
    fn permute_index_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let shape = [3, 4, 2, 5];
        let x = Tensor::new(&shape, (0..120).map(|_| rng.gen()).collect()).unwrap();
        let mut order = vec![0, 1, 2, 3];
        order.shuffle(&mut rng);
        let y = permute(&x, &order).unwrap();
        for _ in 0..100 {
            let out_idx: Vec<usize> = y.shape().iter().map(|&d| rng.gen_range(0..d)).collect();
            let mut src_idx = [0usize; 4];
            for (i, &a) in order.iter().enumerate() {
                src_idx[a] = out_idx[i];
            }
            assert_eq!(y.get(&out_idx).unwrap(), x.get(&src_idx).unwrap());
        }
    }

    #[test]
    fn split_concat_inverse() {
        let x = Tensor::from_fn(&[2, 6, 3], |i| (i[0] * 100 + i[1] * 10 + i[2]) as f32).unwrap();
        let parts = split(&x, 1, 3).unwrap();
        assert_eq!(parts[1].shape(), &[2, 2, 3]);
        assert_eq!(parts[1].get(&[1, 0, 2]).unwrap(), 122.0);
        assert!(concat(&parts, 1).unwrap().bit_eq(&x));
        assert!(split(&x, 1, 4).is_err());
        assert!(concat(&[x.clone(), Tensor::zeros(&[2, 6, 2]).unwrap()], 1).is_err());
    }

    #[test]
    fn squeeze_unsqueeze() {
        let x = Tensor::zeros(&[2, 1, 3]).unwrap();
        assert_eq!(squeeze(&x, 1).unwrap().shape(), &[2, 3]);
        assert!(squeeze(&x, 0).is_err());
        assert_eq!(unsqueeze(&x, 3).unwrap().shape(), &[2, 1, 3, 1]);
    }

    #[test]
    fn f16_storage_survives_relayout() {
        let x = Tensor::from_fn(&[2, 3], |i| i[1] as f32 * 0.1).unwrap().to_f16();
        assert_eq!(permute(&x, &[1, 0]).unwrap().dtype(), super::super::DType::F16);
        assert_eq!(reshape(&x, &[6]).unwrap().dtype(), super::super::DType::F16);
    }

    proptest! {
        #[test]
        fn shape_ops_preserve_multiset(dims in prop::collection::vec(1usize..4, 2..5), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n: usize = dims.iter().product();
            let x = Tensor::new(&dims, (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap();
            let mut order: Vec<usize> = (0..dims.len()).collect();
            order.shuffle(&mut rng);
            let bits = sorted_bits(&x);
            prop_assert_eq!(sorted_bits(&permute(&x, &order).unwrap()), bits.clone());
            prop_assert_eq!(sorted_bits(&reshape(&x, &[n]).unwrap()), bits.clone());
            let parts = split(&x, 0, dims[0]).unwrap();
            let back = concat(&parts, 0).unwrap();
            prop_assert_eq!(sorted_bits(&back), bits);
            let mut inverse = vec![0; order.len()];
            for (i, &a) in order.iter().enumerate() { inverse[a] = i; }
            prop_assert!(permute(&permute(&x, &order).unwrap(), &inverse).unwrap().bit_eq(&x));
        }
    }
}

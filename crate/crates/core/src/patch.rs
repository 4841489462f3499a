//! Patch unfold/fold built only from reshape, split, squeeze, rank-5 permute,
//! unsqueeze and concat, for runtimes whose transpose kernel stops at five
//! axes. Each routine has a direct index-loop twin (`*_naive`) used as the
//! reference in tests and in `lmk verify patch-ops`.
//!
//! Layout: a `[B, C, H, W]` feature map with non-overlapping `ph x pw`
//! patches becomes `[B, C, ph*pw, nh*nw]`. Column `k` holds patch `k`, patches
//! enumerated row-major over the `nh x nw` grid, each flattened row-major.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    pub patch_h: usize,
    pub patch_w: usize,
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl PatchSpec {
    pub fn new(patch: (usize, usize), feature: [usize; 4]) -> Result<Self> {
        let (patch_h, patch_w) = patch;
        let [batch, channels, height, width] = feature;
        if patch_h == 0 || patch_w == 0 {
            return Err(Error::invalid("patch_spec", "patch extents must be >= 1"));
        }
        if height % patch_h != 0 || width % patch_w != 0 {
            return Err(Error::shape("patch_spec", format!("feature {height}x{width} not divisible by patch {patch_h}x{patch_w}")));
        }
        Ok(PatchSpec { patch_h, patch_w, batch, channels, height, width })
    }

    pub fn for_tensor(x: &Tensor, patch: (usize, usize)) -> Result<Self> {
        PatchSpec::new(patch, x.dims4("unfold")?)
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch_h, self.width / self.patch_w)
    }

    pub fn num_patches(&self) -> usize {
        let (nh, nw) = self.grid();
        nh * nw
    }

    pub fn patch_area(&self) -> usize {
        self.patch_h * self.patch_w
    }

    pub fn feature_shape(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }

    pub fn patches_shape(&self) -> [usize; 4] {
        [self.batch, self.channels, self.patch_area(), self.num_patches()]
    }

    fn check_feature(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.feature_shape() {
            return Err(Error::shape("unfold", format!("input {:?} does not match patch spec {:?}", x.shape(), self.feature_shape())));
        }
        Ok(())
    }

    fn check_patches(&self, p: &Tensor) -> Result<()> {
        if p.shape() != self.patches_shape() {
            return Err(Error::shape(
                "fold",
                format!("patches {:?} inconsistent with spec (expected {:?})", p.shape(), self.patches_shape()),
            ));
        }
        Ok(())
    }
}

/// One recorded data-movement step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceOp {
    pub kind: &'static str,
    pub rank: usize,
}

/// Records every relayout primitive issued by the fold-free routines.
#[derive(Debug, Default, Clone)]
pub struct OpTrace {
    ops: Vec<TraceOp>,
    enabled: bool,
}

impl OpTrace {
    pub fn recording() -> Self {
        OpTrace { ops: Vec::new(), enabled: true }
    }

    pub fn ops(&self) -> &[TraceOp] {
        &self.ops
    }

    pub fn max_permute_rank(&self) -> usize {
        self.ops.iter().filter(|o| o.kind == "permute").map(|o| o.rank).max().unwrap_or(0)
    }

    fn push(&mut self, kind: &'static str, rank: usize) {
        if self.enabled {
            self.ops.push(TraceOp { kind, rank });
        }
    }
}

/// Rank-6 permutation executed as: split along `split_axis`, squeeze each
/// slice to rank 5, permute it, unsqueeze at the axis's output position, and
/// concatenate. No permute above rank 5 is issued.
pub fn permute6_via_5d_traced(x: &Tensor, order: &[usize], split_axis: usize, trace: &mut OpTrace) -> Result<Tensor> {
    if x.rank() != 6 {
        return Err(Error::shape("permute6_via_5d", format!("expected rank 6, got {:?}", x.shape())));
    }
    let mut seen = [false; 6];
    if order.len() != 6 || order.iter().any(|&a| a >= 6 || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::invalid("permute6_via_5d", format!("{order:?} is not a permutation of 0..6")));
    }
    if split_axis >= 6 {
        return Err(Error::invalid("permute6_via_5d", format!("split axis {split_axis} out of range")));
    }
    let out_pos = order.iter().position(|&a| a == split_axis).expect("validated permutation");
    // Order of the remaining five axes, renumbered after removing split_axis.
    let inner_order: Vec<usize> = order.iter().filter(|&&a| a != split_axis).map(|&a| if a > split_axis { a - 1 } else { a }).collect();

    let parts = x.shape()[split_axis];
    let slices = tensor::split(x, split_axis, parts)?;
    trace.push("split", 6);
    let mut moved = Vec::with_capacity(parts);
    for s in &slices {
        let sq = tensor::squeeze(s, split_axis)?;
        trace.push("squeeze", 6);
        let p = tensor::permute(&sq, &inner_order)?;
        trace.push("permute", p.rank());
        moved.push(tensor::unsqueeze(&p, out_pos)?);
        trace.push("unsqueeze", 5);
    }
    trace.push("concat", 6);
    tensor::concat(&moved, out_pos)
}

/// [`permute6_via_5d_traced`] splitting along the innermost input axis.
pub fn permute6_via_5d(x: &Tensor, order: &[usize]) -> Result<Tensor> {
    permute6_via_5d_traced(x, order, 5, &mut OpTrace::default())
}

const UNFOLD_ORDER: [usize; 6] = [0, 1, 3, 5, 2, 4];
const FOLD_ORDER: [usize; 6] = [0, 1, 4, 2, 5, 3];

pub fn unfold_foldfree_traced(x: &Tensor, spec: &PatchSpec, trace: &mut OpTrace) -> Result<Tensor> {
    spec.check_feature(x)?;
    let (nh, nw) = spec.grid();
    let [b, c, _, _] = spec.feature_shape();
    // [B, C, nh, ph, nw, pw]
    let six = tensor::reshape(x, &[b, c, nh, spec.patch_h, nw, spec.patch_w])?;
    trace.push("reshape", 6);
    // -> [B, C, ph, pw, nh, nw]; splitting pw gives the (0, 1, 3, 2, 4) slice permute
    let moved = permute6_via_5d_traced(&six, &UNFOLD_ORDER, 5, trace)?;
    trace.push("reshape", 4);
    tensor::reshape(&moved, &spec.patches_shape())
}

pub fn unfold_foldfree(x: &Tensor, spec: &PatchSpec) -> Result<Tensor> {
    unfold_foldfree_traced(x, spec, &mut OpTrace::default())
}

pub fn fold_foldfree_traced(patches: &Tensor, spec: &PatchSpec, trace: &mut OpTrace) -> Result<Tensor> {
    spec.check_patches(patches)?;
    let (nh, nw) = spec.grid();
    let [b, c, _, _] = spec.feature_shape();
    // [B, C, ph, pw, nh, nw]
    let six = tensor::reshape(patches, &[b, c, spec.patch_h, spec.patch_w, nh, nw])?;
    trace.push("reshape", 6);
    // -> [B, C, nh, ph, nw, pw]; splitting pw again yields the same slice permute
    let moved = permute6_via_5d_traced(&six, &FOLD_ORDER, 3, trace)?;
    trace.push("reshape", 4);
    tensor::reshape(&moved, &spec.feature_shape())
}

pub fn fold_foldfree(patches: &Tensor, spec: &PatchSpec) -> Result<Tensor> {
    fold_foldfree_traced(patches, spec, &mut OpTrace::default())
}

/// Direct gather: `out[b, c, i*pw + j, gy*nw + gx] = x[b, c, gy*ph + i, gx*pw + j]`.
pub fn unfold_naive(x: &Tensor, spec: &PatchSpec) -> Result<Tensor> {
    spec.check_feature(x)?;
    let [b, c, h, w] = spec.feature_shape();
    let (nh, nw) = spec.grid();
    let (ph, pw) = (spec.patch_h, spec.patch_w);
    let (area, np) = (spec.patch_area(), spec.num_patches());
    let v = x.values();
    let mut out = vec![0f32; v.len()];
    for bc in 0..b * c {
        for gy in 0..nh {
            for gx in 0..nw {
                for i in 0..ph {
                    for j in 0..pw {
                        let src = (bc * h + gy * ph + i) * w + gx * pw + j;
                        let dst = (bc * area + i * pw + j) * np + gy * nw + gx;
                        out[dst] = v[src];
                    }
                }
            }
        }
    }
    Tensor::new(&spec.patches_shape(), out)
}

/// Direct scatter, the inverse of [`unfold_naive`].
pub fn fold_naive(patches: &Tensor, spec: &PatchSpec) -> Result<Tensor> {
    spec.check_patches(patches)?;
    let [b, c, h, w] = spec.feature_shape();
    let (nh, nw) = spec.grid();
    let (ph, pw) = (spec.patch_h, spec.patch_w);
    let (area, np) = (spec.patch_area(), spec.num_patches());
    let v = patches.values();
    let mut out = vec![0f32; v.len()];
    for bc in 0..b * c {
        for gy in 0..nh {
            for gx in 0..nw {
                for i in 0..ph {
                    for j in 0..pw {
                        let dst = (bc * h + gy * ph + i) * w + gx * pw + j;
                        let src = (bc * area + i * pw + j) * np + gy * nw + gx;
                        out[dst] = v[src];
                    }
                }
            }
        }
    }
    Tensor::new(&spec.feature_shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn two_by_two() -> Tensor {
        Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn single_patch_is_flatten() {
        let x = two_by_two();
        let spec = PatchSpec::for_tensor(&x, (2, 2)).unwrap();
        let u = unfold_foldfree(&x, &spec).unwrap();
        assert_eq!(u.shape(), &[1, 1, 4, 1]);
        assert_eq!(u.values().as_ref(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(unfold_naive(&x, &spec).unwrap().bit_eq(&u));
        assert!(fold_foldfree(&u, &spec).unwrap().bit_eq(&x));
    }

    #[test]
    fn unit_patches_enumerate_row_major() {
        let x = two_by_two();
        let spec = PatchSpec::for_tensor(&x, (1, 1)).unwrap();
        let u = unfold_foldfree(&x, &spec).unwrap();
        assert_eq!(u.shape(), &[1, 1, 1, 4]);
        assert_eq!(u.values().as_ref(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(unfold_naive(&x, &spec).unwrap().bit_eq(&u));
    }

    #[test]
    fn random_unfold_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[2, 3, 8, 8], &mut rng);
        let spec = PatchSpec::for_tensor(&x, (2, 2)).unwrap();
        assert!(unfold_foldfree(&x, &spec).unwrap().bit_eq(&unfold_naive(&x, &spec).unwrap()));
    }

    #[test]
    fn non_divisible_rejected() {
        let x = Tensor::zeros(&[1, 1, 6, 5]).unwrap();
        assert!(PatchSpec::for_tensor(&x, (2, 2)).is_err());
        let spec = PatchSpec::new((2, 2), [1, 1, 4, 4]).unwrap();
        assert!(fold_foldfree(&Tensor::zeros(&[1, 1, 4, 3]).unwrap(), &spec).is_err());
        assert!(fold_naive(&Tensor::zeros(&[1, 1, 2, 4]).unwrap(), &spec).is_err());
    }

    fn direct_permute_oracle(x: &Tensor, order: &[usize]) -> Tensor {
        let shape: Vec<usize> = order.iter().map(|&a| x.shape()[a]).collect();
        Tensor::from_fn(&shape, |out| {
            let mut src = [0usize; 6];
            for (i, &a) in order.iter().enumerate() {
                src[a] = out[i];
            }
            x.get(&src).unwrap()
        })
        .unwrap()
    }

    #[test]
    fn permute6_identity_and_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(&[2, 2, 2, 2, 2, 2], &mut rng);
        assert!(permute6_via_5d(&x, &[0, 1, 2, 3, 4, 5]).unwrap().bit_eq(&x));
        let order = [0, 1, 3, 2, 4, 5];
        assert!(permute6_via_5d(&x, &order).unwrap().bit_eq(&direct_permute_oracle(&x, &order)));
        assert!(permute6_via_5d(&x, &[0, 1, 2, 3, 4, 4]).is_err());
    }

    #[test]
    fn permute6_unfold_order_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&[2, 3, 4, 2, 3, 2], &mut rng);
        for split_axis in 0..6 {
            let y = permute6_via_5d_traced(&x, &UNFOLD_ORDER, split_axis, &mut OpTrace::default()).unwrap();
            assert!(y.bit_eq(&direct_permute_oracle(&x, &UNFOLD_ORDER)));
        }
    }

    #[test]
    fn unfold_trace_uses_the_slice_permute_only() {
        let x = Tensor::zeros(&[1, 2, 8, 8]).unwrap();
        let spec = PatchSpec::for_tensor(&x, (2, 2)).unwrap();
        let mut trace = OpTrace::recording();
        unfold_foldfree_traced(&x, &spec, &mut trace).unwrap();
        assert_eq!(trace.max_permute_rank(), 5);
        assert_eq!(trace.ops().iter().filter(|o| o.kind == "permute").count(), 2);
        let mut trace = OpTrace::recording();
        let u = unfold_foldfree(&x, &spec).unwrap();
        fold_foldfree_traced(&u, &spec, &mut trace).unwrap();
        assert_eq!(trace.max_permute_rank(), 5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn fold_inverts_unfold(
            b in 1usize..3, c in 1usize..4, gh in 1usize..5, gw in 1usize..5,
            ph in 1usize..5, pw in 1usize..5, seed in any::<u64>()
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[b, c, gh * ph, gw * pw], &mut rng);
            let spec = PatchSpec::for_tensor(&x, (ph, pw)).unwrap();
            let u = unfold_foldfree(&x, &spec).unwrap();
            prop_assert!(u.bit_eq(&unfold_naive(&x, &spec).unwrap()));
            prop_assert!(fold_foldfree(&u, &spec).unwrap().bit_eq(&x));
            prop_assert!(fold_naive(&u, &spec).unwrap().bit_eq(&x));
        }

        #[test]
        fn permute6_any_order_any_split(seed in any::<u64>(), split_axis in 0usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape: Vec<usize> = (0..6).map(|_| rng.gen_range(1..4)).collect();
            let x = random(&shape, &mut rng);
            let mut order: Vec<usize> = (0..6).collect();
            order.shuffle(&mut rng);
            let mut trace = OpTrace::recording();
            let y = permute6_via_5d_traced(&x, &order, split_axis, &mut trace).unwrap();
            prop_assert!(y.bit_eq(&direct_permute_oracle(&x, &order)));
            prop_assert!(trace.max_permute_rank() <= 5);
        }
    }
}

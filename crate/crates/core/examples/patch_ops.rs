//! Patch unfold/fold built from permutes of rank at most 5, checked against
//! direct index loops.

use lmk::patch::{fold_foldfree, unfold_foldfree_traced, unfold_naive, OpTrace, PatchSpec};
use lmk::Tensor;

fn main() -> lmk::Result<()> {
    let spec = PatchSpec::new((2, 2), [1, 4, 8, 6])?;
    let x = Tensor::from_fn(&[1, 4, 8, 6], |i| (i[1] * 100 + i[2] * 10 + i[3]) as f32)?;
    let mut trace = OpTrace::recording();
    let patches = unfold_foldfree_traced(&x, &spec, &mut trace)?;
    println!("unfold {:?} -> {:?}", x.shape(), patches.shape());
    println!("max permute rank issued: {}", trace.max_permute_rank());
    println!("matches index loop: {}", patches.bit_eq(&unfold_naive(&x, &spec)?));
    println!("fold restores input: {}", fold_foldfree(&patches, &spec)?.bit_eq(&x));
    Ok(())
}

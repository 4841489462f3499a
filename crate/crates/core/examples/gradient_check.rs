//! Finite-difference check of the head's backward pass.

use lmk::distill::MiniatureProblem;

fn main() -> lmk::Result<()> {
    for seed in 0..3 {
        let problem = MiniatureProblem::new(seed);
        let r = problem.gradcheck(1e-3, 1e-4)?;
        println!("seed {seed}: {} elements, {} skipped at kinks, worst {:.2e} ({})", r.checked, r.skipped, r.max_rel_err, r.worst);
        let f32 = problem.to_f32().gradcheck_against_f64(1e-3, 1e-3)?;
        println!("        f32 tape vs f64 differences: {:.2e}", f32.max_rel_err);
    }
    Ok(())
}

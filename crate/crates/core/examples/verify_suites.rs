//! The built-in randomized self-checks with a reduced trial count.

use lmk::verify::{run_suite, Suite};

fn main() -> lmk::Result<()> {
    for suite in [Suite::PatchOps, Suite::Softargmax, Suite::WeightsIo, Suite::Gradients] {
        println!("{}", run_suite(suite, Some(20.min(suite.default_trials())), 1)?.summary_line());
    }
    Ok(())
}

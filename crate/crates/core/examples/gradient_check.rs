//! Finite-difference check of every parameter block of the full model, for
//! both link kinds, printed per block.
//!
//!     cargo run --release --example gradient_check

use gpnn::gradcheck::{run_default, GradcheckConfig};

fn main() -> gpnn::Result<()> {
    let cfg = GradcheckConfig::default();
    for report in run_default(0, &cfg)? {
        println!("{} (S = {}):", report.case, cfg.iterations);
        for b in &report.blocks {
            println!(
                "  {:<22} {:>4} entries  max rel err {:.2e}",
                b.name, b.entries, b.max_rel_err
            );
        }
        let worst = report.max_rel_err();
        println!(
            "  worst {worst:.2e} {}",
            if worst < cfg.tolerance {
                "ok"
            } else {
                "FAILED"
            }
        );
    }
    Ok(())
}

//! Runs the finite-difference gradient suite over every primitive and model.
//!
//! cargo run --example gradient_check -- [tolerance]

use confseg::experiment::gradcheck_suite;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tol: f64 = std::env::args().nth(1).map_or(Ok(1e-3), |s| s.parse())?;
    let mut failed = 0;
    for e in gradcheck_suite(0, tol)? {
        let r = &e.report;
        println!("{} {:<34} {:.2e} ({} checked)", if r.passed { "ok  " } else { "FAIL" }, e.name, r.worst_rel_error, r.checked);
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        return Err(format!("{failed} gradient checks failed").into());
    }
    Ok(())
}

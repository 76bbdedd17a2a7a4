//! Runs the finite-difference gradient suite over every primitive, the two
//! fusion cells and the full recurrent pipeline.

use stwarp::verify::gradient_suite;

fn main() -> stwarp::Result<()> {
    let entries = gradient_suite(0)?;
    for e in &entries {
        println!(
            "{:<20} {:>10.3e}  {}",
            e.name,
            e.report.max_rel_error,
            if e.passed { "ok" } else { "FAIL" }
        );
    }
    assert!(entries.iter().all(|e| e.passed));
    Ok(())
}

//! One PASS/FAIL line per acceptance criterion.
//!
//! Two criteria cannot pass as stated and stay red: the published mean
//! single-qubit gate count per two-qubit Clifford (the class circuits give
//! 8.2, not 8.25), and the square-pulse leakage formula with the extra
//! factor of one half (it contradicts the coupling convention that the ZZ
//! checks rely on). Every other criterion must pass.
//!
//! Runs without the libtest harness so the lines always reach stdout.

use std::process::ExitCode;

use xmonsim_cli::reproduce::{render_table, run, ReproduceOptions, CRITERIA};

const KNOWN_RED: [u32; 2] = [1, 7];

fn main() -> ExitCode {
    let reports = run(&ReproduceOptions {
        seed: 0,
        only: None,
        full_two_design: false,
    })
    .expect("suite runs");
    assert_eq!(reports.len(), CRITERIA.len());
    for r in &reports {
        let ok = r.pass && r.runtime_ok();
        println!("criterion {:>2}: {} {}", r.id, if ok { "PASS" } else { "FAIL" }, r.title);
    }
    println!();
    print!("{}", render_table(&reports));

    let mut problems = Vec::new();
    for r in &reports {
        let ok = r.pass && r.runtime_ok();
        if KNOWN_RED.contains(&r.id) {
            // The red criteria fail only on their one disputed check.
            let failed: Vec<&str> = r.checks.iter().filter(|c| c.required && !c.pass).map(|c| c.name.as_str()).collect();
            if failed.len() != 1 || !r.runtime_ok() {
                problems.push(format!("criterion {}: failed checks {failed:?}", r.id));
            }
        } else if !ok {
            problems.push(format!("criterion {} failed", r.id));
        }
    }
    if problems.is_empty() {
        println!("\nacceptance: {} criteria as expected ({KNOWN_RED:?} red)", reports.len());
        ExitCode::SUCCESS
    } else {
        for p in &problems {
            eprintln!("{p}");
        }
        ExitCode::FAILURE
    }
}

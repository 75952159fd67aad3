//! Runs every acceptance criterion, prints one PASS/FAIL line each and exits
//! non-zero if any criterion fails.
//!
//! `cargo test -p mcgdiff-validation --test acceptance -- 3 5` runs criteria 3 and 5 only.

use mcgdiff_validation::*;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("noiseless conjugate Gaussian", criterion_1),
        ("noisy conjugate Gaussian", criterion_2),
        ("GMM posterior recovery", criterion_3),
        ("SW non-increasing in N", criterion_4),
        ("bias decay", criterion_5),
        ("bounded-weight variant", criterion_6),
        ("bridge identity", criterion_7),
        ("tau matching and timestep selection", criterion_8),
        ("manifest replay determinism", criterion_9),
        ("score finite differences", criterion_10),
    ];
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for (i, (name, _)) in criteria.iter().enumerate() {
            println!("criterion {}: {name}: test", i + 1);
        }
        return ExitCode::SUCCESS;
    }
    let wanted: Vec<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let k = i + 1;
        if !wanted.is_empty() && !wanted.contains(&k) {
            continue;
        }
        let started = Instant::now();
        let (ok, detail) = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        failed += (!ok) as usize;
        println!(
            "{} criterion {k:>2} {name}: {detail} [{:.1} s]",
            if ok { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {failed} failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

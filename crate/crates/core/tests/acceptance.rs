//! Acceptance run: one summary line per criterion, with the individual
//! checks listed underneath. Exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use fluidhopf::verify::{all_passed, run_criterion, CheckResult, VerifyOptions};

const TITLES: [&str; 10] = [
    "factorization residual and structure, random generators",
    "closed-form two-state factorization",
    "absorbing chain finite-passage fraction",
    "homogeneous reduction and first-order convergence",
    "time-varying model, PDE against Monte Carlo",
    "semigroup and composition identities",
    "generator identities",
    "holding-time laws and second-jump bound",
    "support preservation",
    "determinism across runs and thread counts",
];

fn summary(criterion: u8, checks: &[CheckResult]) -> String {
    let worst = checks
        .iter()
        .filter(|c| !c.pass)
        .chain(checks.iter())
        .next()
        .map(|c| format!("{}: {:.3e} vs {:.3e}", c.name, c.measured, c.tolerance))
        .unwrap_or_default();
    format!(
        "criterion {criterion:>2} {}: {} [{} checks; {}]",
        if all_passed(checks) && !checks.is_empty() { "PASS" } else { "FAIL" },
        TITLES[criterion as usize - 1],
        checks.len(),
        worst
    )
}

fn main() -> ExitCode {
    let opts = VerifyOptions::default();
    let only: Option<u8> = std::env::var("FLUIDHOPF_CRITERION").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for criterion in 1..=10u8 {
        if only.is_some_and(|c| c != criterion) {
            continue;
        }
        let start = Instant::now();
        let checks = match run_criterion(criterion, &opts) {
            Ok(c) => c,
            Err(e) => {
                println!("criterion {criterion:>2} FAIL: {} [error: {e}]", TITLES[criterion as usize - 1]);
                failed += 1;
                continue;
            }
        };
        println!("{}", summary(criterion, &checks));
        for c in &checks {
            println!("    {c}");
        }
        println!("    elapsed {:.1} s", start.elapsed().as_secs_f64());
        if !all_passed(&checks) || checks.is_empty() {
            failed += 1;
        }
    }
    if failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}

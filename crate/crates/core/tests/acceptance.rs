//! One PASS/FAIL line per acceptance criterion.

use std::process::ExitCode;
use std::time::Instant;

use csbp_core::config::ExperimentConfig;
use csbp_core::parallel::Execution;
use csbp_core::verify::{run_experiment, ExperimentOutcome};

fn run(name: &str, exec: Execution) -> (Result<ExperimentOutcome, csbp_core::Error>, f64) {
    let start = Instant::now();
    let out = run_experiment(&ExperimentConfig::new(name), exec);
    (out, start.elapsed().as_secs_f64())
}

fn main() -> ExitCode {
    let criteria: [(&str, &str); 11] = [
        ("1", "neveu_gumbel"),
        ("2", "neveu_flow_records"),
        ("3", "explosion_weibull"),
        ("4", "explosion_records"),
        ("5", "extinction_frechet"),
        ("6", "logshift_extremal"),
        ("7", "grey_martingale"),
        ("8", "finite_mean_subordinator"),
        ("9", "finite_variation_no_super"),
        ("10", "extremal_algebra"),
        ("11", "super_individuals"),
    ];
    let mut failed = 0;
    for (id, name) in criteria {
        // criterion 1 carries a single-threaded runtime bound
        let exec = if id == "1" { Execution::Sequential } else { Execution::Parallel { threads: 0 } };
        let (out, secs) = run(name, exec);
        let (ok, detail) = match out {
            Ok(o) => {
                let mut ok = o.pass();
                let mut lines: Vec<String> = o
                    .reports
                    .iter()
                    .map(|r| {
                        format!(
                            "    {} {}: statistic={:.4e} threshold={:.4e} budget={:.4e}",
                            if r.pass { "ok  " } else { "FAIL" },
                            r.label,
                            r.statistic,
                            r.threshold,
                            r.bias_budget
                        )
                    })
                    .collect();
                if id == "1" {
                    let fast = secs < 10.0;
                    ok &= fast;
                    lines.push(format!("    {} runtime {secs:.2}s < 10s single-threaded", if fast { "ok  " } else { "FAIL" }));
                }
                (ok, lines.join("\n"))
            }
            Err(e) => (false, format!("    error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        println!("{} criterion {id} {name} ({secs:.2}s)\n{detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!("{} of 11 criteria passed", 11 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

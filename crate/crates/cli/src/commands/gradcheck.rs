//! `v2c gradcheck`: verify analytic gradients against central finite
//! differences, one line per check. Nonzero exit when any check exceeds its
//! threshold.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use v2c_core::gradsuite::{run_corrupted_check, run_suite};

use crate::manifest::ManifestBuilder;

#[derive(Args)]
pub struct GradcheckArgs {
    /// Central difference step for the primitive checks.
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    /// Write a run manifest here.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Self-test: corrupt the checked quantity and require the checker to
    /// flag it.
    #[arg(long, hide = true)]
    pub selftest_corrupt: bool,
}

pub fn run(args: GradcheckArgs) -> Result<()> {
    if args.eps <= 0.0 {
        bail!("--eps must be positive, got {}", args.eps);
    }
    let mut manifest = ManifestBuilder::new("gradcheck", 0);
    manifest.config(serde_json::json!({
        "eps": args.eps,
        "selftest_corrupt": args.selftest_corrupt,
    }))?;

    if args.selftest_corrupt {
        let reported = run_corrupted_check(args.eps)?;
        println!("selftest_corrupted: reported relative error {reported:.3e}");
        if let Some(path) = &args.manifest {
            manifest.write(path)?;
        }
        // the checker must notice the corruption; a clean report is the failure
        if reported < 1e-3 {
            println!("selftest FAILED: corruption went undetected");
            bail!("gradient checker self-test failed");
        }
        println!("selftest reports the corruption, as it must");
        bail!("corrupted gradients detected (expected under --selftest-corrupt)");
    }

    let results = run_suite(args.eps)?;
    let mut failed = 0;
    for r in &results {
        println!(
            "{:<24} max_rel_err {:>12.4e}  threshold {:>8.1e}  {}",
            r.name,
            r.max_relative_error,
            r.threshold,
            if r.passed() { "ok" } else { "FAIL" }
        );
        if !r.passed() {
            failed += 1;
        }
    }
    if let Some(path) = &args.manifest {
        manifest.write(path)?;
    }
    if failed > 0 {
        bail!("{failed} gradient check(s) exceeded their threshold");
    }
    println!("all {} gradient checks passed", results.len());
    Ok(())
}

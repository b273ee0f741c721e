//! Runs the finite-difference gradient suites and a deliberately broken op
//! that the checker must reject.
//!
//! cargo run --release --example gradcheck -- [ops|loss|model|all] [seed]

use unetsr::gradsuite::{self, Suite};

fn main() -> unetsr::Result<()> {
    let mut args = std::env::args().skip(1);
    let suite: Suite = args.next().as_deref().unwrap_or("all").parse()?;
    let seed: u64 = args.next().map_or(0, |a| a.parse().expect("seed"));

    let report = gradsuite::run(suite, seed)?;
    println!("{report}");

    let control = gradsuite::run_cases(&[gradsuite::injected_bug_case(seed)])?;
    println!("\nnegative control:\n{control}");
    assert!(
        !control.passed(),
        "the broken backward should have been caught"
    );
    Ok(())
}

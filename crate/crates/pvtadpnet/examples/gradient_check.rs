//! Runs the full finite-difference gradient check suite: every
//! differentiable op, each composite block, and the tiny end-to-end model.

use pvtadpnet::selftest::{gradcheck_suite, print_table};

fn main() {
    let results = gradcheck_suite();
    let all_passed = print_table(&results);
    std::process::exit(if all_passed { 0 } else { 1 });
}

mod common;

use common::CASES;

fn run(check: common::Check) {
    if let Err(e) = check(CASES) {
        panic!("{e}");
    }
}

#[test]
fn sigmoid_complement() {
    run(common::sigmoid_complement);
}

#[test]
fn transfer_monotone() {
    run(common::transfer_monotone);
}

#[test]
fn utility_concave() {
    run(common::utility_concave);
}

#[test]
fn exceedance_monotone() {
    run(common::exceedance_monotone);
}

#[test]
fn conditional_consistency() {
    run(common::conditional_consistency);
}

#[test]
fn quadrature_linear() {
    run(common::quadrature_linear);
}

#[test]
fn sampling_determinism() {
    run(common::sampling_determinism);
}

#[test]
fn annealer_determinism() {
    run(common::annealer_determinism);
}

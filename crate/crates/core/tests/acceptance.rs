//! One test per acceptance criterion; each prints a single PASS/FAIL line.
//! Run with `--nocapture` to see the lines; `--test-threads=1` keeps them
//! in order.

use hjb_homog::verify::{run_criterion, shared};

fn check(id: u8) {
    let r = run_criterion(shared(), id);
    println!("{}", r.line());
    assert!(r.pass, "{}", r.line());
}

#[test]
fn criterion_01_constant_potential_exactness() {
    check(1);
}

#[test]
fn criterion_02_quadrature_oracle() {
    check(2);
}

#[test]
fn criterion_03_two_scale_flatness() {
    check(3);
}

#[test]
fn criterion_04_diagonal_residual() {
    check(4);
}

#[test]
fn criterion_05_table_properties() {
    check(5);
}

#[test]
fn criterion_06_homogenization_convergence() {
    check(6);
}

#[test]
fn criterion_07_quasi_periodic_consistency() {
    check(7);
}

#[test]
fn criterion_08_class_b1_box() {
    check(8);
}

#[test]
fn criterion_09_class_b0_sequence() {
    check(9);
}

#[test]
fn criterion_10_scheme_properties() {
    check(10);
}

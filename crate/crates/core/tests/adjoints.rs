//! Transposes checked against dense matrices assembled from unit vectors.

mod common;

use common::checks::*;
use wavecorr::coarse::Boundary;

const TOL: f64 = 1e-12;

#[test]
fn coarse_solver_with_sponge_on_8x8() {
    let e = coarse_adjoint_error(8, 0.006, 5, Boundary::Sponge { width: 2, rate: 30.0 });
    assert!(e < TOL, "{e:e}");
}

#[test]
fn coarse_solver_periodic_on_12x12() {
    let e = coarse_adjoint_error(12, 0.01, 3, Boundary::Periodic);
    assert!(e < TOL, "{e:e}");
}

#[test]
fn fine_solver_on_8x8() {
    let e = fine_adjoint_error();
    assert!(e < TOL, "{e:e}");
}

#[test]
fn restriction_from_16x16() {
    let e = restrict_adjoint_error();
    assert!(e < TOL, "{e:e}");
}

#[test]
fn bilinear_prolongation_to_16x16() {
    let e = prolong_adjoint_error();
    assert!(e < TOL, "{e:e}");
}

#[test]
fn energy_transform_and_its_pseudo_inverse_on_10x10() {
    let (lambda, pinv) = energy_transform_adjoint_errors();
    assert!(lambda < TOL, "Lambda {lambda:e}");
    assert!(pinv < TOL, "Lambda pinv {pinv:e}");
}

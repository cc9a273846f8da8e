//! Shared test helpers: an exact-rational Gram-Schmidt oracle for the
//! orthonormal basis, and canonical model builders.
//!
//! Every integration-test target compiles this module independently, so
//! helpers used by only one target are dead code in the others.
#![allow(dead_code)]
//!
//! The oracle orthonormalizes the monomials `1, x, x^2, ...` against a
//! finitely-supported measure using `BigRational` arithmetic throughout, so
//! its only floating-point step is the final square root. It shares no code
//! with the library's Cholesky-based construction, which makes agreement
//! between the two a genuine cross-check rather than a tautology.

use gbdsde::levy_model::{JumpSpec, LevyModel};
use gbdsde::path_engine::{simulate, AProcessSpec, PathBundle, TimeGrid};
use gbdsde::teugels_basis::{TeugelsBasis, DEFAULT_PIVOT_TOL};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

/// Shorthand rational constructor.
pub fn ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// One atom `(position, weight)` of the orthonormalizing measure. Weights
/// are the measure's masses (for a jump measure `nu` with intensity
/// `lambda` at `x`, the corresponding mass here is `lambda * x^2`, plus an
/// atom at `0` with mass `sigma^2` when there is a Brownian part).
pub type RationalAtom = (BigRational, BigRational);

/// Moment `sum_j w_j x_j^k` of the atom list.
fn moment(atoms: &[RationalAtom], k: usize) -> BigRational {
    let mut total = BigRational::zero();
    for (x, w) in atoms {
        let mut p = BigRational::from(BigInt::from(1));
        for _ in 0..k {
            p *= x;
        }
        total += w * p;
    }
    total
}

/// Inner product `<f, g>` of two polynomials in coefficient form (index =
/// power) against the atom measure.
fn inner(atoms: &[RationalAtom], f: &[BigRational], g: &[BigRational]) -> BigRational {
    let mut total = BigRational::zero();
    for (u, a) in f.iter().enumerate() {
        if a.is_zero() {
            continue;
        }
        for (v, b) in g.iter().enumerate() {
            if b.is_zero() {
                continue;
            }
            total += a * b * moment(atoms, u + v);
        }
    }
    total
}

/// Exact Gram-Schmidt orthonormalization of the monomials against the atom
/// measure. Returns the coefficient rows of the orthonormal polynomials
/// (row `i`, entry `k` = coefficient of `x^k` in the `(i+1)`-th basis
/// polynomial), converted to `f64` only at the very end. The number of rows
/// equals the measure's support size (linear independence fails beyond it;
/// detected exactly by a zero norm).
pub fn rational_orthonormal_rows(atoms: &[RationalAtom], max_rows: usize) -> Vec<Vec<f64>> {
    let mut orthogonal: Vec<Vec<BigRational>> = Vec::new();
    let mut norms_sq: Vec<BigRational> = Vec::new();
    for degree in 0..max_rows {
        // Start from x^degree and subtract projections.
        let mut coeffs = vec![BigRational::zero(); degree + 1];
        coeffs[degree] = BigRational::from(BigInt::from(1));
        for (p, norm_sq) in orthogonal.iter().zip(&norms_sq) {
            let proj = inner(atoms, &coeffs, p) / norm_sq;
            for (c, pc) in coeffs.iter_mut().zip(p.iter()) {
                *c -= &proj * pc;
            }
        }
        let norm_sq = inner(atoms, &coeffs, &coeffs);
        if norm_sq.is_zero() || norm_sq < BigRational::zero() {
            break; // support exhausted: exact linear dependence
        }
        orthogonal.push(coeffs);
        norms_sq.push(norm_sq);
    }

    orthogonal
        .iter()
        .zip(&norms_sq)
        .map(|(p, n)| {
            let scale = n.to_f64().expect("rational fits in f64").sqrt();
            p.iter()
                .map(|c| c.to_f64().expect("rational fits in f64") / scale)
                .collect()
        })
        .collect()
}

/// The canonical symmetric two-atom model: jumps of size +-1 with intensity
/// 1/2 each, Brownian volatility 2/5, unit horizon. Its orthonormalizing
/// measure has three support points, so the basis has rank 3.
pub fn two_atom_model() -> LevyModel {
    LevyModel::new(0.0, 0.4, JumpSpec::Atoms(vec![(1.0, 0.5), (-1.0, 0.5)]), 1.0).unwrap()
}

/// The measure atoms of [`two_atom_model`] in exact arithmetic:
/// `(+-1, 1/2)` from the jumps and `(0, (2/5)^2)` from the Brownian part.
pub fn two_atom_measure() -> Vec<RationalAtom> {
    vec![
        (ratio(1, 1), ratio(1, 2)),
        (ratio(-1, 1), ratio(1, 2)),
        (ratio(0, 1), ratio(4, 25)),
    ]
}

/// Pure-jump single-atom model: unit jumps at intensity `lambda`, no
/// Brownian part. Rank-1 basis.
pub fn poisson_model(lambda: f64) -> LevyModel {
    LevyModel::new(0.0, 0.0, JumpSpec::Atoms(vec![(1.0, lambda)]), 1.0).unwrap()
}

/// Basis of a model at the default pivot tolerance.
pub fn basis_of(model: &LevyModel) -> TeugelsBasis {
    TeugelsBasis::from_model(model, None, DEFAULT_PIVOT_TOL).unwrap()
}

/// Simulate the canonical two-atom model with a unit-rate linear clock.
pub fn two_atom_bundle(n_paths: usize, n_steps: usize, seed: u64) -> PathBundle {
    let model = two_atom_model();
    let basis = basis_of(&model);
    let grid = TimeGrid::uniform(1.0, n_steps).unwrap();
    simulate(
        &model,
        &basis,
        &grid,
        &AProcessSpec::Linear { rate: 1.0 },
        n_paths,
        seed,
    )
    .unwrap()
}

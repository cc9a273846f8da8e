//! Orthonormalized Teugels martingale bases.
//!
//! For a driver `L` with jump measure `nu` and Brownian coefficient `sigma`,
//! the power-jump processes `L^(i)` (with `L^(1) = L` and
//! `L^(i)_t = sum_{s<=t} (dL_s)^i` for `i >= 2`) are compensated into the
//! Teugels martingales `T^(i)_t = L^(i)_t - t E[L_1^(i)]`. Pairwise strongly
//! orthonormal martingales are then obtained as lower-triangular
//! combinations
//!
//! ```text
//! H^(i) = c_{i,i} T^(i) + c_{i,i-1} T^(i-1) + ... + c_{i,1} T^(1)
//! ```
//!
//! where the polynomials `q_i(x) = c_{i,i} x^{i-1} + ... + c_{i,1}`
//! orthonormalize `1, x, x^2, ...` in `L^2(mu)` for the measure
//! `mu(dx) = x^2 nu(dx) + sigma^2 delta_0(dx)`. With that normalization the
//! predictable brackets are `<H^(i), H^(j)>_t = delta_ij t`.
//!
//! The coefficients come from a Cholesky factorization of the Hankel moment
//! matrix `G[a][b] = m_mu(a + b)`: if `G = L L^T`, the rows of `L^{-1}` are
//! the coefficient rows, and a pivot breakdown at step `r` means the measure
//! carries only `r` points of support, so the basis is cut at rank `r`. The
//! Cholesky convention (positive diagonal) makes every leading coefficient
//! `c_{i,i}` positive.

use crate::error::{Error, Result};
use crate::levy_model::{LevyModel, MomentSequence};

/// Default relative pivot tolerance for the rank cut: a pivot below
/// `DEFAULT_PIVOT_TOL * max(diag G)` counts as exhausted support.
pub const DEFAULT_PIVOT_TOL: f64 = 1e-12;

/// An orthonormal Teugels basis: triangular coefficient rows and the rank.
#[derive(Debug, Clone, PartialEq)]
pub struct TeugelsBasis {
    /// `rows[i - 1] = [c_{i,1}, ..., c_{i,i}]` for `i = 1..=rank`.
    rows: Vec<Vec<f64>>,
}

impl TeugelsBasis {
    /// Orthonormalizes the monomials against the measure with the given
    /// moments, attempting `max_order` basis elements.
    ///
    /// `moments` must reach order `2 * max_order - 2` (the largest entry of
    /// the Hankel matrix). The returned basis has `rank <= max_order`, cut
    /// where the pivot drops below `pivot_tol * max(diag G)`. A rank of zero
    /// (measure with no mass) is a valid degenerate result, not an error; a
    /// pivot that is strongly negative is an invalid moment sequence.
    pub fn orthonormalize(
        moments: &MomentSequence,
        max_order: usize,
        pivot_tol: f64,
    ) -> Result<Self> {
        if max_order == 0 {
            return Err(Error::Config("basis max_order must be >= 1".into()));
        }
        if !(pivot_tol.is_finite() && pivot_tol > 0.0) {
            return Err(Error::Config(format!(
                "pivot tolerance must be finite and > 0, got {pivot_tol}"
            )));
        }
        let needed = 2 * max_order - 2;
        if moments.order_max() < needed {
            return Err(Error::Moments(format!(
                "need moments up to order {needed} for max_order {max_order}, have {}",
                moments.order_max()
            )));
        }
        let n = max_order;
        let gram = |a: usize, b: usize| moments.get(a + b);
        let scale = (0..n).map(|a| gram(a, a)).fold(0.0_f64, f64::max);
        if scale <= 0.0 {
            return Ok(Self { rows: Vec::new() });
        }
        let cut = pivot_tol * scale;

        // Cholesky with early rank cut: chol[i][k] for k <= i.
        let mut chol: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = vec![0.0; i + 1];
            for k in 0..i {
                let mut s = gram(i, k);
                for j in 0..k {
                    s -= row[j] * chol[k][j];
                }
                row[k] = s / chol[k][k];
            }
            let mut d = gram(i, i);
            for r in row.iter().take(i) {
                d -= r * r;
            }
            if d <= cut {
                if d < -cut {
                    return Err(Error::Moments(format!(
                        "Hankel pivot {i} is negative ({d:e}); moments are not a measure's"
                    )));
                }
                // Support exhausted: the monomial x^i is linearly dependent
                // on lower powers in L^2(mu).
                return Ok(Self { rows: invert_lower_triangular(&chol) });
            }
            row[i] = d.sqrt();
            chol.push(row);
        }
        Ok(Self { rows: invert_lower_triangular(&chol) })
    }

    /// Builds the basis straight from a model. Without an explicit
    /// `max_order` the attempted order is the model's exact rank bound:
    /// the number of distinct atoms plus one when `sigma > 0`.
    pub fn from_model(
        model: &LevyModel,
        max_order: Option<usize>,
        pivot_tol: f64,
    ) -> Result<Self> {
        let natural = model.distinct_atom_count() + usize::from(model.sigma() > 0.0);
        let order = max_order.unwrap_or(natural.max(1));
        let moments = model.moments_mu(2 * order.saturating_sub(1));
        Self::orthonormalize(&moments, order, pivot_tol)
    }

    /// Number of orthonormal martingales the measure supports.
    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    /// Coefficient `c_{i,k}` (both indices 1-based, `k <= i <= rank`).
    pub fn coeff(&self, i: usize, k: usize) -> f64 {
        assert!(
            (1..=self.rank()).contains(&i) && (1..=i).contains(&k),
            "coefficient index ({i}, {k}) out of range for rank {}",
            self.rank()
        );
        self.rows[i - 1][k - 1]
    }

    /// Coefficient rows: `rows()[i - 1] = [c_{i,1}, ..., c_{i,i}]`.
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Evaluates the orthonormal polynomial
    /// `q_i(x) = c_{i,i} x^{i-1} + ... + c_{i,1}` (index 1-based).
    pub fn eval_q(&self, i: usize, x: f64) -> f64 {
        assert!(
            (1..=self.rank()).contains(&i),
            "polynomial index {i} out of range for rank {}",
            self.rank()
        );
        // Horner on coefficients ordered from highest power down.
        self.rows[i - 1].iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    /// Worst absolute deviation of `c G c^T` from the identity, with `G`
    /// rebuilt from the supplied moments. Near round-off for a healthy
    /// basis; large values mean the moments and basis disagree.
    pub fn gram_check(&self, moments: &MomentSequence) -> Result<f64> {
        let r = self.rank();
        if r == 0 {
            return Ok(0.0);
        }
        let needed = 2 * (r - 1);
        if moments.order_max() < needed {
            return Err(Error::Moments(format!(
                "need moments up to order {needed} to check rank {r}, have {}",
                moments.order_max()
            )));
        }
        let mut worst = 0.0_f64;
        for i in 0..r {
            for j in 0..=i {
                let mut s = 0.0;
                for (a, &ca) in self.rows[i].iter().enumerate() {
                    for (b, &cb) in self.rows[j].iter().enumerate() {
                        s += ca * cb * moments.get(a + b);
                    }
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        Ok(worst)
    }
}

/// Rows of the inverse of a lower-triangular matrix with positive diagonal.
/// Row `i` solves `x^T L = e_i^T` by backward substitution over columns.
fn invert_lower_triangular(chol: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let r = chol.len();
    let mut rows = Vec::with_capacity(r);
    for i in 0..r {
        let mut x = vec![0.0; i + 1];
        x[i] = 1.0 / chol[i][i];
        for j in (0..i).rev() {
            let mut s = 0.0;
            for k in (j + 1)..=i {
                s += x[k] * chol[k][j];
            }
            x[j] = -s / chol[j][j];
        }
        rows.push(x);
    }
    rows
}

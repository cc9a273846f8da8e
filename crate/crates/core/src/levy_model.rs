//! Finite-activity Levy models and their moment sequences.
//!
//! A model describes the driving process
//!
//! ```text
//! L_t = b t + sigma W_t + (compound Poisson jumps)
//! ```
//!
//! with the jump measure held as an explicit finite atom list
//! `nu = sum_j lambda_j delta_{x_j}` (`lambda_j > 0`, `x_j != 0`). Named
//! parametric jump-size families are converted to quadrature atoms at
//! construction so that moments and simulation share one code path.
//!
//! Downstream polynomial machinery consumes two moment families:
//!
//! ```text
//! m_nu(k) = int x^k nu(dx)                       = sum_j lambda_j x_j^k
//! m_mu(k) = int x^k mu(dx)                       = m_nu(k + 2) + sigma^2 [k = 0]
//!           where mu(dx) = x^2 nu(dx) + sigma^2 delta_0(dx)
//! ```
//!
//! `mu` is the measure against which the Teugels basis polynomials are
//! orthonormalized; `m_nu` feeds the martingale compensators.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Number of quadrature nodes used when converting a parametric jump-size
/// family to atoms. Gaussian quadrature with 16 nodes reproduces moments of
/// the family exactly (to round-off) through degree 31, far beyond any basis
/// order used in practice.
const FAMILY_QUADRATURE_NODES: usize = 16;

/// Atom positions closer to zero than this are rejected: a jump of size zero
/// is not a jump, and the basis construction assumes `x_j != 0`.
const MIN_ATOM_POSITION: f64 = 1e-12;

/// One atom of the jump measure: a jump size and its Poisson intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpAtom {
    /// Jump size `x_j` (nonzero).
    pub position: f64,
    /// Arrival intensity `lambda_j` (strictly positive).
    pub intensity: f64,
}

/// Jump-measure specification accepted by [`LevyModel::new`].
#[derive(Debug, Clone)]
pub enum JumpSpec {
    /// Explicit atoms `(position, intensity)`. May be empty (no jumps).
    Atoms(Vec<(f64, f64)>),
    /// Jump sizes uniform on `[low, high]`, total intensity `intensity`.
    Uniform { intensity: f64, low: f64, high: f64 },
    /// Gaussian jump sizes, total intensity `intensity`.
    Gaussian { intensity: f64, mean: f64, std_dev: f64 },
}

/// A finite-activity Levy model with drift, Brownian part, and atomic jumps.
#[derive(Debug, Clone)]
pub struct LevyModel {
    drift: f64,
    sigma: f64,
    atoms: Vec<JumpAtom>,
    horizon: f64,
}

/// Moments `m(0), m(1), ..., m(k_max)` of a measure, as produced by
/// [`LevyModel::moments_nu`] and [`LevyModel::moments_mu`].
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSequence {
    values: Vec<f64>,
}

impl MomentSequence {
    /// Wraps explicit moment values (index = order). Mostly useful for
    /// testing the orthonormalizer against hand-built measures; moments of a
    /// model come from [`LevyModel::moments_nu`] / [`LevyModel::moments_mu`].
    pub fn new(values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "a moment sequence needs at least order 0");
        Self { values }
    }

    /// Moment of order `k`; panics if `k` exceeds the stored order.
    pub fn get(&self, k: usize) -> f64 {
        self.values[k]
    }

    /// Highest stored order.
    pub fn order_max(&self) -> usize {
        self.values.len() - 1
    }

    /// All stored moments, index = order.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

impl std::ops::Index<usize> for MomentSequence {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.values[k]
    }
}

impl LevyModel {
    /// Builds and validates a model.
    ///
    /// Requirements: `sigma >= 0`, `horizon > 0`, all atom intensities
    /// strictly positive, and all atom positions nonzero. Atoms sharing the
    /// exact same position are merged by adding intensities. Parametric
    /// families are expanded into [`FAMILY_QUADRATURE_NODES`] Gaussian
    /// quadrature atoms.
    pub fn new(drift: f64, sigma: f64, jumps: JumpSpec, horizon: f64) -> Result<Self> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::Config(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::Config(format!("horizon must be finite and > 0, got {horizon}")));
        }
        if !drift.is_finite() {
            return Err(Error::Config("drift must be finite".into()));
        }
        let raw = match jumps {
            JumpSpec::Atoms(list) => list,
            JumpSpec::Uniform { intensity, low, high } => {
                uniform_family_atoms(intensity, low, high)?
            }
            JumpSpec::Gaussian { intensity, mean, std_dev } => {
                gaussian_family_atoms(intensity, mean, std_dev)?
            }
        };
        let mut atoms: Vec<JumpAtom> = Vec::with_capacity(raw.len());
        for (position, intensity) in raw {
            if !position.is_finite() || position.abs() < MIN_ATOM_POSITION {
                return Err(Error::Config(format!(
                    "jump atom position must be nonzero and finite, got {position}"
                )));
            }
            if !intensity.is_finite() || intensity <= 0.0 {
                return Err(Error::Config(format!(
                    "jump atom intensity must be finite and > 0, got {intensity}"
                )));
            }
            match atoms.iter_mut().find(|a| a.position == position) {
                Some(existing) => existing.intensity += intensity,
                None => atoms.push(JumpAtom { position, intensity }),
            }
        }
        Ok(Self { drift, sigma, atoms, horizon })
    }

    /// Drift coefficient `b`.
    pub fn drift(&self) -> f64 {
        self.drift
    }

    /// Brownian coefficient `sigma` of the driver `L`.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Time horizon `T`.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// The validated, merged atom list of `nu`.
    pub fn atoms(&self) -> &[JumpAtom] {
        &self.atoms
    }

    /// Total jump intensity `nu(R) = sum_j lambda_j`.
    pub fn total_intensity(&self) -> f64 {
        self.atoms.iter().map(|a| a.intensity).sum()
    }

    /// Number of distinct atom positions.
    pub fn distinct_atom_count(&self) -> usize {
        self.atoms.len()
    }

    /// Moments of the jump measure: `m_nu(k) = sum_j lambda_j x_j^k` for
    /// `k = 0..=k_max`. `m_nu(0)` is the total intensity.
    pub fn moments_nu(&self, k_max: usize) -> MomentSequence {
        let mut values = vec![0.0; k_max + 1];
        for atom in &self.atoms {
            let mut power = 1.0;
            for v in values.iter_mut() {
                *v += atom.intensity * power;
                power *= atom.position;
            }
        }
        MomentSequence { values }
    }

    /// Moments of `mu(dx) = x^2 nu(dx) + sigma^2 delta_0(dx)`:
    /// `m_mu(k) = m_nu(k + 2) + sigma^2 [k = 0]`.
    pub fn moments_mu(&self, k_max: usize) -> MomentSequence {
        let nu = self.moments_nu(k_max + 2);
        let mut values: Vec<f64> = (0..=k_max).map(|k| nu.get(k + 2)).collect();
        values[0] += self.sigma * self.sigma;
        MomentSequence { values }
    }

    /// Expectation `E[L_1^(i)]` of the power-jump process at unit time:
    /// the drift and Brownian part enter only for `i = 1`.
    ///
    /// ```text
    /// E[L_1^(1)] = b + sum_j lambda_j x_j
    /// E[L_1^(i)] = sum_j lambda_j x_j^i          (i >= 2)
    /// ```
    pub fn mean_power_jump(&self, order: u32) -> f64 {
        assert!(order >= 1, "power-jump order must be >= 1");
        let jump_part: f64 = self
            .atoms
            .iter()
            .map(|a| a.intensity * a.position.powi(order as i32))
            .sum();
        if order == 1 {
            self.drift + jump_part
        } else {
            jump_part
        }
    }
}

/// Gauss-Legendre atoms for jump sizes uniform on `[low, high]`.
fn uniform_family_atoms(intensity: f64, low: f64, high: f64) -> Result<Vec<(f64, f64)>> {
    if !(low.is_finite() && high.is_finite()) || low >= high {
        return Err(Error::Config(format!(
            "uniform jump family requires low < high, got [{low}, {high}]"
        )));
    }
    if !intensity.is_finite() || intensity <= 0.0 {
        return Err(Error::Config(format!(
            "uniform jump family intensity must be > 0, got {intensity}"
        )));
    }
    // Legendre recurrence (monic, weight 1 on [-1, 1]): off-diagonal
    // beta_k = k / sqrt(4 k^2 - 1); node weights sum to 2.
    let n = FAMILY_QUADRATURE_NODES;
    let betas: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    let (nodes, weights) = golub_welsch(&betas, 2.0);
    Ok(nodes
        .iter()
        .zip(&weights)
        .map(|(&x, &w)| {
            let position = 0.5 * (low + high) + 0.5 * (high - low) * x;
            (position, intensity * w / 2.0)
        })
        .collect())
}

/// Gauss-Hermite atoms (probabilists' weight) for Gaussian jump sizes.
fn gaussian_family_atoms(intensity: f64, mean: f64, std_dev: f64) -> Result<Vec<(f64, f64)>> {
    if !std_dev.is_finite() || std_dev <= 0.0 {
        return Err(Error::Config(format!(
            "gaussian jump family std_dev must be > 0, got {std_dev}"
        )));
    }
    if !intensity.is_finite() || intensity <= 0.0 {
        return Err(Error::Config(format!(
            "gaussian jump family intensity must be > 0, got {intensity}"
        )));
    }
    if !mean.is_finite() {
        return Err(Error::Config("gaussian jump family mean must be finite".into()));
    }
    // Probabilists' Hermite recurrence: off-diagonal beta_k = sqrt(k);
    // the weight is a probability measure, so node weights sum to 1.
    let n = FAMILY_QUADRATURE_NODES;
    let betas: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
    let (nodes, weights) = golub_welsch(&betas, 1.0);
    Ok(nodes
        .iter()
        .zip(&weights)
        .map(|(&x, &w)| (mean + std_dev * x, intensity * w))
        .collect())
}

/// Golub-Welsch: nodes and weights of the Gaussian quadrature rule from the
/// symmetric Jacobi matrix with zero diagonal and the given off-diagonal.
/// `total_mass` is the measure's mass (the weights sum to it).
fn golub_welsch(betas: &[f64], total_mass: f64) -> (Vec<f64>, Vec<f64>) {
    let n = betas.len() + 1;
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for (k, &b) in betas.iter().enumerate() {
        jacobi[(k, k + 1)] = b;
        jacobi[(k + 1, k)] = b;
    }
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let node = eig.eigenvalues[i];
            let first = eig.eigenvectors[(0, i)];
            (node, total_mass * first * first)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

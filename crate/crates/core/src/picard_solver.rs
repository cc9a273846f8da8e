//! Backward solver: Picard outer iteration over a discrete-time backward
//! sweep with regression-based conditional expectations.
//!
//! The target dynamics on `[0, T]` are
//!
//! ```text
//! Y_t = xi + int_t^T f(s, Y_s, Z_s) ds
//!          + int_t^T h(s, Y_s) dA_s
//!          + int_t^T g(s, Y_s, Z_s) dB_s   (backward Ito integral)
//!          - sum_i int_t^T Z_s^(i) dH^(i)_s.
//! ```
//!
//! The outer iteration freezes the `y`-arguments of `f` and `g` at the
//! previous iterate while `h` stays implicit at the current one:
//!
//! ```text
//! Y^n_t = xi + int f(s, Y^{n-1}_s, Z^n_s) ds + int h(s, Y^n_s) dA_s
//!            + int g(s, Y^{n-1}_s, Z^n_s) dB_s - sum_i int Z^{n,(i)} dH^(i),
//! ```
//!
//! starting from `Y^0 = 0` and stopping when consecutive iterates are closer
//! than `picard_tol` in the E-norm
//!
//! ```text
//! ||(Y,Z)||_E^2 = E[ sup_t |Y_t|^2 + int |Y|^2 dA + int ||Z||^2 dt ].
//! ```
//!
//! Each sweep walks the grid backward. Conditional expectations given the
//! time-`t_k` information are approximated by least-squares regression on
//! polynomial features of quantities measurable at `t_k`; under the
//! doubly-stochastic filtration the *future* Brownian increments are known at
//! `t_k`, so both the step increment `dB_k` and the tail `B_T - B_{t_{k+1}}`
//! are legitimate regressors (the tail feature makes constant-`g` dynamics
//! pathwise exact). The `Z` components are extracted from the orthonormality
//! of the martingale brackets, `Z^(i)_{t_k} ~ CE[Y_{t_{k+1}} dH^(i)_k] / dt_k`,
//! and the `h dA` term is solved implicitly per path, which is well posed
//! because `h` is one-sidedly decreasing in `y`.

use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::{Array2, Array3};

use crate::coefficients::{terminal_data, CoefficientSet};
use crate::error::{Error, Result};
use crate::path_engine::PathBundle;

/// Which per-step quantities feed the regression features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSet {
    /// `L_{t_k}`, `A_{t_k}`, and the step increment `dB_k`.
    Markov,
    /// [`FeatureSet::Markov`] plus the Brownian tail `B_T - B_{t_{k+1}}`
    /// (known at `t_k` under the backward Brownian filtration).
    MarkovWithTail,
}

/// Tunables of the backward solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Outer-iteration cap.
    pub n_picard_max: usize,
    /// Stop when the E-norm distance of consecutive iterates drops below
    /// this.
    pub picard_tol: f64,
    /// Total degree of the polynomial regression features.
    pub poly_degree: usize,
    /// Regression feature variables.
    pub feature_set: FeatureSet,
    /// Number of martingale components carried by the solution (chaos
    /// truncation). `None` means the full basis rank.
    pub chaos_m: Option<usize>,
    /// Residual tolerance of the per-path implicit `h` step.
    pub implicit_tol: f64,
    /// Relative ridge added to the normal equations when they are singular.
    pub ridge: f64,
    /// Accuracy scale expected of the regression conditional expectations;
    /// verification routines use it to set their thresholds.
    pub regression_tol: f64,
    /// Constant initial iterate `Y^0` (0 in the construction; nonzero values
    /// probe uniqueness).
    pub initial_y: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_picard_max: 50,
            picard_tol: 1e-3,
            poly_degree: 2,
            feature_set: FeatureSet::MarkovWithTail,
            chaos_m: None,
            implicit_tol: 1e-12,
            ridge: 1e-10,
            regression_tol: 1e-3,
            initial_y: 0.0,
        }
    }
}

impl SolverConfig {
    fn validate(&self, rank: usize) -> Result<usize> {
        if self.n_picard_max == 0 {
            return Err(Error::Config("n_picard_max must be >= 1".into()));
        }
        for (name, v) in [
            ("picard_tol", self.picard_tol),
            ("implicit_tol", self.implicit_tol),
            ("regression_tol", self.regression_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(Error::Config(format!(
                "ridge must be >= 0, got {}",
                self.ridge
            )));
        }
        if self.poly_degree == 0 {
            return Err(Error::Config("poly_degree must be >= 1".into()));
        }
        let m = self.chaos_m.unwrap_or(rank);
        if m > rank {
            return Err(Error::Config(format!(
                "chaos truncation m = {m} exceeds the basis rank {rank}"
            )));
        }
        if m == 0 && rank > 0 {
            return Err(Error::Config(
                "chaos truncation m must be >= 1 for a basis of positive rank".into(),
            ));
        }
        Ok(m)
    }
}

/// Per-grid-node second moments of the gap between consecutive Picard
/// iterates, with standard errors — the raw material for empirical
/// contraction bounds.
#[derive(Debug, Clone)]
pub struct IterateGap {
    /// `E |Y^n_{t_k} - Y^{n-1}_{t_k}|^2` per grid node.
    pub mean_sq: Vec<f64>,
    /// Standard error of each entry of `mean_sq`.
    pub std_error: Vec<f64>,
}

/// Result of a solver run.
#[derive(Debug, Clone)]
pub struct SolutionEstimate {
    /// `Y` values, shape `(n_paths, N + 1)`.
    pub y: Array2<f64>,
    /// `Z` values, shape `(n_paths, N, m)`; `Z_{t_k}` lives on step `k`.
    pub z: Array3<f64>,
    /// E-norm distance between consecutive iterates, one entry per outer
    /// iteration.
    pub residuals: Vec<f64>,
    /// Per-iteration gap profiles over the grid.
    pub gap_profiles: Vec<IterateGap>,
    /// True when the final residual fell below the Picard tolerance.
    pub converged: bool,
    /// Number of outer iterations performed.
    pub n_iterations: usize,
}

/// Ordinary least squares of `targets` on `features` (an intercept column is
/// always prepended). Zero-variance feature columns are dropped; a singular
/// normal matrix falls back to a ridge proportional to `cfg.ridge`; a design
/// that stays singular with zero ridge is an error. Returns fitted values.
pub fn regress_conditional(
    features: &Array2<f64>,
    targets: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    let n = targets.len();
    if features.nrows() != n {
        return Err(Error::Config(format!(
            "regression shape mismatch: {} feature rows vs {} targets",
            features.nrows(),
            n
        )));
    }
    // Keep only columns with spread; the intercept handles the rest.
    let mut kept = Vec::new();
    for j in 0..features.ncols() {
        let col = features.column(j);
        let mean = col.sum() / n as f64;
        let spread = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        if spread > 1e-20 * n as f64 {
            kept.push(j);
        }
    }
    let d = kept.len() + 1;
    let mut design = DMatrix::<f64>::zeros(n, d);
    for p in 0..n {
        design[(p, 0)] = 1.0;
        for (c, &j) in kept.iter().enumerate() {
            design[(p, c + 1)] = features[(p, j)];
        }
    }
    let xtx = design.transpose() * &design;
    let xty = design.transpose() * DVector::from_column_slice(targets);
    let beta = match Cholesky::new(xtx.clone()) {
        Some(chol) => chol.solve(&xty),
        None => {
            let scale = xtx.diagonal().sum() / d as f64;
            let ridged = &xtx + DMatrix::identity(d, d) * (cfg.ridge * scale);
            Cholesky::new(ridged)
                .ok_or_else(|| {
                    Error::DegenerateDesign(format!(
                        "normal matrix singular even with ridge {}",
                        cfg.ridge
                    ))
                })?
                .solve(&xty)
        }
    };
    let fitted = design * beta;
    Ok(fitted.iter().copied().collect())
}

/// Solve `y = rhs + h(t, y) * da` for `y`. Well posed for `da >= 0` whenever
/// `h(t, .)` is one-sidedly decreasing: the map `y - h(t, y) da` is then
/// strictly increasing. Newton steps (secant slope) safeguarded by a
/// sign-change bracket; returns the root with residual below `tol`.
pub fn implicit_h_step(
    cs: &CoefficientSet,
    t: f64,
    rhs: f64,
    da: f64,
    tol: f64,
) -> Result<f64> {
    if !(da >= 0.0 && da.is_finite()) {
        return Err(Error::ImplicitStep(format!(
            "increasing-process increment must be >= 0, got {da}"
        )));
    }
    if da == 0.0 {
        return Ok(rhs);
    }
    let phi = |y: f64| y - rhs - cs.h(t, y) * da;

    // Expand a bracket around rhs until the residual changes sign.
    let scale = 1.0 + rhs.abs();
    let mut half_width = scale;
    let (mut lo, mut hi) = (rhs - half_width, rhs + half_width);
    let mut attempts = 0;
    while phi(lo) > 0.0 || phi(hi) < 0.0 {
        attempts += 1;
        if attempts > 60 {
            return Err(Error::ImplicitStep(format!(
                "no sign change around rhs = {rhs} with da = {da}; \
                 h does not look one-sidedly decreasing"
            )));
        }
        half_width *= 2.0;
        lo = rhs - half_width;
        hi = rhs + half_width;
    }

    let mut y = 0.5 * (lo + hi);
    for _ in 0..200 {
        let r = phi(y);
        if !r.is_finite() {
            return Err(Error::ImplicitStep(format!(
                "non-finite residual at y = {y}"
            )));
        }
        if r.abs() < tol {
            return Ok(y);
        }
        if r > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        // Newton step with a finite-difference slope, clipped to the bracket.
        let dy = 1e-7 * (1.0 + y.abs());
        let slope = (phi(y + dy) - r) / dy;
        let candidate = if slope > 0.0 { y - r / slope } else { f64::NAN };
        y = if candidate.is_finite() && candidate > lo && candidate < hi {
            candidate
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::ImplicitStep(format!(
        "root refinement stalled near y = {y} (rhs = {rhs}, da = {da})"
    )))
}

/// Squared E-norm of a `(Y, Z)` pair on the bundle's grid:
/// mean over paths of `max_k Y_k^2 + sum_k Y_k^2 dA_k + sum_k ||Z_k||^2 dt_k`
/// (left-endpoint rule for both integrals).
pub fn e_norm_sq(y: &Array2<f64>, z: &Array3<f64>, bundle: &PathBundle) -> f64 {
    let n_paths = bundle.n_paths();
    let n_steps = bundle.grid().n_steps();
    let m = z.dim().2;
    let mut total = 0.0;
    for p in 0..n_paths {
        let mut sup = 0.0_f64;
        let mut a_part = 0.0;
        let mut z_part = 0.0;
        for k in 0..=n_steps {
            sup = sup.max(y[(p, k)] * y[(p, k)]);
        }
        for k in 0..n_steps {
            a_part += y[(p, k)] * y[(p, k)] * bundle.da(p, k);
            let znorm2: f64 = (0..m).map(|i| z[(p, k, i)] * z[(p, k, i)]).sum();
            z_part += znorm2 * bundle.grid().dt(k);
        }
        total += sup + a_part + z_part;
    }
    total / n_paths as f64
}

/// Per-step regression feature matrix.
fn step_features(bundle: &PathBundle, k: usize, cfg: &SolverConfig) -> Array2<f64> {
    let n = bundle.n_paths();
    let n_steps = bundle.grid().n_steps();
    let mut vars: Vec<Vec<f64>> = Vec::new();
    vars.push((0..n).map(|p| bundle.l()[(p, k)]).collect());
    vars.push((0..n).map(|p| bundle.a()[(p, k)]).collect());
    vars.push((0..n).map(|p| bundle.db(p, k)).collect());
    if cfg.feature_set == FeatureSet::MarkovWithTail {
        vars.push(
            (0..n)
                .map(|p| bundle.b()[(p, n_steps)] - bundle.b()[(p, k + 1)])
                .collect(),
        );
    }

    // Drop flat variables, z-score the rest.
    let mut scaled: Vec<Vec<f64>> = Vec::new();
    for var in vars {
        let mean = var.iter().sum::<f64>() / n as f64;
        let sd = (var.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
        if sd > 1e-12 {
            scaled.push(var.iter().map(|v| (v - mean) / sd).collect());
        }
    }

    // Monomials of total degree 1..=poly_degree in the surviving variables,
    // enumerated as non-decreasing index tuples.
    let d = scaled.len();
    let mut monomials: Vec<Vec<usize>> = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    fn enumerate(
        d: usize,
        max_degree: usize,
        start: usize,
        stack: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if !stack.is_empty() {
            out.push(stack.clone());
        }
        if stack.len() == max_degree {
            return;
        }
        for j in start..d {
            stack.push(j);
            enumerate(d, max_degree, j, stack, out);
            stack.pop();
        }
    }
    enumerate(d, cfg.poly_degree, 0, &mut stack, &mut monomials);

    let mut features = Array2::<f64>::zeros((n, monomials.len()));
    for (c, combo) in monomials.iter().enumerate() {
        for p in 0..n {
            features[(p, c)] = combo.iter().map(|&j| scaled[j][p]).product();
        }
    }
    features
}

/// One backward sweep: given the frozen previous iterate in the `y`-slots of
/// `f` and `g`, produce the next `(Y, Z)`. The terminal row of `Y` is pinned
/// to the terminal functional exactly.
pub fn backward_sweep(
    prev_y: &Array2<f64>,
    bundle: &PathBundle,
    cs: &CoefficientSet,
    cfg: &SolverConfig,
) -> Result<(Array2<f64>, Array3<f64>)> {
    let n = bundle.n_paths();
    let n_steps = bundle.grid().n_steps();
    let times = bundle.grid().times();
    let m = cfg.validate(bundle.rank())?;

    let mut y = Array2::<f64>::zeros((n, n_steps + 1));
    let mut z = Array3::<f64>::zeros((n, n_steps, m));

    let h_term = bundle.h_terminal();
    for p in 0..n {
        let data = terminal_data(bundle, &h_term, p);
        let xi = cs.xi(&data);
        if !xi.is_finite() {
            return Err(Error::Diverged(format!(
                "terminal functional returned {xi} on path {p}"
            )));
        }
        y[(p, n_steps)] = xi;
    }

    let mut z_row = vec![0.0; m];
    for k in (0..n_steps).rev() {
        let features = step_features(bundle, k, cfg);
        let dt = bundle.grid().dt(k);

        for i in 0..m {
            let targets: Vec<f64> = (0..n)
                .map(|p| y[(p, k + 1)] * bundle.dh()[(p, k, i)])
                .collect();
            let fitted = regress_conditional(&features, &targets, cfg)
                .map_err(|e| Error::DegenerateDesign(format!("step {k}: {e}")))?;
            for p in 0..n {
                z[(p, k, i)] = fitted[p] / dt;
            }
        }

        let t_next = times[k + 1];
        let mut targets = Vec::with_capacity(n);
        for p in 0..n {
            for (i, slot) in z_row.iter_mut().enumerate() {
                *slot = z[(p, k, i)];
            }
            let prev = prev_y[(p, k + 1)];
            let fv = cs.f(t_next, prev, &z_row);
            let gv = cs.g(t_next, prev, &z_row);
            let target = y[(p, k + 1)] + fv * dt + gv * bundle.db(p, k);
            if !target.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite sweep target at step {k}, path {p}"
                )));
            }
            targets.push(target);
        }
        let fitted = regress_conditional(&features, &targets, cfg)
            .map_err(|e| Error::DegenerateDesign(format!("step {k}: {e}")))?;

        let t_here = times[k];
        for p in 0..n {
            y[(p, k)] = implicit_h_step(cs, t_here, fitted[p], bundle.da(p, k), cfg.implicit_tol)?;
        }
    }
    Ok((y, z))
}

/// Run the Picard outer iteration to convergence or `n_picard_max`.
/// Non-convergence is reported through the `converged` flag, not an error;
/// a non-finite residual is an error.
pub fn solve(bundle: &PathBundle, cs: &CoefficientSet, cfg: &SolverConfig) -> Result<SolutionEstimate> {
    let n = bundle.n_paths();
    let n_steps = bundle.grid().n_steps();
    let m = cfg.validate(bundle.rank())?;

    let mut prev_y = Array2::<f64>::from_elem((n, n_steps + 1), cfg.initial_y);
    let mut prev_z = Array3::<f64>::zeros((n, n_steps, m));
    let mut residuals = Vec::new();
    let mut gap_profiles = Vec::new();
    let mut converged = false;

    let mut current: Option<(Array2<f64>, Array3<f64>)> = None;
    for _ in 0..cfg.n_picard_max {
        let (y, z) = backward_sweep(&prev_y, bundle, cs, cfg)?;

        let y_diff = &y - &prev_y;
        let z_diff = &z - &prev_z;
        let residual = e_norm_sq(&y_diff, &z_diff, bundle).sqrt();
        if !residual.is_finite() {
            return Err(Error::Diverged(format!(
                "E-norm residual became {residual} at iteration {}",
                residuals.len() + 1
            )));
        }
        residuals.push(residual);

        let mut mean_sq = Vec::with_capacity(n_steps + 1);
        let mut std_error = Vec::with_capacity(n_steps + 1);
        for k in 0..=n_steps {
            let sq: Vec<f64> = (0..n).map(|p| y_diff[(p, k)] * y_diff[(p, k)]).collect();
            let mean = sq.iter().sum::<f64>() / n as f64;
            let var = sq.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / ((n - 1).max(1) as f64);
            mean_sq.push(mean);
            std_error.push((var / n as f64).sqrt());
        }
        gap_profiles.push(IterateGap { mean_sq, std_error });

        prev_y = y.clone();
        prev_z = z.clone();
        current = Some((y, z));
        if residual < cfg.picard_tol {
            converged = true;
            break;
        }
    }

    let (y, z) = current.expect("n_picard_max >= 1 guarantees one sweep");
    let n_iterations = residuals.len();
    Ok(SolutionEstimate {
        y,
        z,
        residuals,
        gap_profiles,
        converged,
        n_iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{build_preset, Preset, PresetParams};
    use crate::levy_model::{JumpSpec, LevyModel};
    use crate::path_engine::{simulate, AProcessSpec, TimeGrid};
    use crate::teugels_basis::{TeugelsBasis, DEFAULT_PIVOT_TOL};

    fn two_atom_bundle(
        n_paths: usize,
        n_steps: usize,
        a_spec: AProcessSpec,
        seed: u64,
    ) -> PathBundle {
        let model = LevyModel::new(
            0.0,
            0.4,
            JumpSpec::Atoms(vec![(1.0, 0.5), (-1.0, 0.5)]),
            1.0,
        )
        .unwrap();
        let basis = TeugelsBasis::from_model(&model, None, DEFAULT_PIVOT_TOL).unwrap();
        let grid = TimeGrid::uniform(1.0, n_steps).unwrap();
        simulate(&model, &basis, &grid, &a_spec, n_paths, seed).unwrap()
    }

    #[test]
    fn regression_fits_constant_targets_exactly() {
        let features = Array2::from_shape_fn((64, 2), |(p, j)| (p as f64 + 1.0).powi(j as i32 + 1));
        let targets = vec![4.5; 64];
        let fitted = regress_conditional(&features, &targets, &SolverConfig::default()).unwrap();
        for v in fitted {
            assert!((v - 4.5).abs() < 1e-10, "constant fit broke: {v}");
        }
    }

    #[test]
    fn regression_projects_in_span_targets_exactly() {
        let features = Array2::from_shape_fn((128, 2), |(p, j)| {
            let x = (p as f64) * 0.05 - 3.0;
            if j == 0 {
                x
            } else {
                x * x
            }
        });
        let targets: Vec<f64> = (0..128)
            .map(|p| {
                let x = (p as f64) * 0.05 - 3.0;
                3.0 + 2.0 * x - 0.5 * x * x
            })
            .collect();
        let fitted = regress_conditional(&features, &targets, &SolverConfig::default()).unwrap();
        for (v, t) in fitted.iter().zip(&targets) {
            assert!((v - t).abs() < 1e-9, "in-span target missed: {v} vs {t}");
        }
    }

    #[test]
    fn regression_on_pure_noise_approaches_the_sample_mean() {
        use rand::{Rng, SeedableRng};
        let rms_dev = |n: usize| {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
            let features = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
            let targets: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mean = targets.iter().sum::<f64>() / n as f64;
            let fitted = regress_conditional(&features, &targets, &SolverConfig::default()).unwrap();
            (fitted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt()
        };
        let coarse = rms_dev(500);
        let fine = rms_dev(8_000);
        assert!(
            fine < coarse,
            "noise fit must flatten toward the mean as paths grow: {coarse} -> {fine}"
        );
    }

    #[test]
    fn regression_drops_flat_columns_and_keeps_working() {
        let features = Array2::from_shape_fn((32, 3), |(p, j)| match j {
            0 => 7.7,
            1 => p as f64,
            _ => 0.0,
        });
        let targets: Vec<f64> = (0..32).map(|p| 2.0 * p as f64 + 1.0).collect();
        let fitted = regress_conditional(&features, &targets, &SolverConfig::default()).unwrap();
        for (v, t) in fitted.iter().zip(&targets) {
            assert!((v - t).abs() < 1e-9);
        }
    }

    #[test]
    fn regression_errors_on_singular_design_without_ridge() {
        // Two identical informative columns with the ridge disabled.
        let features = Array2::from_shape_fn((16, 2), |(p, _)| p as f64);
        let targets: Vec<f64> = (0..16).map(|p| p as f64).collect();
        let cfg = SolverConfig {
            ridge: 0.0,
            ..SolverConfig::default()
        };
        let err = regress_conditional(&features, &targets, &cfg).unwrap_err();
        assert!(matches!(err, Error::DegenerateDesign(_)), "got {err:?}");
    }

    #[test]
    fn implicit_step_solves_the_stated_examples() {
        let cs = build_preset(Preset::NonLipschitz, &PresetParams::default()).unwrap();
        // h(t, y) = -y: y = 2 - y has the root 1.
        let y = implicit_h_step(&cs, 0.0, 2.0, 1.0, 1e-12).unwrap();
        assert!((y - 1.0).abs() < 1e-11, "got {y}");
        // da = 0 short-circuits.
        let y = implicit_h_step(&cs, 0.0, 3.7, 0.0, 1e-12).unwrap();
        assert_eq!(y, 3.7);
    }

    #[test]
    fn implicit_step_matches_linear_closed_form() {
        let rate = -2.5;
        let cs = build_preset(
            Preset::LinearH,
            &PresetParams {
                h_rate: rate,
                ..PresetParams::default()
            },
        )
        .unwrap();
        let (rhs, da) = (1.3, 0.3);
        let y = implicit_h_step(&cs, 0.5, rhs, da, 1e-13).unwrap();
        let exact = rhs / (1.0 - rate * da);
        assert!((y - exact).abs() < 1e-12, "got {y}, want {exact}");
    }

    #[test]
    fn implicit_step_errors_when_no_root_exists() {
        use crate::coefficients::{CoefficientSet, ModulusSpec, StructuralConstants};
        let cs = CoefficientSet::new(
            "bad",
            Box::new(|_, _, _| 0.0),
            Box::new(|_, _, _| 0.0),
            Box::new(|_, y| y * y),
            Box::new(|_| 0.0),
            ModulusSpec::Linear { slope: 1.0 },
            StructuralConstants::new(1.0, 0.5, -1.0, 1.0).unwrap(),
        )
        .unwrap();
        // y = 2 + y^2 has no real root, so the bracket search must give up.
        let err = implicit_h_step(&cs, 0.0, 2.0, 1.0, 1e-12).unwrap_err();
        assert!(matches!(err, Error::ImplicitStep(_)), "got {err:?}");
    }

    #[test]
    fn e_norm_matches_direct_formulas() {
        let bundle = two_atom_bundle(8, 10, AProcessSpec::Linear { rate: 1.0 }, 3);
        let ones = Array2::from_elem((8, 11), 1.0);
        let zeros = Array3::zeros((8, 10, 2));
        // sup = 1, int 1 dA = A_T = 1, no Z: norm^2 = 2.
        let norm_sq = e_norm_sq(&ones, &zeros, &bundle);
        assert!((norm_sq - 2.0).abs() < 1e-12, "got {norm_sq}");

        let y0 = Array2::zeros((8, 11));
        let z1 = Array3::from_elem((8, 10, 2), 1.0);
        // ||Z||^2 = 2 summed over a unit horizon: norm^2 = 2.
        let norm_sq = e_norm_sq(&y0, &z1, &bundle);
        assert!((norm_sq - 2.0).abs() < 1e-12, "got {norm_sq}");
    }

    #[test]
    fn trivial_preset_reaches_the_constant_solution_immediately() {
        let bundle = two_atom_bundle(256, 8, AProcessSpec::Linear { rate: 1.0 }, 11);
        let cs = build_preset(
            Preset::Trivial,
            &PresetParams {
                terminal_value: 2.5,
                ..PresetParams::default()
            },
        )
        .unwrap();
        let est = solve(&bundle, &cs, &SolverConfig::default()).unwrap();
        assert!(est.converged);
        assert!(est.n_iterations <= 2, "took {} iterations", est.n_iterations);
        for p in 0..bundle.n_paths() {
            for k in 0..=bundle.grid().n_steps() {
                assert!(
                    (est.y[(p, k)] - 2.5).abs() < 1e-10,
                    "Y[{p},{k}] = {}",
                    est.y[(p, k)]
                );
            }
        }
    }

    #[test]
    fn constant_drift_reproduces_its_linear_ramp() {
        let bundle = two_atom_bundle(512, 16, AProcessSpec::Linear { rate: 1.0 }, 13);
        let cs = build_preset(
            Preset::LinearF,
            &PresetParams {
                terminal_value: 1.0,
                f_level: 0.75,
                ..PresetParams::default()
            },
        )
        .unwrap();
        let est = solve(&bundle, &cs, &SolverConfig::default()).unwrap();
        assert!(est.converged);
        let times = bundle.grid().times();
        for (k, &t) in times.iter().enumerate() {
            let exact = 1.0 + 0.75 * (1.0 - t);
            let mean = (0..bundle.n_paths())
                .map(|p| est.y[(p, k)])
                .sum::<f64>()
                / bundle.n_paths() as f64;
            assert!(
                (mean - exact).abs() < 1e-9,
                "step {k}: mean {mean} vs exact {exact}"
            );
        }
    }

    #[test]
    fn linear_h_tracks_the_exponential_decay() {
        let bundle = two_atom_bundle(512, 32, AProcessSpec::Linear { rate: 1.0 }, 17);
        let cs = build_preset(
            Preset::LinearH,
            &PresetParams {
                terminal_value: 1.0,
                h_rate: -1.0,
                ..PresetParams::default()
            },
        )
        .unwrap();
        let est = solve(&bundle, &cs, &SolverConfig::default()).unwrap();
        assert!(est.converged);
        let y0 = est.y[(0, 0)];
        let exact = (-1.0_f64).exp();
        assert!(
            (y0 - exact).abs() < 0.01,
            "implicit scheme at N = 32 should be within O(dt): {y0} vs {exact}"
        );
    }

    #[test]
    fn constant_g_is_pathwise_exact_with_the_tail_feature() {
        let bundle = two_atom_bundle(256, 16, AProcessSpec::Linear { rate: 1.0 }, 19);
        let gamma = 0.8;
        let cs = build_preset(
            Preset::ConstantG,
            &PresetParams {
                terminal_value: 1.0,
                g_level: gamma,
                ..PresetParams::default()
            },
        )
        .unwrap();
        let est = solve(&bundle, &cs, &SolverConfig::default()).unwrap();
        assert!(est.converged);
        let n_steps = bundle.grid().n_steps();
        let mut worst = 0.0_f64;
        for p in 0..bundle.n_paths() {
            for k in 0..=n_steps {
                let exact = 1.0 + gamma * (bundle.b()[(p, n_steps)] - bundle.b()[(p, k)]);
                worst = worst.max((est.y[(p, k)] - exact).abs());
            }
        }
        assert!(
            worst < 1e-8,
            "backward Brownian integral of a constant must be pathwise exact, worst dev {worst}"
        );
    }

    #[test]
    fn martingale_terminal_recovers_the_first_chaos_coefficient() {
        let bundle = two_atom_bundle(4_000, 20, AProcessSpec::Linear { rate: 1.0 }, 23);
        let cs = build_preset(Preset::MartingaleTerminal, &PresetParams::default()).unwrap();
        let est = solve(&bundle, &cs, &SolverConfig::default()).unwrap();
        assert!(est.converged);
        let h = bundle.h_levels();
        let n_steps = bundle.grid().n_steps();
        for k in 0..=n_steps {
            let mse = (0..bundle.n_paths())
                .map(|p| {
                    let d = est.y[(p, k)] - h[(p, k, 0)];
                    d * d
                })
                .sum::<f64>()
                / bundle.n_paths() as f64;
            assert!(mse < 1e-2, "step {k}: E|Y - H|^2 = {mse}");
        }
        for k in 0..n_steps {
            let mean_z: f64 = (0..bundle.n_paths())
                .map(|p| est.z[(p, k, 0)])
                .sum::<f64>()
                / bundle.n_paths() as f64;
            assert!(
                (0.85..=1.15).contains(&mean_z),
                "step {k}: mean Z^(1) = {mean_z}"
            );
        }
    }

    #[test]
    fn solver_rejects_oversized_chaos_truncation() {
        let bundle = two_atom_bundle(32, 4, AProcessSpec::Linear { rate: 1.0 }, 29);
        let cs = build_preset(Preset::Trivial, &PresetParams::default()).unwrap();
        let cfg = SolverConfig {
            chaos_m: Some(9),
            ..SolverConfig::default()
        };
        assert!(matches!(solve(&bundle, &cs, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn terminal_row_is_pinned_exactly_every_iteration() {
        let bundle = two_atom_bundle(128, 8, AProcessSpec::Linear { rate: 1.0 }, 31);
        let cs = build_preset(Preset::NonLipschitz, &PresetParams::default()).unwrap();
        let est = solve(&bundle, &cs, &SolverConfig::default()).unwrap();
        let h_term = bundle.h_terminal();
        let n_steps = bundle.grid().n_steps();
        for p in 0..bundle.n_paths() {
            let data = crate::coefficients::terminal_data(&bundle, &h_term, p);
            assert_eq!(
                est.y[(p, n_steps)],
                cs.xi(&data),
                "terminal pin must be bit-exact on path {p}"
            );
        }
    }

    #[test]
    fn two_initial_guesses_land_on_the_same_estimate() {
        let bundle = two_atom_bundle(1_000, 16, AProcessSpec::Linear { rate: 1.0 }, 37);
        let cs = build_preset(Preset::NonLipschitz, &PresetParams::default()).unwrap();
        let from_zero = solve(&bundle, &cs, &SolverConfig::default()).unwrap();
        let from_ten = solve(
            &bundle,
            &cs,
            &SolverConfig {
                initial_y: 10.0,
                ..SolverConfig::default()
            },
        )
        .unwrap();
        assert!(from_zero.converged && from_ten.converged);
        let y_diff = &from_zero.y - &from_ten.y;
        let z_diff = &from_zero.z - &from_ten.z;
        let dist = e_norm_sq(&y_diff, &z_diff, &bundle).sqrt();
        assert!(
            dist < 5.0 * SolverConfig::default().picard_tol,
            "initial-guess sensitivity: E-norm distance {dist}"
        );
    }
}

//! Coefficient sets `(f, g, h, xi)` with their structural constants and
//! concave modulus, plus sampling-based hypothesis audits.
//!
//! The backward solver consumes its drivers through [`CoefficientSet`]: a
//! drift `f(t, y, z)`, a backward-Brownian coefficient `g(t, y, z)`, a
//! monotone drift `h(t, y)` integrated against the increasing process, and a
//! terminal functional `xi` of the simulated path data. The structural
//! constants mirror the standing assumptions the solver relies on:
//!
//! ```text
//! |f(t,y,z)|  <= f_t + K(|y| + ||z||)
//! |g(t,y,z)|  <= g_t + K(|y| + ||z||)
//! |h(t,y)|    <= h_t + K|y|
//! <y1 - y2, h(t,y1) - h(t,y2)>    <= beta |y1 - y2|^2       (beta < 0)
//! |h(t,y1) - h(t,y2)|             <= K |y1 - y2|
//! |f(t,y1,z1) - f(t,y2,z2)|^2     <= rho(t, |y1-y2|^2) + C    ||z1-z2||^2
//! |g(t,y1,z1) - g(t,y2,z2)|^2     <= rho(t, |y1-y2|^2) + alpha||z1-z2||^2
//! ```
//!
//! with `C > 0`, `alpha` in `(0,1)`, and `rho(t, .)` concave, non-decreasing,
//! vanishing at zero. These conditions quantify over unbounded domains, so no
//! sampler can certify them globally: the checkers in this module report
//! worst-case margins over a configured box and are honest about that limit.
//! The Osgood audit for `rho` runs two independent numerical probes (integral
//! divergence near zero and decay of a backward ODE) rather than pretending to
//! decide a limit statement exactly.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::path_engine::PathBundle;
use crate::quadrature::adaptive_simpson;

/// Margin tolerance for the growth audit: a bound "holds" on the sample when
/// its worst margin does not exceed this.
pub const GROWTH_TOL: f64 = 1e-9;
/// Margin tolerance for the monotonicity audit.
pub const MONOTONE_TOL: f64 = 1e-9;
/// Margin tolerance for the modulus audit.
pub const MODULUS_TOL: f64 = 1e-9;
/// Divergence probe: the integral increment per decade must not shrink below
/// this fraction of the first decade's increment.
const DIVERGENCE_RATIO_MIN: f64 = 0.05;
/// Backward-ODE probe: `u(0)` below this value counts as "reached zero".
const ODE_ZERO_TOL: f64 = 1e-10;
/// Backward-ODE probe: alternatively, `u(0)` must shrink at least this much
/// when the terminal seed shrinks from 1e-6 to 1e-12.
const ODE_RATIO_MAX: f64 = 0.05;
/// Growth cap for the backward-ODE probe (prevents overflow for huge `M`).
const ODE_CAP: f64 = 1e100;
/// Step count for the backward-ODE probe's RK4 integration.
const ODE_STEPS: usize = 4_000;

/// Drift-style evaluator: `(t, y, z) -> value` where `z` is the truncated
/// martingale-coefficient sequence.
pub type DriftEval = Box<dyn Fn(f64, f64, &[f64]) -> f64 + Send + Sync>;
/// Monotone-drift evaluator: `(t, y) -> value`.
pub type MonotoneEval = Box<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Terminal functional: full path data at the horizon `-> value`.
pub type TerminalEval = Box<dyn Fn(&TerminalData<'_>) -> f64 + Send + Sync>;
/// Deterministic bounding function of time, valued in `[1, inf)`.
pub type TimeBound = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// One simulated path's data visible to a terminal functional.
#[derive(Debug, Clone, Copy)]
pub struct TerminalData<'a> {
    /// Grid times `t_0 .. t_N`.
    pub times: &'a [f64],
    /// Brownian path at the grid times.
    pub b: &'a [f64],
    /// Driving Lévy path at the grid times.
    pub l: &'a [f64],
    /// Increasing process at the grid times.
    pub a: &'a [f64],
    /// Terminal martingale levels `H^(i)_T`, one entry per basis index.
    pub h_terminal: &'a [f64],
}

impl TerminalData<'_> {
    /// Brownian value at the horizon.
    pub fn b_terminal(&self) -> f64 {
        *self.b.last().expect("non-empty grid")
    }

    /// Lévy value at the horizon.
    pub fn l_terminal(&self) -> f64 {
        *self.l.last().expect("non-empty grid")
    }

    /// Increasing-process value at the horizon.
    pub fn a_terminal(&self) -> f64 {
        *self.a.last().expect("non-empty grid")
    }

    /// First martingale level at the horizon (`0` for a rank-0 basis).
    pub fn h1_terminal(&self) -> f64 {
        self.h_terminal.first().copied().unwrap_or(0.0)
    }
}

/// Borrow path `p` of a bundle as terminal data. `h_terminal` must be the
/// bundle's [`PathBundle::h_terminal`] matrix (precomputed once per bundle).
pub fn terminal_data<'a>(
    bundle: &'a PathBundle,
    h_terminal: &'a Array2<f64>,
    p: usize,
) -> TerminalData<'a> {
    TerminalData {
        times: bundle.grid().times(),
        b: bundle.b().row(p).to_slice().expect("standard layout"),
        l: bundle.l().row(p).to_slice().expect("standard layout"),
        a: bundle.a().row(p).to_slice().expect("standard layout"),
        h_terminal: h_terminal.row(p).to_slice().expect("standard layout"),
    }
}

/// Structural constants attached to a coefficient set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralConstants {
    /// Weight of `||z1 - z2||^2` in the `f`-modulus inequality. Positive.
    pub c: f64,
    /// Weight of `||z1 - z2||^2` in the `g`-modulus inequality. In `(0, 1)`.
    pub alpha: f64,
    /// Monotonicity rate of `h`. Strictly negative.
    pub beta: f64,
    /// Linear growth / `h`-Lipschitz constant. Positive.
    pub k: f64,
}

impl StructuralConstants {
    /// Validate ranges: `c > 0`, `alpha` in `(0,1)`, `beta < 0`, `k > 0`.
    pub fn new(c: f64, alpha: f64, beta: f64, k: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::Config(format!("constant c must be > 0, got {c}")));
        }
        if !(alpha.is_finite() && 0.0 < alpha && alpha < 1.0) {
            return Err(Error::Config(format!(
                "constant alpha must lie strictly inside (0, 1), got {alpha}"
            )));
        }
        if !(beta.is_finite() && beta < 0.0) {
            return Err(Error::Config(format!(
                "constant beta must be strictly negative, got {beta}"
            )));
        }
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::Config(format!("constant k must be > 0, got {k}")));
        }
        Ok(Self { c, alpha, beta, k })
    }
}

/// Concave modulus of continuity `rho(t, u)`, time-homogeneous in all
/// built-in kinds. `rho(t, 0) = 0` and `rho(t, .)` is concave non-decreasing.
#[derive(Debug, Clone, PartialEq)]
pub enum ModulusSpec {
    /// `rho(u) = slope * u` — the Lipschitz case. `slope = 0` is the
    /// degenerate zero modulus (constant-in-`y` coefficients).
    Linear { slope: f64 },
    /// `rho(u) = scale * l(u)` with `l(u) = u (1 + ln(1/u))` for
    /// `u <= 1/e` and the affine slope-1 continuation above `1/e` (keeps the
    /// kernel concave and C^1). Non-Lipschitz at zero yet Osgood.
    Log { scale: f64 },
    /// `rho(u) = scale * sqrt(u)` — concave but NOT Osgood; a deliberate
    /// negative example whose backward ODE has nonzero solutions.
    Sqrt { scale: f64 },
    /// Piecewise-linear interpolation of `(u, value)` knots starting at
    /// `(0, 0)`; extrapolates the last slope beyond the last knot.
    Table { knots: Vec<(f64, f64)> },
}

/// Concave log-modulus kernel: `u (1 + ln(1/u))` up to `u* = 1/e`, then the
/// affine slope-1 continuation `2/e + (u - 1/e)`.
fn log_kernel(u: f64) -> f64 {
    let u_star = 1.0 / std::f64::consts::E;
    if u <= u_star {
        u * (1.0 - u.ln())
    } else {
        2.0 * u_star + (u - u_star)
    }
}

impl ModulusSpec {
    /// Evaluate `rho(t, u)`. Negative or zero `u` maps to 0.
    pub fn eval(&self, _t: f64, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        match self {
            ModulusSpec::Linear { slope } => slope * u,
            ModulusSpec::Log { scale } => scale * log_kernel(u),
            ModulusSpec::Sqrt { scale } => scale * u.sqrt(),
            ModulusSpec::Table { knots } => {
                let pos = knots.partition_point(|&(ku, _)| ku <= u);
                if pos >= knots.len() {
                    // Extrapolate the final slope.
                    let (u1, v1) = knots[knots.len() - 1];
                    let (u0, v0) = knots[knots.len() - 2];
                    v1 + (v1 - v0) / (u1 - u0) * (u - u1)
                } else {
                    let (u1, v1) = knots[pos];
                    let (u0, v0) = knots[pos - 1];
                    v0 + (v1 - v0) / (u1 - u0) * (u - u0)
                }
            }
        }
    }

    /// Structural validation plus a sampled concavity/monotonicity audit on
    /// `(0, u_max]`: increments must be nonnegative and second differences
    /// nonpositive up to round-off.
    pub fn validate(&self) -> Result<()> {
        match self {
            ModulusSpec::Linear { slope } => {
                if !(slope.is_finite() && *slope >= 0.0) {
                    return Err(Error::Config(format!(
                        "linear modulus slope must be finite and >= 0, got {slope}"
                    )));
                }
            }
            ModulusSpec::Log { scale } | ModulusSpec::Sqrt { scale } => {
                if !(scale.is_finite() && *scale > 0.0) {
                    return Err(Error::Config(format!(
                        "modulus scale must be finite and > 0, got {scale}"
                    )));
                }
            }
            ModulusSpec::Table { knots } => {
                if knots.len() < 2 {
                    return Err(Error::Config(
                        "table modulus needs at least two knots".into(),
                    ));
                }
                if knots[0].0.abs() > 1e-12 || knots[0].1.abs() > 1e-12 {
                    return Err(Error::Config(
                        "table modulus must start at the knot (0, 0)".into(),
                    ));
                }
                for w in knots.windows(2) {
                    if !(w[1].0.is_finite() && w[1].1.is_finite()) {
                        return Err(Error::Config("table modulus knot not finite".into()));
                    }
                    if w[1].0 <= w[0].0 {
                        return Err(Error::Config(
                            "table modulus knots must have strictly increasing u".into(),
                        ));
                    }
                }
            }
        }
        // Sampled audit of (H4)(i): non-decreasing, concave, rho(0) = 0.
        let u_max = 10.0;
        let n = 400;
        let du = u_max / n as f64;
        let vals: Vec<f64> = (0..=n).map(|j| self.eval(0.0, j as f64 * du)).collect();
        let scale = vals.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        if vals[0].abs() > 1e-12 * scale {
            return Err(Error::Config("modulus must vanish at u = 0".into()));
        }
        for j in 0..n {
            if vals[j + 1] - vals[j] < -1e-9 * scale {
                return Err(Error::Config(format!(
                    "modulus decreases near u = {:.3}",
                    (j as f64 + 0.5) * du
                )));
            }
        }
        for j in 1..n {
            let second = vals[j + 1] - 2.0 * vals[j] + vals[j - 1];
            if second > 1e-9 * scale {
                return Err(Error::Config(format!(
                    "modulus is not concave near u = {:.3}",
                    j as f64 * du
                )));
            }
        }
        Ok(())
    }
}

/// A complete driver for the backward equation: coefficient evaluators, the
/// terminal functional, the modulus, the structural constants, and the
/// deterministic bounding functions of time (default: the constant 1).
pub struct CoefficientSet {
    name: String,
    f: DriftEval,
    g: DriftEval,
    h: MonotoneEval,
    xi: TerminalEval,
    rho: ModulusSpec,
    constants: StructuralConstants,
    f_bound: TimeBound,
    g_bound: TimeBound,
    h_bound: TimeBound,
}

impl CoefficientSet {
    /// Assemble and validate a coefficient set. Bounding functions default to
    /// the constant 1; use [`CoefficientSet::with_bounds`] to override.
    pub fn new(
        name: impl Into<String>,
        f: DriftEval,
        g: DriftEval,
        h: MonotoneEval,
        xi: TerminalEval,
        rho: ModulusSpec,
        constants: StructuralConstants,
    ) -> Result<Self> {
        rho.validate()?;
        Ok(Self {
            name: name.into(),
            f,
            g,
            h,
            xi,
            rho,
            constants,
            f_bound: Box::new(|_| 1.0),
            g_bound: Box::new(|_| 1.0),
            h_bound: Box::new(|_| 1.0),
        })
    }

    /// Replace the three bounding functions (each must stay >= 1).
    pub fn with_bounds(mut self, f_bound: TimeBound, g_bound: TimeBound, h_bound: TimeBound) -> Self {
        self.f_bound = f_bound;
        self.g_bound = g_bound;
        self.h_bound = h_bound;
        self
    }

    /// Replace the structural constants — for experiment configs that
    /// override a preset's defaults. The new constants are validated but NOT
    /// re-audited against the evaluators; run the checkers afterwards.
    pub fn with_constants(mut self, constants: StructuralConstants) -> Self {
        self.constants = constants;
        self
    }

    /// Replace the declared modulus (revalidated structurally).
    pub fn with_modulus(mut self, rho: ModulusSpec) -> Result<Self> {
        rho.validate()?;
        self.rho = rho;
        Ok(self)
    }

    /// Human-readable name (preset name or caller-chosen label).
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Evaluate the drift `f(t, y, z)`.
    pub fn f(&self, t: f64, y: f64, z: &[f64]) -> f64 {
        (self.f)(t, y, z)
    }

    /// Evaluate the backward-Brownian coefficient `g(t, y, z)`.
    pub fn g(&self, t: f64, y: f64, z: &[f64]) -> f64 {
        (self.g)(t, y, z)
    }

    /// Evaluate the monotone drift `h(t, y)`.
    pub fn h(&self, t: f64, y: f64) -> f64 {
        (self.h)(t, y)
    }

    /// Evaluate the terminal functional on one path's data.
    pub fn xi(&self, data: &TerminalData<'_>) -> f64 {
        (self.xi)(data)
    }

    /// The attached modulus.
    pub fn rho(&self) -> &ModulusSpec {
        &self.rho
    }

    /// The attached structural constants.
    pub fn constants(&self) -> StructuralConstants {
        self.constants
    }

    /// Bounding function for `f` at time `t`.
    pub fn f_bound(&self, t: f64) -> f64 {
        (self.f_bound)(t)
    }

    /// Bounding function for `g` at time `t`.
    pub fn g_bound(&self, t: f64) -> f64 {
        (self.g_bound)(t)
    }

    /// Bounding function for `h` at time `t`.
    pub fn h_bound(&self, t: f64) -> f64 {
        (self.h_bound)(t)
    }
}

/// Sampling box for the hypothesis audits. Samples are uniform in
/// `t in [0, t_max]`, `|y| <= y_abs_max`, and `z` in the centered ball of
/// radius `z_norm_max` in dimension `z_dim` (cube draw rescaled into the
/// ball, which deliberately concentrates some mass near the sphere where
/// growth margins peak).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerBox {
    pub t_max: f64,
    pub y_abs_max: f64,
    pub z_norm_max: f64,
    pub z_dim: usize,
    pub n_samples: usize,
    pub seed: u64,
}

impl SamplerBox {
    /// Default desk-scale box: `|y| <= 10`, `||z|| <= 10`, 10^4 samples.
    pub fn new(t_max: f64, z_dim: usize) -> Self {
        Self {
            t_max,
            y_abs_max: 10.0,
            z_norm_max: 10.0,
            z_dim,
            n_samples: 10_000,
            seed: 7,
        }
    }

    fn rng(&self) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(self.seed)
    }

    fn draw_t(&self, rng: &mut ChaCha12Rng) -> f64 {
        rng.random_range(0.0..=self.t_max)
    }

    fn draw_y(&self, rng: &mut ChaCha12Rng) -> f64 {
        rng.random_range(-self.y_abs_max..=self.y_abs_max)
    }

    fn draw_z(&self, rng: &mut ChaCha12Rng) -> Vec<f64> {
        let mut z: Vec<f64> = (0..self.z_dim)
            .map(|_| rng.random_range(-self.z_norm_max..=self.z_norm_max))
            .collect();
        let norm = z_norm(&z);
        if norm > self.z_norm_max {
            let s = self.z_norm_max / norm;
            for v in &mut z {
                *v *= s;
            }
        }
        z
    }
}

fn z_norm(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn require_finite(label: &str, value: f64, t: f64, y: f64, z: &[f64]) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Evaluator(format!(
            "{label}(t={t}, y={y}, z={z:?}) = {value}"
        )))
    }
}

/// Worst margins of the three linear growth bounds over a sample box.
/// A margin is `|value| - (bound(t) + K (|y| + ||z||))`; negative means the
/// bound held at that sample.
#[derive(Debug, Clone, Copy)]
pub struct GrowthReport {
    pub f_margin: f64,
    pub g_margin: f64,
    pub h_margin: f64,
    pub pass: bool,
}

/// Audit the growth bounds on `f`, `g`, `h` by sampling the box.
pub fn check_growth(cs: &CoefficientSet, sampler: &SamplerBox) -> Result<GrowthReport> {
    let mut rng = sampler.rng();
    let k = cs.constants().k;
    let (mut f_margin, mut g_margin, mut h_margin) = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for _ in 0..sampler.n_samples {
        let t = sampler.draw_t(&mut rng);
        let y = sampler.draw_y(&mut rng);
        let z = sampler.draw_z(&mut rng);
        let zn = z_norm(&z);
        let fv = require_finite("f", cs.f(t, y, &z), t, y, &z)?;
        let gv = require_finite("g", cs.g(t, y, &z), t, y, &z)?;
        let hv = require_finite("h", cs.h(t, y), t, y, &[])?;
        f_margin = f_margin.max(fv.abs() - (cs.f_bound(t) + k * (y.abs() + zn)));
        g_margin = g_margin.max(gv.abs() - (cs.g_bound(t) + k * (y.abs() + zn)));
        h_margin = h_margin.max(hv.abs() - (cs.h_bound(t) + k * y.abs()));
    }
    let pass = f_margin <= GROWTH_TOL && g_margin <= GROWTH_TOL && h_margin <= GROWTH_TOL;
    Ok(GrowthReport {
        f_margin,
        g_margin,
        h_margin,
        pass,
    })
}

/// Worst normalized monotonicity margin of `h`:
/// `max (  <dy, dh> - beta |dy|^2  ) / |dy|^2` over sampled pairs.
#[derive(Debug, Clone, Copy)]
pub struct MonotoneReport {
    pub margin: f64,
    pub pass: bool,
}

/// Audit the one-sided monotonicity of `h` by sampling pairs `(y1, y2)`.
pub fn check_monotone_h(cs: &CoefficientSet, sampler: &SamplerBox) -> Result<MonotoneReport> {
    let mut rng = sampler.rng();
    let beta = cs.constants().beta;
    let mut margin = f64::NEG_INFINITY;
    for _ in 0..sampler.n_samples {
        let t = sampler.draw_t(&mut rng);
        let y1 = sampler.draw_y(&mut rng);
        let y2 = sampler.draw_y(&mut rng);
        let dy = y1 - y2;
        if dy.abs() < 1e-9 {
            continue;
        }
        let h1 = require_finite("h", cs.h(t, y1), t, y1, &[])?;
        let h2 = require_finite("h", cs.h(t, y2), t, y2, &[])?;
        let dh = h1 - h2;
        margin = margin.max((dy * dh - beta * dy * dy) / (dy * dy));
    }
    Ok(MonotoneReport {
        margin,
        pass: margin <= MONOTONE_TOL,
    })
}

/// Worst margins of the modulus inequalities over sampled pairs:
/// `|df|^2 - rho(t, |dy|^2) - C ||dz||^2`, the same with weight `alpha` for
/// `g`, and the Lipschitz margin `|dh| - K |dy|` for `h`.
#[derive(Debug, Clone, Copy)]
pub struct ModulusReport {
    pub f_margin: f64,
    pub g_margin: f64,
    pub h_lipschitz_margin: f64,
    pub pass: bool,
}

/// Audit the modulus inequalities for `f` and `g` and the Lipschitz bound on
/// `h` by sampling pairs.
pub fn check_modulus(cs: &CoefficientSet, sampler: &SamplerBox) -> Result<ModulusReport> {
    let mut rng = sampler.rng();
    let consts = cs.constants();
    let (mut f_margin, mut g_margin, mut h_margin) = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for _ in 0..sampler.n_samples {
        let t = sampler.draw_t(&mut rng);
        let y1 = sampler.draw_y(&mut rng);
        let y2 = sampler.draw_y(&mut rng);
        let z1 = sampler.draw_z(&mut rng);
        let z2 = sampler.draw_z(&mut rng);
        let dy2 = (y1 - y2) * (y1 - y2);
        let dz2: f64 = z1
            .iter()
            .zip(&z2)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let rho = cs.rho().eval(t, dy2);
        let df = require_finite("f", cs.f(t, y1, &z1), t, y1, &z1)?
            - require_finite("f", cs.f(t, y2, &z2), t, y2, &z2)?;
        let dg = require_finite("g", cs.g(t, y1, &z1), t, y1, &z1)?
            - require_finite("g", cs.g(t, y2, &z2), t, y2, &z2)?;
        let dh = require_finite("h", cs.h(t, y1), t, y1, &[])?
            - require_finite("h", cs.h(t, y2), t, y2, &[])?;
        f_margin = f_margin.max(df * df - rho - consts.c * dz2);
        g_margin = g_margin.max(dg * dg - rho - consts.alpha * dz2);
        h_margin = h_margin.max(dh.abs() - consts.k * (y1 - y2).abs());
    }
    let pass = f_margin <= MODULUS_TOL && g_margin <= MODULUS_TOL && h_margin <= MODULUS_TOL;
    Ok(ModulusReport {
        f_margin,
        g_margin,
        h_lipschitz_margin: h_margin,
        pass,
    })
}

/// Outcome of the two Osgood probes plus the time-integrability spot check.
#[derive(Debug, Clone)]
pub struct OsgoodReport {
    /// Smallest per-decade increment ratio of `int_eps^1 du / rho(t*, u)`
    /// across the probed `t*` values; at least [`DIVERGENCE_RATIO_MIN`] for a
    /// divergent (Osgood-consistent) integral.
    pub divergence_ratio: f64,
    pub divergence_pass: bool,
    /// `(delta, u(0))` endpoints of the backward ODE `u' = -M rho(t, u)`,
    /// `u(T) = delta`, one row per probed terminal seed.
    pub ode_endpoints: Vec<(f64, f64)>,
    pub ode_pass: bool,
    /// Largest `int_0^T rho(t, u) dt` over the spot-checked `u` values
    /// (finite for every admissible modulus; reported for transparency).
    pub time_integral_max: f64,
    pub pass: bool,
}

/// Numerically probe whether the zero solution of `u' = -M rho(t, u)`,
/// `u(T) = 0` is unique — the Osgood-type condition the contraction argument
/// needs. Probe (a) checks that `int_eps^1 du / rho(t*, u)` keeps growing as
/// `eps` shrinks decade by decade; probe (b) integrates the backward ODE from
/// terminal seeds `delta = 1e-6 .. 1e-12` and checks `u(0) -> 0`. Both are
/// heuristics: at very large `M * T` even an Osgood modulus is numerically
/// indistinguishable from a non-Osgood one, so callers probe at modest `M`.
pub fn check_osgood(
    rho: &ModulusSpec,
    m_const: f64,
    horizon: f64,
    t_probe: &[f64],
) -> Result<OsgoodReport> {
    if !(m_const.is_finite() && m_const > 0.0) {
        return Err(Error::Config(format!(
            "osgood probe constant M must be > 0, got {m_const}"
        )));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::Config(format!(
            "osgood probe horizon must be > 0, got {horizon}"
        )));
    }
    rho.validate()?;
    let probes: Vec<f64> = if t_probe.is_empty() {
        vec![0.0, horizon / 2.0, horizon]
    } else {
        t_probe.to_vec()
    };

    // Probe (a): per-decade increments of int_eps^1 du / rho(t*, u), computed
    // on the log-substituted domain u = e^v where the integrand is smooth for
    // every built-in modulus. A flat or slowly decaying increment sequence
    // means the integral diverges (Osgood-consistent); a collapsing one means
    // it converges (non-Osgood).
    let mut divergence_ratio = f64::INFINITY;
    for &t_star in &probes {
        if rho.eval(t_star, 1e-2) <= 0.0 && rho.eval(t_star, 1.0) <= 0.0 {
            // rho vanishes on the probed range: 1/rho integrates to +inf.
            divergence_ratio = divergence_ratio.min(1.0);
            continue;
        }
        let mut increments = Vec::with_capacity(8);
        for decade in 0..8 {
            let hi = 10f64.powi(-(2 + decade));
            let lo = hi / 10.0;
            let inc = adaptive_simpson(
                |v| {
                    let u = v.exp();
                    let r = rho.eval(t_star, u);
                    if r <= f64::MIN_POSITIVE {
                        1e300
                    } else {
                        u / r
                    }
                },
                lo.ln(),
                hi.ln(),
                1e-9,
            )?;
            increments.push(inc);
        }
        let first = increments[0];
        let last = increments[7];
        let ratio = if first <= f64::MIN_POSITIVE {
            if last <= f64::MIN_POSITIVE {
                1.0
            } else {
                0.0
            }
        } else {
            last / first
        };
        divergence_ratio = divergence_ratio.min(ratio);
    }
    let divergence_pass = divergence_ratio >= DIVERGENCE_RATIO_MIN;

    // Probe (b): RK4 on w(s) = u(T - s), w' = M rho(T - s, w), w(0) = delta.
    let deltas = [1e-6, 1e-8, 1e-10, 1e-12];
    let mut ode_endpoints = Vec::with_capacity(deltas.len());
    for &delta in &deltas {
        let mut w = delta;
        let dt = horizon / ODE_STEPS as f64;
        for step in 0..ODE_STEPS {
            let s = step as f64 * dt;
            let f = |s: f64, w: f64| m_const * rho.eval(horizon - s, w.max(0.0));
            let k1 = f(s, w);
            let k2 = f(s + 0.5 * dt, w + 0.5 * dt * k1);
            let k3 = f(s + 0.5 * dt, w + 0.5 * dt * k2);
            let k4 = f(s + dt, w + dt * k3);
            w += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if w > ODE_CAP {
                w = ODE_CAP;
                break;
            }
        }
        ode_endpoints.push((delta, w));
    }
    let u0_smallest = ode_endpoints.last().expect("nonempty").1;
    let u0_largest = ode_endpoints[0].1;
    let ode_pass = u0_smallest <= ODE_ZERO_TOL
        || (u0_largest > 0.0 && u0_smallest / u0_largest <= ODE_RATIO_MAX);

    // (H4)(ii) spot check: the modulus must be integrable in t at fixed u.
    let mut time_integral_max: f64 = 0.0;
    for &u in &[0.1, 1.0, 10.0] {
        let integral = adaptive_simpson(|t| rho.eval(t, u), 0.0, horizon, 1e-10)?;
        time_integral_max = time_integral_max.max(integral);
    }

    let pass = divergence_pass && ode_pass && time_integral_max.is_finite();
    Ok(OsgoodReport {
        divergence_ratio,
        divergence_pass,
        ode_endpoints,
        ode_pass,
        time_integral_max,
        pass,
    })
}

/// A Monte Carlo point estimate with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

fn mc_estimate(values: &[f64]) -> McEstimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    McEstimate {
        mean,
        std_error: (var / n).sqrt(),
    }
}

/// Exponential-integrability audit of the terminal functional plus the base
/// integrals the certificates need.
#[derive(Debug, Clone)]
pub struct TerminalReport {
    /// `(lambda, estimate of E[exp(lambda A_T) |xi|^2])` per probed lambda.
    pub estimates: Vec<(f64, McEstimate)>,
    /// True when the largest-lambda estimate keeps growing by more than 25%
    /// as the subsample doubles — a heuristic flag for non-integrability.
    pub subsample_growing: bool,
    /// `E |xi|^2`.
    pub xi_mean_square: McEstimate,
    /// `E int_0^T |f(s,0,0)|^2 ds` (left-endpoint rule on the grid).
    pub base_f_sq_integral: McEstimate,
    /// `E int_0^T |g(s,0,0)|^2 ds`.
    pub base_g_sq_integral: McEstimate,
    /// `E int_0^T |h(s,0)|^2 dA_s`.
    pub base_h_sq_integral: McEstimate,
}

/// Estimate `E[exp(lambda A_T) |xi|^2]` over a lambda grid and the base
/// integrals of the coefficients at the origin.
pub fn check_terminal(
    cs: &CoefficientSet,
    bundle: &PathBundle,
    lambda_grid: &[f64],
) -> Result<TerminalReport> {
    let n_paths = bundle.n_paths();
    let times = bundle.grid().times();
    let n_steps = bundle.grid().n_steps();
    let h_term = bundle.h_terminal();
    let z_zero = vec![0.0; bundle.rank()];

    let mut xi_sq = Vec::with_capacity(n_paths);
    let mut a_term = Vec::with_capacity(n_paths);
    let mut f_int = Vec::with_capacity(n_paths);
    let mut g_int = Vec::with_capacity(n_paths);
    let mut h_int = Vec::with_capacity(n_paths);
    for p in 0..n_paths {
        let data = terminal_data(bundle, &h_term, p);
        let xi = cs.xi(&data);
        if !xi.is_finite() {
            return Err(Error::Evaluator(format!(
                "terminal functional returned {xi} on path {p}"
            )));
        }
        xi_sq.push(xi * xi);
        a_term.push(data.a_terminal());
        let (mut fi, mut gi, mut hi) = (0.0, 0.0, 0.0);
        for k in 0..n_steps {
            let t = times[k];
            let dt = times[k + 1] - times[k];
            let fv = cs.f(t, 0.0, &z_zero);
            let gv = cs.g(t, 0.0, &z_zero);
            let hv = cs.h(t, 0.0);
            fi += fv * fv * dt;
            gi += gv * gv * dt;
            hi += hv * hv * bundle.da(p, k);
        }
        f_int.push(fi);
        g_int.push(gi);
        h_int.push(hi);
    }

    let mut estimates = Vec::with_capacity(lambda_grid.len());
    let mut subsample_growing = false;
    for &lambda in lambda_grid {
        if lambda < 0.0 {
            return Err(Error::Config(format!(
                "terminal-check lambda must be >= 0, got {lambda}"
            )));
        }
        let weighted: Vec<f64> = (0..n_paths)
            .map(|p| (lambda * a_term[p]).exp() * xi_sq[p])
            .collect();
        estimates.push((lambda, mc_estimate(&weighted)));
        if n_paths >= 8 {
            let quarter = mc_estimate(&weighted[..n_paths / 4]).mean;
            let half = mc_estimate(&weighted[..n_paths / 2]).mean;
            let full = mc_estimate(&weighted).mean;
            if full > 1.25 * half && half > 1.25 * quarter {
                subsample_growing = true;
            }
        }
    }

    Ok(TerminalReport {
        estimates,
        subsample_growing,
        xi_mean_square: mc_estimate(&xi_sq),
        base_f_sq_integral: mc_estimate(&f_int),
        base_g_sq_integral: mc_estimate(&g_int),
        base_h_sq_integral: mc_estimate(&h_int),
    })
}

/// Named coefficient presets shipped with the crate. Every CLI experiment and
/// acceptance scenario is runnable from one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// `f = g = h = 0`, constant terminal value.
    Trivial,
    /// Constant drift `f = a`, everything else zero; closed form
    /// `Y_t = c + a (T - t)`.
    LinearF,
    /// `h(t, y) = beta y` against `A_t = t`; closed form
    /// `Y_t = c exp(beta (T - t))`.
    LinearH,
    /// Constant backward-Brownian coefficient `g = gamma`; closed form
    /// `Y_t = c + gamma (B_T - B_t)`.
    ConstantG,
    /// Zero coefficients with terminal value `H^(1)_T`; the solution is the
    /// martingale itself and the first chaos coefficient is 1.
    MartingaleTerminal,
    /// Log-modulus drift `f = a psi(y)` with
    /// `psi(y) = y sqrt(1 + ln+(1/|y|))` (continuous, non-Lipschitz at 0),
    /// `g = 0.2 arctan(y)`, `h = -y`, bounded terminal `tanh(L_T)`.
    NonLipschitz,
    /// Square-root drift `f = kappa sign(y) sqrt(|y|)` paired with the
    /// sqrt modulus — concave but non-Osgood, so the Osgood audit must fail.
    NegativeExample,
}

impl Preset {
    /// All presets, in a stable order.
    pub fn all() -> &'static [Preset] {
        &[
            Preset::Trivial,
            Preset::LinearF,
            Preset::LinearH,
            Preset::ConstantG,
            Preset::MartingaleTerminal,
            Preset::NonLipschitz,
            Preset::NegativeExample,
        ]
    }

    /// Canonical config-file name.
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Trivial => "trivial",
            Preset::LinearF => "linear_f",
            Preset::LinearH => "linear_h",
            Preset::ConstantG => "constant_g",
            Preset::MartingaleTerminal => "martingale_terminal",
            Preset::NonLipschitz => "non_lipschitz",
            Preset::NegativeExample => "negative_example",
        }
    }

    /// Parse a config-file name (hyphens and underscores both accepted).
    pub fn parse(name: &str) -> Result<Preset> {
        let normalized = name.trim().to_ascii_lowercase().replace('-', "_");
        Preset::all()
            .iter()
            .copied()
            .find(|p| p.name() == normalized)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown coefficient preset {name:?}; known presets: {}",
                    Preset::all()
                        .iter()
                        .map(|p| p.name())
                        .collect::<Vec<_>>()
                        .join(", ")
                ))
            })
    }
}

/// Tunable parameters of the presets; `Default` gives the documented values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresetParams {
    /// Constant terminal value `c` for the presets with deterministic
    /// terminal data.
    pub terminal_value: f64,
    /// Drift level `a` of `linear_f`.
    pub f_level: f64,
    /// Monotone rate of `linear_h` (must be < 0).
    pub h_rate: f64,
    /// Level `gamma` of `constant_g`.
    pub g_level: f64,
    /// Drift amplitude `a` of `non_lipschitz`.
    pub amplitude: f64,
    /// Drift strength `kappa` of `negative_example`.
    pub kappa: f64,
}

impl Default for PresetParams {
    fn default() -> Self {
        Self {
            terminal_value: 1.0,
            f_level: 0.5,
            h_rate: -1.0,
            g_level: 0.5,
            amplitude: 0.4,
            kappa: 1.0,
        }
    }
}

/// Non-Lipschitz drift shape: `y sqrt(1 + ln+(1/|y|))`. Continuous with
/// `psi(0) = 0`, `|psi(y)| <= 1 + |y|`, and difference quotient diverging
/// like `sqrt(ln(1/|y|))` at the origin.
pub fn log_lipschitz_shape(y: f64) -> f64 {
    if y == 0.0 {
        return 0.0;
    }
    let a = y.abs();
    if a >= 1.0 {
        y
    } else {
        y * (1.0 - a.ln()).sqrt()
    }
}

/// Build a preset coefficient set.
pub fn build_preset(preset: Preset, params: &PresetParams) -> Result<CoefficientSet> {
    let p = *params;
    match preset {
        Preset::Trivial => {
            let c = p.terminal_value;
            CoefficientSet::new(
                preset.name(),
                Box::new(|_, _, _| 0.0),
                Box::new(|_, _, _| 0.0),
                Box::new(|_, _| 0.0),
                Box::new(move |_| c),
                ModulusSpec::Linear { slope: 1.0 },
                StructuralConstants::new(1.0, 0.5, -1.0, 1.0)?,
            )
        }
        Preset::LinearF => {
            let c = p.terminal_value;
            let a = p.f_level;
            if !a.is_finite() {
                return Err(Error::Config(format!("linear_f level must be finite, got {a}")));
            }
            CoefficientSet::new(
                preset.name(),
                Box::new(move |_, _, _| a),
                Box::new(|_, _, _| 0.0),
                Box::new(|_, _| 0.0),
                Box::new(move |_| c),
                ModulusSpec::Linear { slope: 1.0 },
                StructuralConstants::new(1.0, 0.5, -1.0, 1.0)?,
            )
            .map(|cs| {
                let bound = a.abs().max(1.0);
                cs.with_bounds(
                    Box::new(move |_| bound),
                    Box::new(|_| 1.0),
                    Box::new(|_| 1.0),
                )
            })
        }
        Preset::LinearH => {
            let c = p.terminal_value;
            let rate = p.h_rate;
            if !(rate.is_finite() && rate < 0.0) {
                return Err(Error::Config(format!(
                    "linear_h rate must be strictly negative, got {rate}"
                )));
            }
            CoefficientSet::new(
                preset.name(),
                Box::new(|_, _, _| 0.0),
                Box::new(|_, _, _| 0.0),
                Box::new(move |_, y| rate * y),
                Box::new(move |_| c),
                ModulusSpec::Linear { slope: 1.0 },
                StructuralConstants::new(1.0, 0.5, rate, rate.abs().max(1.0))?,
            )
        }
        Preset::ConstantG => {
            let c = p.terminal_value;
            let gamma = p.g_level;
            if !gamma.is_finite() {
                return Err(Error::Config(format!(
                    "constant_g level must be finite, got {gamma}"
                )));
            }
            CoefficientSet::new(
                preset.name(),
                Box::new(|_, _, _| 0.0),
                Box::new(move |_, _, _| gamma),
                Box::new(|_, _| 0.0),
                Box::new(move |_| c),
                ModulusSpec::Linear { slope: 1.0 },
                StructuralConstants::new(1.0, 0.5, -1.0, 1.0)?,
            )
            .map(|cs| {
                let bound = gamma.abs().max(1.0);
                cs.with_bounds(
                    Box::new(|_| 1.0),
                    Box::new(move |_| bound),
                    Box::new(|_| 1.0),
                )
            })
        }
        Preset::MartingaleTerminal => CoefficientSet::new(
            preset.name(),
            Box::new(|_, _, _| 0.0),
            Box::new(|_, _, _| 0.0),
            Box::new(|_, _| 0.0),
            Box::new(|data| data.h1_terminal()),
            ModulusSpec::Linear { slope: 1.0 },
            StructuralConstants::new(1.0, 0.5, -1.0, 1.0)?,
        ),
        Preset::NonLipschitz => {
            let a = p.amplitude;
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::Config(format!(
                    "non_lipschitz amplitude must be > 0, got {a}"
                )));
            }
            CoefficientSet::new(
                preset.name(),
                Box::new(move |_, y, _| a * log_lipschitz_shape(y)),
                Box::new(|_, y, _| 0.2 * y.atan()),
                Box::new(|_, y| -y),
                Box::new(|data| data.l_terminal().tanh()),
                ModulusSpec::Log {
                    scale: (4.0 * a * a).max(1.0),
                },
                StructuralConstants::new(1.0, 0.5, -1.0, 1.0)?,
            )
        }
        Preset::NegativeExample => {
            let kappa = p.kappa;
            if !(kappa.is_finite() && kappa > 0.0) {
                return Err(Error::Config(format!(
                    "negative_example strength must be > 0, got {kappa}"
                )));
            }
            let c = p.terminal_value;
            CoefficientSet::new(
                preset.name(),
                Box::new(move |_, y: f64, _: &[f64]| kappa * y.signum() * y.abs().sqrt()),
                Box::new(|_, _, _| 0.0),
                Box::new(|_, y| -y),
                Box::new(move |_| c),
                ModulusSpec::Sqrt {
                    scale: 2.0 * kappa * kappa,
                },
                StructuralConstants::new(1.0, 0.5, -1.0, kappa.max(1.0))?,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_model::{JumpSpec, LevyModel};
    use crate::path_engine::{simulate, AProcessSpec, TimeGrid};
    use crate::teugels_basis::{TeugelsBasis, DEFAULT_PIVOT_TOL};

    fn constants() -> StructuralConstants {
        StructuralConstants::new(1.0, 0.5, -1.0, 1.0).unwrap()
    }

    fn simple_set(f: DriftEval, g: DriftEval, h: MonotoneEval, rho: ModulusSpec) -> CoefficientSet {
        simple_set_with(f, g, h, rho, constants())
    }

    fn simple_set_with(
        f: DriftEval,
        g: DriftEval,
        h: MonotoneEval,
        rho: ModulusSpec,
        constants: StructuralConstants,
    ) -> CoefficientSet {
        CoefficientSet::new("test", f, g, h, Box::new(|_| 1.0), rho, constants).unwrap()
    }

    fn test_bundle(n_paths: usize, a_spec: AProcessSpec) -> crate::path_engine::PathBundle {
        let model = LevyModel::new(
            0.1,
            0.5,
            JumpSpec::Atoms(vec![(1.0, 0.6), (-0.5, 0.8)]),
            1.0,
        )
        .unwrap();
        let basis = TeugelsBasis::from_model(&model, None, DEFAULT_PIVOT_TOL).unwrap();
        let grid = TimeGrid::uniform(1.0, 16).unwrap();
        simulate(&model, &basis, &grid, &a_spec, n_paths, 99).unwrap()
    }

    #[test]
    fn growth_passes_for_bounded_drift() {
        let cs = simple_set(
            Box::new(|_, y: f64, _: &[f64]| y.sin()),
            Box::new(|_, _, _| 0.0),
            Box::new(|_, y| -y),
            ModulusSpec::Linear { slope: 2.0 },
        );
        let report = check_growth(&cs, &SamplerBox::new(1.0, 2)).unwrap();
        assert!(report.pass, "bounded drift must pass: {report:?}");
        assert!(report.f_margin <= GROWTH_TOL);
    }

    #[test]
    fn growth_flags_quadratic_drift_with_large_margin() {
        let cs = simple_set(
            Box::new(|_, y: f64, _: &[f64]| y * y),
            Box::new(|_, _, _| 0.0),
            Box::new(|_, y| -y),
            ModulusSpec::Linear { slope: 2.0 },
        );
        let report = check_growth(&cs, &SamplerBox::new(1.0, 2)).unwrap();
        assert!(!report.pass, "quadratic drift must fail the linear bound");
        // Worst case on the box is |y| = 10, ||z|| = 0: 100 - (1 + 10) = 89.
        assert!(
            report.f_margin > 80.0 && report.f_margin <= 89.0 + 1e-9,
            "sampled margin should approach 89, got {}",
            report.f_margin
        );
    }

    #[test]
    fn growth_accepts_linear_h_within_k() {
        let cs = simple_set(
            Box::new(|_, _, _| 0.0),
            Box::new(|_, _, _| 0.0),
            Box::new(|_, y| -0.75 * y),
            ModulusSpec::Linear { slope: 2.0 },
        );
        let report = check_growth(&cs, &SamplerBox::new(1.0, 2)).unwrap();
        assert!(report.pass);
        assert!(report.h_margin <= GROWTH_TOL);
    }

    #[test]
    fn growth_reports_non_finite_evaluator_as_error() {
        let cs = simple_set(
            Box::new(|_, _, _| f64::NAN),
            Box::new(|_, _, _| 0.0),
            Box::new(|_, y| -y),
            ModulusSpec::Linear { slope: 2.0 },
        );
        let err = check_growth(&cs, &SamplerBox::new(1.0, 1)).unwrap_err();
        assert!(matches!(err, Error::Evaluator(_)), "got {err:?}");
    }

    #[test]
    fn monotone_equality_case_has_zero_margin() {
        let cs = simple_set_with(
            Box::new(|_, _, _| 0.0),
            Box::new(|_, _, _| 0.0),
            Box::new(|_, y| -2.0 * y),
            ModulusSpec::Linear { slope: 2.0 },
            StructuralConstants::new(1.0, 0.5, -2.0, 2.0).unwrap(),
        );
        let report = check_monotone_h(&cs, &SamplerBox::new(1.0, 0)).unwrap();
        assert!(report.pass);
        assert!(
            report.margin.abs() <= 1e-12,
            "h = beta y at the exact rate has margin 0, got {}",
            report.margin
        );
    }

    #[test]
    fn monotone_passes_sin_perturbation() {
        // h' = -2 + cos(y) <= -1 <= -0.5, so beta = -0.5 holds.
        let cs = simple_set_with(
            Box::new(|_, _, _| 0.0),
            Box::new(|_, _, _| 0.0),
            Box::new(|_, y: f64| -2.0 * y + y.sin()),
            ModulusSpec::Linear { slope: 2.0 },
            StructuralConstants::new(1.0, 0.5, -0.5, 3.0).unwrap(),
        );
        let report = check_monotone_h(&cs, &SamplerBox::new(1.0, 0)).unwrap();
        assert!(report.pass, "margin {}", report.margin);
    }

    #[test]
    fn monotone_fails_increasing_h() {
        let cs = simple_set(
            Box::new(|_, _, _| 0.0),
            Box::new(|_, _, _| 0.0),
            Box::new(|_, y| y),
            ModulusSpec::Linear { slope: 2.0 },
        );
        let report = check_monotone_h(&cs, &SamplerBox::new(1.0, 0)).unwrap();
        assert!(!report.pass);
        // Margin of (dy^2 + dy^2) / dy^2 = 2 exactly, for every pair.
        assert!(
            (report.margin - 2.0).abs() < 1e-12,
            "increasing h at beta = -1 has margin 2, got {}",
            report.margin
        );
    }

    #[test]
    fn modulus_accepts_lipschitz_f_with_doubled_square() {
        let k = 1.5;
        let cs = simple_set(
            Box::new(move |_, y: f64, _: &[f64]| k * y.sin()),
            Box::new(|_, _, _| 0.0),
            Box::new(|_, y| -y),
            ModulusSpec::Linear { slope: 2.0 * k * k },
        );
        let report = check_modulus(&cs, &SamplerBox::new(1.0, 2)).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn modulus_accepts_g_with_halved_alpha_weight() {
        // (a + b)^2 <= 2 a^2 + 2 b^2 with a = sqrt(alpha/2) dz1, b = d(arctan):
        // 2 a^2 <= alpha ||dz||^2 and 2 b^2 <= 2 |dy|^2 = rho(|dy|^2).
        let alpha = 0.5_f64;
        let w = (alpha / 2.0).sqrt();
        let cs = simple_set(
            Box::new(|_, _, _| 0.0),
            Box::new(move |_, y: f64, z: &[f64]| w * z[0] + y.atan()),
            Box::new(|_, y| -y),
            ModulusSpec::Linear { slope: 2.0 },
        );
        let report = check_modulus(&cs, &SamplerBox::new(1.0, 1)).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn modulus_rejects_g_with_full_alpha_weight() {
        // With weight sqrt(alpha) the cross term 2 sqrt(alpha) dz1 d(arctan)
        // has nothing to absorb it; sampled pairs with small |dy| and large
        // |dz1| violate the inequality.
        let alpha = 0.5_f64;
        let w = alpha.sqrt();
        let cs = simple_set(
            Box::new(|_, _, _| 0.0),
            Box::new(move |_, y: f64, z: &[f64]| w * z[0] + y.atan()),
            Box::new(|_, y| -y),
            ModulusSpec::Linear { slope: 2.0 },
        );
        let report = check_modulus(&cs, &SamplerBox::new(1.0, 1)).unwrap();
        assert!(!report.pass, "{report:?}");
        assert!(report.g_margin > MODULUS_TOL);
    }

    #[test]
    fn modulus_rejects_discontinuous_f() {
        let cs = simple_set(
            Box::new(|_, y: f64, _: &[f64]| y.signum()),
            Box::new(|_, _, _| 0.0),
            Box::new(|_, y| -y),
            ModulusSpec::Linear { slope: 2.0 },
        );
        // z-free driver probed without z slack so sign-straddling pairs with
        // small |dy| expose the jump.
        let report = check_modulus(&cs, &SamplerBox::new(1.0, 0)).unwrap();
        assert!(!report.pass, "{report:?}");
        assert!(report.f_margin > 1.0);
    }

    #[test]
    fn modulus_flags_h_steeper_than_k() {
        let cs = simple_set(
            Box::new(|_, _, _| 0.0),
            Box::new(|_, _, _| 0.0),
            Box::new(|_, y| -3.0 * y),
            ModulusSpec::Linear { slope: 2.0 },
        );
        let report = check_modulus(&cs, &SamplerBox::new(1.0, 0)).unwrap();
        assert!(!report.pass);
        assert!(report.h_lipschitz_margin > 1.0);
    }

    #[test]
    fn modulus_pass_is_monotone_in_rho() {
        let make = |slope: f64| {
            simple_set(
                Box::new(|_, y: f64, _: &[f64]| 0.9 * y.sin()),
                Box::new(|_, _, _| 0.0),
                Box::new(|_, y| -y),
                ModulusSpec::Linear { slope },
            )
        };
        let tight = check_modulus(&make(2.0), &SamplerBox::new(1.0, 2)).unwrap();
        let loose = check_modulus(&make(4.0), &SamplerBox::new(1.0, 2)).unwrap();
        assert!(tight.pass);
        assert!(loose.pass);
        assert!(loose.f_margin <= tight.f_margin);
    }

    #[test]
    fn checkers_are_deterministic_given_seed() {
        let make = || {
            simple_set(
                Box::new(|_, y: f64, _: &[f64]| y.sin()),
                Box::new(|_, _, _| 0.0),
                Box::new(|_, y| -y),
                ModulusSpec::Linear { slope: 2.0 },
            )
        };
        let box1 = SamplerBox::new(1.0, 2);
        let a = check_growth(&make(), &box1).unwrap();
        let b = check_growth(&make(), &box1).unwrap();
        assert_eq!(a.f_margin.to_bits(), b.f_margin.to_bits());
        assert_eq!(a.g_margin.to_bits(), b.g_margin.to_bits());
        assert_eq!(a.h_margin.to_bits(), b.h_margin.to_bits());
    }

    #[test]
    fn osgood_passes_linear_modulus() {
        let report = check_osgood(
            &ModulusSpec::Linear { slope: 1.0 },
            1.0,
            1.0,
            &[0.0, 0.5, 1.0],
        )
        .unwrap();
        assert!(report.divergence_pass, "{report:?}");
        assert!(report.ode_pass, "{report:?}");
        assert!(report.pass);
    }

    #[test]
    fn osgood_passes_log_modulus() {
        let report = check_osgood(&ModulusSpec::Log { scale: 1.0 }, 1.0, 1.0, &[]).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn osgood_fails_sqrt_modulus() {
        let report = check_osgood(&ModulusSpec::Sqrt { scale: 1.0 }, 1.0, 1.0, &[]).unwrap();
        assert!(!report.divergence_pass, "{report:?}");
        assert!(!report.ode_pass, "{report:?}");
        assert!(!report.pass);
        // The backward solution has the nonzero limit (M T / 2)^2 = 0.25.
        let (_, u0) = report.ode_endpoints[report.ode_endpoints.len() - 1];
        assert!((u0 - 0.25).abs() < 0.01, "u(0) = {u0}");
    }

    #[test]
    fn osgood_accepts_zero_modulus() {
        let report = check_osgood(&ModulusSpec::Linear { slope: 0.0 }, 1.0, 1.0, &[]).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn modulus_table_interpolates_and_validates() {
        let table = ModulusSpec::Table {
            knots: vec![(0.0, 0.0), (1.0, 2.0), (3.0, 3.0)],
        };
        table.validate().unwrap();
        assert!((table.eval(0.0, 0.5) - 1.0).abs() < 1e-15);
        assert!((table.eval(0.0, 2.0) - 2.5).abs() < 1e-15);
        // Beyond the last knot: last slope 0.5 extrapolates.
        assert!((table.eval(0.0, 5.0) - 4.0).abs() < 1e-15);

        let convex = ModulusSpec::Table {
            knots: vec![(0.0, 0.0), (1.0, 0.5), (2.0, 2.0)],
        };
        assert!(convex.validate().is_err(), "convex kink must be rejected");

        let offset = ModulusSpec::Table {
            knots: vec![(0.0, 0.5), (1.0, 1.0)],
        };
        assert!(offset.validate().is_err(), "rho(0) != 0 must be rejected");
    }

    #[test]
    fn terminal_check_is_exact_for_constant_xi_and_deterministic_a() {
        let bundle = test_bundle(64, AProcessSpec::Linear { rate: 1.0 });
        let cs = build_preset(
            Preset::Trivial,
            &PresetParams {
                terminal_value: 2.0,
                ..PresetParams::default()
            },
        )
        .unwrap();
        let report = check_terminal(&cs, &bundle, &[0.0, 1.0]).unwrap();
        let (l0, e0) = report.estimates[0];
        assert_eq!(l0, 0.0);
        assert!((e0.mean - 4.0).abs() < 1e-12, "E|xi|^2 = 4, got {}", e0.mean);
        assert!(e0.std_error < 1e-12);
        let (l1, e1) = report.estimates[1];
        assert_eq!(l1, 1.0);
        let exact = 1.0_f64.exp() * 4.0;
        assert!(
            (e1.mean - exact).abs() < 1e-10,
            "expected {exact}, got {}",
            e1.mean
        );
        assert!(!report.subsample_growing);
    }

    #[test]
    fn terminal_check_reports_base_integrals() {
        let bundle = test_bundle(64, AProcessSpec::Linear { rate: 2.0 });
        // f(s,0,0) = 3, g(s,0,0) = 0, h(s,0) = 5 with A_t = 2t over T = 1:
        // int f^2 ds = 9, int h^2 dA = 50.
        let cs = simple_set(
            Box::new(|_, _, _| 3.0),
            Box::new(|_, _, _| 0.0),
            Box::new(|_, y| 5.0 - y),
            ModulusSpec::Linear { slope: 2.0 },
        );
        let report = check_terminal(&cs, &bundle, &[0.0]).unwrap();
        assert!((report.base_f_sq_integral.mean - 9.0).abs() < 1e-12);
        assert!(report.base_g_sq_integral.mean.abs() < 1e-15);
        assert!((report.base_h_sq_integral.mean - 50.0).abs() < 1e-10);
    }

    #[test]
    fn terminal_check_stays_calm_for_bounded_xi() {
        let bundle = test_bundle(4_096, AProcessSpec::RunningMaxAbsB);
        let cs = build_preset(Preset::NonLipschitz, &PresetParams::default()).unwrap();
        let report = check_terminal(&cs, &bundle, &[0.0, 0.5, 1.0]).unwrap();
        assert!(!report.subsample_growing, "{report:?}");
        assert!(report.xi_mean_square.mean <= 1.0 + 1e-12);
    }

    #[test]
    fn preset_names_round_trip() {
        for &preset in Preset::all() {
            assert_eq!(Preset::parse(preset.name()).unwrap(), preset);
        }
        assert_eq!(
            Preset::parse("Non-Lipschitz").unwrap(),
            Preset::NonLipschitz
        );
        assert!(Preset::parse("does_not_exist").is_err());
    }

    #[test]
    fn presets_build_with_default_params() {
        for &preset in Preset::all() {
            let cs = build_preset(preset, &PresetParams::default()).unwrap();
            assert_eq!(cs.name(), preset.name());
            let k = cs.constants();
            assert!(k.c > 0.0 && k.alpha > 0.0 && k.alpha < 1.0 && k.beta < 0.0 && k.k > 0.0);
        }
        assert!(matches!(
            build_preset(Preset::NegativeExample, &PresetParams::default())
                .unwrap()
                .rho(),
            ModulusSpec::Sqrt { .. }
        ));
    }

    #[test]
    fn preset_rejects_bad_parameters() {
        let params = PresetParams {
            h_rate: 0.5,
            ..PresetParams::default()
        };
        assert!(build_preset(Preset::LinearH, &params).is_err());
        let params = PresetParams {
            amplitude: -1.0,
            ..PresetParams::default()
        };
        assert!(build_preset(Preset::NonLipschitz, &params).is_err());
    }

    #[test]
    fn non_lipschitz_preset_passes_its_own_audits() {
        let cs = build_preset(Preset::NonLipschitz, &PresetParams::default()).unwrap();
        let sampler = SamplerBox::new(1.0, 2);
        let growth = check_growth(&cs, &sampler).unwrap();
        assert!(growth.pass, "{growth:?}");
        let modulus = check_modulus(&cs, &sampler).unwrap();
        assert!(modulus.pass, "{modulus:?}");
        let monotone = check_monotone_h(&cs, &sampler).unwrap();
        assert!(monotone.pass, "{monotone:?}");
        let osgood = check_osgood(cs.rho(), 1.0, 1.0, &[]).unwrap();
        assert!(osgood.pass, "{osgood:?}");
    }

    #[test]
    fn non_lipschitz_shape_has_unbounded_difference_quotient() {
        let quotient = |d: f64| (log_lipschitz_shape(d) - log_lipschitz_shape(0.0)) / d;
        assert!(quotient(1e-8) > 4.0);
        assert!(quotient(1e-12) > quotient(1e-8));
        assert_eq!(log_lipschitz_shape(0.0), 0.0);
        // Linear growth cap: |psi(y)| <= 1 + |y|.
        for &y in &[-10.0, -2.0, -0.3, 0.1, 0.9, 1.5, 8.0] {
            assert!(log_lipschitz_shape(y).abs() <= 1.0 + y.abs() + 1e-12);
        }
    }

    #[test]
    fn negative_example_modulus_is_concave_but_fails_osgood() {
        let cs = build_preset(Preset::NegativeExample, &PresetParams::default()).unwrap();
        cs.rho().validate().unwrap();
        let modulus = check_modulus(&cs, &SamplerBox::new(1.0, 0)).unwrap();
        assert!(modulus.pass, "{modulus:?}");
        let osgood = check_osgood(cs.rho(), 1.0, 1.0, &[]).unwrap();
        assert!(!osgood.pass);
    }
}

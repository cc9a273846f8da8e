//! Contraction certificates: the explicit constants and schedules that make
//! the fixed-point argument checkable at desk scale.
//!
//! Everything here is deterministic arithmetic on a handful of structural
//! constants and base integrals:
//!
//! ```text
//! M     = max{ (3(1-a)/(2C+a) + 1) e^{(2C+a)T/(1-a)},
//!              ((1-a)/C + 1)       e^{CT/(1-a)} }
//! mu_0  = e^{(2C+a)T/(1-a)} [ E|xi|^2
//!           + 2(1-a)/(2C+a) * E int_0^T |f(s,0,0)|^2 ds
//!           + (1+2C)/(1-a)  * E int_0^T |g(s,0,0)|^2 ds
//!           + (1/|b|)       * E int_0^T |h(s,0)|^2 dA_s ]
//! M_p   = 2 mu_0^p
//! ```
//!
//! with `a` the structural constant `alpha` and `b` the one-sided slope
//! `beta`. The horizon is partitioned right to left by breakpoints `T_p`
//! solving `int_{T_p}^{T_{p-1}} rho(s, M_p) ds = mu_0^p / M`; on each
//! `[T_p, T_{p-1}]` the outer iteration is a contraction. For later stages
//! only the terminal second moment changes — the exponent and the base
//! integrals keep the original horizon `T`. The majorant sequence
//!
//! ```text
//! phi_0(t) = M int_t^T rho(s, M_1) ds,
//! phi_{n+1}(t) = M int_t^T rho(s, phi_n(s)) ds
//! ```
//!
//! is non-increasing in `n` on `[T_1, T]` and converges uniformly to zero;
//! tabulating it turns "the iterates are Cauchy" into inspectable numbers.

use crate::coefficients::ModulusSpec;
use crate::error::{Error, Result};
use crate::quadrature::{adaptive_simpson, bisect, cumulative_from_right};

/// Absolute tolerance for certificate integrals. Certificates must sit far
/// below Monte Carlo noise to be meaningful.
pub const CERT_QUAD_TOL: f64 = 1e-12;

fn check_structural(c: f64, alpha: f64, horizon: f64) -> Result<()> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::Config(format!("C must be > 0, got {c}")));
    }
    if !(alpha.is_finite() && 0.0 < alpha && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(Error::Config(format!("horizon must be >= 0, got {horizon}")));
    }
    Ok(())
}

/// The Gronwall constant `M` of the a-priori bound; see the module header.
/// Nondecreasing in the horizon (both branches have positive rates).
pub fn constant_m(c: f64, alpha: f64, horizon: f64) -> Result<f64> {
    check_structural(c, alpha, horizon)?;
    let term1 =
        (3.0 * (1.0 - alpha) / (2.0 * c + alpha) + 1.0) * ((2.0 * c + alpha) * horizon / (1.0 - alpha)).exp();
    let term2 = ((1.0 - alpha) / c + 1.0) * (c * horizon / (1.0 - alpha)).exp();
    Ok(term1.max(term2))
}

/// Ingredients of one certificate stage: structural constants, the stage's
/// terminal second moment (`E|xi|^2` for the first stage, `E|Y_{T_{p-1}}|^2`
/// afterwards), and the base integrals of the coefficient levels at the
/// origin, all over the original horizon.
#[derive(Debug, Clone)]
pub struct CertificateInputs {
    /// Structural constant `C` (drift `z`-slack).
    pub c: f64,
    /// Structural constant `alpha` in `(0, 1)`.
    pub alpha: f64,
    /// One-sided slope `beta < 0`.
    pub beta: f64,
    /// Original horizon `T`.
    pub horizon: f64,
    /// `E|xi|^2`, or `E|Y_{T_{p-1}}|^2` for later stages.
    pub terminal_sq: f64,
    /// `E int_0^T |f(s,0,0)|^2 ds`.
    pub f_base_integral: f64,
    /// `E int_0^T |g(s,0,0)|^2 ds`.
    pub g_base_integral: f64,
    /// `E int_0^T |h(s,0)|^2 dA_s`.
    pub h_base_integral: f64,
    /// Concave modulus governing the non-Lipschitz estimates.
    pub rho: ModulusSpec,
}

impl CertificateInputs {
    /// Validate ranges and the strict-positivity requirement (the terminal
    /// moment and base integrals must not all vanish).
    pub fn validate(&self) -> Result<()> {
        check_structural(self.c, self.alpha, self.horizon)?;
        if !(self.beta.is_finite() && self.beta < 0.0) {
            return Err(Error::Config(format!("beta must be < 0, got {}", self.beta)));
        }
        for (name, v) in [
            ("terminal_sq", self.terminal_sq),
            ("f_base_integral", self.f_base_integral),
            ("g_base_integral", self.g_base_integral),
            ("h_base_integral", self.h_base_integral),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        let total =
            self.terminal_sq + self.f_base_integral + self.g_base_integral + self.h_base_integral;
        if total <= 0.0 {
            return Err(Error::Config(
                "terminal moment and base integrals are all zero; \
                 the certificate scale is degenerate"
                    .into(),
            ));
        }
        self.rho.validate()
    }

    fn weighted_base(&self) -> f64 {
        let wf = 2.0 * (1.0 - self.alpha) / (2.0 * self.c + self.alpha);
        let wg = (1.0 + 2.0 * self.c) / (1.0 - self.alpha);
        wf * self.f_base_integral + wg * self.g_base_integral
            + self.h_base_integral / self.beta.abs()
    }

    fn exponential(&self) -> f64 {
        ((2.0 * self.c + self.alpha) * self.horizon / (1.0 - self.alpha)).exp()
    }
}

/// Stage constants `(mu_0^p, M_p = 2 mu_0^p)` from the stage inputs.
pub fn mu_and_mp(inputs: &CertificateInputs) -> Result<(f64, f64)> {
    inputs.validate()?;
    let mu = inputs.exponential() * (inputs.terminal_sq + inputs.weighted_base());
    Ok((mu, 2.0 * mu))
}

/// The terminal-moment-free part of `M_p`: the constant controlling how much
/// each stage can grow, reported for diagnostics (the stage cap `p_max`
/// guards termination, not this constant).
pub fn constant_a(inputs: &CertificateInputs) -> Result<f64> {
    inputs.validate()?;
    Ok(2.0 * inputs.exponential() * inputs.weighted_base())
}

/// Left endpoint `T_p` of the next contraction interval: the solution of
/// `int_{T_p}^{T_prev} rho(s, M_p) ds = mu_0 / M`, or `0` when the modulus
/// mass over the whole remaining interval is already within budget.
pub fn next_breakpoint(
    t_prev: f64,
    m_p: f64,
    mu_0: f64,
    rho: &ModulusSpec,
    m_const: f64,
) -> Result<f64> {
    if !(t_prev.is_finite() && t_prev > 0.0) {
        return Err(Error::Config(format!("T_prev must be > 0, got {t_prev}")));
    }
    for (name, v) in [("M_p", m_p), ("mu_0", mu_0), ("M", m_const)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Config(format!("{name} must be > 0, got {v}")));
        }
    }
    let budget = mu_0 / m_const;
    let mass = |from: f64| adaptive_simpson(|s| rho.eval(s, m_p), from, t_prev, CERT_QUAD_TOL);
    let total = mass(0.0)?;
    if total <= budget {
        return Ok(0.0);
    }
    // mass(.) decreases from total to 0, so mass(t) - budget crosses zero
    // exactly once on (0, T_prev).
    let objective = |t: f64| match mass(t) {
        Ok(v) => v - budget,
        Err(_) => f64::NAN,
    };
    let root = bisect(objective, 0.0, t_prev, 1e-12 * t_prev)?;
    Ok(root.clamp(0.0, t_prev))
}

/// One interval of a certificate schedule.
#[derive(Debug, Clone)]
pub struct ScheduleStage {
    /// Right endpoint `T_{p-1}` of the interval.
    pub t_upper: f64,
    /// Left endpoint `T_p`.
    pub t_lower: f64,
    /// Terminal second moment fed into this stage.
    pub terminal_sq: f64,
    /// Stage constant `mu_0^p`.
    pub mu_0: f64,
    /// Stage constant `M_p`.
    pub m_p: f64,
}

/// Breakpoint schedule `T = T_0 > T_1 > ... >= 0` with per-stage constants.
#[derive(Debug, Clone)]
pub struct Schedule {
    /// `[T_0, T_1, ..., T_P]`, strictly decreasing; ends with `0` exactly
    /// when `terminated`.
    pub breakpoints: Vec<f64>,
    /// Stage constants, one per interval.
    pub stages: Vec<ScheduleStage>,
    /// The terminal-moment-free growth constant, reported for diagnostics.
    pub constant_a: f64,
    /// The Gronwall constant `M` used throughout.
    pub m_const: f64,
    /// True when the schedule reached `0` within the stage cap.
    pub terminated: bool,
}

/// Build the full breakpoint schedule. `terminal_provider(p, t_prev)` must
/// return the stage's terminal second moment — `E|xi|^2` for `p = 1` (where
/// `t_prev = T`), `E|Y_{T_{p-1}}|^2` afterwards — from a solver run on
/// `[t_prev, T]` or a supplied bound. A schedule that does not reach `0`
/// within `p_max` stages is returned with `terminated = false` rather than
/// as an error.
pub fn schedule<P>(
    base: &CertificateInputs,
    mut terminal_provider: P,
    p_max: usize,
) -> Result<Schedule>
where
    P: FnMut(usize, f64) -> Result<f64>,
{
    if p_max == 0 {
        return Err(Error::Config("p_max must be >= 1".into()));
    }
    let m_const = constant_m(base.c, base.alpha, base.horizon)?;
    let a = constant_a(base)?;

    let mut breakpoints = vec![base.horizon];
    let mut stages = Vec::new();
    let mut terminated = base.horizon == 0.0;

    let mut t_prev = base.horizon;
    for p in 1..=p_max {
        if terminated {
            break;
        }
        let terminal_sq = terminal_provider(p, t_prev)?;
        let stage_inputs = CertificateInputs {
            terminal_sq,
            rho: base.rho.clone(),
            ..*base
        };
        let (mu_0, m_p) = mu_and_mp(&stage_inputs)?;
        let t_next = next_breakpoint(t_prev, m_p, mu_0, &base.rho, m_const)?;
        if t_next >= t_prev {
            return Err(Error::Quadrature(format!(
                "breakpoint failed to decrease: T_{p} = {t_next} from T_{} = {t_prev}",
                p - 1
            )));
        }
        breakpoints.push(t_next);
        stages.push(ScheduleStage {
            t_upper: t_prev,
            t_lower: t_next,
            terminal_sq,
            mu_0,
            m_p,
        });
        terminated = t_next == 0.0;
        t_prev = t_next;
    }

    Ok(Schedule {
        breakpoints,
        stages,
        constant_a: a,
        m_const,
        terminated,
    })
}

/// Tabulated majorant sequence `phi_0, ..., phi_{n_max}` on a uniform grid.
#[derive(Debug, Clone)]
pub struct PhiTable {
    /// Grid nodes, ascending; the last node is the integration anchor `T`.
    pub t_grid: Vec<f64>,
    /// `values[n][j] = phi_n(t_grid[j])`.
    pub values: Vec<Vec<f64>>,
    /// True when the sequence is non-increasing in `n` at every node (up to
    /// a tiny floating-point slack).
    pub monotone: bool,
    /// `max_j phi_{n_max}(t_grid[j])`.
    pub sup_final: f64,
}

/// Tabulate the majorant recursion on `n_nodes` uniform nodes spanning
/// `[t_lo, t_hi]`, where `t_hi` plays the role of the anchor `T`. The
/// interval should sit inside a certified contraction zone `[T_1, T]` for
/// the monotonicity property to be guaranteed; the flag reports what
/// actually happened.
pub fn phi_sequence(
    m_const: f64,
    m_1: f64,
    rho: &ModulusSpec,
    t_lo: f64,
    t_hi: f64,
    n_nodes: usize,
    n_max: usize,
) -> Result<PhiTable> {
    if !(m_const.is_finite() && m_const > 0.0) {
        return Err(Error::Config(format!("M must be > 0, got {m_const}")));
    }
    if !(m_1.is_finite() && m_1 >= 0.0) {
        return Err(Error::Config(format!("M_1 must be >= 0, got {m_1}")));
    }
    if !(t_lo.is_finite() && t_hi.is_finite() && t_lo < t_hi) {
        return Err(Error::Config(format!(
            "need t_lo < t_hi, got [{t_lo}, {t_hi}]"
        )));
    }
    if n_nodes < 9 {
        return Err(Error::Config(format!(
            "need at least 9 grid nodes for the quadrature chain, got {n_nodes}"
        )));
    }
    let h = (t_hi - t_lo) / (n_nodes - 1) as f64;
    let t_grid: Vec<f64> = (0..n_nodes).map(|j| t_lo + j as f64 * h).collect();

    let integrate = |level: &dyn Fn(usize) -> f64| -> Result<Vec<f64>> {
        let samples: Vec<f64> = (0..n_nodes)
            .map(|j| {
                let v = rho.eval(t_grid[j], level(j));
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Quadrature(format!(
                        "modulus returned {v} at t = {}",
                        t_grid[j]
                    )))
                }
            })
            .collect::<Result<_>>()?;
        Ok(cumulative_from_right(&samples, h)
            .into_iter()
            .map(|c| m_const * c)
            .collect())
    };

    let mut values = Vec::with_capacity(n_max + 1);
    values.push(integrate(&|_| m_1)?);
    for n in 0..n_max {
        let next = {
            let prev = &values[n];
            integrate(&|j| prev[j])?
        };
        values.push(next);
    }

    let mut monotone = true;
    for pair in values.windows(2) {
        for (prev, next) in pair[0].iter().zip(&pair[1]) {
            let slack = 1e-12 * (1.0 + prev.abs());
            if *next > prev + slack {
                monotone = false;
            }
        }
    }
    let sup_final = values[n_max].iter().cloned().fold(0.0, f64::max);

    Ok(PhiTable {
        t_grid,
        values,
        monotone,
        sup_final,
    })
}

//! Exact path simulation of the driving processes, plus statistical probes.
//!
//! A [`PathBundle`] carries everything the backward solver consumes, sampled
//! on a fixed time grid: the backward-driving Brownian motion `B`, the Levy
//! driver `L`, the nondecreasing process `A`, and the orthonormal Teugels
//! martingale increments
//!
//! ```text
//! dH^(i)_k = sum_{j <= i} c_{i,j} (dL^(j)_k - dt_k E[L_1^(j)])
//! ```
//!
//! where `dL^(1)_k` includes the drift and Brownian part of `L` and
//! `dL^(j)_k = sum (jump size)^j` over the step's jumps for `j >= 2`.
//! Compound-Poisson jumps are simulated exactly (per-atom Poisson counts and
//! uniform arrival times) and binned into the grid step containing them, so
//! the only discretization anywhere is the grid itself.
//!
//! Reproducibility: every path draws from its own counter-derived ChaCha
//! substreams (one for `B`, one for `L`), so results are bit-identical for a
//! fixed seed and independent of how many paths are requested beyond it.

use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::levy_model::LevyModel;
use crate::teugels_basis::TeugelsBasis;

/// Partition `0 = t_0 < t_1 < ... < t_N = T` of the model horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid with `n_steps >= 1` steps over `[0, horizon]`.
    pub fn uniform(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Config(format!("grid horizon must be > 0, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(Error::Config("grid needs at least one step".into()));
        }
        let times = (0..=n_steps)
            .map(|k| horizon * k as f64 / n_steps as f64)
            .collect();
        Ok(Self { times })
    }

    /// Grid from explicit node times; must start at 0 and strictly increase.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::Config("grid needs at least two nodes".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::Config(format!("grid must start at 0, got {}", times[0])));
        }
        for w in times.windows(2) {
            if !(w[1].is_finite() && w[1] > w[0]) {
                return Err(Error::Config(format!(
                    "grid times must strictly increase, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { times })
    }

    /// Node times `t_0..=t_N`.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of steps `N` (one less than the node count).
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Step length `t_{k+1} - t_k`.
    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    /// Final time `t_N`.
    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }
}

/// Specification of the nondecreasing integrator `A`.
#[derive(Debug, Clone, PartialEq)]
pub enum AProcessSpec {
    /// `A_t = rate * t` with `rate >= 0`.
    Linear { rate: f64 },
    /// `A_t = t^exponent` with `exponent >= 1` (keeps `A` nondecreasing and
    /// `A_0 = 0`).
    Power { exponent: f64 },
    /// Pathwise running maximum `A_{t_k} = max_{j <= k} |B_{t_j}|`, evaluated
    /// on the grid.
    RunningMaxAbsB,
}

impl AProcessSpec {
    fn validate(&self) -> Result<()> {
        match self {
            AProcessSpec::Linear { rate } => {
                if !(rate.is_finite() && *rate >= 0.0) {
                    return Err(Error::Config(format!(
                        "A-process rate must be >= 0, got {rate}"
                    )));
                }
            }
            AProcessSpec::Power { exponent } => {
                if !(exponent.is_finite() && *exponent >= 1.0) {
                    return Err(Error::Config(format!(
                        "A-process exponent must be >= 1, got {exponent}"
                    )));
                }
            }
            AProcessSpec::RunningMaxAbsB => {}
        }
        Ok(())
    }
}

/// Simulated paths of all driving processes on a common grid.
#[derive(Debug, Clone)]
pub struct PathBundle {
    grid: TimeGrid,
    basis: TeugelsBasis,
    seed: u64,
    /// Backward-driving Brownian motion, `(n_paths, N + 1)`.
    b: Array2<f64>,
    /// Levy driver levels, `(n_paths, N + 1)`.
    l: Array2<f64>,
    /// Nondecreasing integrator levels, `(n_paths, N + 1)`.
    a: Array2<f64>,
    /// Teugels martingale increments, `(n_paths, N, rank)`.
    dh: Array3<f64>,
    /// Per-path jump log: `(arrival time, jump size)`, sorted by time.
    jumps: Vec<Vec<(f64, f64)>>,
}

/// Simulates `n_paths` joint paths of `(B, L, A, dH)`.
///
/// The grid horizon must match the model horizon. The basis should come from
/// [`TeugelsBasis::from_model`] for the same model; its rank fixes how many
/// martingale increment channels the bundle carries (rank 0 is legal and
/// yields a pure-`B` bundle).
pub fn simulate(
    model: &LevyModel,
    basis: &TeugelsBasis,
    grid: &TimeGrid,
    a_spec: &AProcessSpec,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    a_spec.validate()?;
    if n_paths == 0 {
        return Err(Error::Config("need at least one path".into()));
    }
    let horizon = model.horizon();
    if (grid.horizon() - horizon).abs() > 1e-12 * horizon.max(1.0) {
        return Err(Error::Config(format!(
            "grid horizon {} does not match model horizon {horizon}",
            grid.horizon()
        )));
    }
    let n_steps = grid.n_steps();
    let rank = basis.rank();
    let times = grid.times();

    // Compensator means E[L_1^(j)] for j = 1..=rank.
    let mean_power: Vec<f64> = (1..=rank as u32).map(|j| model.mean_power_jump(j)).collect();

    let mut b = Array2::<f64>::zeros((n_paths, n_steps + 1));
    let mut l = Array2::<f64>::zeros((n_paths, n_steps + 1));
    let mut a = Array2::<f64>::zeros((n_paths, n_steps + 1));
    let mut dh = Array3::<f64>::zeros((n_paths, n_steps, rank));
    let mut jumps: Vec<Vec<(f64, f64)>> = Vec::with_capacity(n_paths);

    let mut dl_powers = vec![0.0_f64; rank]; // dL^(1)..dL^(rank) for one step

    for p in 0..n_paths {
        // Independent substreams: stream 2p drives B, stream 2p + 1 drives L.
        let mut rng_b = ChaCha12Rng::seed_from_u64(seed);
        rng_b.set_stream(2 * p as u64);
        let mut rng_l = ChaCha12Rng::seed_from_u64(seed);
        rng_l.set_stream(2 * p as u64 + 1);

        for k in 0..n_steps {
            let z: f64 = rng_b.sample(StandardNormal);
            b[(p, k + 1)] = b[(p, k)] + grid.dt(k).sqrt() * z;
        }

        // Brownian part of L (only drawn when present, exact per step).
        let mut sigma_dw = vec![0.0_f64; n_steps];
        if model.sigma() > 0.0 {
            for (k, slot) in sigma_dw.iter_mut().enumerate() {
                let z: f64 = rng_l.sample(StandardNormal);
                *slot = model.sigma() * grid.dt(k).sqrt() * z;
            }
        }

        // Exact compound Poisson: per-atom counts over [0, T], then uniform
        // arrival times; sizes are the atom positions.
        let mut path_jumps: Vec<(f64, f64)> = Vec::new();
        for atom in model.atoms() {
            let count_f: f64 = Poisson::new(atom.intensity * horizon)
                .expect("positive Poisson mean by model validation")
                .sample(&mut rng_l);
            let count = count_f as usize;
            for _ in 0..count {
                let tau: f64 = rng_l.random_range(0.0..horizon);
                path_jumps.push((tau, atom.position));
            }
        }
        path_jumps.sort_by(|x, y| x.0.total_cmp(&y.0));

        // Bin jumps: step k covers (t_k, t_{k+1}].
        let mut jump_cursor = 0usize;
        for k in 0..n_steps {
            dl_powers.iter_mut().for_each(|v| *v = 0.0);
            let dt = grid.dt(k);
            let mut jump_sum = 0.0;
            while jump_cursor < path_jumps.len() && path_jumps[jump_cursor].0 <= times[k + 1] {
                let size = path_jumps[jump_cursor].1;
                jump_sum += size;
                let mut power = size;
                for v in dl_powers.iter_mut() {
                    *v += power;
                    power *= size;
                }
                jump_cursor += 1;
            }
            let continuous = model.drift() * dt + sigma_dw[k];
            l[(p, k + 1)] = l[(p, k)] + continuous + jump_sum;
            if let Some(first) = dl_powers.first_mut() {
                *first += continuous;
            }

            for i in 1..=rank {
                let mut acc = 0.0;
                for j in 1..=i {
                    acc += basis.coeff(i, j) * (dl_powers[j - 1] - dt * mean_power[j - 1]);
                }
                dh[(p, k, i - 1)] = acc;
            }
        }

        match a_spec {
            AProcessSpec::Linear { rate } => {
                for (k, &t) in times.iter().enumerate() {
                    a[(p, k)] = rate * t;
                }
            }
            AProcessSpec::Power { exponent } => {
                for (k, &t) in times.iter().enumerate() {
                    a[(p, k)] = t.powf(*exponent);
                }
            }
            AProcessSpec::RunningMaxAbsB => {
                let mut running = 0.0_f64;
                for k in 0..=n_steps {
                    running = running.max(b[(p, k)].abs());
                    a[(p, k)] = running;
                }
            }
        }

        jumps.push(path_jumps);
    }

    Ok(PathBundle {
        grid: grid.clone(),
        basis: basis.clone(),
        seed,
        b,
        l,
        a,
        dh,
        jumps,
    })
}

impl PathBundle {
    /// The grid paths are sampled on.
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// The basis whose martingale increments the bundle carries.
    pub fn basis(&self) -> &TeugelsBasis {
        &self.basis
    }

    /// Seed the bundle was generated from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of simulated paths.
    pub fn n_paths(&self) -> usize {
        self.b.nrows()
    }

    /// Number of martingale increment channels (the basis rank).
    pub fn rank(&self) -> usize {
        self.dh.shape()[2]
    }

    /// Brownian levels `B_{t_k}`, shape `(n_paths, N + 1)`.
    pub fn b(&self) -> &Array2<f64> {
        &self.b
    }

    /// Driver levels `L_{t_k}`, shape `(n_paths, N + 1)`.
    pub fn l(&self) -> &Array2<f64> {
        &self.l
    }

    /// Integrator levels `A_{t_k}`, shape `(n_paths, N + 1)`.
    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }

    /// Martingale increments `dH^(i)_k`, shape `(n_paths, N, rank)`.
    pub fn dh(&self) -> &Array3<f64> {
        &self.dh
    }

    /// Brownian increment `B_{t_{k+1}} - B_{t_k}` for path `p`.
    pub fn db(&self, p: usize, k: usize) -> f64 {
        self.b[(p, k + 1)] - self.b[(p, k)]
    }

    /// Integrator increment `A_{t_{k+1}} - A_{t_k}` for path `p` (>= 0).
    pub fn da(&self, p: usize, k: usize) -> f64 {
        self.a[(p, k + 1)] - self.a[(p, k)]
    }

    /// Jump log of path `p`: `(arrival time, size)` sorted by time.
    pub fn jump_log(&self, p: usize) -> &[(f64, f64)] {
        &self.jumps[p]
    }

    /// Martingale levels `H^(i)_{t_k}` accumulated from the increments,
    /// shape `(n_paths, N + 1, rank)`. Computed on demand.
    pub fn h_levels(&self) -> Array3<f64> {
        let (n_paths, n_steps, rank) = self.dh.dim();
        let mut h = Array3::zeros((n_paths, n_steps + 1, rank));
        for p in 0..n_paths {
            for k in 0..n_steps {
                for i in 0..rank {
                    h[(p, k + 1, i)] = h[(p, k, i)] + self.dh[(p, k, i)];
                }
            }
        }
        h
    }

    /// Terminal martingale levels `H^(i)_T` per path, shape `(n_paths, rank)`.
    pub fn h_terminal(&self) -> Array2<f64> {
        self.dh.sum_axis(Axis(1))
    }
}

/// Monte Carlo estimate of a realized bracket `sum_k dH^(i) dH^(j)` at the
/// horizon, with its standard error. For an orthonormal basis the mean is
/// `delta_ij * T`.
#[derive(Debug, Clone, Copy)]
pub struct BracketStat {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

/// Samples the realized covariation of `H^(i)` and `H^(j)` (1-based indices)
/// over the whole horizon.
pub fn bracket_stats(bundle: &PathBundle, i: usize, j: usize) -> Result<BracketStat> {
    let rank = bundle.rank();
    if i == 0 || j == 0 || i > rank || j > rank {
        return Err(Error::Config(format!(
            "bracket indices ({i}, {j}) out of range for rank {rank}"
        )));
    }
    let n = bundle.n_paths();
    let n_steps = bundle.grid().n_steps();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for p in 0..n {
        let mut s = 0.0;
        for k in 0..n_steps {
            s += bundle.dh[(p, k, i - 1)] * bundle.dh[(p, k, j - 1)];
        }
        sum += s;
        sum_sq += s * s;
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0) * n as f64 / (n as f64 - 1.0).max(1.0);
    Ok(BracketStat {
        mean,
        std_error: (var / n as f64).sqrt(),
        n_paths: n,
    })
}

/// State of one path at a grid node, handed to It[o]-identity integrands.
#[derive(Debug, Clone, Copy)]
pub struct PathState {
    pub t: f64,
    pub b: f64,
    pub l: f64,
    pub a: f64,
}

/// Scalar integrand evaluated at a grid node's state.
pub type StateFn = Box<dyn Fn(&PathState) -> f64>;

/// Integrands `(beta, eta, gamma, zeta^(i))` of a backward semimartingale
/// decomposition.
pub struct ItoIntegrands {
    pub beta: StateFn,
    pub eta: StateFn,
    pub gamma: StateFn,
    pub zeta: Vec<StateFn>,
}

impl ItoIntegrands {
    /// All integrands zero.
    pub fn zero() -> Self {
        Self {
            beta: Box::new(|_| 0.0),
            eta: Box::new(|_| 0.0),
            gamma: Box::new(|_| 0.0),
            zeta: Vec::new(),
        }
    }
}

/// Monte Carlo residual of the squared-expectation identity.
#[derive(Debug, Clone, Copy)]
pub struct ItoIdentityReport {
    /// `|lhs - rhs|`, estimated from per-path differences.
    pub residual: f64,
    /// Standard error of the per-path difference mean.
    pub std_error: f64,
    pub lhs: f64,
    pub rhs: f64,
}

/// Verifies the expectation identity behind the solver's energy estimates.
///
/// The process is reconstructed backward from the constant terminal value
/// `alpha_terminal`:
///
/// ```text
/// alpha_k = alpha_{k+1} + beta dt + eta dA + gamma dB - sum_i zeta^(i) dH^(i)
/// ```
///
/// with integrands frozen at the left node. For such terminal-pinned
/// processes the martingale cross terms vanish and both stochastic integrals
/// contribute their isometry, so
///
/// ```text
/// E|alpha_0|^2 = E|alpha_T|^2 + 2 E int alpha beta ds + 2 E int alpha eta dA
///              + E int gamma^2 ds + E int sum_i (zeta^(i))^2 ds
/// ```
///
/// The report's `residual` is the Monte Carlo estimate of
/// `|E|alpha_0|^2 - rhs|`, computed from per-path differences so that the
/// standard error reflects the actual cancellation.
pub fn ito_identity_residual(
    bundle: &PathBundle,
    integrands: &ItoIntegrands,
    alpha_terminal: f64,
) -> Result<ItoIdentityReport> {
    let rank = bundle.rank();
    if integrands.zeta.len() > rank {
        return Err(Error::Config(format!(
            "{} zeta integrands but basis rank is {rank}",
            integrands.zeta.len()
        )));
    }
    let n = bundle.n_paths();
    let n_steps = bundle.grid().n_steps();
    let times = bundle.grid().times();

    let mut diff_sum = 0.0;
    let mut diff_sq_sum = 0.0;
    let mut lhs_sum = 0.0;
    let mut rhs_sum = 0.0;

    let n_zeta = integrands.zeta.len();
    let mut beta_vals = vec![0.0_f64; n_steps];
    let mut eta_vals = vec![0.0_f64; n_steps];
    let mut gamma_vals = vec![0.0_f64; n_steps];
    let mut zeta_vals = vec![0.0_f64; n_steps * n_zeta];

    for p in 0..n {
        // Freeze all integrands at the left node of each step.
        for k in 0..n_steps {
            let state = PathState {
                t: times[k],
                b: bundle.b[(p, k)],
                l: bundle.l[(p, k)],
                a: bundle.a[(p, k)],
            };
            beta_vals[k] = (integrands.beta)(&state);
            eta_vals[k] = (integrands.eta)(&state);
            gamma_vals[k] = (integrands.gamma)(&state);
            for (i, zeta) in integrands.zeta.iter().enumerate() {
                zeta_vals[k * n_zeta + i] = zeta(&state);
            }
        }

        // Backward accumulation of alpha, the cross terms, and the
        // quadratic (isometry) terms.
        let mut alpha = alpha_terminal;
        let mut cross = 0.0; // 2 int alpha beta ds + 2 int alpha eta dA
        let mut quad = 0.0; // int gamma^2 ds + int sum_i (zeta^(i))^2 ds
        for k in (0..n_steps).rev() {
            let dt = bundle.grid.dt(k);
            let da = bundle.da(p, k);
            let db = bundle.db(p, k);
            let mut step = beta_vals[k] * dt + eta_vals[k] * da + gamma_vals[k] * db;
            quad += gamma_vals[k] * gamma_vals[k] * dt;
            for i in 0..n_zeta {
                let z = zeta_vals[k * n_zeta + i];
                step -= z * bundle.dh[(p, k, i)];
                quad += z * z * dt;
            }
            alpha += step;
            cross += 2.0 * alpha * (beta_vals[k] * dt + eta_vals[k] * da);
        }

        let lhs = alpha * alpha;
        let rhs = alpha_terminal * alpha_terminal + cross + quad;
        let d = lhs - rhs;
        diff_sum += d;
        diff_sq_sum += d * d;
        lhs_sum += lhs;
        rhs_sum += rhs;
    }

    let mean = diff_sum / n as f64;
    let var =
        (diff_sq_sum / n as f64 - mean * mean).max(0.0) * n as f64 / (n as f64 - 1.0).max(1.0);
    Ok(ItoIdentityReport {
        residual: mean.abs(),
        std_error: (var / n as f64).sqrt(),
        lhs: lhs_sum / n as f64,
        rhs: rhs_sum / n as f64,
    })
}

//! Monte-Carlo checks of the equilibrium.
//!
//! Log-wealth `X̂ = log X` follows
//!
//! ```text
//! dX̂ = (πh - c - ½π²(σ² + σ0²)) dt + πσ dW + πσ0 dW0
//! ```
//!
//! and is advanced by an Euler step with left-endpoint coefficients. Given a
//! common-noise path, the conditional mean `μ̂ = E[X̂ | W0]` of an
//! equilibrium population is explicit because the idiosyncratic integral
//! averages out; [`mean_field_flow`] computes it with the same recursion.
//!
//! Every Gaussian increment comes from a ChaCha stream keyed by
//! `(seed, kind, group, index)`, so results do not depend on how samples are
//! scheduled across threads. Sample sums use pairwise summation in sample
//! order.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::closedform::EquilibriumSolution;
use crate::grid::{GridCurve, TimeGrid};
use crate::math::{exp, ln, mean_and_stderr, sqrt};
use crate::population::{AgentType, Population};
use crate::{Error, Result};

const KIND_W0: u64 = 1 << 62;
const KIND_W: u64 = 2 << 62;
const KIND_TYPE: u64 = 3 << 62;
const GROUP_SHIFT: u32 = 40;

/// Group of streams used by utility and deviation estimates.
const GROUP_UTILITY: u64 = 0;
/// Common-noise paths of the consistency test; agents on path `p` use group `p + 2`.
const GROUP_FLOW_PATHS: u64 = 1;

/// Seeded family of Brownian increments on a grid.
///
/// Increments are generated on demand: path `(group, index)` of either
/// noise is always the same `N(0, Δt)` sequence for a given seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseBundle {
    seed: u64,
    grid: TimeGrid,
}

impl NoiseBundle {
    pub fn new(seed: u64, grid: TimeGrid) -> Self {
        Self { seed, grid }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    fn rng(&self, kind: u64, group: u64, index: u64) -> ChaCha8Rng {
        debug_assert!(group < 1 << (62 - GROUP_SHIFT) && index < 1 << GROUP_SHIFT);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(kind | group << GROUP_SHIFT | index);
        rng
    }

    fn fill(&self, kind: u64, group: u64, index: u64, out: &mut [f64]) {
        let mut rng = self.rng(kind, group, index);
        let scale = sqrt(self.grid.dt());
        for x in out.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *x = scale * z;
        }
    }

    /// Common-noise increments `ΔW0` of path `index` in `group`.
    pub fn w0_increments(&self, group: u64, index: u64) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.n_steps()];
        self.fill(KIND_W0, group, index, &mut out);
        out
    }

    /// Idiosyncratic increments `ΔW` of sample `index` in `group`.
    pub fn w_increments(&self, group: u64, index: u64) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.n_steps()];
        self.fill(KIND_W, group, index, &mut out);
        out
    }

    /// Common-noise path `p` of the consistency test.
    pub fn flow_path(&self, p: u64) -> Vec<f64> {
        self.w0_increments(GROUP_FLOW_PATHS, p)
    }
}

/// Box constraints on test strategies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyBounds {
    pub c_min: f64,
    pub c_max: f64,
    pub pi_cap: f64,
}

impl Default for StrategyBounds {
    fn default() -> Self {
        Self {
            c_min: 1e-3,
            c_max: 10.0,
            pi_cap: 10.0,
        }
    }
}

/// Deterministic investment and consumption rates sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    pub pi: GridCurve,
    pub c: GridCurve,
}

impl Strategy {
    /// Requires matching grids and `c ≥ 0`.
    pub fn new(pi: GridCurve, c: GridCurve) -> Result<Self> {
        if pi.grid() != c.grid() {
            return Err(Error::Structural(
                "strategy curves live on different grids".into(),
            ));
        }
        if let Some(v) = c.values().iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Domain {
                what: "c",
                value: *v,
            });
        }
        Ok(Self { pi, c })
    }

    pub fn constant(grid: TimeGrid, pi: f64, c: f64) -> Result<Self> {
        Self::new(GridCurve::constant(grid, pi), GridCurve::constant(grid, c))
    }

    pub fn equilibrium(sol: &EquilibriumSolution, k: usize) -> Self {
        Self {
            pi: sol.types[k].pi_star.clone(),
            c: sol.types[k].c_star.clone(),
        }
    }

    pub fn check(&self, bounds: &StrategyBounds) -> Result<()> {
        if let Some(v) = self.pi.values().iter().find(|v| v.abs() > bounds.pi_cap) {
            return Err(Error::Domain {
                what: "|pi| above cap",
                value: *v,
            });
        }
        if let Some(v) = self
            .c
            .values()
            .iter()
            .find(|v| !(bounds.c_min..=bounds.c_max).contains(*v))
        {
            return Err(Error::Domain {
                what: "c outside [c_min, c_max]",
                value: *v,
            });
        }
        Ok(())
    }
}

/// Per-step coefficients of one agent following one strategy.
struct PreparedPath {
    x0: f64,
    drift_dt: Vec<f64>,
    vol: Vec<f64>,
    vol0: Vec<f64>,
}

impl PreparedPath {
    fn new(agent: &AgentType, strategy: &Strategy) -> Result<Self> {
        let grid = strategy.pi.grid();
        if agent.h.grid() != grid {
            return Err(Error::Structural(
                "strategy and agent live on different grids".into(),
            ));
        }
        let n = grid.n_steps();
        let dt = grid.dt();
        let (mut drift_dt, mut vol, mut vol0) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        );
        for i in 0..n {
            let p = agent.at_knot(i);
            let pi = strategy.pi.at_knot(i);
            let c = strategy.c.at_knot(i);
            drift_dt.push((pi * p.h - c - 0.5 * pi * pi * p.total_variance()) * dt);
            vol.push(pi * p.sigma);
            vol0.push(pi * p.sigma0);
        }
        Ok(Self {
            x0: ln(agent.x0),
            drift_dt,
            vol,
            vol0,
        })
    }

    #[inline]
    fn step(&self, x: f64, i: usize, dw: f64, dw0: f64) -> f64 {
        x + self.drift_dt[i] + self.vol[i] * dw + self.vol0[i] * dw0
    }
}

fn check_noise(grid: TimeGrid, w: &[f64], w0: &[f64]) -> Result<()> {
    if w.len() != grid.n_steps() || w0.len() != grid.n_steps() {
        return Err(Error::Structural(alloc::format!(
            "expected {} increments, got {} and {}",
            grid.n_steps(),
            w.len(),
            w0.len()
        )));
    }
    Ok(())
}

/// Log-wealth path of one agent under `strategy` and the given increments.
pub fn simulate_wealth(
    agent: &AgentType,
    strategy: &Strategy,
    w: &[f64],
    w0: &[f64],
) -> Result<GridCurve> {
    let grid = strategy.pi.grid();
    check_noise(grid, w, w0)?;
    let prep = PreparedPath::new(agent, strategy)?;
    let mut x = Vec::with_capacity(grid.len());
    x.push(prep.x0);
    for i in 0..grid.n_steps() {
        x.push(prep.step(x[i], i, w[i], w0[i]));
    }
    Ok(GridCurve::from_raw(grid, x))
}

/// Conditional means of log-wealth and log-consumption given one
/// common-noise path.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldFlow {
    /// `μ̂_t = E[X̂_t | W0]`
    pub mu_hat: GridCurve,
    /// `ν̂_t = E[log c*_t] + μ̂_t`
    pub nu_hat: GridCurve,
    pub w0_increments: Vec<f64>,
}

/// Deterministic pieces of the equilibrium flow.
struct FlowKernel {
    mu0: f64,
    drift_dt: Vec<f64>,
    vol0: Vec<f64>,
    mean_log_c: Vec<f64>,
}

impl FlowKernel {
    fn new(pop: &Population, sol: &EquilibriumSolution) -> Self {
        let grid = pop.grid();
        let dt = grid.dt();
        let n = grid.n_steps();
        let (mut drift_dt, mut vol0) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            drift_dt.push(
                pop.expect_by_index(|k| {
                    let p = pop.agent(k).at_knot(i);
                    let pi = sol.types[k].pi_star.at_knot(i);
                    pi * p.h - sol.types[k].c_star.at_knot(i) - 0.5 * pi * pi * p.total_variance()
                }) * dt,
            );
            vol0.push(pop.expect_by_index(|k| {
                sol.types[k].pi_star.at_knot(i) * pop.agent(k).at_knot(i).sigma0
            }));
        }
        let mean_log_c = (0..grid.len())
            .map(|i| pop.expect_by_index(|k| ln(sol.types[k].c_star.at_knot(i))))
            .collect();
        Self {
            mu0: pop.mean_log_wealth(),
            drift_dt,
            vol0,
            mean_log_c,
        }
    }

    /// Fills `mu` and `nu` (both of grid length).
    fn run(&self, w0: &[f64], mu: &mut [f64], nu: &mut [f64]) {
        mu[0] = self.mu0;
        for i in 0..self.drift_dt.len() {
            mu[i + 1] = mu[i] + self.drift_dt[i] + self.vol0[i] * w0[i];
        }
        for ((n, m), c) in nu.iter_mut().zip(mu.iter()).zip(&self.mean_log_c) {
            *n = c + m;
        }
    }
}

/// Equilibrium flow `(μ̂, ν̂)` along the common-noise path `w0`.
pub fn mean_field_flow(
    pop: &Population,
    sol: &EquilibriumSolution,
    w0: &[f64],
) -> Result<MeanFieldFlow> {
    let grid = pop.grid();
    if w0.len() != grid.n_steps() {
        return Err(Error::Structural(alloc::format!(
            "expected {} increments, got {}",
            grid.n_steps(),
            w0.len()
        )));
    }
    let kernel = FlowKernel::new(pop, sol);
    let mut mu = vec![0.0; grid.len()];
    let mut nu = vec![0.0; grid.len()];
    kernel.run(w0, &mut mu, &mut nu);
    Ok(MeanFieldFlow {
        mu_hat: GridCurve::from_raw(grid, mu),
        nu_hat: GridCurve::from_raw(grid, nu),
        w0_increments: w0.to_vec(),
    })
}

/// Utility evaluation for one agent following one strategy.
struct PayoffPath {
    path: PreparedPath,
    log_c: Vec<f64>,
    gamma: f64,
    theta: f64,
    alpha: f64,
    dt: f64,
}

impl PayoffPath {
    fn new(agent: &AgentType, strategy: &Strategy) -> Result<Self> {
        if let Some(v) = strategy.c.values().iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Domain {
                what: "c",
                value: *v,
            });
        }
        Ok(Self {
            path: PreparedPath::new(agent, strategy)?,
            log_c: strategy.c.values().iter().map(|&c| ln(c)).collect(),
            gamma: agent.gamma,
            theta: agent.theta,
            alpha: agent.alpha,
            dt: strategy.pi.grid().dt(),
        })
    }

    /// `(1/γ)e^{γ(X̂_T - θμ̂_T)} + ∫(α/γ)e^{γ(log c + X̂ - θν̂)}`, trapezoid in time.
    fn payoff(&self, w: &[f64], w0: &[f64], mu_terminal: f64, nu: &[f64]) -> f64 {
        let n = w.len();
        let running = |i: usize, x: f64| exp(self.gamma * (self.log_c[i] + x - self.theta * nu[i]));
        let mut x = self.path.x0;
        let mut integral = 0.5 * running(0, x);
        for i in 0..n {
            x = self.path.step(x, i, w[i], w0[i]);
            let r = running(i + 1, x);
            integral += if i + 1 == n { 0.5 * r } else { r };
        }
        (exp(self.gamma * (x - self.theta * mu_terminal)) + self.alpha * integral * self.dt)
            / self.gamma
    }
}

#[cfg(feature = "std")]
fn collect_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "std"))]
fn collect_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Sample mean and standard error of a payoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
}

impl UtilityEstimate {
    fn from_samples(xs: &[f64]) -> Self {
        let (mean, stderr) = mean_and_stderr(xs);
        Self {
            mean,
            stderr,
            n_samples: xs.len(),
        }
    }
}

/// Shared per-sample machinery: fresh `W0` and `W` per sample, the
/// equilibrium flow recomputed on each `W0` draw.
struct UtilitySampler<'a> {
    kernel: FlowKernel,
    noise: &'a NoiseBundle,
    grid: TimeGrid,
}

impl<'a> UtilitySampler<'a> {
    fn new(pop: &Population, sol: &EquilibriumSolution, noise: &'a NoiseBundle) -> Result<Self> {
        if noise.grid() != pop.grid() {
            return Err(Error::Structural(
                "noise and population live on different grids".into(),
            ));
        }
        Ok(Self {
            kernel: FlowKernel::new(pop, sol),
            noise,
            grid: pop.grid(),
        })
    }

    fn with_sample<T>(&self, s: usize, f: impl FnOnce(&[f64], &[f64], f64, &[f64]) -> T) -> T {
        let n = self.grid.n_steps();
        let mut w = vec![0.0; n];
        let mut w0 = vec![0.0; n];
        self.noise.fill(KIND_W0, GROUP_UTILITY, s as u64, &mut w0);
        self.noise.fill(KIND_W, GROUP_UTILITY, s as u64, &mut w);
        let mut mu = vec![0.0; n + 1];
        let mut nu = vec![0.0; n + 1];
        self.kernel.run(&w0, &mut mu, &mut nu);
        f(&w, &w0, mu[n], &nu)
    }
}

/// Expected utility of `agent` following `strategy` while the population
/// plays the equilibrium `sol`, over `n` independent `(W0, W)` samples.
pub fn estimate_utility(
    pop: &Population,
    sol: &EquilibriumSolution,
    agent: &AgentType,
    strategy: &Strategy,
    n: usize,
    noise: &NoiseBundle,
) -> Result<UtilityEstimate> {
    if n == 0 {
        return Err(Error::Domain {
            what: "n",
            value: 0.0,
        });
    }
    let sampler = UtilitySampler::new(pop, sol, noise)?;
    let payoff = PayoffPath::new(agent, strategy)?;
    let xs = collect_indexed(n, |s| {
        sampler.with_sample(s, |w, w0, mu_t, nu| payoff.payoff(w, w0, mu_t, nu))
    });
    Ok(UtilityEstimate::from_samples(&xs))
}

/// A test strategy with a label. `large` marks perturbations expected to
/// lose utility by a clearly detectable margin.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub label: String,
    pub strategy: Strategy,
    pub large: bool,
}

/// The fixed library of twenty deviations from type `k`'s equilibrium:
/// constant investment shifts `±0.1, ±0.5, ±1`, consumption scalings
/// `×0.5, ×0.8, ×1.25, ×2`, and ten bumps confined to half or a third of
/// the horizon.
pub fn perturbation_library(sol: &EquilibriumSolution, k: usize) -> Vec<Perturbation> {
    let base = Strategy::equilibrium(sol, k);
    let horizon = sol.grid().horizon();
    let everywhere = |_: f64| true;
    let first_half = |t: f64| t < 0.5 * horizon;
    let second_half = |t: f64| t >= 0.5 * horizon;
    let middle_third = |t: f64| t >= horizon / 3.0 && t < 2.0 * horizon / 3.0;

    let shift = |d: f64, on: &dyn Fn(f64) -> bool| {
        let grid = base.pi.grid();
        let pi = GridCurve::from_raw(
            grid,
            base.pi
                .values()
                .iter()
                .enumerate()
                .map(|(i, p)| if on(grid.t(i)) { p + d } else { *p })
                .collect(),
        );
        Strategy {
            pi,
            c: base.c.clone(),
        }
    };
    let scale = |f: f64, on: &dyn Fn(f64) -> bool| {
        let grid = base.c.grid();
        let c = GridCurve::from_raw(
            grid,
            base.c
                .values()
                .iter()
                .enumerate()
                .map(|(i, c)| if on(grid.t(i)) { c * f } else { *c })
                .collect(),
        );
        Strategy {
            pi: base.pi.clone(),
            c,
        }
    };
    let large_factor = |f: f64| f <= 0.5 || f >= 2.0;

    let mut out = Vec::with_capacity(20);
    for d in [0.1, -0.1, 0.5, -0.5, 1.0, -1.0] {
        out.push(Perturbation {
            label: alloc::format!("pi{d:+}"),
            strategy: shift(d, &everywhere),
            large: d.abs() >= 0.5,
        });
    }
    for f in [0.5, 0.8, 1.25, 2.0] {
        out.push(Perturbation {
            label: alloc::format!("c*{f}"),
            strategy: scale(f, &everywhere),
            large: large_factor(f),
        });
    }
    let windows: [(&str, &dyn Fn(f64) -> bool); 2] =
        [("first-half", &first_half), ("second-half", &second_half)];
    for (name, on) in windows {
        for d in [0.5, -0.5] {
            out.push(Perturbation {
                label: alloc::format!("pi{d:+}@{name}"),
                strategy: shift(d, on),
                large: true,
            });
        }
    }
    for (name, on) in windows {
        for f in [1.5, 0.5] {
            out.push(Perturbation {
                label: alloc::format!("c*{f}@{name}"),
                strategy: scale(f, on),
                large: large_factor(f),
            });
        }
    }
    out.push(Perturbation {
        label: "pi+1@middle-third".into(),
        strategy: shift(1.0, &middle_third),
        large: true,
    });
    out.push(Perturbation {
        label: "c*2@middle-third".into(),
        strategy: scale(2.0, &middle_third),
        large: true,
    });
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationRow {
    pub label: String,
    /// Paired estimate of `J(π*, c*) - J(π, c)`.
    pub delta: f64,
    pub stderr: f64,
    pub large: bool,
}

impl DeviationRow {
    /// `Δ < -2·stderr`
    pub fn profitable(&self) -> bool {
        self.delta < -2.0 * self.stderr
    }

    /// `Δ > 2·stderr`
    pub fn significant(&self) -> bool {
        self.delta > 2.0 * self.stderr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationReport {
    pub rows: Vec<DeviationRow>,
    pub equilibrium: UtilityEstimate,
    pub n_samples: usize,
}

impl DeviationReport {
    /// No perturbation is profitable and every large one is a significant loss.
    pub fn passed(&self) -> bool {
        self.rows
            .iter()
            .all(|r| !r.profitable() && (!r.large || r.significant()))
    }
}

/// Paired comparison of type `k`'s equilibrium utility against each
/// perturbation. Every strategy sees the same `(W0, W)` samples and the
/// equilibrium flow of the population.
pub fn deviation_test(
    pop: &Population,
    k: usize,
    sol: &EquilibriumSolution,
    perturbations: &[Perturbation],
    bounds: &StrategyBounds,
    n: usize,
    noise: &NoiseBundle,
) -> Result<DeviationReport> {
    if n == 0 {
        return Err(Error::Domain {
            what: "n",
            value: 0.0,
        });
    }
    if k >= pop.len() {
        return Err(Error::Domain {
            what: "type index",
            value: k as f64,
        });
    }
    for p in perturbations {
        p.strategy.check(bounds)?;
    }
    let agent = pop.agent(k);
    let sampler = UtilitySampler::new(pop, sol, noise)?;
    let eq = PayoffPath::new(agent, &Strategy::equilibrium(sol, k))?;
    let alts = perturbations
        .iter()
        .map(|p| PayoffPath::new(agent, &p.strategy))
        .collect::<Result<Vec<_>>>()?;

    let m = alts.len();
    let samples = collect_indexed(n, |s| {
        sampler.with_sample(s, |w, w0, mu_t, nu| {
            let base = eq.payoff(w, w0, mu_t, nu);
            let mut row = Vec::with_capacity(m + 1);
            row.push(base);
            row.extend(alts.iter().map(|a| base - a.payoff(w, w0, mu_t, nu)));
            row
        })
    });
    let column = |j: usize| samples.iter().map(|r| r[j]).collect::<Vec<_>>();
    let equilibrium = UtilityEstimate::from_samples(&column(0));
    let rows = perturbations
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let (delta, stderr) = mean_and_stderr(&column(j + 1));
            DeviationRow {
                label: p.label.clone(),
                delta,
                stderr,
                large: p.large,
            }
        })
        .collect();
    Ok(DeviationReport {
        rows,
        equilibrium,
        n_samples: n,
    })
}

/// Empirical against semi-analytic mean log-wealth at one probe knot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRow {
    pub path: usize,
    pub knot: usize,
    pub t: f64,
    pub empirical_mean: f64,
    pub stderr: f64,
    pub mu_hat: f64,
}

impl ProbeRow {
    /// `|empirical - μ̂|` in units of the standard error.
    pub fn deviation(&self) -> f64 {
        let gap = (self.empirical_mean - self.mu_hat).abs();
        if self.stderr > 0.0 {
            gap / self.stderr
        } else if gap <= 1e-12 * self.mu_hat.abs().max(1.0) {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub rows: Vec<ProbeRow>,
    pub n_agents: usize,
    pub stratified: bool,
}

impl ConsistencyReport {
    pub fn max_deviation(&self) -> f64 {
        self.rows
            .iter()
            .map(ProbeRow::deviation)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyOptions {
    pub n_agents: usize,
    pub n_w0_paths: usize,
    /// Probe knots `n·j/n_probes`, `j = 1..=n_probes`.
    pub n_probes: usize,
    /// Fixed per-type quotas instead of sampling types by weight.
    pub stratified: bool,
}

impl ConsistencyOptions {
    pub fn new(n_agents: usize, n_w0_paths: usize) -> Self {
        Self {
            n_agents,
            n_w0_paths,
            n_probes: 5,
            stratified: false,
        }
    }
}

fn probe_knots(n_steps: usize, n_probes: usize) -> Vec<usize> {
    let mut knots: Vec<usize> = (1..=n_probes)
        .map(|j| n_steps * j / n_probes)
        .filter(|&i| i > 0)
        .collect();
    knots.dedup();
    knots
}

/// Simulated agents on fixed common-noise paths against the flow `μ̂`.
pub fn consistency_test(
    pop: &Population,
    sol: &EquilibriumSolution,
    options: &ConsistencyOptions,
    noise: &NoiseBundle,
) -> Result<ConsistencyReport> {
    if options.n_agents < 2 {
        return Err(Error::Domain {
            what: "n_agents",
            value: options.n_agents as f64,
        });
    }
    if options.n_w0_paths == 0 || options.n_probes == 0 {
        return Err(Error::Domain {
            what: "n_w0_paths and n_probes",
            value: 0.0,
        });
    }
    let grid = pop.grid();
    if noise.grid() != grid {
        return Err(Error::Structural(
            "noise and population live on different grids".into(),
        ));
    }
    let n = grid.n_steps();
    let probes = probe_knots(n, options.n_probes);
    let paths = pop
        .types()
        .iter()
        .enumerate()
        .map(|(k, ty)| PreparedPath::new(ty, &Strategy::equilibrium(sol, k)))
        .collect::<Result<Vec<_>>>()?;
    let sampler = if pop.len() > 1 {
        Some(
            WeightedIndex::new(pop.types().iter().map(|t| t.weight))
                .map_err(|e| Error::Structural(alloc::format!("cannot sample types: {e}")))?,
        )
    } else {
        None
    };
    let quotas = stratified_quotas(pop, options.n_agents);

    let mut rows = Vec::with_capacity(options.n_w0_paths * probes.len());
    for p in 0..options.n_w0_paths {
        let w0 = noise.flow_path(p as u64);
        let flow = mean_field_flow(pop, sol, &w0)?;
        let group = p as u64 + 2;
        let agent_type = |a: usize| -> usize {
            if options.stratified {
                quotas
                    .iter()
                    .position(|&(start, end)| (start..end).contains(&a))
                    .unwrap_or(0)
            } else {
                match &sampler {
                    Some(dist) => dist.sample(&mut noise.rng(KIND_TYPE, group, a as u64)),
                    None => 0,
                }
            }
        };
        let agents = collect_indexed(options.n_agents, |a| {
            let k = agent_type(a);
            let mut w = vec![0.0; n];
            noise.fill(KIND_W, group, a as u64, &mut w);
            let path = &paths[k];
            let mut x = path.x0;
            let mut out = Vec::with_capacity(probes.len());
            let mut next = 0;
            for i in 0..n {
                x = path.step(x, i, w[i], w0[i]);
                if next < probes.len() && probes[next] == i + 1 {
                    out.push(x);
                    next += 1;
                }
            }
            (k, out)
        });
        for (j, &knot) in probes.iter().enumerate() {
            let (mean, stderr) = if options.stratified {
                let mut mean = 0.0;
                let mut var = 0.0;
                for (k, &(start, end)) in quotas.iter().enumerate() {
                    if end == start {
                        continue;
                    }
                    let xs: Vec<f64> = agents[start..end].iter().map(|(_, v)| v[j]).collect();
                    let (m, se) = mean_and_stderr(&xs);
                    let w = pop.agent(k).weight;
                    mean += w * m;
                    var += w * w * se * se;
                }
                (mean, sqrt(var))
            } else {
                let xs: Vec<f64> = agents.iter().map(|(_, v)| v[j]).collect();
                mean_and_stderr(&xs)
            };
            rows.push(ProbeRow {
                path: p,
                knot,
                t: grid.t(knot),
                empirical_mean: mean,
                stderr,
                mu_hat: flow.mu_hat.at_knot(knot),
            });
        }
    }
    Ok(ConsistencyReport {
        rows,
        n_agents: options.n_agents,
        stratified: options.stratified,
    })
}

/// Contiguous agent index ranges per type, sized by weight with the
/// remainder handed out by largest fractional part.
fn stratified_quotas(pop: &Population, n: usize) -> Vec<(usize, usize)> {
    let exact: Vec<f64> = pop.types().iter().map(|t| t.weight * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| *x as usize).collect();
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - counts[b] as f64).total_cmp(&(exact[a] - counts[a] as f64)));
    let mut left = n - counts.iter().sum::<usize>();
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if pop.agent(k).weight > 0.0 {
            counts[k] += 1;
            left -= 1;
        }
    }
    let mut start = 0;
    counts
        .into_iter()
        .map(|c| {
            let r = (start, start + c);
            start += c;
            r
        })
        .collect()
}

/// `E[e^{γX̂_T}]` of a constant strategy with constant coefficients:
/// `X̂_T` is Gaussian so the moment is explicit.
pub fn lognormal_moment(agent: &AgentType, pi: f64, c: f64, gamma: f64) -> f64 {
    let p = agent.at_knot(0);
    let horizon = agent.h.grid().horizon();
    let mean = ln(agent.x0) + (pi * p.h - c - 0.5 * pi * pi * p.total_variance()) * horizon;
    let var = pi * pi * p.total_variance() * horizon;
    exp(gamma * mean + 0.5 * gamma * gamma * var)
}

//! Explicit equilibrium of the mean-field consumption game.
//!
//! With `S = σ² + σ0²`, `κ = θγ/(1-γ)` and population expectations `E[·]`,
//! the aggregates at time `t` are
//!
//! ```text
//! φ = E[hσ0/((1-γ)S)]          ψ = E[σ0²θγ/((1-γ)S)]
//! ```
//!
//! and per type
//!
//! ```text
//! π* = h/((1-γ)S) - θγσ0 φ/((1-γ)S(1+ψ))
//! Z0 = -θγ φ/(1+ψ)
//! A  = -γ(h - θγσ0 φ/(1+ψ))²/(2(1-γ)S) - (θγφ)²/(2(1+ψ)²)
//!      + θγ E[π* h] - θγ/2 E[π*² S]
//! B  = κ E[A/(1-γ)]/(1+E[κ]) - A/(1-γ)
//! D  = exp(log α/(1-γ) - κ E[log α/(1-γ)]/(1+E[κ]))
//! c* = D e^{-∫_t^T B} / (1 + D ∫_t^T e^{-∫_s^T B} ds)
//! ```
//!
//! `c*` is also the solution of the Riccati equation `y' = B y + y²`,
//! `y(T) = D`; [`solve_riccati_numeric`] integrates that ODE directly as an
//! independent route.

use alloc::vec::Vec;

use crate::grid::{GridCurve, TimeGrid};
use crate::math::{exp, expm1, ln, ln1p, sqrt};
use crate::odequad::{exp_integral_right, rk4_integrate, trapezoid_cumulative, Anchor, Direction};
use crate::population::{AgentType, LocalParams, Population};
use crate::{Error, Result};

/// `1 + x` closer to zero than this is treated as singular.
pub const SINGULAR_TOL: f64 = 1e-12;

/// Below this `|B|` the constant-coefficient formula uses its `B = 0` branch.
pub const B_ZERO_TOL: f64 = 1e-12;

/// Largest `|∫_t^T B|` accepted before `exp` would leave double range.
pub const MAX_EXPONENT: f64 = 700.0;

/// Population aggregates at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregates {
    pub t: f64,
    /// `φ = E[hσ0/((1-γ)S)]`
    pub phi: f64,
    /// `ψ = E[σ0²θγ/((1-γ)S)]`
    pub psi: f64,
    /// `E[π* h]`
    pub mean_pi_h: f64,
    /// `E[π*² S]`
    pub mean_pi_sq_var: f64,
    /// `E[θγ/(1-γ)]`
    pub mean_kappa: f64,
    /// `E[A/(1-γ)]`
    pub mean_a_scaled: f64,
}

impl Aggregates {
    /// Aggregates of a weighted set of local coefficient snapshots.
    pub fn compute(t: f64, params: &[(f64, LocalParams)]) -> Result<Self> {
        let mean =
            |f: &dyn Fn(&LocalParams) -> f64| -> f64 { params.iter().map(|(w, p)| w * f(p)).sum() };
        let phi = mean(&|p| p.h * p.sigma0 / p.merton_denominator());
        let psi = mean(&|p| p.sigma0 * p.sigma0 * p.theta_gamma() / p.merton_denominator());
        let mean_kappa = mean(&|p| p.kappa());
        check_nonsingular("psi", t, psi)?;
        check_nonsingular("E[theta*gamma/(1-gamma)]", t, mean_kappa)?;

        let mut agg = Self {
            t,
            phi,
            psi,
            mean_pi_h: 0.0,
            mean_pi_sq_var: 0.0,
            mean_kappa,
            mean_a_scaled: 0.0,
        };
        agg.mean_pi_h = mean(&|p| investment(p, &agg) * p.h);
        agg.mean_pi_sq_var = mean(&|p| {
            let pi = investment(p, &agg);
            pi * pi * p.total_variance()
        });
        agg.mean_a_scaled = mean(&|p| coefficient_a(p, &agg) / (1.0 - p.gamma));
        Ok(agg)
    }

    /// `φ/(1+ψ)`
    pub fn phi_over_one_plus_psi(&self) -> f64 {
        self.phi / (1.0 + self.psi)
    }
}

fn check_nonsingular(what: &'static str, t: f64, x: f64) -> Result<()> {
    if (1.0 + x).abs() < SINGULAR_TOL || !x.is_finite() {
        return Err(Error::SingularAggregate {
            what,
            t,
            value: 1.0 + x,
        });
    }
    Ok(())
}

/// Aggregates that do not depend on time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticAggregates {
    /// `E[θγ/(1-γ)]`
    pub mean_kappa: f64,
    /// `E[log α/(1-γ)]`
    pub mean_log_alpha_scaled: f64,
}

impl StaticAggregates {
    pub fn compute(pop: &Population) -> Result<Self> {
        let mean_kappa = pop.expect_by_index(|k| pop.agent(k).at_knot(0).kappa());
        check_nonsingular("E[theta*gamma/(1-gamma)]", 0.0, mean_kappa)?;
        let mean_log_alpha_scaled =
            pop.expect_by_index(|k| pop.agent(k).at_knot(0).log_alpha_scaled());
        Ok(Self {
            mean_kappa,
            mean_log_alpha_scaled,
        })
    }
}

pub(crate) fn snapshot_at_knot(pop: &Population, i: usize) -> Vec<(f64, LocalParams)> {
    pop.types()
        .iter()
        .map(|ty| (ty.weight, ty.at_knot(i)))
        .collect()
}

pub(crate) fn snapshot_at(pop: &Population, t: f64) -> Result<Vec<(f64, LocalParams)>> {
    pop.types()
        .iter()
        .map(|ty| Ok((ty.weight, ty.at(t)?)))
        .collect()
}

pub fn aggregates_at(pop: &Population, t: f64) -> Result<Aggregates> {
    Aggregates::compute(t, &snapshot_at(pop, t)?)
}

pub fn aggregates_at_knot(pop: &Population, i: usize) -> Result<Aggregates> {
    Aggregates::compute(pop.grid().t(i), &snapshot_at_knot(pop, i))
}

// ---------------------------------------------------------------------------
// Per-type local formulas. The type's own coefficients enter through `p`,
// the population only through `agg`.

/// Equilibrium investment rate.
pub fn investment(p: &LocalParams, agg: &Aggregates) -> f64 {
    let m = p.merton_denominator();
    p.h / m - p.theta_gamma() * p.sigma0 * agg.phi / (m * (1.0 + agg.psi))
}

/// Common-noise integrand `Z0 = -θγφ/(1+ψ)` of the backward equation.
pub fn z0(p: &LocalParams, agg: &Aggregates) -> f64 {
    -p.theta_gamma() * agg.phi_over_one_plus_psi()
}

pub fn coefficient_a(p: &LocalParams, agg: &Aggregates) -> f64 {
    let tg = p.theta_gamma();
    let q = agg.phi_over_one_plus_psi();
    let shifted = p.h - tg * p.sigma0 * q;
    -p.gamma * shifted * shifted / (2.0 * p.merton_denominator()) - tg * tg * q * q / 2.0
        + tg * agg.mean_pi_h
        - 0.5 * tg * agg.mean_pi_sq_var
}

pub fn coefficient_b(p: &LocalParams, agg: &Aggregates) -> f64 {
    p.kappa() * agg.mean_a_scaled / (1.0 + agg.mean_kappa) - coefficient_a(p, agg) / (1.0 - p.gamma)
}

pub fn coefficient_d(p: &LocalParams, stat: &StaticAggregates) -> f64 {
    exp(p.log_alpha_scaled() - p.kappa() * stat.mean_log_alpha_scaled / (1.0 + stat.mean_kappa))
}

/// `∂π*/∂σ0` with the population aggregates held fixed.
pub fn investment_sigma0_slope(p: &LocalParams, agg: &Aggregates) -> f64 {
    let s = p.total_variance();
    let m2 = (1.0 - p.gamma) * s * s;
    -2.0 * p.h * p.sigma0 / m2
        - p.theta_gamma() * (p.sigma * p.sigma - p.sigma0 * p.sigma0) / m2
            * agg.phi_over_one_plus_psi()
}

// ---------------------------------------------------------------------------
// Consumption and the Riccati equation.

/// Consumption curve and `log L` where `L_t = e^{∫_t^T B} + D∫_t^T e^{∫_t^s B} ds`,
/// so that `c* = D/L`.
pub fn consumption_from_b(b: &GridCurve, d: f64) -> Result<(GridCurve, GridCurve)> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::Domain {
            what: "D",
            value: d,
        });
    }
    let grid = b.grid();
    let int_b = trapezoid_cumulative(b, Anchor::Right);
    if let Some(i) = int_b.values().iter().position(|v| v.abs() > MAX_EXPONENT) {
        return Err(Error::Range {
            what: "integral of B",
            t: grid.t(i),
            value: int_b.at_knot(i),
        });
    }
    let discount = int_b.map(|v| exp(-v));
    let nested = exp_integral_right(&int_b);
    let mut c = Vec::with_capacity(grid.len());
    let mut log_l = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let denom = 1.0 + d * nested.at_knot(i);
        let ci = d * discount.at_knot(i) / denom;
        if !(ci.is_finite() && ci > 0.0) {
            return Err(Error::Range {
                what: "consumption",
                t: grid.t(i),
                value: ci,
            });
        }
        c.push(ci);
        log_l.push(int_b.at_knot(i) + ln1p(d * nested.at_knot(i)));
    }
    Ok((
        GridCurve::from_raw(grid, c),
        GridCurve::from_raw(grid, log_l),
    ))
}

/// Constant-coefficient consumption rate:
/// `{-1/B + (1/D + 1/B) e^{B(T-t)}}^{-1}`, or `1/(T - t + 1/D)` when `B = 0`.
pub fn constant_consumption(b: f64, d: f64, horizon: f64, t: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::Domain {
            what: "D",
            value: d,
        });
    }
    let tau = horizon - t;
    if !(tau >= 0.0) {
        return Err(Error::Domain {
            what: "t",
            value: t,
        });
    }
    if b.abs() < B_ZERO_TOL {
        return Ok(1.0 / (tau + 1.0 / d));
    }
    // -1/B + (1/D + 1/B)e^{Bτ} = e^{Bτ}/D + (e^{Bτ} - 1)/B
    Ok(1.0 / (exp(b * tau) / d + expm1(b * tau) / b))
}

/// Log-utility equilibrium: `π* = h/(σ² + σ0²)`, `c* = α/(1 + α(T - t))`.
/// Independent of competition and of the rest of the population.
pub fn log_utility_ne(
    alpha: f64,
    h: f64,
    sigma: f64,
    sigma0: f64,
    t: f64,
    horizon: f64,
) -> Result<(f64, f64)> {
    let s = sigma * sigma + sigma0 * sigma0;
    if !(s > 0.0) {
        return Err(Error::Domain {
            what: "sigma^2 + sigma0^2",
            value: s,
        });
    }
    if !(alpha > 0.0) {
        return Err(Error::Domain {
            what: "alpha",
            value: alpha,
        });
    }
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::Domain {
            what: "t",
            value: t,
        });
    }
    Ok((h / s, alpha / (1.0 + alpha * (horizon - t))))
}

// ---------------------------------------------------------------------------
// Equilibrium over the grid.

/// Curves of one type's equilibrium response.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeCurves {
    pub pi_star: GridCurve,
    pub c_star: GridCurve,
    pub a_coeff: GridCurve,
    pub b_coeff: GridCurve,
    pub d_coeff: f64,
    pub z0: GridCurve,
    /// `log L = log(D/c*)`
    pub log_l: GridCurve,
}

/// The unique equilibrium on the population grid.
///
/// The martingale parts `Z̃`, `Z̃0` of the backward equation vanish
/// identically; see [`EquilibriumSolution::z_tilde`].
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolution {
    grid: TimeGrid,
    pub types: Vec<TypeCurves>,
    pub y_tilde: Vec<GridCurve>,
    pub phi: GridCurve,
    pub psi: GridCurve,
    pub aggregates: Vec<Aggregates>,
    pub statics: StaticAggregates,
    /// `E[log D]`
    pub mean_log_d: f64,
    /// `E[log L_t]`
    pub mean_log_l: GridCurve,
}

impl EquilibriumSolution {
    /// Solves on `pop`'s grid. The population must pass validation.
    pub fn solve(pop: &Population) -> Result<Self> {
        let report = pop.validate();
        if !report.ok() {
            return Err(Error::Invalid(report));
        }
        let grid = pop.grid();
        let aggregates = (0..grid.len())
            .map(|i| aggregates_at_knot(pop, i))
            .collect::<Result<Vec<_>>>()?;
        let statics = StaticAggregates::compute(pop)?;
        let types = pop
            .types()
            .iter()
            .map(|ty| respond(ty, grid, &aggregates, &statics))
            .collect::<Result<Vec<_>>>()?;

        let mean_log_d = pop.expect_by_index(|k| ln(types[k].d_coeff));
        let mean_log_l = GridCurve::from_raw(
            grid,
            (0..grid.len())
                .map(|i| pop.expect_by_index(|k| types[k].log_l.at_knot(i)))
                .collect(),
        );
        let y_tilde = pop
            .types()
            .iter()
            .zip(&types)
            .map(|(ty, tc)| tilde_y_curve(ty, tc, mean_log_d, &mean_log_l))
            .collect();
        let phi = GridCurve::from_raw(grid, aggregates.iter().map(|a| a.phi).collect());
        let psi = GridCurve::from_raw(grid, aggregates.iter().map(|a| a.psi).collect());
        Ok(Self {
            grid,
            types,
            y_tilde,
            phi,
            psi,
            aggregates,
            statics,
            mean_log_d,
            mean_log_l,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn n_types(&self) -> usize {
        self.types.len()
    }

    /// Idiosyncratic martingale integrand of the backward equation (zero).
    pub fn z_tilde(&self) -> f64 {
        0.0
    }

    /// Common-noise martingale integrand of the backward equation (zero).
    pub fn z0_tilde(&self) -> f64 {
        0.0
    }

    /// Best response of an agent of type `agent` who takes this
    /// equilibrium's aggregates as given (a measure-zero deviation from the
    /// population). For a member type this reproduces its equilibrium curves.
    pub fn respond(&self, agent: &AgentType) -> Result<TypeCurves> {
        respond(agent, self.grid, &self.aggregates, &self.statics)
    }

    /// `Ỹ` for an agent responding to this equilibrium.
    pub fn y_tilde_for(&self, agent: &AgentType, curves: &TypeCurves) -> GridCurve {
        tilde_y_curve(agent, curves, self.mean_log_d, &self.mean_log_l)
    }
}

fn respond(
    agent: &AgentType,
    grid: TimeGrid,
    aggregates: &[Aggregates],
    statics: &StaticAggregates,
) -> Result<TypeCurves> {
    let n = grid.len();
    let (mut pi, mut a, mut b, mut z) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for (i, agg) in aggregates.iter().enumerate() {
        let p = agent.at_knot(i);
        pi.push(investment(&p, agg));
        a.push(coefficient_a(&p, agg));
        b.push(coefficient_b(&p, agg));
        z.push(z0(&p, agg));
    }
    let d = coefficient_d(&agent.at_knot(0), statics);
    let b_coeff = GridCurve::from_raw(grid, b);
    let (c_star, log_l) = consumption_from_b(&b_coeff, d)?;
    Ok(TypeCurves {
        pi_star: GridCurve::from_raw(grid, pi),
        c_star,
        a_coeff: GridCurve::from_raw(grid, a),
        b_coeff,
        d_coeff: d,
        z0: GridCurve::from_raw(grid, z),
        log_l,
    })
}

fn tilde_y_curve(
    agent: &AgentType,
    tc: &TypeCurves,
    mean_log_d: f64,
    mean_log_l: &GridCurve,
) -> GridCurve {
    let tg = agent.theta * agent.gamma;
    let one_minus = 1.0 - agent.gamma;
    let log_d = ln(tc.d_coeff);
    let log_alpha = ln(agent.alpha);
    let values = (0..tc.log_l.values().len())
        .map(|i| {
            -tg * mean_log_d - one_minus * log_d
                + tg * mean_log_l.at_knot(i)
                + one_minus * tc.log_l.at_knot(i)
                + log_alpha
        })
        .collect();
    GridCurve::from_raw(tc.log_l.grid(), values)
}

// ---------------------------------------------------------------------------
// Pointwise entry points.

fn check_type(pop: &Population, k: usize) -> Result<()> {
    if k >= pop.len() {
        return Err(Error::Domain {
            what: "type index",
            value: k as f64,
        });
    }
    Ok(())
}

/// `(φ_t, ψ_t)`
pub fn phi_psi(pop: &Population, t: f64) -> Result<(f64, f64)> {
    let agg = aggregates_at(pop, t)?;
    Ok((agg.phi, agg.psi))
}

pub fn coeff_a(pop: &Population, k: usize, t: f64) -> Result<f64> {
    check_type(pop, k)?;
    let agg = aggregates_at(pop, t)?;
    Ok(coefficient_a(&pop.agent(k).at(t)?, &agg))
}

pub fn coeff_b(pop: &Population, k: usize, t: f64) -> Result<f64> {
    check_type(pop, k)?;
    let agg = aggregates_at(pop, t)?;
    Ok(coefficient_b(&pop.agent(k).at(t)?, &agg))
}

pub fn coeff_d(pop: &Population, k: usize) -> Result<f64> {
    check_type(pop, k)?;
    Ok(coefficient_d(
        &pop.agent(k).at_knot(0),
        &StaticAggregates::compute(pop)?,
    ))
}

pub fn optimal_investment(pop: &Population, k: usize, t: f64) -> Result<f64> {
    check_type(pop, k)?;
    let agg = aggregates_at(pop, t)?;
    Ok(investment(&pop.agent(k).at(t)?, &agg))
}

pub fn common_noise_z0(pop: &Population, k: usize, t: f64) -> Result<f64> {
    check_type(pop, k)?;
    let agg = aggregates_at(pop, t)?;
    Ok(z0(&pop.agent(k).at(t)?, &agg))
}

/// `c*_t` for type `k`. Solves the whole equilibrium; prefer
/// [`EquilibriumSolution::solve`] when more than one value is needed.
pub fn optimal_consumption(pop: &Population, k: usize, t: f64) -> Result<f64> {
    check_type(pop, k)?;
    EquilibriumSolution::solve(pop)?.types[k].c_star.eval(t)
}

/// `Ỹ_t` for type `k`; see [`optimal_consumption`] for cost.
pub fn tilde_y(pop: &Population, k: usize, t: f64) -> Result<f64> {
    check_type(pop, k)?;
    EquilibriumSolution::solve(pop)?.y_tilde[k].eval(t)
}

/// Backward RK4 solution of `y' = B y + y²`, `y(T) = D`, with `B` the
/// piecewise-linear curve through its knot values.
pub fn solve_riccati_numeric(pop: &Population, k: usize) -> Result<GridCurve> {
    check_type(pop, k)?;
    let stat = StaticAggregates::compute(pop)?;
    let agent = pop.agent(k);
    let d = coefficient_d(&agent.at_knot(0), &stat);
    let b = (0..pop.grid().len())
        .map(|i| {
            Ok(coefficient_b(
                &agent.at_knot(i),
                &aggregates_at_knot(pop, i)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let b = GridCurve::from_raw(pop.grid(), b);
    let rhs = |t: f64, y: f64| b.eval(t).map_or(f64::NAN, |b| b * y + y * y);
    rk4_integrate(pop.grid(), rhs, d, Direction::Backward)
}

// ---------------------------------------------------------------------------
// Thresholds of `∂π*/∂σ0`.

/// Roots in `σ0` of `∂π*/∂σ0 = 0` with aggregates held fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub sigma0_upper: f64,
    pub sigma0_lower: f64,
    /// `false` when `θγφ = 0` or `h ≤ 0`; the roots are then NaN.
    pub valid: bool,
}

impl Thresholds {
    /// `σ̄0 ∨ σ̲0`. For `θγφ > 0`, `π*` decreases in `σ0` below this and
    /// increases above it.
    pub fn binding(&self) -> f64 {
        self.sigma0_upper.max(self.sigma0_lower)
    }
}

pub fn thresholds(p: &LocalParams, agg: &Aggregates) -> Thresholds {
    let tgq = p.theta_gamma() * agg.phi_over_one_plus_psi();
    if tgq == 0.0 || !(p.h > 0.0) {
        return Thresholds {
            sigma0_upper: f64::NAN,
            sigma0_lower: f64::NAN,
            valid: false,
        };
    }
    let root = sqrt(p.h * p.h + tgq * tgq * p.sigma * p.sigma);
    Thresholds {
        sigma0_upper: (p.h + root) / tgq,
        sigma0_lower: (p.h - root) / tgq,
        valid: true,
    }
}

pub fn sigma0_thresholds(pop: &Population, k: usize, t: f64) -> Result<Thresholds> {
    check_type(pop, k)?;
    let agg = aggregates_at(pop, t)?;
    Ok(thresholds(&pop.agent(k).at(t)?, &agg))
}

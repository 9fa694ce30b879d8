//! Checkable identities of the equilibrium: the backward equation's driver
//! and its residual, the optimality drift, the value function and the
//! forward-backward relations.
//!
//! Expectations conditional on the common noise reduce to population
//! expectations because every coefficient is deterministic.

use alloc::vec::Vec;

use crate::closedform::{snapshot_at, snapshot_at_knot, EquilibriumSolution, SINGULAR_TOL};
use crate::grid::GridCurve;
use crate::math::{exp, expm1, ln};
use crate::montecarlo::MeanFieldFlow;
use crate::population::{LocalParams, Population};
use crate::{Error, Result};

/// Population-wide pieces of `J` at one instant.
struct JContext {
    /// `E[f^{σ0h} + f^{σ0σ}Z̃ + f^{σ0σ0}Z̃0] / (1 + E[θγ f^{σ0σ0}])`
    m: f64,
    /// `E[f^{hh} + f^{σh}Z̃ + f^{σ0h}Z̃0]`
    mean_h_block: f64,
    /// `E[θγ f^{σ0h}]`
    mean_tg_sigma0_h: f64,
    /// `E[½ S {brace}²]`
    mean_half_var_brace_sq: f64,
    z: f64,
    z0: f64,
}

fn brace(p: &LocalParams, z: f64, z0: f64, m: f64) -> f64 {
    let d = p.merton_denominator();
    (p.h + p.sigma * z + p.sigma0 * z0 - p.theta_gamma() * p.sigma0 * m) / d
}

impl JContext {
    fn new(t: f64, params: &[(f64, LocalParams)], z: f64, z0: f64) -> Result<Self> {
        let mean =
            |f: &dyn Fn(&LocalParams) -> f64| -> f64 { params.iter().map(|(w, p)| w * f(p)).sum() };
        let denom = 1.0 + mean(&|p| p.theta_gamma() * p.sigma0 * p.sigma0 / p.merton_denominator());
        if denom.abs() < SINGULAR_TOL || !denom.is_finite() {
            return Err(Error::SingularAggregate {
                what: "1 + E[theta*gamma*f^{sigma0 sigma0}]",
                t,
                value: denom,
            });
        }
        let m = mean(&|p| p.sigma0 * (p.h + p.sigma * z + p.sigma0 * z0) / p.merton_denominator())
            / denom;
        let mean_h_block =
            mean(&|p| p.h * (p.h + p.sigma * z + p.sigma0 * z0) / p.merton_denominator());
        let mean_tg_sigma0_h = mean(&|p| p.theta_gamma() * p.sigma0 * p.h / p.merton_denominator());
        let mean_half_var_brace_sq = mean(&|p| {
            let b = brace(p, z, z0, m);
            0.5 * p.total_variance() * b * b
        });
        Ok(Self {
            m,
            mean_h_block,
            mean_tg_sigma0_h,
            mean_half_var_brace_sq,
            z,
            z0,
        })
    }

    fn j(&self, p: &LocalParams) -> f64 {
        let tg = p.theta_gamma();
        let b = brace(p, self.z, self.z0, self.m);
        let shifted = self.z0 - tg * self.m;
        -tg * self.mean_h_block
            + tg * self.mean_tg_sigma0_h * self.m
            + tg * self.mean_half_var_brace_sq
            + 0.5 * self.z * self.z
            + 0.5 * shifted * shifted
            + 0.5 * p.gamma * (1.0 - p.gamma) * p.total_variance() * b * b
    }

    /// Investment rate implied by `Z̃`, `Z̃0`.
    fn investment(&self, p: &LocalParams) -> f64 {
        brace(p, self.z, self.z0, self.m)
    }
}

fn check_type(pop: &Population, k: usize) -> Result<()> {
    if k >= pop.len() {
        return Err(Error::Domain {
            what: "type index",
            value: k as f64,
        });
    }
    Ok(())
}

/// The quadratic part `J` of the backward driver for type `k` at time `t`.
pub fn eval_j(pop: &Population, k: usize, t: f64, z_tilde: f64, z0_tilde: f64) -> Result<f64> {
    check_type(pop, k)?;
    let params = snapshot_at(pop, t)?;
    Ok(JContext::new(t, &params, z_tilde, z0_tilde)?.j(&params[k].1))
}

/// Arguments of the backward driver for one type at one instant.
#[derive(Debug, Clone)]
pub struct DriverInput<'a> {
    pub population: &'a Population,
    pub type_index: usize,
    pub t: f64,
    /// `Ỹ_t` of every type.
    pub y_tilde: Vec<f64>,
    pub z_tilde: f64,
    pub z0_tilde: f64,
}

/// Exponential terms `exp{log α/(1-γ) - Ỹ/(1-γ) + κ(E[Ỹ/(1-γ)] - E[log α/(1-γ)])/(1+E[κ])}`
/// of every type. At the equilibrium `Ỹ` these are the consumption rates.
pub fn consumption_from_y_tilde(
    params: &[(f64, LocalParams)],
    y_tilde: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    if params.len() != y_tilde.len() {
        return Err(Error::Structural(alloc::format!(
            "expected {} y_tilde values, got {}",
            params.len(),
            y_tilde.len()
        )));
    }
    if let Some(y) = y_tilde.iter().find(|y| !y.is_finite()) {
        return Err(Error::Domain {
            what: "y_tilde",
            value: *y,
        });
    }
    let mut mean_kappa = 0.0;
    let mut mean_y_scaled = 0.0;
    let mut mean_log_alpha_scaled = 0.0;
    for ((w, p), y) in params.iter().zip(y_tilde) {
        mean_kappa += w * p.kappa();
        mean_y_scaled += w * y / (1.0 - p.gamma);
        mean_log_alpha_scaled += w * p.log_alpha_scaled();
    }
    if (1.0 + mean_kappa).abs() < SINGULAR_TOL {
        return Err(Error::SingularAggregate {
            what: "E[theta*gamma/(1-gamma)]",
            t,
            value: 1.0 + mean_kappa,
        });
    }
    let shift = (mean_y_scaled - mean_log_alpha_scaled) / (1.0 + mean_kappa);
    params
        .iter()
        .zip(y_tilde)
        .map(|((_, p), y)| {
            let exponent = p.log_alpha_scaled() - y / (1.0 - p.gamma) + p.kappa() * shift;
            if exponent.abs() > crate::closedform::MAX_EXPONENT {
                return Err(Error::Range {
                    what: "driver exponent",
                    t,
                    value: exponent,
                });
            }
            Ok(exp(exponent))
        })
        .collect()
}

fn driver_from(
    params: &[(f64, LocalParams)],
    k: usize,
    t: f64,
    y_tilde: &[f64],
    z: f64,
    z0: f64,
) -> Result<f64> {
    let c = consumption_from_y_tilde(params, y_tilde, t)?;
    let ctx = JContext::new(t, params, z, z0)?;
    let p = &params[k].1;
    let mean_c: f64 = params.iter().zip(&c).map(|((w, _), c)| w * c).sum();
    Ok(ctx.j(p) + (1.0 - p.gamma) * c[k] + p.theta_gamma() * mean_c)
}

/// Driver `J + (1-γ)e^{…} + θγE[e^{…}]` of the backward equation for `Ỹ`.
pub fn bsde_driver(input: &DriverInput<'_>) -> Result<f64> {
    check_type(input.population, input.type_index)?;
    let params = snapshot_at(input.population, input.t)?;
    driver_from(
        &params,
        input.type_index,
        input.t,
        &input.y_tilde,
        input.z_tilde,
        input.z0_tilde,
    )
}

/// Residual `dỸ/dt + driver` of the backward equation on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// Per type; endpoint values use one-sided differences.
    pub residuals: Vec<GridCurve>,
    /// Largest `|residual|` over interior knots and types.
    pub sup_norm: f64,
    pub n_steps: usize,
}

/// Residual of the equilibrium `Ỹ` with `Z̃ = Z̃0 = 0`.
pub fn bsde_residual(pop: &Population, sol: &EquilibriumSolution) -> Result<ResidualReport> {
    residual_of(pop, &sol.y_tilde)
}

/// Residual of arbitrary `Ỹ` curves (one per type) with `Z̃ = Z̃0 = 0`.
pub fn residual_of(pop: &Population, y_tilde: &[GridCurve]) -> Result<ResidualReport> {
    if y_tilde.len() != pop.len() {
        return Err(Error::Structural(alloc::format!(
            "expected {} curves, got {}",
            pop.len(),
            y_tilde.len()
        )));
    }
    let grid = pop.grid();
    let n = grid.n_steps();
    let dt = grid.dt();
    let mut residuals: Vec<Vec<f64>> = (0..pop.len()).map(|_| Vec::with_capacity(n + 1)).collect();
    let mut sup_norm: f64 = 0.0;
    let mut ys = Vec::with_capacity(pop.len());
    for i in 0..=n {
        ys.clear();
        ys.extend(y_tilde.iter().map(|y| y.at_knot(i)));
        let params = snapshot_at_knot(pop, i);
        let c = consumption_from_y_tilde(&params, &ys, grid.t(i))?;
        let ctx = JContext::new(grid.t(i), &params, 0.0, 0.0)?;
        let mean_c: f64 = params.iter().zip(&c).map(|((w, _), c)| w * c).sum();
        for (k, y) in y_tilde.iter().enumerate() {
            let v = y.values();
            let slope = if i == 0 {
                (v[1] - v[0]) / dt
            } else if i == n {
                (v[n] - v[n - 1]) / dt
            } else {
                (v[i + 1] - v[i - 1]) / (2.0 * dt)
            };
            let p = &params[k].1;
            let r = slope + ctx.j(p) + (1.0 - p.gamma) * c[k] + p.theta_gamma() * mean_c;
            if i != 0 && i != n {
                sup_norm = sup_norm.max(r.abs());
            }
            residuals[k].push(r);
        }
    }
    Ok(ResidualReport {
        residuals: residuals
            .into_iter()
            .map(|r| GridCurve::from_raw(grid, r))
            .collect(),
        sup_norm,
        n_steps: n,
    })
}

/// State entering the optimality drift: the backward component `Y`, the
/// log consumption index `ν̂`, the local coefficients and the integrands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MopState {
    pub y: f64,
    pub nu_hat: f64,
    pub params: LocalParams,
    pub z: f64,
    pub z0: f64,
}

impl MopState {
    /// Maximizing investment rate `(h + σZ + σ0Z0)/((1-γ)S)`.
    pub fn best_investment(&self) -> f64 {
        let p = &self.params;
        (p.h + p.sigma * self.z + p.sigma0 * self.z0) / p.merton_denominator()
    }

    /// `log K/(1-γ)`, the log of the maximizing consumption rate, with `K = αe^{-Y-θγν̂}`.
    pub fn log_best_consumption(&self) -> f64 {
        let p = &self.params;
        (ln(p.alpha) - self.y - p.theta_gamma() * self.nu_hat) / (1.0 - p.gamma)
    }

    pub fn best_consumption(&self) -> f64 {
        exp(self.log_best_consumption())
    }
}

/// Drift of the utility process divided by its positive prefactor.
/// Non-positive for every `(π, c)` and zero at the maximizer.
///
/// The consumption group `-c + (α/γ)e^{-Y}c^γe^{-θγν̂} - ((1-γ)/γ)K^{1/(1-γ)}`
/// equals `c*((r^γ - 1)/γ - (r - 1))` with `r = c/c*`; that form is used near
/// `r = 1` where the literal one cancels.
pub fn mop_drift(state: &MopState, pi: f64, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::Domain {
            what: "c",
            value: c,
        });
    }
    let p = &state.params;
    let gap = pi - state.best_investment();
    let investment_part = -0.5 * p.merton_denominator() * gap * gap;
    let log_best = state.log_best_consumption();
    let log_r = ln(c) - log_best;
    let consumption_part = if log_r.abs() <= 1.0 {
        let c_best = exp(log_best);
        c_best * (expm1(p.gamma * log_r) / p.gamma - expm1(log_r))
    } else {
        let log_k = (1.0 - p.gamma) * log_best;
        exp(log_k + p.gamma * ln(c)) / p.gamma - c - (1.0 - p.gamma) / p.gamma * exp(log_best)
    };
    Ok(investment_part + consumption_part)
}

/// Equilibrium value `(1/γ)exp(γ log x0 + Ỹ_0 - θγE[log x0])` of type `k`.
pub fn value_function(pop: &Population, k: usize, sol: &EquilibriumSolution) -> Result<f64> {
    check_type(pop, k)?;
    let agent = pop.agent(k);
    let tg = agent.theta * agent.gamma;
    let y0 = sol.y_tilde[k].first() - tg * pop.mean_log_wealth();
    Ok(exp(agent.gamma * ln(agent.x0) + y0) / agent.gamma)
}

/// Largest discrepancies of the forward-backward relations over all knots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelationReport {
    /// Investment implied by `Z̃ = Z̃0 = 0` against the closed form.
    pub investment: f64,
    /// `ν̂` from the backward relation against `E[log c*] + μ̂` on the flow.
    pub nu_hat: f64,
    /// `Z0 = Z̃0 - θγE[π*σ0]` against the closed form.
    pub z0: f64,
}

pub fn relation_check(
    pop: &Population,
    sol: &EquilibriumSolution,
    flow: &MeanFieldFlow,
) -> Result<RelationReport> {
    let grid = pop.grid();
    let mut report = RelationReport {
        investment: 0.0,
        nu_hat: 0.0,
        z0: 0.0,
    };
    for i in 0..grid.len() {
        let params = snapshot_at_knot(pop, i);
        let ctx = JContext::new(grid.t(i), &params, 0.0, 0.0)?;
        let mut mean_kappa = 0.0;
        let mut mean_gap = 0.0;
        let mut mean_pi_sigma0 = 0.0;
        for (k, (w, p)) in params.iter().enumerate() {
            mean_kappa += w * p.kappa();
            mean_gap += w * (p.log_alpha_scaled() - sol.y_tilde[k].at_knot(i) / (1.0 - p.gamma));
            mean_pi_sigma0 += w * sol.types[k].pi_star.at_knot(i) * p.sigma0;
            let err = (ctx.investment(p) - sol.types[k].pi_star.at_knot(i)).abs();
            report.investment = report.investment.max(err);
        }
        for (k, (_, p)) in params.iter().enumerate() {
            let z0 = sol.z0_tilde() - p.theta_gamma() * mean_pi_sigma0;
            report.z0 = report.z0.max((z0 - sol.types[k].z0.at_knot(i)).abs());
        }
        let nu_relation = flow.mu_hat.at_knot(i) + mean_gap / (1.0 + mean_kappa);
        report.nu_hat = report
            .nu_hat
            .max((nu_relation - flow.nu_hat.at_knot(i)).abs());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closedform::{coeff_a, optimal_consumption};
    use crate::grid::TimeGrid;
    use crate::population::{AgentType, Bounds};
    use alloc::vec;
    use proptest::prelude::*;

    fn single(n: usize, gamma: f64, theta: f64, alpha: f64, h: f64, s: f64, s0: f64) -> Population {
        let g = TimeGrid::new(1.0, n).unwrap();
        Population::single(
            AgentType::constant(g, 1.0, 1.0, gamma, theta, alpha, h, s, s0),
            g,
            Bounds::default(),
        )
        .unwrap()
    }

    fn two_types(n: usize) -> Population {
        let g = TimeGrid::new(1.0, n).unwrap();
        let a = AgentType {
            h: GridCurve::from_fn(g, |t| 0.06 + 0.03 * t),
            sigma: GridCurve::from_fn(g, |t| 0.2 + 0.05 * t * t),
            sigma0: GridCurve::from_fn(g, |t| 0.15 - 0.05 * t),
            ..AgentType::constant(g, 0.4, 1.0, 0.5, 0.6, 1.2, 0.0, 0.0, 0.0)
        };
        let b = AgentType {
            h: GridCurve::from_fn(g, |t| 0.04 + 0.02 * libm::sin(3.0 * t)),
            sigma: GridCurve::constant(g, 0.25),
            sigma0: GridCurve::from_fn(g, |t| 0.1 + 0.1 * t),
            ..AgentType::constant(g, 0.6, 2.0, -1.0, 0.3, 0.8, 0.0, 0.0, 0.0)
        };
        Population::new(vec![a, b], g, Bounds::default()).unwrap()
    }

    #[test]
    fn j_without_competition_collapses() {
        let pop = single(10, 0.5, 0.0, 1.0, 0.1, 0.2, 0.1);
        let expected = 0.5 * 0.01 / (2.0 * 0.5 * 0.05);
        assert!((eval_j(&pop, 0, 0.3, 0.0, 0.0).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn j_vanishes_without_drift_or_integrands() {
        let pop = single(10, -2.0, 0.7, 1.0, 0.0, 0.2, 0.3);
        assert_eq!(eval_j(&pop, 0, 0.0, 0.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn j_equals_minus_a_on_mixed_population() {
        let pop = two_types(20);
        for k in 0..2 {
            for t in [0.0, 0.35, 1.0] {
                let j = eval_j(&pop, k, t, 0.0, 0.0).unwrap();
                let a = coeff_a(&pop, k, t).unwrap();
                assert!((j + a).abs() <= 1e-9 * a.abs().max(1e-300), "{j} {a}");
            }
        }
    }

    #[test]
    fn driver_oracle_without_competition() {
        let pop = single(10, 0.5, 0.0, 1.0, 0.1, 0.2, 0.0);
        let input = DriverInput {
            population: &pop,
            type_index: 0,
            t: 0.0,
            y_tilde: vec![0.0],
            z_tilde: 0.0,
            z0_tilde: 0.0,
        };
        let expected = 0.5 * 0.01 / (2.0 * 0.5 * 0.04) + 0.5;
        assert!((bsde_driver(&input).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn exponential_term_is_equilibrium_consumption() {
        let pop = two_types(200);
        let sol = EquilibriumSolution::solve(&pop).unwrap();
        for i in [0usize, 50, 123, 200] {
            let ys: Vec<f64> = sol.y_tilde.iter().map(|y| y.at_knot(i)).collect();
            let c = consumption_from_y_tilde(&snapshot_at_knot(&pop, i), &ys, 0.0).unwrap();
            for (ck, tc) in c.iter().zip(&sol.types) {
                let cs = tc.c_star.at_knot(i);
                assert!((ck - cs).abs() <= 1e-10 * cs);
            }
        }
        let t = pop.grid().t(50);
        let c = optimal_consumption(&pop, 1, t).unwrap();
        assert!((c - sol.types[1].c_star.at_knot(50)).abs() < 1e-15);
    }

    #[test]
    fn residual_small_and_second_order() {
        let coarse = two_types(500);
        let fine = two_types(2000);
        let rc = bsde_residual(&coarse, &EquilibriumSolution::solve(&coarse).unwrap()).unwrap();
        let rf = bsde_residual(&fine, &EquilibriumSolution::solve(&fine).unwrap()).unwrap();
        assert!(rf.sup_norm <= 1e-4, "{}", rf.sup_norm);
        assert!(
            rc.sup_norm >= 3.0 * rf.sup_norm,
            "{} {}",
            rc.sup_norm,
            rf.sup_norm
        );
    }

    #[test]
    fn residual_detects_shifted_y_tilde() {
        let pop = two_types(400);
        let sol = EquilibriumSolution::solve(&pop).unwrap();
        let shifted: Vec<GridCurve> = sol.y_tilde.iter().map(|y| y.map(|v| v + 0.1)).collect();
        assert!(residual_of(&pop, &shifted).unwrap().sup_norm >= 0.01);
    }

    #[test]
    fn residual_of_constant_coefficient_solution() {
        let pop = single(2000, 0.5, 0.0, 1.5, 0.1, 0.2, 0.1);
        let sol = EquilibriumSolution::solve(&pop).unwrap();
        assert!(bsde_residual(&pop, &sol).unwrap().sup_norm <= 1e-6);
    }

    #[test]
    fn value_function_trivial_case() {
        let pop = single(10, 0.5, 0.0, 1.0, 0.0, 0.2, 0.0);
        let mut sol = EquilibriumSolution::solve(&pop).unwrap();
        sol.y_tilde[0] = GridCurve::constant(pop.grid(), 0.0);
        assert_eq!(value_function(&pop, 0, &sol).unwrap(), 2.0);
    }

    #[test]
    fn value_function_scales_with_initial_wealth() {
        let g = TimeGrid::new(1.0, 50).unwrap();
        let make = |x0: f64| {
            Population::single(
                AgentType::constant(g, 1.0, x0, 0.4, 0.0, 1.0, 0.1, 0.2, 0.1),
                g,
                Bounds::default(),
            )
            .unwrap()
        };
        let v = |pop: &Population| {
            value_function(pop, 0, &EquilibriumSolution::solve(pop).unwrap()).unwrap()
        };
        let ratio = v(&make(3.0)) / v(&make(1.0));
        assert!((ratio - libm::pow(3.0, 0.4)).abs() < 1e-12);
    }

    #[test]
    fn value_function_under_common_log_alpha_shift_is_pinned() {
        let pop = two_types(100);
        let shifted = pop
            .map_types(|ty| AgentType {
                alpha: ty.alpha * exp(0.3),
                ..ty.clone()
            })
            .unwrap();
        let v0 = value_function(&pop, 0, &EquilibriumSolution::solve(&pop).unwrap()).unwrap();
        let v1 =
            value_function(&shifted, 0, &EquilibriumSolution::solve(&shifted).unwrap()).unwrap();
        assert!((v0 - 3.478_657_226_114_167_5).abs() < 1e-9, "{v0}");
        assert!((v1 - 4.175_609_385_292_12).abs() < 1e-9, "{v1}");
    }

    #[test]
    fn drift_literal_and_stable_forms_agree() {
        let state = MopState {
            y: 0.3,
            nu_hat: -0.2,
            params: LocalParams {
                gamma: -1.5,
                theta: 0.4,
                alpha: 1.3,
                h: 0.05,
                sigma: 0.2,
                sigma0: 0.1,
            },
            z: 0.1,
            z0: -0.05,
        };
        let p = state.params;
        for c in [0.01, 0.3, 1.0, 4.0] {
            let k = p.alpha * exp(-state.y - p.theta_gamma() * state.nu_hat);
            let literal = -c + k * libm::pow(c, p.gamma) / p.gamma
                - (1.0 - p.gamma) / p.gamma * libm::pow(k, 1.0 / (1.0 - p.gamma));
            let stable = mop_drift(&state, state.best_investment(), c).unwrap();
            assert!((literal - stable).abs() < 1e-12 * literal.abs().max(1.0));
        }
        assert!(mop_drift(&state, 0.0, 0.0).is_err());
    }

    /// States whose maximizing consumption lies in `[1e-3, 10]`; `Y` is
    /// solved from the drawn maximizer.
    fn state_strategy(gamma: std::ops::Range<f64>) -> impl Strategy<Value = MopState> {
        (
            gamma,
            0.0..=1.0f64,
            0.1..3.0f64,
            -0.2..0.3f64,
            0.01..0.5f64,
            0.0..0.5f64,
            1e-3..10.0f64,
            -1.0..1.0f64,
        )
            .prop_flat_map(|(gamma, theta, alpha, h, sigma, sigma0, c_best, nu)| {
                (-1.0..1.0f64, -1.0..1.0f64).prop_map(move |(z, z0)| MopState {
                    y: ln(alpha) - theta * gamma * nu - (1.0 - gamma) * ln(c_best),
                    nu_hat: nu,
                    params: LocalParams {
                        gamma,
                        theta,
                        alpha,
                        h,
                        sigma,
                        sigma0,
                    },
                    z,
                    z0,
                })
            })
    }

    #[test]
    fn drift_survives_underflowing_maximizer() {
        let state = MopState {
            y: 0.0,
            nu_hat: 0.0,
            params: LocalParams {
                gamma: 0.9976,
                theta: 0.0,
                alpha: 0.1,
                h: 0.0,
                sigma: 0.01,
                sigma0: 0.0,
            },
            z: 0.0,
            z0: 0.0,
        };
        assert_eq!(state.best_consumption(), 0.0);
        let d = mop_drift(&state, 0.0, 1e-3).unwrap();
        assert!(d.is_finite() && d < 0.0, "{d}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn drift_nonpositive_positive_gamma(s in state_strategy(0.001..0.999), pi in -10.0..10.0f64, c in 1e-3..10.0f64) {
            prop_assert!(mop_drift(&s, pi, c).unwrap() <= 1e-12);
            prop_assert!(mop_drift(&s, s.best_investment(), s.best_consumption()).unwrap().abs() <= 1e-10);
        }

        #[test]
        fn drift_nonpositive_negative_gamma(s in state_strategy(-5.0..-0.001), pi in -10.0..10.0f64, c in 1e-3..10.0f64) {
            prop_assert!(mop_drift(&s, pi, c).unwrap() <= 1e-12);
            prop_assert!(mop_drift(&s, s.best_investment(), s.best_consumption()).unwrap().abs() <= 1e-10);
        }
    }
}

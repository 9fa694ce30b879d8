//! Parameter sweeps of the equilibrium response at `t = 0`.
//!
//! In [`SweepMode::Individual`] one probe agent changes a parameter while the
//! population (and therefore every aggregate) stays at its baseline. In
//! [`SweepMode::Population`] every type's parameter is shifted by the sweep
//! value, aggregates are recomputed, and the probe keeps its own baseline
//! parameters.

use alloc::vec::Vec;

use crate::closedform::EquilibriumSolution;
use crate::population::{AgentType, Population};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    H,
    Sigma,
    Sigma0,
    Theta,
    Gamma,
    Alpha,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::H => "h",
            SweepParam::Sigma => "sigma",
            SweepParam::Sigma0 => "sigma0",
            SweepParam::Theta => "theta",
            SweepParam::Gamma => "gamma",
            SweepParam::Alpha => "alpha",
        }
    }

    /// Copy of `agent` with this parameter replaced by `f(old)`.
    /// Curve parameters are mapped knot by knot.
    fn apply(&self, agent: &AgentType, f: impl Fn(f64) -> f64) -> AgentType {
        let mut out = agent.clone();
        match self {
            SweepParam::H => out.h = agent.h.map(f),
            SweepParam::Sigma => out.sigma = agent.sigma.map(f),
            SweepParam::Sigma0 => out.sigma0 = agent.sigma0.map(f),
            SweepParam::Theta => out.theta = f(agent.theta),
            SweepParam::Gamma => out.gamma = f(agent.gamma),
            SweepParam::Alpha => out.alpha = f(agent.alpha),
        }
        out
    }
}

impl core::str::FromStr for SweepParam {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "h" => SweepParam::H,
            "sigma" => SweepParam::Sigma,
            "sigma0" => SweepParam::Sigma0,
            "theta" => SweepParam::Theta,
            "gamma" => SweepParam::Gamma,
            "alpha" => SweepParam::Alpha,
            _ => {
                return Err(crate::Error::Structural(alloc::format!(
                    "unknown sweep parameter `{s}`"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    /// Set the probe's parameter to the sweep value.
    Individual,
    /// Shift every type's parameter by the sweep value.
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub pi_star: f64,
    pub c_star: f64,
    /// The modified agent or population leaves the admissible region (or
    /// the equilibrium could not be formed); the responses are then NaN.
    pub flagged: bool,
}

impl SweepRow {
    fn flagged(value: f64) -> Self {
        Self {
            value,
            pi_star: f64::NAN,
            c_star: f64::NAN,
            flagged: true,
        }
    }
}

/// Response of type `k` at `t = 0` for every value in `values`.
pub fn sweep(
    pop: &Population,
    k: usize,
    param: SweepParam,
    values: &[f64],
    mode: SweepMode,
) -> Result<Vec<SweepRow>> {
    if k >= pop.len() {
        return Err(crate::Error::Domain {
            what: "type index",
            value: k as f64,
        });
    }
    let probe = pop.agent(k);
    match mode {
        SweepMode::Individual => {
            let base = EquilibriumSolution::solve(pop)?;
            Ok(values
                .iter()
                .map(|&v| {
                    let agent = param.apply(probe, |_| v);
                    let single = Population::single(agent.clone(), pop.grid(), pop.bounds());
                    if !single.map(|p| p.validate().ok()).unwrap_or(false) {
                        return SweepRow::flagged(v);
                    }
                    match base.respond(&agent) {
                        Ok(r) => SweepRow {
                            value: v,
                            pi_star: r.pi_star.first(),
                            c_star: r.c_star.first(),
                            flagged: false,
                        },
                        Err(_) => SweepRow::flagged(v),
                    }
                })
                .collect())
        }
        SweepMode::Population => Ok(values
            .iter()
            .map(|&v| {
                let shifted = match pop.map_types(|ty| param.apply(ty, |x| x + v)) {
                    Ok(p) => p,
                    Err(_) => return SweepRow::flagged(v),
                };
                match EquilibriumSolution::solve(&shifted).and_then(|sol| sol.respond(probe)) {
                    Ok(r) => SweepRow {
                        value: v,
                        pi_star: r.pi_star.first(),
                        c_star: r.c_star.first(),
                        flagged: false,
                    },
                    Err(_) => SweepRow::flagged(v),
                }
            })
            .collect()),
    }
}

/// `n` evenly spaced values over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => alloc::vec![lo],
        _ => (0..n)
            .map(|i| {
                if i + 1 == n {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// Midpoints of consecutive rows where the finite-difference slope of
/// `pi_star` changes sign.
pub fn slope_sign_changes(rows: &[SweepRow]) -> Vec<f64> {
    let usable: Vec<&SweepRow> = rows.iter().filter(|r| !r.flagged).collect();
    let slopes: Vec<(f64, f64)> = usable
        .windows(2)
        .map(|w| {
            (
                (w[0].value + w[1].value) / 2.0,
                (w[1].pi_star - w[0].pi_star) / (w[1].value - w[0].value),
            )
        })
        .collect();
    slopes
        .windows(2)
        .filter(|w| w[0].1 * w[1].1 < 0.0)
        .map(|w| (w[0].0 + w[1].0) / 2.0)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closedform::sigma0_thresholds;
    use crate::grid::TimeGrid;
    use crate::population::Bounds;
    use alloc::vec;

    fn grid() -> TimeGrid {
        TimeGrid::new(1.0, 50).unwrap()
    }

    fn ty(w: f64, gamma: f64, theta: f64, h: f64, s: f64, s0: f64) -> AgentType {
        AgentType::constant(grid(), w, 1.0, gamma, theta, 1.0, h, s, s0)
    }

    #[test]
    fn individual_h_increases_investment() {
        let pop = Population::single(
            ty(1.0, 0.5, 0.8, 0.05, 0.2, 0.15),
            grid(),
            Bounds::default(),
        )
        .unwrap();
        let rows = sweep(
            &pop,
            0,
            SweepParam::H,
            &linspace(0.01, 0.2, 20),
            SweepMode::Individual,
        )
        .unwrap();
        assert!(rows.windows(2).all(|w| w[1].pi_star > w[0].pi_star));
    }

    #[test]
    fn population_h_sign_follows_gamma() {
        for (gamma, decreasing) in [(0.5, true), (-1.0, false)] {
            let pop = Population::new(
                vec![
                    ty(0.5, gamma, 0.8, 0.05, 0.2, 0.15),
                    ty(0.5, gamma, 0.6, 0.07, 0.25, 0.1),
                ],
                grid(),
                Bounds::default(),
            )
            .unwrap();
            let rows = sweep(
                &pop,
                0,
                SweepParam::H,
                &linspace(-0.02, 0.05, 8),
                SweepMode::Population,
            )
            .unwrap();
            assert!(rows.iter().all(|r| !r.flagged));
            assert!(rows
                .windows(2)
                .all(|w| (w[1].pi_star < w[0].pi_star) == decreasing));
        }
    }

    #[test]
    fn sigma0_without_competition_decreases_investment() {
        let pop = Population::single(
            ty(1.0, 0.5, 0.0, 0.05, 0.2, 0.15),
            grid(),
            Bounds::default(),
        )
        .unwrap();
        let rows = sweep(
            &pop,
            0,
            SweepParam::Sigma0,
            &linspace(0.01, 2.0, 50),
            SweepMode::Individual,
        )
        .unwrap();
        assert!(rows.windows(2).all(|w| w[1].pi_star < w[0].pi_star));
    }

    #[test]
    fn out_of_region_rows_are_flagged() {
        let pop = Population::single(
            ty(1.0, 0.5, 0.5, 0.05, 0.2, 0.15),
            grid(),
            Bounds::default(),
        )
        .unwrap();
        let rows = sweep(
            &pop,
            0,
            SweepParam::Gamma,
            &[0.5, 0.0, 1.2],
            SweepMode::Individual,
        )
        .unwrap();
        assert!(!rows[0].flagged && rows[1].flagged && rows[2].flagged);
        assert!(rows[1].pi_star.is_nan());
        let rows = sweep(
            &pop,
            0,
            SweepParam::Theta,
            &[0.2, 0.9],
            SweepMode::Population,
        )
        .unwrap();
        assert!(!rows[0].flagged && rows[1].flagged);
    }

    #[test]
    fn sigma0_slope_changes_sign_at_threshold() {
        let pop = Population::single(ty(1.0, 0.5, 1.0, 0.02, 0.1, 0.3), grid(), Bounds::default())
            .unwrap();
        let th = sigma0_thresholds(&pop, 0, 0.0).unwrap();
        assert!(th.valid);
        let values = linspace(0.01, 2.0, 400);
        let rows = sweep(&pop, 0, SweepParam::Sigma0, &values, SweepMode::Individual).unwrap();
        let changes = slope_sign_changes(&rows);
        assert_eq!(changes.len(), 1, "{changes:?} {th:?}");
        assert!((changes[0] - th.binding()).abs() <= values[1] - values[0]);
    }
}

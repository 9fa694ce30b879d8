//! Heterogeneous agent populations.
//!
//! A population is a finite weighted mixture of agent types. Every
//! population-level expectation used by the equilibrium formulas is an exact
//! finite sum over the mixture. Because all per-type coefficients are
//! deterministic, the conditional expectation given the common noise of a
//! type-measurable quantity is this same sum.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::grid::{ParamCurve, TimeGrid};
use crate::{Error, Result};

/// One heterogeneity class.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentType {
    /// Probability mass of this type in the population.
    pub weight: f64,
    /// Initial wealth.
    pub x0: f64,
    /// Power-utility exponent, in `(-∞, 1) \ {0}`.
    pub gamma: f64,
    /// Competition weight, in `[0, 1]`.
    pub theta: f64,
    /// Relative weight of consumption utility.
    pub alpha: f64,
    /// Return rate.
    pub h: ParamCurve,
    /// Idiosyncratic volatility.
    pub sigma: ParamCurve,
    /// Common-noise volatility.
    pub sigma0: ParamCurve,
}

/// Coefficients of one type frozen at a single time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalParams {
    pub gamma: f64,
    pub theta: f64,
    pub alpha: f64,
    pub h: f64,
    pub sigma: f64,
    pub sigma0: f64,
}

impl LocalParams {
    /// `σ² + σ0²`
    pub fn total_variance(&self) -> f64 {
        self.sigma * self.sigma + self.sigma0 * self.sigma0
    }

    /// `(1-γ)(σ² + σ0²)`, the Merton denominator.
    pub fn merton_denominator(&self) -> f64 {
        (1.0 - self.gamma) * self.total_variance()
    }

    /// `θγ`
    pub fn theta_gamma(&self) -> f64 {
        self.theta * self.gamma
    }

    /// `θγ/(1-γ)`
    pub fn kappa(&self) -> f64 {
        self.theta * self.gamma / (1.0 - self.gamma)
    }

    /// `log α/(1-γ)`
    pub fn log_alpha_scaled(&self) -> f64 {
        crate::math::ln(self.alpha) / (1.0 - self.gamma)
    }
}

impl AgentType {
    /// Type with time-constant market coefficients.
    #[allow(clippy::too_many_arguments)]
    pub fn constant(
        grid: TimeGrid,
        weight: f64,
        x0: f64,
        gamma: f64,
        theta: f64,
        alpha: f64,
        h: f64,
        sigma: f64,
        sigma0: f64,
    ) -> Self {
        Self {
            weight,
            x0,
            gamma,
            theta,
            alpha,
            h: ParamCurve::constant(grid, h),
            sigma: ParamCurve::constant(grid, sigma),
            sigma0: ParamCurve::constant(grid, sigma0),
        }
    }

    pub fn at_knot(&self, i: usize) -> LocalParams {
        LocalParams {
            gamma: self.gamma,
            theta: self.theta,
            alpha: self.alpha,
            h: self.h.at_knot(i),
            sigma: self.sigma.at_knot(i),
            sigma0: self.sigma0.at_knot(i),
        }
    }

    pub fn at(&self, t: f64) -> Result<LocalParams> {
        Ok(LocalParams {
            gamma: self.gamma,
            theta: self.theta,
            alpha: self.alpha,
            h: self.h.eval(t)?,
            sigma: self.sigma.eval(t)?,
            sigma0: self.sigma0.eval(t)?,
        })
    }

    /// `true` when `h`, `σ`, `σ0` do not depend on time.
    pub fn has_constant_coefficients(&self) -> bool {
        self.h.is_constant() && self.sigma.is_constant() && self.sigma0.is_constant()
    }
}

/// Lower bounds `|γ| ≥ gamma_lb` and `σ + σ0 ≥ sigma_lb`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub gamma_lb: f64,
    pub sigma_lb: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            gamma_lb: 1e-3,
            sigma_lb: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    WeightPositive,
    InitialWealthPositive,
    GammaNonZero,
    GammaBelowOne,
    GammaBoundedAwayFromZero,
    ThetaInUnitInterval,
    AlphaPositive,
    SigmaNonNegative,
    Sigma0NonNegative,
    VolatilityBoundedAwayFromZero,
}

impl Rule {
    pub fn as_str(&self) -> &'static str {
        match self {
            Rule::WeightPositive => "weight_positive",
            Rule::InitialWealthPositive => "x0_positive",
            Rule::GammaNonZero => "gamma_nonzero",
            Rule::GammaBelowOne => "gamma_below_one",
            Rule::GammaBoundedAwayFromZero => "gamma_lower_bound",
            Rule::ThetaInUnitInterval => "theta_in_unit_interval",
            Rule::AlphaPositive => "alpha_positive",
            Rule::SigmaNonNegative => "sigma_nonnegative",
            Rule::Sigma0NonNegative => "sigma0_nonnegative",
            Rule::VolatilityBoundedAwayFromZero => "sigma_lower_bound",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub type_index: usize,
    pub rule: Rule,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok() {
            return f.write_str("ok");
        }
        for (n, v) in self.violations.iter().enumerate() {
            if n > 0 {
                f.write_str("; ")?;
            }
            write!(f, "type {}: {} (value {})", v.type_index, v.rule, v.value)?;
        }
        Ok(())
    }
}

/// Finite weighted mixture of [`AgentType`]s on a shared time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    types: Vec<AgentType>,
    grid: TimeGrid,
    bounds: Bounds,
}

const WEIGHT_SUM_TOL: f64 = 1e-12;

impl Population {
    /// Checks structure only (lengths, finiteness, weights). Use
    /// [`Population::validate`] for the modelling assumptions.
    pub fn new(types: Vec<AgentType>, grid: TimeGrid, bounds: Bounds) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::Structural("population has no types".into()));
        }
        if !(bounds.gamma_lb > 0.0 && bounds.sigma_lb > 0.0) {
            return Err(Error::Structural(format!(
                "bounds must be positive, got gamma_lb = {}, sigma_lb = {}",
                bounds.gamma_lb, bounds.sigma_lb
            )));
        }
        for (k, ty) in types.iter().enumerate() {
            for (name, v) in [
                ("weight", ty.weight),
                ("x0", ty.x0),
                ("gamma", ty.gamma),
                ("theta", ty.theta),
                ("alpha", ty.alpha),
            ] {
                if !v.is_finite() {
                    return Err(Error::Structural(format!("type {k}: {name} is not finite")));
                }
            }
            if ty.weight < 0.0 {
                return Err(Error::Structural(format!(
                    "type {k}: negative weight {}",
                    ty.weight
                )));
            }
            for (name, c) in [("h", &ty.h), ("sigma", &ty.sigma), ("sigma0", &ty.sigma0)] {
                if c.grid() != grid || c.values().len() != grid.len() {
                    return Err(Error::Structural(format!(
                        "type {k}: curve {name} has {} knots on a different grid (expected {})",
                        c.values().len(),
                        grid.len()
                    )));
                }
                if c.values().iter().any(|v| !v.is_finite()) {
                    return Err(Error::Structural(format!(
                        "type {k}: curve {name} has non-finite values"
                    )));
                }
            }
        }
        let total: f64 = types.iter().map(|t| t.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Structural(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            types,
            grid,
            bounds,
        })
    }

    /// Single-type population.
    pub fn single(ty: AgentType, grid: TimeGrid, bounds: Bounds) -> Result<Self> {
        Self::new(alloc::vec![AgentType { weight: 1.0, ..ty }], grid, bounds)
    }

    pub fn types(&self) -> &[AgentType] {
        &self.types
    }

    pub fn agent(&self, k: usize) -> &AgentType {
        &self.types[k]
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    /// Replaces type `k`, keeping grid and bounds.
    pub fn with_type(&self, k: usize, ty: AgentType) -> Result<Self> {
        let mut types = self.types.clone();
        types[k] = ty;
        Self::new(types, self.grid, self.bounds)
    }

    pub fn map_types(&self, f: impl FnMut(&AgentType) -> AgentType) -> Result<Self> {
        Self::new(self.types.iter().map(f).collect(), self.grid, self.bounds)
    }

    /// Every violated standing assumption. Does not mutate.
    pub fn validate(&self) -> ValidationReport {
        let mut out = Vec::new();
        let b = self.bounds;
        for (k, ty) in self.types.iter().enumerate() {
            let mut push = |rule, value| {
                out.push(Violation {
                    type_index: k,
                    rule,
                    value,
                })
            };
            if ty.weight <= 0.0 || ty.weight > 1.0 {
                push(Rule::WeightPositive, ty.weight);
            }
            if ty.x0 <= 0.0 {
                push(Rule::InitialWealthPositive, ty.x0);
            }
            if ty.gamma == 0.0 {
                push(Rule::GammaNonZero, ty.gamma);
            }
            if ty.gamma >= 1.0 {
                push(Rule::GammaBelowOne, ty.gamma);
            }
            if ty.gamma.abs() < b.gamma_lb {
                push(Rule::GammaBoundedAwayFromZero, ty.gamma);
            }
            if !(0.0..=1.0).contains(&ty.theta) {
                push(Rule::ThetaInUnitInterval, ty.theta);
            }
            if ty.alpha <= 0.0 {
                push(Rule::AlphaPositive, ty.alpha);
            }
            if let Some(&v) = ty.sigma.values().iter().find(|&&v| v < 0.0) {
                push(Rule::SigmaNonNegative, v);
            }
            if let Some(&v) = ty.sigma0.values().iter().find(|&&v| v < 0.0) {
                push(Rule::Sigma0NonNegative, v);
            }
            let low = ty
                .sigma
                .values()
                .iter()
                .zip(ty.sigma0.values())
                .map(|(s, s0)| s + s0)
                .find(|&total| total < b.sigma_lb);
            if let Some(total) = low {
                push(Rule::VolatilityBoundedAwayFromZero, total);
            }
        }
        ValidationReport { violations: out }
    }

    /// `self` if it passes [`Population::validate`], else [`Error::Invalid`].
    pub fn validated(self) -> Result<Self> {
        let report = self.validate();
        if report.ok() {
            Ok(self)
        } else {
            Err(Error::Invalid(report))
        }
    }

    /// Population expectation `Σ_k w_k f(type_k, t)`.
    pub fn expect(&self, t: f64, f: impl Fn(&AgentType, f64) -> f64) -> Result<f64> {
        if !self.grid.contains(t) {
            return Err(Error::Domain {
                what: "t",
                value: t,
            });
        }
        Ok(self.types.iter().map(|ty| ty.weight * f(ty, t)).sum())
    }

    /// Expectation of a per-type functional indexed by position.
    pub fn expect_by_index(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.types
            .iter()
            .enumerate()
            .map(|(k, ty)| ty.weight * f(k))
            .sum()
    }

    /// Expectation of a time-local functional at knot `i`.
    pub fn expect_at_knot(&self, i: usize, f: impl Fn(&LocalParams) -> f64) -> f64 {
        self.types
            .iter()
            .map(|ty| ty.weight * f(&ty.at_knot(i)))
            .sum()
    }

    /// `E[log x0]`
    pub fn mean_log_wealth(&self) -> f64 {
        self.expect_by_index(|k| crate::math::ln(self.types[k].x0))
    }

    /// `n` i.i.d. type indices drawn with probabilities equal to the weights.
    pub fn sample_agents<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if n == 0 {
            return Err(Error::Domain {
                what: "n",
                value: 0.0,
            });
        }
        if self.types.len() == 1 {
            return Ok(alloc::vec![0; n]);
        }
        let dist = WeightedIndex::new(self.types.iter().map(|t| t.weight))
            .map_err(|e| Error::Structural(format!("cannot sample types: {e}")))?;
        Ok((0..n).map(|_| dist.sample(rng)).collect())
    }
}

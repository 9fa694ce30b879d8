//! Uniform time grid and curves sampled on it.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Offsets this close to a knot (in step units) evaluate to the knot value.
const KNOT_SNAP: f64 = 1e-12;

/// Uniform grid `t_i = i·T/n`, `i = 0..=n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Structural(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::Structural("grid needs at least one step".into()));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of knots, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Time at knot `i`. The last knot is exactly `T`.
    pub fn t(&self, i: usize) -> f64 {
        if i >= self.n_steps {
            self.horizon
        } else {
            self.horizon * i as f64 / self.n_steps as f64
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.t(i))
    }

    pub fn contains(&self, t: f64) -> bool {
        (0.0..=self.horizon).contains(&t)
    }

    /// Cell index and fractional position of `t`: `t = t_i + frac·Δt`.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        if !self.contains(t) {
            return Err(Error::Domain {
                what: "t",
                value: t,
            });
        }
        let x = t / self.horizon * self.n_steps as f64;
        let i = (x as usize).min(self.n_steps - 1);
        Ok((i, x - i as f64))
    }

    /// Knot index if `t` falls on a knot (up to rounding), else `None`.
    pub fn knot_of(&self, t: f64) -> Option<usize> {
        let (i, frac) = self.locate(t).ok()?;
        if frac.abs() < 1e-9 {
            Some(i)
        } else if (1.0 - frac).abs() < 1e-9 {
            Some(i + 1)
        } else {
            None
        }
    }
}

/// Values at every knot of a [`TimeGrid`], read as a continuous piecewise
/// linear function of time.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCurve {
    grid: TimeGrid,
    values: Vec<f64>,
}

/// Deterministic market-parameter trajectory (`h`, `σ`, `σ0`).
pub type ParamCurve = GridCurve;

impl GridCurve {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Structural(format!(
                "curve has {} values, grid has {} knots",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Structural(format!(
                "non-finite curve value at knot {i}"
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TimeGrid, value: f64) -> Self {
        Self {
            grid,
            values: alloc::vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: TimeGrid, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            grid,
            values: grid.times().map(&mut f).collect(),
        }
    }

    /// Unchecked constructor for curves produced by the numerical kernels.
    pub(crate) fn from_raw(grid: TimeGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at_knot(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Linear interpolation; knots are reproduced exactly.
    pub fn eval(&self, t: f64) -> Result<f64> {
        let (i, frac) = self.grid.locate(t)?;
        if frac < KNOT_SNAP {
            return Ok(self.values[i]);
        }
        if 1.0 - frac < KNOT_SNAP {
            return Ok(self.values[i + 1]);
        }
        let (a, b) = (self.values[i], self.values[i + 1]);
        Ok(a + (b - a) * frac)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_constant(&self) -> bool {
        self.values.iter().all(|&v| v == self.values[0])
    }
}

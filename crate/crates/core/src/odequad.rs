//! Classical RK4, composite trapezoid and exponential-fitted quadrature on a
//! [`TimeGrid`].
//!
//! All kernels work on the same grid as the parameter curves, so no
//! interpolation is needed between ODE solution, quadrature and simulation.

use alloc::vec;

use crate::grid::{GridCurve, TimeGrid};
use crate::math::{exp, expm1};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Boundary value at `t = 0`, sweep towards `T`.
    Forward,
    /// Boundary value at `t = T`, sweep towards `0`.
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    /// `t ↦ ∫_0^t f`
    Left,
    /// `t ↦ ∫_t^T f`
    Right,
}

/// Integrates `y' = rhs(t, y)` over the whole grid with classical RK4.
pub fn rk4_integrate(
    grid: TimeGrid,
    rhs: impl Fn(f64, f64) -> f64,
    boundary_value: f64,
    direction: Direction,
) -> Result<GridCurve> {
    let n = grid.n_steps();
    let mut ys = vec![0.0; grid.len()];
    let (start, h) = match direction {
        Direction::Forward => (0, grid.dt()),
        Direction::Backward => (n, -grid.dt()),
    };
    ys[start] = boundary_value;
    let mut y = boundary_value;
    for step in 0..n {
        let (i, j) = match direction {
            Direction::Forward => (step, step + 1),
            Direction::Backward => (n - step, n - step - 1),
        };
        let t = grid.t(i);
        let k1 = rhs(t, y);
        let k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1);
        let k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2);
        // land exactly on the next knot
        let k4 = rhs(grid.t(j), y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !y.is_finite() {
            return Err(Error::BlowUp {
                knot: j,
                t: grid.t(j),
            });
        }
        ys[j] = y;
    }
    Ok(GridCurve::from_raw(grid, ys))
}

/// Cumulative composite trapezoid rule.
pub fn trapezoid_cumulative(f: &GridCurve, anchor: Anchor) -> GridCurve {
    let grid = f.grid();
    let v = f.values();
    let half_dt = 0.5 * grid.dt();
    let mut out = vec![0.0; v.len()];
    match anchor {
        Anchor::Left => {
            for i in 1..v.len() {
                out[i] = out[i - 1] + half_dt * (v[i - 1] + v[i]);
            }
        }
        Anchor::Right => {
            for i in (0..v.len() - 1).rev() {
                out[i] = out[i + 1] + half_dt * (v[i] + v[i + 1]);
            }
        }
    }
    GridCurve::from_raw(grid, out)
}

/// `∫_0^T f` by the trapezoid rule.
pub fn trapezoid(f: &GridCurve) -> f64 {
    trapezoid_cumulative(f, Anchor::Right).first()
}

/// `t ↦ ∫_t^T e^{-g(s)} ds`, exact when `g` is linear on every cell.
///
/// Each cell contributes `Δt·e^{-g_{i+1}}·(e^{-δ} - 1)/(-δ)` with
/// `δ = g_i - g_{i+1}`, so steep exponentials cost no accuracy.
pub fn exp_integral_right(g: &GridCurve) -> GridCurve {
    let grid = g.grid();
    let v = g.values();
    let n = grid.n_steps();
    let dt = grid.dt();
    let mut out = vec![0.0; n + 1];
    for i in (0..n).rev() {
        let delta = v[i] - v[i + 1];
        let factor = if delta == 0.0 {
            1.0
        } else {
            expm1(-delta) / -delta
        };
        out[i] = out[i + 1] + dt * exp(-v[i + 1]) * factor;
    }
    GridCurve::from_raw(grid, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::E;
    use proptest::prelude::*;

    fn grid(t: f64, n: usize) -> TimeGrid {
        TimeGrid::new(t, n).unwrap()
    }

    #[test]
    fn exp_integral_exact_for_linear_exponent() {
        let g = grid(2.0, 7);
        let out = exp_integral_right(&GridCurve::from_fn(g, |t| 3.0 * (2.0 - t)));
        for (i, t) in g.times().enumerate() {
            let exact = (1.0 - (-3.0 * (2.0 - t)).exp()) / 3.0;
            assert!((out.at_knot(i) - exact).abs() < 1e-15);
        }
        let flat = exp_integral_right(&GridCurve::constant(g, 0.0));
        assert!((flat.first() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn exp_integral_second_order_on_curved_exponent() {
        let exact = |n: usize| {
            let g = grid(1.0, n);
            let out = exp_integral_right(&GridCurve::from_fn(g, |t| t * t));
            // ∫_0^1 e^{-s²} ds
            (out.first() - 0.746_824_132_812_427).abs()
        };
        assert!(exact(20) / exact(40) > 3.9);
    }

    #[test]
    fn zero_dynamics_backward_is_constant() {
        let c = rk4_integrate(grid(1.0, 50), |_, _| 0.0, 1.0, Direction::Backward).unwrap();
        assert!(c.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn exponential_growth() {
        let c = rk4_integrate(grid(1.0, 1000), |_, y| y, 1.0, Direction::Forward).unwrap();
        assert!((c.last() - E).abs() < 1e-10, "{}", c.last() - E);
    }

    #[test]
    fn quadratic_blow_up_solution_before_singularity() {
        // y' = y², y(0) = 1  =>  y = 1/(1-t)
        let c = rk4_integrate(grid(0.5, 1000), |_, y| y * y, 1.0, Direction::Forward).unwrap();
        assert!((c.last() - 2.0).abs() < 1e-8);
    }

    #[test]
    fn backward_riccati_with_unit_terminal_value() {
        // y' = y², y(1) = 1  =>  y = 1/(2-t)
        let c = rk4_integrate(grid(1.0, 1000), |_, y| y * y, 1.0, Direction::Backward).unwrap();
        assert!((c.first() - 0.5).abs() < 1e-8);
    }

    #[test]
    fn blow_up_is_reported_with_knot() {
        // y = 1/(1-t) is singular at t = 1
        let err = rk4_integrate(grid(2.0, 200), |_, y| y * y, 1.0, Direction::Forward).unwrap_err();
        assert!(matches!(err, Error::BlowUp { knot, .. } if knot > 90 && knot <= 200));
    }

    #[test]
    fn rk4_order_on_exponential() {
        let err = |n| {
            (rk4_integrate(grid(1.0, n), |_, y| y, 1.0, Direction::Forward)
                .unwrap()
                .last()
                - E)
                .abs()
        };
        let (e1, e2) = (err(10), err(40));
        let order = (e1 / e2).ln() / 4f64.ln();
        assert!(order >= 3.9, "order {order}");
    }

    #[test]
    fn trapezoid_zero_and_constant() {
        let g = grid(2.0, 7);
        let z = trapezoid_cumulative(&GridCurve::constant(g, 0.0), Anchor::Right);
        assert!(z.values().iter().all(|&v| v == 0.0));
        let c = trapezoid_cumulative(&GridCurve::constant(g, 0.75), Anchor::Right);
        for (i, t) in g.times().enumerate() {
            assert!((c.at_knot(i) - 0.75 * (2.0 - t)).abs() < 1e-15);
        }
    }

    #[test]
    fn trapezoid_of_identity() {
        let g = grid(1.0, 1000);
        let c = trapezoid_cumulative(&GridCurve::from_fn(g, |t| t), Anchor::Right);
        assert!((c.first() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn trapezoid_order_on_sine() {
        let exact = 1.0 - 1f64.cos();
        let err = |n| (trapezoid(&GridCurve::from_fn(grid(1.0, n), f64::sin)) - exact).abs();
        let order = (err(20) / err(80)).ln() / 4f64.ln();
        assert!(order >= 1.9, "order {order}");
    }

    proptest! {
        #[test]
        fn left_plus_right_is_total(vals in proptest::collection::vec(-5.0f64..5.0, 2..60)) {
            let g = grid(1.3, vals.len() - 1);
            let f = GridCurve::new(g, vals).unwrap();
            let left = trapezoid_cumulative(&f, Anchor::Left);
            let right = trapezoid_cumulative(&f, Anchor::Right);
            let total = right.first();
            for i in 0..g.len() {
                prop_assert!((left.at_knot(i) + right.at_knot(i) - total).abs() <= 1e-12);
            }
        }
    }
}

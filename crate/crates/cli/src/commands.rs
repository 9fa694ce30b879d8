//! The five pipelines. Each writes its tables into the output directory and
//! returns the checks that decide the exit code.

use std::path::Path;

use anyhow::{ensure, Context, Result};
use mfg_consume_core::closedform::{sigma0_thresholds, solve_riccati_numeric};
use mfg_consume_core::montecarlo::{
    consistency_test, deviation_test, mean_field_flow, perturbation_library, ConsistencyOptions,
    MeanFieldFlow, NoiseBundle,
};
use mfg_consume_core::sensitivity::{linspace, slope_sign_changes, sweep, SweepMode, SweepParam};
use mfg_consume_core::verify::{bsde_residual, mop_drift, relation_check, MopState};
use mfg_consume_core::{EquilibriumSolution, GridCurve};

use crate::config::ScenarioConfig;
use crate::report::{num, Artifacts, Check};

pub const EQUILIBRIUM_COLUMNS: [&str; 8] = [
    "t", "type", "pi_star", "c_star", "y_tilde", "phi", "psi", "z0",
];

/// Deviations and consistency gaps are judged in standard-error units.
const DEVIATION_SE: f64 = 2.0;
const CONSISTENCY_SE: f64 = 3.0;

pub fn solve(cfg: &ScenarioConfig, out: &mut Artifacts) -> Result<Vec<Check>> {
    let sol = EquilibriumSolution::solve(&cfg.population)?;
    write_equilibrium(&sol, out)?;
    Ok(Vec::new())
}

fn write_equilibrium(sol: &EquilibriumSolution, out: &mut Artifacts) -> Result<()> {
    let grid = sol.grid();
    let rows = (0..sol.n_types()).flat_map(|k| {
        (0..grid.len()).map(move |i| {
            let ty = &sol.types[k];
            [
                num(grid.t(i)),
                k.to_string(),
                num(ty.pi_star.at_knot(i)),
                num(ty.c_star.at_knot(i)),
                num(sol.y_tilde[k].at_knot(i)),
                num(sol.phi.at_knot(i)),
                num(sol.psi.at_knot(i)),
                num(ty.z0.at_knot(i)),
            ]
        })
    });
    out.csv("equilibrium.csv", &EQUILIBRIUM_COLUMNS, rows)
}

/// A user-supplied input file does not fit the scenario.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct BadInput(pub String);

/// Replaces the solved curves with those stored in an equilibrium CSV.
fn load_solution(path: &Path, sol: &mut EquilibriumSolution) -> Result<()> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    ensure!(
        header == EQUILIBRIUM_COLUMNS,
        "{}: expected columns {}",
        path.display(),
        EQUILIBRIUM_COLUMNS.join(",")
    );
    let grid = sol.grid();
    let n = grid.len();
    let m = sol.n_types();
    let mut cols = vec![vec![f64::NAN; n * m]; 6];
    let mut seen = vec![false; n * m];
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let field = |j: usize| -> Result<f64> {
            record[j]
                .parse::<f64>()
                .with_context(|| format!("row {}: bad `{}`", line + 2, EQUILIBRIUM_COLUMNS[j]))
        };
        let t = field(0)?;
        let k: usize = record[1]
            .parse()
            .with_context(|| format!("row {}: bad type", line + 2))?;
        let i = grid
            .knot_of(t)
            .with_context(|| format!("row {}: t = {t} is not a grid knot", line + 2))?;
        ensure!(k < m, "row {}: type {k} not in the scenario", line + 2);
        seen[k * n + i] = true;
        for (c, col) in cols.iter_mut().enumerate() {
            col[k * n + i] = field(c + 2)?;
        }
    }
    ensure!(
        seen.iter().all(|&s| s),
        "{}: missing (t, type) rows for this scenario's grid",
        path.display()
    );
    let curve = |c: usize, k: usize| GridCurve::new(grid, cols[c][k * n..(k + 1) * n].to_vec());
    for k in 0..m {
        sol.types[k].pi_star = curve(0, k)?;
        sol.types[k].c_star = curve(1, k)?;
        sol.y_tilde[k] = curve(2, k)?;
        sol.types[k].z0 = curve(5, k)?;
    }
    sol.phi = curve(3, 0)?;
    sol.psi = curve(4, 0)?;
    Ok(())
}

pub fn verify(
    cfg: &ScenarioConfig,
    solution: Option<&Path>,
    out: &mut Artifacts,
) -> Result<Vec<Check>> {
    let pop = &cfg.population;
    let tol = cfg.tolerances;
    let mut sol = EquilibriumSolution::solve(pop)?;
    if let Some(path) = solution {
        load_solution(path, &mut sol).map_err(|e| BadInput(format!("{e:#}")))?;
    }
    let grid = pop.grid();

    let mut riccati: f64 = 0.0;
    for k in 0..pop.len() {
        let rk = solve_riccati_numeric(pop, k)?;
        for (a, b) in sol.types[k].c_star.values().iter().zip(rk.values()) {
            riccati = riccati.max((a - b).abs() / b.abs());
        }
    }

    let residual = bsde_residual(pop, &sol)?;
    out.csv(
        "residual.csv",
        &["t", "type", "residual"],
        residual.residuals.iter().enumerate().flat_map(|(k, r)| {
            (0..grid.len()).map(move |i| [num(grid.t(i)), k.to_string(), num(r.at_knot(i))])
        }),
    )?;

    let noise = NoiseBundle::new(cfg.mc.seed, grid);
    let flow = mean_field_flow(pop, &sol, &noise.flow_path(0))?;
    let (drift_rows, at_optimum, worst_alternative) = drift_scan(cfg, &sol, &flow)?;
    out.csv(
        "drift.csv",
        &["t", "type", "drift_at_optimum", "max_drift_alternatives"],
        drift_rows,
    )?;

    let rel = relation_check(pop, &sol, &flow)?;
    out.csv(
        "relations.csv",
        &["relation", "max_abs_error"],
        [
            ["investment", &num(rel.investment)],
            ["nu_hat", &num(rel.nu_hat)],
            ["z0", &num(rel.z0)],
        ],
    )?;
    let relation = rel.investment.max(rel.nu_hat).max(rel.z0);

    Ok(vec![
        Check::at_most("riccati_relative_error", riccati, tol.riccati_tol),
        Check::at_most("bsde_residual_sup", residual.sup_norm, tol.residual_tol),
        Check::at_most("drift_at_optimum", at_optimum, tol.drift_tol),
        Check::at_most("drift_alternatives_max", worst_alternative, tol.drift_tol),
        Check::at_most("relation_max_error", relation, tol.residual_tol),
    ])
}

type DriftScan = (Vec<[String; 4]>, f64, f64);

/// Optimality drift along the first common-noise path: its size at the
/// equilibrium controls, and its largest value over a fixed set of
/// alternatives (which must not be positive).
fn drift_scan(
    cfg: &ScenarioConfig,
    sol: &EquilibriumSolution,
    flow: &MeanFieldFlow,
) -> Result<DriftScan> {
    let pop = &cfg.population;
    let grid = pop.grid();
    let b = cfg.strategy_bounds;
    let mut rows = Vec::with_capacity(grid.len() * pop.len());
    let (mut at_optimum, mut worst): (f64, f64) = (0.0, f64::NEG_INFINITY);
    for (k, ty) in pop.types().iter().enumerate() {
        let tg = ty.theta * ty.gamma;
        for i in 0..grid.len() {
            let state = MopState {
                y: sol.y_tilde[k].at_knot(i) - tg * flow.mu_hat.at_knot(i),
                nu_hat: flow.nu_hat.at_knot(i),
                params: ty.at_knot(i),
                z: sol.z_tilde(),
                z0: sol.types[k].z0.at_knot(i),
            };
            let pi = sol.types[k].pi_star.at_knot(i);
            let c = sol.types[k].c_star.at_knot(i);
            let d = mop_drift(&state, pi, c)?.abs();
            let mut alt = f64::NEG_INFINITY;
            for dpi in [-1.0, -0.1, 0.0, 0.1, 1.0] {
                for f in [0.5, 0.9, 1.0, 1.1, 2.0] {
                    let (p2, c2) = (
                        (pi + dpi).clamp(-b.pi_cap, b.pi_cap),
                        (c * f).clamp(b.c_min, b.c_max),
                    );
                    alt = alt.max(mop_drift(&state, p2, c2)?);
                }
            }
            at_optimum = at_optimum.max(d);
            worst = worst.max(alt);
            rows.push([num(grid.t(i)), k.to_string(), num(d), num(alt)]);
        }
    }
    Ok((rows, at_optimum, worst))
}

pub fn simulate(cfg: &ScenarioConfig, out: &mut Artifacts) -> Result<Vec<Check>> {
    let pop = &cfg.population;
    let sol = EquilibriumSolution::solve(pop)?;
    let grid = pop.grid();
    let noise = NoiseBundle::new(cfg.mc.seed, grid);
    let mut flow_rows = Vec::new();
    for p in 0..cfg.mc.n_w0_paths {
        let flow = mean_field_flow(pop, &sol, &noise.flow_path(p as u64))?;
        for i in 0..grid.len() {
            flow_rows.push([
                p.to_string(),
                num(grid.t(i)),
                num(flow.mu_hat.at_knot(i)),
                num(flow.nu_hat.at_knot(i)),
            ]);
        }
    }
    out.csv("flow.csv", &["path", "t", "mu_hat", "nu_hat"], flow_rows)?;

    let options = ConsistencyOptions {
        stratified: cfg.mc.stratified,
        ..ConsistencyOptions::new(cfg.mc.n_agents, cfg.mc.n_w0_paths)
    };
    let report = consistency_test(pop, &sol, &options, &noise)?;
    out.csv(
        "consistency.csv",
        &[
            "path",
            "knot",
            "t",
            "empirical_mean",
            "stderr",
            "mu_hat",
            "deviation_se",
        ],
        report.rows.iter().map(|r| {
            [
                r.path.to_string(),
                r.knot.to_string(),
                num(r.t),
                num(r.empirical_mean),
                num(r.stderr),
                num(r.mu_hat),
                num(r.deviation()),
            ]
        }),
    )?;
    Ok(vec![Check::at_most(
        "consistency_max_deviation_se",
        report.max_deviation(),
        CONSISTENCY_SE,
    )])
}

/// `Δ/se`, reading an exactly zero difference as zero.
fn z_score(delta: f64, se: f64) -> f64 {
    if se > 0.0 {
        delta / se
    } else if delta == 0.0 {
        0.0
    } else {
        delta.signum() * f64::INFINITY
    }
}

pub fn deviate(cfg: &ScenarioConfig, probe: usize, out: &mut Artifacts) -> Result<Vec<Check>> {
    let pop = &cfg.population;
    if probe >= pop.len() {
        return Err(BadInput(format!(
            "--type {probe} but the scenario has {} type(s)",
            pop.len()
        ))
        .into());
    }
    let sol = EquilibriumSolution::solve(pop)?;
    let noise = NoiseBundle::new(cfg.mc.seed, pop.grid());
    let library = perturbation_library(&sol, probe);
    let report = deviation_test(
        pop,
        probe,
        &sol,
        &library,
        &cfg.strategy_bounds,
        cfg.mc.n_samples,
        &noise,
    )?;
    out.csv(
        "deviation.csv",
        &[
            "label",
            "delta",
            "stderr",
            "z",
            "large",
            "profitable",
            "significant",
        ],
        report.rows.iter().map(|r| {
            [
                r.label.clone(),
                num(r.delta),
                num(r.stderr),
                num(z_score(r.delta, r.stderr)),
                r.large.to_string(),
                r.profitable().to_string(),
                r.significant().to_string(),
            ]
        }),
    )?;
    let gain = report
        .rows
        .iter()
        .map(|r| -z_score(r.delta, r.stderr))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut checks = vec![Check::at_most("max_deviation_gain_se", gain, DEVIATION_SE)];
    let weakest = report
        .rows
        .iter()
        .filter(|r| r.large)
        .map(|r| z_score(r.delta, r.stderr))
        .fold(f64::INFINITY, f64::min);
    if weakest.is_finite() || report.rows.iter().any(|r| r.large) {
        checks.push(Check {
            name: "min_large_loss_se".into(),
            measured: weakest,
            tolerance: DEVIATION_SE,
            passed: report
                .rows
                .iter()
                .filter(|r| r.large)
                .all(|r| r.significant()),
        });
    }
    Ok(checks)
}

pub struct SweepArgs {
    pub param: SweepParam,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub mode: SweepMode,
    pub probe: usize,
}

pub fn sensitivity(
    cfg: &ScenarioConfig,
    args: &SweepArgs,
    out: &mut Artifacts,
) -> Result<Vec<Check>> {
    let pop = &cfg.population;
    if args.probe >= pop.len() {
        return Err(BadInput(format!(
            "--type {} but the scenario has {} type(s)",
            args.probe,
            pop.len()
        ))
        .into());
    }
    if args.points < 2 || !(args.hi > args.lo) {
        return Err(BadInput("sweep range needs LO < HI and at least 2 points".into()).into());
    }
    let values = linspace(args.lo, args.hi, args.points);
    let rows = sweep(pop, args.probe, args.param, &values, args.mode)?;
    out.csv(
        "sweep.csv",
        &["value", "pi_star", "c_star", "flagged"],
        rows.iter().map(|r| {
            [
                num(r.value),
                num(r.pi_star),
                num(r.c_star),
                r.flagged.to_string(),
            ]
        }),
    )?;

    let changes = slope_sign_changes(&rows);
    let th = sigma0_thresholds(pop, args.probe, 0.0)?;
    let mut markers: Vec<[String; 2]> = Vec::new();
    if th.valid {
        markers.push(["sigma0_upper".into(), num(th.sigma0_upper)]);
        markers.push(["sigma0_lower".into(), num(th.sigma0_lower)]);
        markers.push(["sigma0_binding".into(), num(th.binding())]);
    }
    markers.extend(
        changes
            .iter()
            .map(|&c| ["slope_sign_change".into(), num(c)]),
    );
    out.csv("markers.csv", &["kind", "value"], markers)?;

    let mut checks = Vec::new();
    let binding = th.binding();
    let cell = (args.hi - args.lo) / (args.points - 1) as f64;
    if args.param == SweepParam::Sigma0
        && args.mode == SweepMode::Individual
        && th.valid
        && binding > args.lo
        && binding < args.hi
    {
        let gap = changes
            .iter()
            .map(|c| (c - binding).abs())
            .fold(f64::INFINITY, f64::min);
        checks.push(Check::at_most("slope_change_vs_threshold", gap, cell));
    }
    Ok(checks)
}

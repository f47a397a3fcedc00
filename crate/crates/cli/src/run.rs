//! Subcommand implementations. Each computes all of its artifacts before
//! anything is written, so a failing run leaves no outputs behind.

use std::fs;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;

use facelift_core::control::ControlFamily;
use facelift_core::dual::{cell_seed, convergence_table, dual_objective_mc, primal_objective_mc};
use facelift_core::germ::{
    germ_analytic, germ_mc_estimate, kappa_ladder, kappa_sweep, optimize_germ, push_targets,
    GermSearch, Regime,
};
use facelift_core::hjb::{facelift_distance, solve_dual_hjb};
use facelift_core::market::Exposure;
use facelift_core::nonattain::{
    marginal_integrability, nonattainment_report, sweep_controls, NonattainReport,
};
use facelift_core::table::{Cell, Table};
use facelift_core::{ControlParams, Estimate, FaceliftEnvelope, PathBundle};

use crate::config::RunConfig;
use crate::criteria::{self, DualityCell, InfimaCell, Verdict};
use crate::manifest::{OutputDir, RunManifest};
use crate::{Common, ValidationError};

/// Named file contents of one run.
pub type Artifacts = Vec<(String, Vec<u8>)>;

/// Margin, in nodes, that separates the z boundary layer from the interior.
pub const BOUNDARY_MARGIN: usize = 3;

pub fn load_config(common: &Common) -> Result<RunConfig> {
    let text = match &common.config {
        Some(path) => fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => String::new(),
    };
    Ok(RunConfig::parse(&text)?
        .with_overrides(&common.overrides)?
        .resolve())
}

pub fn run(subcommand: &str, common: &Common) -> Result<RunManifest> {
    let cfg = load_config(common)?;
    let seed = cfg.seed()?;
    let start = Instant::now();
    let artifacts = compute(subcommand, &cfg)?;
    let mut out = OutputDir::create(&common.out)?;
    for (name, bytes) in &artifacts {
        out.write(name, bytes)?;
    }
    out.finish(
        subcommand,
        seed,
        cfg.to_text(),
        start.elapsed().as_secs_f64(),
    )
}

/// Runs a subcommand in memory.
pub fn compute(subcommand: &str, cfg: &RunConfig) -> Result<Artifacts> {
    match subcommand {
        "facelift" => facelift(cfg),
        "germ" => germ(cfg),
        "dual-mc" => dual_mc(cfg),
        "primal-mc" => primal_mc(cfg),
        "hjb" => hjb(cfg),
        "nonattain" => nonattain(cfg),
        other => Err(ValidationError(format!("unknown subcommand `{other}`")).into()),
    }
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn estimate_cells(e: &Estimate) -> Vec<Cell> {
    let (lo, hi) = e.ci95();
    vec![e.mean.into(), lo.into(), hi.into(), e.std_err.into()]
}

const ESTIMATE_COLUMNS: [&str; 4] = ["estimate", "ci_low", "ci_high", "std_err"];

fn columns(head: &[&str], tail: &[&str]) -> Vec<String> {
    head.iter().chain(tail).map(|s| s.to_string()).collect()
}

fn control_cells(c: &ControlParams) -> Vec<Cell> {
    vec![c.family_name().into(), c.params_string().into()]
}

fn ensure_finite(what: &str, e: &Estimate) -> Result<()> {
    if e.mean.is_nan() || e.std_err.is_nan() {
        return Err(facelift_core::Error::Numerical(format!("{what}: estimate is NaN")).into());
    }
    Ok(())
}

fn facelift(cfg: &RunConfig) -> Result<Artifacts> {
    let env = FaceliftEnvelope::new(
        cfg.utility()?,
        cfg.float("facelift.phi")?,
        cfg.float("facelift.psi")?,
    )?;
    let mut t = Table::new(["z", "naive", "facelift"]);
    for z in cfg.grid("facelift.z_grid")? {
        if z <= 0.0 {
            return Err(
                ValidationError(format!("facelift.z_grid: z = {z} is not positive")).into(),
            );
        }
        t.push(vec![z.into(), env.naive(z)?.into(), env.eval(z)?.into()])?;
    }
    Ok(vec![("facelift.csv".into(), t.to_csv())])
}

fn germ(cfg: &RunConfig) -> Result<Artifacts> {
    let endow = cfg.endowment()?;
    let horizon = cfg.float("germ.horizon")?;
    let search = cfg.germ_search()?;
    let seed = cfg.seed()?;
    let analytic = germ_analytic(Regime::Controllable, &endow);

    let opt = optimize_germ(horizon, &endow, cfg.count("germ.budget")?, seed, &search)?;
    let bundle = PathBundle::new(horizon, search.n_steps, search.n_paths, seed)?;
    let target = match opt.control.family {
        ControlFamily::Push { target, .. } => target,
        _ => push_targets(&endow)[0],
    };
    let kappas = kappa_ladder(search.kappa_max);
    let sweep = kappa_sweep(horizon, &endow, target, &kappas, search.nu_max, &bundle)?;
    let bang_n = cfg.float("germ.bang_n")?;
    let mut bangs = Vec::new();
    for t in push_targets(&endow) {
        let c = ControlParams::bang(t, bang_n).with_nu_max(search.nu_max);
        bangs.push((c, germ_mc_estimate(horizon, &endow, &c, &bundle)?));
    }
    let bang = *bangs
        .iter()
        .min_by(|a, b| a.1.mean.total_cmp(&b.1.mean))
        .expect("at least one target");

    let mut t = Table::new(columns(
        &["role", "T", "family", "params"],
        &[&ESTIMATE_COLUMNS[..], &["analytic_target"]].concat(),
    ));
    let mut push_row = |role: &str, c: &ControlParams, e: &Estimate| -> Result<()> {
        ensure_finite("germ", e)?;
        let mut row: Vec<Cell> = vec![role.into(), horizon.into()];
        row.extend(control_cells(c));
        row.extend(estimate_cells(e));
        row.push(analytic.into());
        Ok(t.push(row)?)
    };
    for (c, e) in &opt.evaluations {
        push_row("search", c, e)?;
    }
    push_row("optimum", &opt.control, &opt.estimate)?;
    for (k, e) in kappas.iter().zip(&sweep) {
        push_row(
            "sweep",
            &ControlParams::push(target, *k).with_nu_max(search.nu_max),
            e,
        )?;
    }
    for (c, e) in &bangs {
        push_row("bang", c, e)?;
    }

    let verdict = criteria::germ_price(&opt.estimate, &sweep, &bang.1);
    let summary = json!({
        "horizon": horizon,
        "analytic": {
            "complete": germ_analytic(Regime::Complete, &endow),
            "controllable": analytic,
        },
        "optimum": { "control": opt.control, "estimate": opt.estimate },
        "gap_to_analytic": opt.estimate.mean - analytic,
        "sweep": { "target": target, "kappas": kappas, "estimates": sweep },
        "bang": { "control": bang.0, "estimate": bang.1 },
        "verdicts": [verdict],
    });
    Ok(vec![
        ("germ.csv".into(), t.to_csv()),
        ("germ.json".into(), json_bytes(&summary)?),
    ])
}

pub const CONVERGENCE_COLUMNS: [&str; 13] = [
    "T",
    "z",
    "family",
    "params",
    "estimate",
    "ci_low",
    "ci_high",
    "std_err",
    "n",
    "naive",
    "facelift_target",
    "gap_to_target",
    "gap_to_naive",
];

fn dual_mc(cfg: &RunConfig) -> Result<Artifacts> {
    let model = cfg.model()?;
    let table = convergence_table(
        &cfg.list("dual.z")?,
        &cfg.list("dual.horizons")?,
        &model,
        cfg.count("dual.budget")?,
        cfg.seed()?,
        &cfg.dual_search()?,
    )?;
    let mut t = Table::new(CONVERGENCE_COLUMNS);
    for r in &table.rows {
        ensure_finite("dual", &r.value)?;
        let mut row: Vec<Cell> = vec![r.horizon.into(), r.z.into()];
        row.extend(control_cells(&r.control));
        row.extend(estimate_cells(&r.value));
        row.extend([
            r.value.n.into(),
            r.naive.into(),
            r.facelift_target.into(),
            r.gap_to_target.into(),
            r.gap_to_naive.into(),
        ]);
        t.push(row)?;
    }
    Ok(vec![
        ("convergence.csv".into(), t.to_csv()),
        ("convergence.json".into(), json_bytes(&table)?),
    ])
}

fn primal_mc(cfg: &RunConfig) -> Result<Artifacts> {
    let model = cfg.model()?;
    let horizon = cfg.float("primal.horizon")?;
    let x = cfg.float("primal.x")?;
    let (n_paths, n_steps) = (cfg.count("primal.n_paths")?, cfg.count("primal.n_steps")?);
    let seed = cfg.seed()?;
    let primal_bundle = PathBundle::new(horizon, n_steps, n_paths, cell_seed(seed, 0, 0))?;
    let dual_bundle = PathBundle::new(horizon, n_steps, n_paths, cell_seed(seed, 1, 0))?;

    let mut primal = Table::new(columns(
        &["T", "x", "theta"],
        &[
            &ESTIMATE_COLUMNS[..],
            &["infeasible_paths", "floor_breaches"],
        ]
        .concat(),
    ));
    let mut duality = Table::new([
        "T",
        "x",
        "theta",
        "nu",
        "z",
        "primal_minus_xz",
        "primal_std_err",
        "dual",
        "dual_std_err",
        "excess_in_se",
    ]);
    let mut duals = Vec::new();
    for nu in cfg.list("primal.nu")? {
        for z in cfg.list("primal.z")? {
            let d = dual_objective_mc(
                horizon,
                z,
                &ControlParams::constant(nu),
                &model,
                &dual_bundle,
            )?;
            ensure_finite("dual", &d.estimate)?;
            duals.push((nu, z, d.estimate));
        }
    }
    let mut cells = Vec::new();
    for theta in cfg.list("primal.theta")? {
        let p = primal_objective_mc(
            horizon,
            x,
            Exposure::constant(theta),
            &model,
            &primal_bundle,
        )?;
        ensure_finite("primal", &p.estimate)?;
        let mut row: Vec<Cell> = vec![horizon.into(), x.into(), theta.into()];
        row.extend(estimate_cells(&p.estimate));
        row.extend([p.infeasible_paths.into(), p.floor_breaches.into()]);
        primal.push(row)?;
        for &(nu, z, dual) in &duals {
            let cell = DualityCell {
                theta,
                nu,
                z,
                primal_minus_xz: Estimate {
                    mean: p.estimate.mean - x * z,
                    ..p.estimate
                },
                dual,
            };
            duality.push(vec![
                horizon.into(),
                x.into(),
                theta.into(),
                nu.into(),
                z.into(),
                cell.primal_minus_xz.mean.into(),
                cell.primal_minus_xz.std_err.into(),
                dual.mean.into(),
                dual.std_err.into(),
                cell.excess_in_se().into(),
            ])?;
            cells.push(cell);
        }
    }
    let summary =
        json!({ "horizon": horizon, "x": x, "verdicts": [criteria::weak_duality(&cells)] });
    Ok(vec![
        ("primal.csv".into(), primal.to_csv()),
        ("duality.csv".into(), duality.to_csv()),
        ("primal.json".into(), json_bytes(&summary)?),
    ])
}

fn hjb(cfg: &RunConfig) -> Result<Artifacts> {
    let model = cfg.model()?;
    let grid = cfg.hjb_grid()?;
    let save_times = cfg.list("hjb.save_times")?;
    let solution = solve_dual_hjb(&grid, &model, &save_times)?;
    let eta0 = model.endowment.eta0();
    let inf_phi = model.endowment.inf_phi();

    let mut slices = Table::new(["T", "eta", "z", "v", "nu_star", "floor_active"]);
    let mut slice_meta = Vec::new();
    for s in &solution.slices {
        for i in 0..grid.n_eta {
            for j in 0..grid.n_z {
                let k = i * grid.n_z + j;
                slices.push(vec![
                    s.t.into(),
                    grid.eta(i).into(),
                    grid.log_z(j).exp().into(),
                    s.v[k].into(),
                    s.nu_star[k].into(),
                    s.floor_active[k].into(),
                ])?;
            }
        }
        slice_meta.push(json!({
            "t": s.t,
            "floor_count": s.floor_count(),
            "interior_floor_count": solution.interior_floor_count(s.t, BOUNDARY_MARGIN)?,
            "large_z_slope": solution.large_z_slope(s.t, eta0)?,
            "facelift_distance": if s.t > 0.0 {
                Some(facelift_distance(&solution, s.t, &model, inf_phi, (eta0 - 2.0, eta0 + 2.0), (0.25, 5.0))?)
            } else {
                None
            },
        }));
    }

    let mut probes = Table::new(["T", "eta", "z", "v"]);
    for &t in &save_times {
        for z in cfg.list("hjb.probe_z")? {
            probes.push(vec![
                t.into(),
                eta0.into(),
                z.into(),
                solution.value(t, eta0, z)?.into(),
            ])?;
        }
    }

    // germ at the solver's clip, for the slope comparison
    let search = GermSearch {
        nu_max: grid.nu_max,
        ..cfg.germ_search()?
    };
    let germ = optimize_germ(
        grid.t_max,
        &model.endowment,
        cfg.count("germ.budget")?,
        cfg.seed()?,
        &search,
    )?;
    let slope = solution.large_z_slope(grid.t_max, eta0)?;
    let summary = json!({
        "grid": grid,
        "eta0": eta0,
        "slices": slice_meta,
        "slope": {
            "t": grid.t_max,
            "pde": slope,
            "germ": germ.estimate,
            "germ_control": germ.control,
            "relative_error": (slope - germ.estimate.mean).abs() / germ.estimate.mean.abs(),
        },
    });
    Ok(vec![
        ("hjb_slices.csv".into(), slices.to_csv()),
        ("hjb_probes.csv".into(), probes.to_csv()),
        ("hjb.json".into(), json_bytes(&summary)?),
    ])
}

pub const NONATTAIN_CELL_COLUMNS: [&str; 8] = [
    "T",
    "z",
    "infima_gap",
    "infima_pooled_se",
    "infima_agree",
    "all_gapped",
    "z0",
    "verdict",
];

fn nonattain(cfg: &RunConfig) -> Result<Artifacts> {
    let model = cfg.model()?;
    let (n_paths, n_steps) = (
        cfg.count("nonattain.n_paths")?,
        cfg.count("nonattain.n_steps")?,
    );
    let nu_max = cfg.float("nonattain.nu_max")?;
    let seed = cfg.seed()?;
    let mut reports: Vec<NonattainReport> = Vec::new();
    let mut integrability = Vec::new();
    for (ti, t) in cfg.list("nonattain.horizons")?.into_iter().enumerate() {
        let bundle = PathBundle::new(t, n_steps, n_paths, cell_seed(seed, 0, ti))?;
        let controls = sweep_controls(&model.endowment, t, nu_max);
        for z in cfg.list("nonattain.z")? {
            reports.push(nonattainment_report(t, z, &controls, &model, &bundle)?);
        }
        integrability.push(marginal_integrability(&model.endowment, model.utility, t)?);
    }

    let mut rows = Table::new([
        "T",
        "z",
        "candidate",
        "family",
        "params",
        "plain",
        "plain_std_err",
        "modified",
        "modified_std_err",
        "gap",
        "gap_std_err",
        "frequency",
        "pathwise_violations",
    ]);
    let mut cells = Table::new(NONATTAIN_CELL_COLUMNS);
    let mut infima = Vec::new();
    for r in &reports {
        for (k, c) in r.candidates.iter().enumerate() {
            let mut row: Vec<Cell> = vec![r.horizon.into(), r.z.into(), k.into()];
            row.extend(control_cells(&c.control));
            for e in [&c.plain, &c.modified, &c.gap] {
                row.extend([e.mean.into(), e.std_err.into()]);
            }
            row.extend([c.frequency.mean.into(), c.pathwise_violations.into()]);
            rows.push(row)?;
        }
        cells.push(vec![
            r.horizon.into(),
            r.z.into(),
            r.infima_gap.into(),
            r.infima_pooled_se.into(),
            r.infima_agree.into(),
            r.all_gapped.into(),
            r.z0.into(),
            r.verdict.message().into(),
        ])?;
        infima.push(InfimaCell {
            horizon: r.horizon,
            z: r.z,
            infima_gap: r.infima_gap,
            infima_pooled_se: r.infima_pooled_se,
            infima_agree: r.infima_agree,
            all_gapped: r.all_gapped,
        });
    }
    let z_gapped = gapped_onset(&model)?;
    let verdicts: Vec<Verdict> = vec![criteria::modified_objective(&infima, z_gapped)];
    let summary = json!({
        "reports": reports,
        "integrability": integrability,
        "gapped_from_z": z_gapped,
        "verdicts": verdicts,
    });
    Ok(vec![
        ("nonattain.csv".into(), rows.to_csv()),
        ("nonattain_cells.csv".into(), cells.to_csv()),
        ("nonattain.json".into(), json_bytes(&summary)?),
    ])
}

/// Every `z` above the critical point at `η₀` should show the gap.
fn gapped_onset(model: &facelift_core::Model) -> Result<f64> {
    let e = &model.endowment;
    Ok(facelift_core::critical_z(
        model.utility,
        e.phi0(),
        e.inf_phi(),
    )?)
}

//! Merges run directories into one acceptance summary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde_json::{json, Value};

use facelift_core::table::{Cell, Table};
use facelift_core::Estimate;

use crate::config::RunConfig;
use crate::criteria::{self, ConvergencePoint, Probe, Verdict};
use crate::manifest::{sha256_hex, OutputDir, RunManifest, MANIFEST_NAME};
use crate::ValidationError;

/// Subdirectory of the report directory that receives the summary.
pub const REPORT_DIR: &str = "report";

/// Keys that must agree across merged runs.
fn is_shared_key(k: &str) -> bool {
    k.starts_with("model.") || k == "utility" || k.starts_with("endowment.")
}

/// A run directory with its manifest and parsed config.
pub struct Run {
    pub dir: PathBuf,
    pub name: String,
    pub manifest: RunManifest,
    pub config: RunConfig,
}

impl Run {
    fn read_table(&self, file: &str) -> Result<Table> {
        let bytes = fs::read(self.dir.join(file))
            .with_context(|| format!("{}: reading {file}", self.name))?;
        Ok(Table::from_csv(&bytes)?)
    }

    fn read_json(&self, file: &str) -> Result<Value> {
        let text = fs::read_to_string(self.dir.join(file))
            .with_context(|| format!("{}: reading {file}", self.name))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Run directories under `dir`: `dir` itself if it holds a manifest, then
/// its immediate subdirectories in name order. Report outputs are skipped.
pub fn discover(dir: &Path) -> Result<Vec<Run>> {
    if !dir.is_dir() {
        return Err(ValidationError(format!("{} is not a directory", dir.display())).into());
    }
    let mut candidates = vec![dir.to_path_buf()];
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    candidates.extend(subdirs);
    let mut runs = Vec::new();
    for d in candidates {
        if !d.join(MANIFEST_NAME).is_file() {
            continue;
        }
        let manifest = RunManifest::read(&d)?;
        if manifest.subcommand == "report" {
            continue;
        }
        let config = RunConfig::parse(&manifest.config)
            .map_err(|e| ValidationError(format!("{}: manifest config: {e}", d.display())))?;
        for (file, sum) in &manifest.outputs {
            let bytes = fs::read(d.join(file))
                .with_context(|| format!("{}: reading {file}", d.display()))?;
            if &sha256_hex(&bytes) != sum {
                return Err(ValidationError(format!(
                    "{}: {file} does not match its manifest checksum",
                    d.display()
                ))
                .into());
            }
        }
        let name = d
            .strip_prefix(dir)
            .ok()
            .map(|p| p.display().to_string())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| ".".to_string());
        runs.push(Run {
            dir: d,
            name,
            manifest,
            config,
        });
    }
    if runs.is_empty() {
        return Err(ValidationError(format!("no run manifest in {}", dir.display())).into());
    }
    Ok(runs)
}

/// Shared model keys, or an error naming the first conflict.
pub fn shared_config(runs: &[Run]) -> Result<BTreeMap<String, String>> {
    let mut shared: BTreeMap<String, (String, String)> = BTreeMap::new();
    for run in runs {
        for (k, v) in run.config.entries() {
            if !is_shared_key(&k) {
                continue;
            }
            match shared.get(&k) {
                Some((other, from)) if *other != v => {
                    return Err(ValidationError(format!(
                        "conflicting `{k}`: `{other}` in {from}, `{v}` in {}",
                        run.name
                    ))
                    .into());
                }
                Some(_) => {}
                None => {
                    shared.insert(k, (v, run.name.clone()));
                }
            }
        }
    }
    Ok(shared.into_iter().map(|(k, (v, _))| (k, v)).collect())
}

fn num(t: &Table, row: &[Cell], col: &str) -> Result<f64> {
    let i = t
        .column(col)
        .ok_or_else(|| ValidationError(format!("missing column `{col}`")))?;
    match &row[i] {
        Cell::Num(x) => Ok(*x),
        Cell::Int(n) => Ok(*n as f64),
        Cell::Text(s) => {
            Err(ValidationError(format!("column `{col}`: `{s}` is not a number")).into())
        }
    }
}

fn convergence_points(t: &Table) -> Result<Vec<ConvergencePoint>> {
    t.rows
        .iter()
        .map(|r| {
            Ok(ConvergencePoint {
                horizon: num(t, r, "T")?,
                z: num(t, r, "z")?,
                value: Estimate {
                    mean: num(t, r, "estimate")?,
                    std_err: num(t, r, "std_err")?,
                    n: num(t, r, "n")? as u64,
                },
                naive: num(t, r, "naive")?,
                facelift_target: num(t, r, "facelift_target")?,
            })
        })
        .collect()
}

/// Minimum number of horizons on each side of the critical point before a
/// dual-mc run is judged as a convergence study.
pub const CONVERGENCE_MIN_HORIZONS: usize = 3;

/// `z` values just above and just below `z_crit` that have at least
/// [`CONVERGENCE_MIN_HORIZONS`] horizons.
fn convergence_pair(points: &[ConvergencePoint], z_crit: f64) -> Option<(f64, f64)> {
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for p in points {
        *counts.entry(p.z.to_bits()).or_default() += 1;
    }
    let zs: Vec<f64> = counts
        .into_iter()
        .filter(|&(_, n)| n >= CONVERGENCE_MIN_HORIZONS)
        .map(|(b, _)| f64::from_bits(b))
        .collect();
    let high = zs
        .iter()
        .copied()
        .filter(|&z| z > z_crit)
        .min_by(f64::total_cmp)?;
    let low = zs
        .iter()
        .copied()
        .filter(|&z| z < z_crit)
        .max_by(f64::total_cmp)?;
    Some((high, low))
}

fn verdicts_of(run: &Run, file: &str) -> Result<Vec<Verdict>> {
    let v = run.read_json(file)?;
    Ok(serde_json::from_value(
        v.get("verdicts").cloned().unwrap_or(Value::Array(vec![])),
    )?)
}

pub fn report(dir: &Path) -> Result<RunManifest> {
    let start = Instant::now();
    let runs = discover(dir)?;
    let shared = shared_config(&runs)?;
    let shared_text: String = shared.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    let model_cfg = RunConfig::parse(&shared_text)?.resolve();
    let endow = model_cfg.endowment()?;
    let z_crit = facelift_core::critical_z(model_cfg.utility()?, endow.phi0(), endow.inf_phi())?;

    let mut merged = Table::new(
        std::iter::once("run".to_string()).chain(
            crate::run::CONVERGENCE_COLUMNS
                .iter()
                .map(|s| s.to_string()),
        ),
    );
    let mut criteria_out: Vec<Value> = Vec::new();
    let mut mc_points: Vec<(String, ConvergencePoint)> = Vec::new();
    let mut hjb_runs = Vec::new();

    for run in &runs {
        match run.manifest.subcommand.as_str() {
            "dual-mc" => {
                let t = run.read_table("convergence.csv")?;
                for row in &t.rows {
                    let mut r = vec![Cell::Text(run.name.clone())];
                    r.extend(row.iter().cloned());
                    merged.push(r)?;
                }
                let points = convergence_points(&t)?;
                if let Some((high, low)) = convergence_pair(&points, z_crit) {
                    let v = criteria::facelift_convergence(&points, high, low);
                    criteria_out.push(json!({ "run": run.name, "verdict": v }));
                }
                mc_points.extend(points.into_iter().map(|p| (run.name.clone(), p)));
            }
            "hjb" => hjb_runs.push(run),
            "germ" => push_all(&mut criteria_out, run, verdicts_of(run, "germ.json")?),
            "primal-mc" => push_all(&mut criteria_out, run, verdicts_of(run, "primal.json")?),
            "nonattain" => push_all(&mut criteria_out, run, verdicts_of(run, "nonattain.json")?),
            _ => {}
        }
    }

    let mut cross = Table::new([
        "hjb_run",
        "mc_run",
        "T",
        "z",
        "mc",
        "mc_ci_width",
        "pde",
        "abs_diff",
        "threshold",
        "agree",
    ]);
    for run in &hjb_runs {
        let probes_table = run.read_table("hjb_probes.csv")?;
        let mut probes = Vec::new();
        for row in &probes_table.rows {
            let (t, z, v) = (
                num(&probes_table, row, "T")?,
                num(&probes_table, row, "z")?,
                num(&probes_table, row, "v")?,
            );
            for (mc_run, p) in mc_points.iter().filter(|(_, p)| p.horizon == t && p.z == z) {
                let probe = Probe {
                    horizon: t,
                    z,
                    mc: p.value,
                    pde: v,
                };
                cross.push(vec![
                    run.name.clone().into(),
                    mc_run.clone().into(),
                    t.into(),
                    z.into(),
                    p.value.mean.into(),
                    p.value.ci_width().into(),
                    v.into(),
                    (v - p.value.mean).abs().into(),
                    probe.threshold().into(),
                    probe.agrees().into(),
                ])?;
                probes.push(probe);
            }
        }
        if probes.is_empty() {
            continue;
        }
        let meta = run.read_json("hjb.json")?;
        let slope = meta["slope"]["pde"]
            .as_f64()
            .zip(meta["slope"]["germ"]["mean"].as_f64());
        push_all(
            &mut criteria_out,
            run,
            vec![criteria::cross_check(&probes, slope)],
        );
    }

    let summary = json!({
        "runs": runs.iter().map(|r| json!({
            "dir": r.name,
            "subcommand": r.manifest.subcommand,
            "seed": r.manifest.seed,
            "outputs": r.manifest.outputs,
        })).collect::<Vec<_>>(),
        "shared_config": shared,
        "critical_z": z_crit,
        "criteria": criteria_out,
        "convergence_rows": merged.rows.len(),
        "crosscheck_rows": cross.rows.len(),
    });

    let mut out = OutputDir::create(&dir.join(REPORT_DIR))?;
    out.write("convergence.csv", &merged.to_csv())?;
    out.write("crosscheck.csv", &cross.to_csv())?;
    out.write_json("summary.json", &summary)?;
    out.finish(
        "report",
        runs[0].manifest.seed,
        shared_text,
        start.elapsed().as_secs_f64(),
    )
}

fn push_all(out: &mut Vec<Value>, run: &Run, verdicts: Vec<Verdict>) {
    out.extend(
        verdicts
            .into_iter()
            .map(|v| json!({ "run": run.name, "verdict": v })),
    );
}

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use reldiff::field::{
    bianchi_residual, empirical_two_point, quadrature_two_point, relative_mode_bianchi_residual, sample_realization,
    Estimator,
};
use reldiff::harness::{
    compare_reports, experiment_seed, kubo_prediction, lab_vs_proper_discrepancy, proper_growth, run_diffusion_ensemble,
    run_equilibration, run_field_ensemble, run_markov_limit, DiffusionConfig, HarnessError, MomentReport,
};
use reldiff::diffusion::{DiffusionKind, DiffusionParams};
use reldiff::dynamics::{Clock, ParticleParams};
use reldiff::kubo::{
    h_profiles_from_field, kappa2_from_g, kappa2_from_h, ConstantG, CorrelationProfile,
    DiffusionConstant, ExponentialG, PowerLawG, Tabulated,
};
use reldiff::minkowski::FourVector;

use crate::config::{Config, FieldSection, ProfileConfig, Task, UsageError};
use crate::manifest::{write_atomic, ExperimentRecord, OutputFile, RunManifest};

/// Outcome of a subcommand: `Ok(true)` passes, `Ok(false)` is an experiment failure.
pub type Outcome = Result<bool>;

#[derive(Serialize)]
struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

pub fn validate_field(cfg: &Config, out: Option<&Path>) -> Outcome {
    let section = cfg.field.clone().ok_or_else(|| UsageError("config has no [field] section".into()))?;
    let checks = field_checks(&section, cfg.seed);
    for c in &checks {
        println!("{:<10} {} {}", c.name, if c.pass { "PASS" } else { "FAIL" }, c.detail);
    }
    let pass = checks.iter().all(|c| c.pass);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let report = json!({ "spec": section.spec, "coupling": section.coupling, "seed": cfg.seed, "checks": checks, "pass": pass });
        write_atomic(&dir.join("validate-field.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    Ok(pass)
}

fn field_checks(section: &FieldSection, seed: u64) -> Vec<Check> {
    let spec = section.spec.density(section.coupling);
    let real = match sample_realization(&spec, section.n_modes, seed) {
        Ok(r) => r,
        Err(e) => {
            return vec![Check { name: "positivity", pass: false, detail: e.to_string() }];
        }
    };
    let mut checks = vec![Check {
        name: "positivity",
        pass: true,
        detail: format!("{} modes sampled with positive semidefinite covariance", real.n_modes()),
    }];

    let worst = real.modes().iter().map(|m| relative_mode_bianchi_residual(&m.k, &m.z)).fold(0.0, f64::max);
    let x = FourVector::new(0.3, -0.7, 0.2, 1.1);
    let h = section.bianchi_h;
    let r: Vec<f64> = [h, h / 2.0, h / 4.0].iter().map(|&h| bianchi_residual(&real, &x, h)).collect();
    // an exactly vanishing residual has no measurable order and is fine
    let orders: Vec<f64> = r.windows(2).map(|w| if w[0] == 0.0 { 2.0 } else { (w[0] / w[1]).log2() }).collect();
    checks.push(Check {
        name: "bianchi",
        pass: worst <= 1e-10 && orders.iter().all(|&o| o >= 1.8),
        detail: format!("per-mode residual {worst:.2e}, finite-difference orders {orders:.2?}"),
    });

    let seps: Vec<FourVector> = section.separations.iter().map(|&d| FourVector(d)).collect();
    let pairs: Vec<(FourVector, FourVector)> = seps.iter().map(|&d| (d, FourVector::ZERO)).collect();
    let two_point = empirical_two_point(&spec, section.n_modes, section.n_seeds, seed, &pairs, Estimator::FieldProduct)
        .map_err(|e| e.to_string())
        .and_then(|est| {
            let mut worst = 0.0_f64;
            for (e, d) in est.iter().zip(&seps) {
                let q = quadrature_two_point(&spec, *d, section.quad_order).map_err(|e| e.to_string())?;
                let scale = q.values.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
                for i in 0..6 {
                    for j in 0..6 {
                        let allowed = 5.0 * e.stderr[i][j] + 1e-9 * scale;
                        let diff = (e.mean.values[i][j] - q.values[i][j]).abs();
                        worst = worst.max(if allowed > 0.0 { diff / allowed } else if diff > 0.0 { f64::INFINITY } else { 0.0 });
                    }
                }
            }
            Ok(worst)
        });
    checks.push(match two_point {
        Ok(w) => Check {
            name: "two-point",
            pass: w <= 1.0,
            detail: format!("{} separations, worst |diff| / (5 se) = {w:.3}", seps.len()),
        },
        Err(e) => Check { name: "two-point", pass: false, detail: e },
    });
    checks
}

pub fn kubo(cfg: &Config, config_dir: &Path, out: Option<&Path>) -> Outcome {
    let section = cfg.kubo.clone().ok_or_else(|| UsageError("config has no [kubo] section".into()))?;
    let (profile, analytic) = build_profile(&section.profile, config_dir, cfg.seed)?;
    let from_h = kappa2_from_h(&profile);
    let from_g = if analytic { Some(kappa2_from_g(&profile)) } else { None };
    let mut pass = true;
    let mut report = json!({ "profile": section.profile });
    match &from_h {
        Ok(v) => {
            let k = DiffusionConstant::from_computed(*v);
            println!("kappa2 (H route) = {v:e}");
            if k.negative {
                println!("note: computed kappa2 is negative, |kappa2| = {:e} is used downstream", k.value);
            }
            report["kappa2_h"] = json!(k);
        }
        Err(e) => {
            println!("kappa2 (H route): {e}");
            report["kappa2_h_error"] = json!(e.to_string());
            pass = false;
        }
    }
    match &from_g {
        Some(Ok(v)) => {
            println!("kappa2 (g route) = {v:e}");
            report["kappa2_g"] = json!(v);
        }
        Some(Err(e)) => {
            println!("kappa2 (g route): {e}");
            report["kappa2_g_error"] = json!(e.to_string());
            pass = false;
        }
        None => println!("kappa2 (g route): not available for this profile"),
    }
    if let (Ok(h), Some(Ok(g))) = (&from_h, &from_g) {
        let diff = (h - g).abs();
        let rel = if h.abs().max(g.abs()) > 0.0 { diff / h.abs().max(g.abs()) } else { 0.0 };
        println!("difference = {diff:e} (relative {rel:e})");
        report["difference"] = json!(diff);
        report["relative_difference"] = json!(rel);
        pass &= rel <= 1e-8;
    }
    report["pass"] = json!(pass);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join("kubo.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
        if let CorrelationProfile::Tabulated(t) = &profile {
            write_atomic(&dir.join("profile.csv"), t.to_csv().as_bytes())?;
        }
    }
    Ok(pass)
}

fn build_profile(cfg: &ProfileConfig, config_dir: &Path, seed: u64) -> Result<(CorrelationProfile, bool)> {
    Ok(match cfg {
        ProfileConfig::Exponential { amplitude, rate } => {
            (CorrelationProfile::scalar(ExponentialG { amplitude: *amplitude, rate: *rate }), true)
        }
        ProfileConfig::PowerLaw { amplitude, length, exponent } => (
            CorrelationProfile::scalar(PowerLawG { amplitude: *amplitude, length: *length, exponent: *exponent }),
            true,
        ),
        ProfileConfig::Constant { value } => (CorrelationProfile::scalar(ConstantG(*value)), true),
        ProfileConfig::Table { path } => {
            let path = if path.is_absolute() { path.clone() } else { config_dir.join(path) };
            (CorrelationProfile::Tabulated(read_table(&path)?), false)
        }
        ProfileConfig::Field { spec, coupling, n_modes, n_seeds, p, grid_end, grid_points, estimator } => {
            let density = spec.density(*coupling);
            let end = grid_end.unwrap_or(10.0 * density.profile.decay_scale());
            if *grid_points < 2 || end.is_nan() || end <= 0.0 {
                return Err(UsageError("kubo.profile: need grid_points >= 2 and grid_end > 0".into()).into());
            }
            let grid: Vec<f64> = (0..*grid_points).map(|i| end * i as f64 / (*grid_points - 1) as f64).collect();
            let mom = FourVector::on_shell(*p, 1.0);
            let t = h_profiles_from_field(&density, *n_modes, *n_seeds, seed, &mom, 1.0, &grid, *estimator)?;
            (CorrelationProfile::Tabulated(t), false)
        }
    })
}

fn read_table(path: &Path) -> Result<Tabulated> {
    let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())))?;
    let mut cols: [Vec<f64>; 5] = Default::default();
    let mut width = 0;
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| UsageError(format!("{}, line {}: {e}", path.display(), n + 1)))?;
        if !(vals.len() == 3 || vals.len() == 5) || (width != 0 && vals.len() != width) {
            return Err(UsageError(format!("{}, line {}: expected 3 or 5 columns", path.display(), n + 1)).into());
        }
        width = vals.len();
        for (c, v) in cols.iter_mut().zip(vals) {
            c.push(v);
        }
    }
    let [s, h1, h, se1, se] = cols;
    let mut t = Tabulated::new(s, h1, h).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    if width == 5 {
        t.stderr_h1 = se1;
        t.stderr_h = se;
    }
    Ok(t)
}

struct Written {
    files: Vec<OutputFile>,
    root: PathBuf,
}

impl Written {
    fn put(&mut self, rel: String, contents: &str) -> Result<()> {
        let path = self.root.join(&rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        write_atomic(&path, contents.as_bytes())?;
        self.files.push(OutputFile::new(rel, contents.as_bytes()));
        Ok(())
    }

    fn report(&mut self, name: &str, tag: &str, r: &MomentReport) -> Result<()> {
        self.put(format!("{name}/{tag}moments.csv"), &r.to_csv())?;
        self.put(format!("{name}/{tag}momentum_histogram.csv"), &r.momentum_histogram.to_csv())?;
        self.put(format!("{name}/{tag}energy_histogram.csv"), &r.energy_histogram.to_csv())?;
        self.put(format!("{name}/{tag}report.json"), &serde_json::to_string_pretty(r)?)
    }
}

pub fn run(cfg: &Config, out: &Path) -> Outcome {
    if cfg.experiment.is_empty() {
        return Err(UsageError("config names no [[experiment]]".into()).into());
    }
    let mut names = std::collections::HashSet::new();
    for e in &cfg.experiment {
        if e.name.is_empty() || e.name.contains(['/', '\\']) || e.name.starts_with('.') || !names.insert(&e.name) {
            return Err(UsageError(format!("experiment name {:?} is empty, a path or a duplicate", e.name)).into());
        }
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut records = Vec::new();
    let mut summary = String::new();
    for (i, entry) in cfg.experiment.iter().enumerate() {
        let mut task = entry.task.clone();
        let seed = experiment_seed(cfg.seed, i as u64);
        task.set_seed(seed);
        info!("experiment {} ({}) seed {seed}", entry.name, task.kind());
        let start = Instant::now();
        let mut written = Written { files: Vec::new(), root: out.to_path_buf() };
        let result = run_task(&entry.name, &task, &mut written);
        let (status, verdict) = match result {
            Ok((pass, verdict)) => (if pass { "pass" } else { "fail" }, verdict),
            Err(e) => {
                warn!("experiment {} failed: {e:#}", entry.name);
                ("error", json!({ "error": format!("{e:#}") }))
            }
        };
        let line = format!("{:<24} {:<18} {}", entry.name, task.kind(), status.to_uppercase());
        println!("{line}");
        summary.push_str(&line);
        summary.push('\n');
        records.push(ExperimentRecord {
            name: entry.name.clone(),
            kind: task.kind().to_string(),
            seed,
            status: status.to_string(),
            verdict,
            outputs: written.files,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    let pass = records.iter().all(|r| r.status == "pass");
    summary.push_str(if pass { "overall PASS\n" } else { "overall FAIL\n" });
    write_atomic(&out.join("summary.txt"), summary.as_bytes())?;
    let manifest = RunManifest::new(serde_json::to_value(cfg)?, cfg.seed, rayon::current_num_threads(), records, pass);
    write_atomic(&out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(pass)
}

fn run_task(name: &str, task: &Task, w: &mut Written) -> Result<(bool, serde_json::Value)> {
    match task {
        Task::FieldEnsemble(c) => {
            let r = run_field_ensemble(c)?;
            w.report(name, "", &r)?;
            Ok((r.valid, json!({ "valid": r.valid, "failed_trajectories": r.n_failed })))
        }
        Task::DiffusionEnsemble(c) => {
            let r = run_diffusion_ensemble(c)?;
            w.report(name, "", &r)?;
            Ok((true, json!({ "particles": r.n_particles })))
        }
        Task::Compare { field, kappa2, policy } => {
            if field.clock != Clock::Proper {
                return Err(HarnessError::InvalidConfig("compare runs the field ensemble on the proper clock".into()).into());
            }
            let kappa = match kappa2 {
                Some(v) => DiffusionConstant::from_computed(*v),
                None => kubo_prediction(&field.spec.density(field.coupling), 48)?,
            };
            let particle: ParticleParams = field.particle;
            let diff_cfg = DiffusionConfig {
                params: DiffusionParams::new(kappa.value, particle, DiffusionKind::SchayDudleyProper)?,
                schedule: field.schedule.clone(),
            };
            let a = run_field_ensemble(field)?;
            let b = run_diffusion_ensemble(&diff_cfg)?;
            w.report(name, "field_", &a)?;
            w.report(name, "diffusion_", &b)?;
            let cmp = compare_reports(&a, &b, policy)?;
            let mut csv = String::from("checkpoint,s,moment,a,a_se,b,b_se,z,allowed,pass\n");
            for e in &cmp.entries {
                csv.push_str(&format!(
                    "{},{:?},{},{:?},{:?},{:?},{:?},{:?},{:?},{}\n",
                    e.checkpoint, e.s, e.moment, e.a.mean, e.a.stderr, e.b.mean, e.b.stderr, e.z, e.allowed, e.pass
                ));
            }
            w.put(format!("{name}/comparison.csv"), &csv)?;
            let pass = cmp.pass && a.valid;
            let worst = cmp.worst().map(|e| format!("{} at s = {}", e.moment, e.s));
            Ok((pass, json!({ "kappa2": kappa, "pass": cmp.pass, "field_valid": a.valid, "worst": worst })))
        }
        Task::Equilibration(c) => {
            let r = run_equilibration(c)?;
            w.put(format!("{name}/chi_square.csv"), &r.to_csv())?;
            w.report(name, "", &r.moments)?;
            Ok((r.pass, json!({ "mixed": r.mixed, "target": r.target, "control": r.control })))
        }
        Task::LabVsProper(c) => {
            let r = lab_vs_proper_discrepancy(c)?;
            w.put(format!("{name}/p0.csv"), &r.to_csv())?;
            Ok((r.verdict.pass, json!({ "verdict": r.verdict, "juttner_mean": r.juttner_mean })))
        }
        Task::MarkovLimit(c) => {
            let r = run_markov_limit(c)?;
            w.put(format!("{name}/growth.csv"), &r.to_csv())?;
            w.report(name, "", &r.moments)?;
            Ok((r.pass, json!({ "kappa2": r.kappa2, "window": r.window, "failed_trajectories": r.n_failed, "rates": r.rates })))
        }
        Task::ProperGrowth(c) => {
            let r = proper_growth(c)?;
            w.put(format!("{name}/growth.csv"), &r.to_csv())?;
            w.report(name, "", &r.moments)?;
            Ok((r.pass, json!({ "steps": r.steps })))
        }
    }
}

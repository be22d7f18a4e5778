//! Commands behind the `brwlab` binary.
//!
//! Every command resolves a [`ModelConfig`], runs one pipeline and writes its
//! results below `<out>/<config hash>/`. Files are written to a temporary
//! name and renamed into place.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use brwlab::asymptotics::{pure_walk_deviation, validate_regime, Verdict};
use brwlab::config::{MonteCarloConfig, VariantKind};
use brwlab::moment_solver::{choose_truncation, solve_moments, MomentOptions, MomentTrajectory};
use brwlab::montecarlo::{simulate, Estimate, SimulationOptions, SimulationSummary};
use brwlab::spectral::classify;
use brwlab::{Error, Execution, ModelConfig, Regime, RegimeReport, Result, Variant};
use serde_json::{json, Value};

/// Command-line settings that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub max_order: Option<usize>,
    pub variant: Option<VariantKind>,
    pub site: Option<Vec<i64>>,
    pub replicas: Option<usize>,
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ModelConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
    let mut config = ModelConfig::from_json(&text)?;
    if let Some(n) = overrides.max_order {
        config.moments.max_order = n;
    }
    if let Some(v) = overrides.variant {
        config.moments.variant = v;
    }
    if let Some(site) = &overrides.site {
        config.moments.site = Some(site.clone());
    }
    if overrides.seed.is_some() || overrides.replicas.is_some() {
        let mc = config.montecarlo.get_or_insert(MonteCarloConfig {
            replicas: 0,
            seed: 0,
            max_population: brwlab::montecarlo::Caps::default().max_population,
            max_events: brwlab::montecarlo::Caps::default().max_events,
        });
        if let Some(seed) = overrides.seed {
            mc.seed = seed;
        }
        if let Some(r) = overrides.replicas {
            mc.replicas = r;
        }
    }
    config.check()?;
    Ok(config)
}

/// Outcome of a command: what goes to stdout and whether validation passed.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub stdout: Value,
    pub pass: bool,
    pub dir: PathBuf,
}

struct Run<'a> {
    command: &'static str,
    config: &'a ModelConfig,
    hash: String,
    dir: PathBuf,
    started: Instant,
    outputs: Vec<String>,
}

impl<'a> Run<'a> {
    fn start(command: &'static str, config: &'a ModelConfig, out: &Path) -> Result<Self> {
        let hash = config.hash();
        let dir = out.join(&hash[..16]);
        fs::create_dir_all(&dir)?;
        Ok(Run {
            command,
            config,
            hash,
            dir,
            started: Instant::now(),
            outputs: Vec::new(),
        })
    }

    fn write(&mut self, relative: &str, contents: &str) -> Result<()> {
        write_atomic(&self.dir.join(relative), contents)?;
        self.outputs.push(relative.to_string());
        Ok(())
    }

    fn write_json(&mut self, relative: &str, value: &Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("json value serializes");
        text.push('\n');
        self.write(relative, &text)
    }

    fn finish(self, stdout: Value, pass: bool) -> Result<Outcome> {
        let manifest = json!({
            "command": self.command,
            "config_hash": self.hash,
            "config": serde_json::from_str::<Value>(&self.config.canonical_json()).expect("canonical json parses"),
            "seed": self.config.montecarlo.as_ref().map(|mc| mc.seed),
            "versions": {"brwlab": brwlab::VERSION, "schema": brwlab::config::SCHEMA},
            "threads": rayon::current_num_threads(),
            "wall_time_seconds": self.started.elapsed().as_secs_f64(),
            "outputs": self.outputs,
        });
        let mut text = serde_json::to_string_pretty(&manifest).expect("json value serializes");
        text.push('\n');
        write_atomic(&self.dir.join("manifest.json"), &text)?;
        Ok(Outcome {
            stdout,
            pass,
            dir: self.dir,
        })
    }
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let parent = path.parent().expect("output files live in a directory");
    fs::create_dir_all(parent)?;
    let name = path.file_name().expect("output file has a name").to_string_lossy();
    let tmp = parent.join(format!(".{name}.tmp"));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("result serializes")
}

pub fn cmd_classify(config: &ModelConfig, out: &Path) -> Result<Outcome> {
    let model = config.build()?;
    let report = classify(&model.kernel, &model.law)?;
    let mut run = Run::start("classify", config, out)?;
    let value = json!({"config_hash": run.hash, "regime": to_value(&report)});
    run.write_json("report.json", &value)?;
    run.finish(to_value(&report), true)
}

/// Solves at the configured radius, or the doubling-test radius, and keeps
/// doubling while the box leaks.
fn solve(config: &ModelConfig, variant: Variant, max_order: usize) -> Result<(Vec<MomentTrajectory>, Option<f64>)> {
    let model = config.build()?;
    let tol = &config.tolerances;
    let horizon = config.horizon();
    let (mut radius, change) = match config.truncation.radius {
        Some(r) => (r, None),
        None => {
            let choice = choose_truncation(
                &model.kernel,
                &model.law,
                &variant,
                horizon,
                config.truncation.start_radius,
                config.truncation.max_radius,
                tol.doubling.value(),
                Execution::default(),
            )?;
            (choice.radius, Some(choice.change))
        }
    };
    loop {
        let mut opts = MomentOptions::new(radius, max_order, horizon, variant.clone());
        opts.rtol = tol.rtol.value();
        opts.atol = tol.atol.value();
        opts.leak_tol = tol.leak.value();
        opts.extra_times = config.checkpoint_times();
        match solve_moments(&model.kernel, &model.law, &opts) {
            Err(Error::TruncationTooSmall { .. })
                if config.truncation.radius.is_none() && 2 * radius <= config.truncation.max_radius =>
            {
                radius *= 2;
            }
            other => return other.map(|t| (t, change)),
        }
    }
}

fn kind_name(variant: &Variant) -> &'static str {
    match variant {
        Variant::Total => "total",
        _ => "local",
    }
}

pub fn cmd_moments(config: &ModelConfig, out: &Path) -> Result<Outcome> {
    let variant = config.variant();
    let (trajectories, change) = solve(config, variant.clone(), config.moments.max_order)?;
    let mut run = Run::start("moments", config, out)?;
    let mut files = Vec::new();
    for traj in &trajectories {
        let stem = format!("trajectories/m{}_{}", traj.order, kind_name(&variant));
        run.write(&format!("{stem}.csv"), &traj.to_csv())?;
        let sidecar = json!({
            "config_hash": run.hash,
            "order": traj.order,
            "variant": traj.variant.label(),
            "dimension": traj.dimension,
            "doubling_change": change,
            "metadata": to_value(&traj.metadata),
        });
        run.write_json(&format!("{stem}.json"), &sidecar)?;
        files.push(format!("{stem}.csv"));
    }
    let meta = &trajectories[0].metadata;
    let stdout = json!({
        "config_hash": run.hash,
        "variant": variant.label(),
        "radius": meta.radius,
        "boundary_leak": meta.boundary_leak,
        "files": files,
    });
    run.finish(stdout, true)
}

fn simulation_options(config: &ModelConfig) -> Result<SimulationOptions> {
    let mc = config
        .montecarlo
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("no montecarlo section and no --replicas".into()))?;
    let mut checkpoints = config.checkpoint_times();
    if checkpoints.is_empty() {
        checkpoints.push(config.horizon());
    }
    let mut opts = SimulationOptions::new(config.dimension, checkpoints, mc.replicas, mc.seed);
    opts.tracked = vec![config.site()];
    opts.max_order = config.moments.max_order;
    opts.caps = config.caps();
    Ok(opts)
}

fn run_simulation(config: &ModelConfig) -> Result<SimulationSummary> {
    let model = config.build()?;
    simulate(&model.kernel, &model.law, &simulation_options(config)?)
}

pub fn cmd_simulate(config: &ModelConfig, out: &Path) -> Result<Outcome> {
    let summary = run_simulation(config)?;
    let mut run = Run::start("simulate", config, out)?;
    let value = json!({"config_hash": run.hash, "summary": to_value(&summary)});
    run.write_json("summary.json", &value)?;
    run.finish(to_value(&summary), true)
}

fn agreement(estimate: &Estimate, exact: f64, sigmas: f64) -> bool {
    if estimate.std_error == 0.0 {
        (estimate.mean - exact).abs() <= 1e-9 * exact.abs().max(1.0)
    } else {
        estimate.agrees_with(exact, sigmas)
    }
}

/// Monte Carlo estimates against the hierarchy at every checkpoint.
fn compare_with_simulation(
    config: &ModelConfig,
    local: &[MomentTrajectory],
    total: &[MomentTrajectory],
) -> Result<(Vec<Value>, bool)> {
    let summary = run_simulation(config)?;
    let sigmas = config.tolerances.sigmas.value();
    let origin = vec![0; config.dimension];
    let mut rows = Vec::new();
    let mut pass = true;
    for c in &summary.checkpoints {
        for (n, (l, t)) in local.iter().zip(total).enumerate() {
            let exact_local = l.value(c.time, &origin).expect("checkpoints are output times");
            let exact_total = t.value(c.time, &origin).expect("checkpoints are output times");
            let ok_local = agreement(&c.local[0][n], exact_local, sigmas);
            let ok_total = agreement(&c.total[n], exact_total, sigmas);
            pass &= ok_local && ok_total;
            rows.push(json!({
                "time": c.time,
                "order": n + 1,
                "local": {"estimate": to_value(&c.local[0][n]), "ode": exact_local, "pass": ok_local},
                "total": {"estimate": to_value(&c.total[n]), "ode": exact_total, "pass": ok_total},
            }));
        }
    }
    Ok((rows, pass))
}

fn verdicts(
    report: &RegimeReport,
    trajectories: &[MomentTrajectory],
    site: &[i64],
    config: &ModelConfig,
) -> Result<(Vec<Verdict>, Vec<Value>)> {
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for traj in trajectories {
        let probe = match traj.variant {
            Variant::Total => vec![0; config.dimension],
            _ => site.to_vec(),
        };
        match validate_regime(
            report,
            std::slice::from_ref(traj),
            &probe,
            config.window(),
            &config.tolerances.fit(),
        ) {
            Ok(mut v) => kept.append(&mut v),
            Err(e @ Error::UnsupportedCombination(_)) => skipped.push(json!({
                "order": traj.order,
                "variant": traj.variant.label(),
                "reason": e.to_string(),
            })),
            Err(e) => return Err(e),
        }
    }
    Ok((kept, skipped))
}

pub fn cmd_validate(config: &ModelConfig, out: &Path) -> Result<Outcome> {
    let model = config.build()?;
    let report = classify(&model.kernel, &model.law)?;
    let n = config.moments.max_order;
    let origin = vec![0; config.dimension];
    let site = config.site();
    let local_variant = Variant::Local { site: site.clone() };
    let (local, _) = solve(config, local_variant, n)?;
    let (total, _) = solve(config, Variant::Total, n)?;
    let (mut all, mut skipped) = verdicts(&report, &local, &origin, config)?;
    let (mut more, mut more_skipped) = verdicts(&report, &total, &origin, config)?;
    all.append(&mut more);
    skipped.append(&mut more_skipped);
    let mut pass = all.iter().all(|v| v.pass);

    let mut closed_form = Value::Null;
    if report.regime == Regime::PureWalk {
        let b0 = report.death_rate;
        let l = pure_walk_deviation(&model.kernel, b0, &local[0], &origin)?;
        let t = pure_walk_deviation(&model.kernel, b0, &total[0], &origin)?;
        let ok = l.max(t) <= 1e-6;
        pass &= ok;
        closed_form = json!({"local_deviation": l, "total_deviation": t, "pass": ok});
    }

    let mut montecarlo = Value::Null;
    if config.montecarlo.is_some() && !config.checkpoints.is_empty() {
        let (rows, ok) = compare_with_simulation(config, &local, &total)?;
        pass &= ok;
        montecarlo = json!({"checkpoints": rows, "pass": ok});
    }

    let mut run = Run::start("validate", config, out)?;
    let value = json!({
        "config_hash": run.hash,
        "regime": to_value(&report),
        "verdicts": to_value(&all),
        "skipped": skipped,
        "closed_form": closed_form,
        "montecarlo": montecarlo,
        "pass": pass,
    });
    run.write_json("report.json", &value)?;
    run.finish(value, pass)
}

/// Machine-readable form of an error.
pub fn error_json(e: &Error) -> Value {
    json!({"error": e.kind(), "message": e.to_string(), "exit_code": e.exit_code()})
}

//! Subcommands. Each writes `<name>.csv` and `<name>.json` into the output
//! directory; the JSON carries a `metadata` block (with the only timestamp)
//! and the CSV is a pure function of config and seed.

use std::path::{Path, PathBuf};

use hqo_core::bounds::{
    decay_check, epsilon_window, find_beta_brackets, parameter_search, propagate_and_classify, select_parameters,
    BetaBrackets, Certificate, EpsilonWindow, Interval, Kernels, ModelFamily, SpectralFamily,
};
use hqo_core::lattice::{build_lattice_model, check_temporal_symbol, gaussian_oracle, lambda_q, mc_estimate, McConfig};
use hqo_core::rgflow::{flow_run, FlowConfig, Level0Source};
use hqo_core::spectral::{build_and_diagonalize, spectral_record, ModelParams, SpectralRecord};
use hqo_core::{exec, Exec};
use serde::Serialize;
use serde_json::{json, Value};

use crate::verify::{verify_suite, Mutation};
use crate::{CliError, ExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::Subcommand)]
pub enum Command {
    /// β-scan of û₀(q), η, rigidity and the initial-bound report.
    Spectral,
    /// Path-integral Monte Carlo estimates at one hierarchy level.
    Lattice,
    /// Per-level renormalization-group flow table.
    Rgflow,
    /// ε-window, propagated bounds from the configured model, parameter search.
    Bounds,
    /// Nested bisection for the β* bracket.
    Betastar,
    /// Invariant suite across all modules.
    Verify {
        /// Deliberately corrupt one ingredient to confirm the suite notices.
        #[arg(long, value_enum)]
        mutate: Option<Mutation>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Spectral => "spectral",
            Command::Lattice => "lattice",
            Command::Rgflow => "rgflow",
            Command::Bounds => "bounds",
            Command::Betastar => "betastar",
            Command::Verify { .. } => "verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "detail", rename_all = "lowercase")]
pub enum Status {
    Ok,
    /// Names of the violated invariants.
    Violation(Vec<String>),
    Infeasible(String),
}

impl Status {
    pub fn exit_code(&self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Violation(_) => 2,
            Status::Infeasible(_) => 3,
        }
    }

    fn from_violations(v: Vec<String>) -> Self {
        if v.is_empty() {
            Status::Ok
        } else {
            Status::Violation(v)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub status: Status,
    pub files: Vec<PathBuf>,
}

struct Artifact {
    csv: String,
    result: Value,
    status: Status,
}

fn f(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_outputs(dir: &Path, cmd: &str, cfg: &ExperimentConfig, art: &Artifact) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir)?;
    let created = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let doc = json!({
        "metadata": {
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": cmd,
            "created_unix": created,
            "config": cfg,
        },
        "status": art.status,
        "result": art.result,
    });
    let csv_path = dir.join(format!("{cmd}.csv"));
    let json_path = dir.join(format!("{cmd}.json"));
    std::fs::write(&csv_path, &art.csv)?;
    std::fs::write(&json_path, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(vec![csv_path, json_path])
}

/// Run one subcommand and write its artifacts.
pub fn run_experiment(cmd: Command, cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    if cfg.threads > 0 {
        exec::set_threads(cfg.threads);
    }
    let art = match cmd {
        Command::Spectral => spectral(cfg)?,
        Command::Lattice => lattice(cfg)?,
        Command::Rgflow => rgflow(cfg)?,
        Command::Bounds => bounds(cfg)?,
        Command::Betastar => betastar(cfg)?,
        Command::Verify { mutate } => {
            let report = verify_suite(cfg, mutate)?;
            let failed = report.failures();
            Artifact { csv: report.to_csv(), result: serde_json::to_value(&report)?, status: Status::from_violations(failed) }
        }
    };
    let files = write_outputs(&cfg.output.dir, cmd.name(), cfg, &art)?;
    Ok(Outcome { status: art.status, files })
}

fn spectral(cfg: &ExperimentConfig) -> Result<Artifact, CliError> {
    let grid = cfg.beta_grid();
    let beta_min = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let spec = build_and_diagonalize(&cfg.params_at(beta_min), cfg.spectral.k_start)?;
    let records = Exec::default()
        .map(&grid, |&b| spectral_record(&spec, &cfg.params_at(b), cfg.spectral.q_max))
        .into_iter()
        .collect::<Result<Vec<SpectralRecord>, _>>()?;
    let mut csv = String::from("beta,k,q,u_hat0,eta,gap,rigidity,x0,bounds_pass\n");
    let mut violations = Vec::new();
    for r in &records {
        let pass = match &r.bound_report {
            None => "na",
            Some(rep) => {
                for c in rep.checks.iter().filter(|c| !c.pass) {
                    violations.push(format!("beta = {}: {}", r.params.beta, c.name));
                }
                if rep.all_pass() { "1" } else { "0" }
            }
        };
        for &(k, q, u) in &r.u_hat0 {
            csv.push_str(&format!(
                "{},{k},{},{},{},{},{},{},{pass}\n",
                f(r.params.beta), f(q), f(u), f(r.eta), f(r.gap), f(r.rigidity), f(r.x0)
            ));
        }
    }
    Ok(Artifact { csv, result: serde_json::to_value(&records)?, status: Status::from_violations(violations) })
}

fn lattice(cfg: &ExperimentConfig) -> Result<Artifact, CliError> {
    let p = cfg.params();
    let model = build_lattice_model(cfg.mc.level, cfg.mc.slices, cfg.hier(), p)?;
    let symbol = check_temporal_symbol(&model, |q| lambda_q(p.mass, p.beta, cfg.mc.slices, q));
    let mc = McConfig {
        sweeps: cfg.mc.sweeps,
        burn_in: cfg.mc.burn_in,
        chains: cfg.mc.chains,
        batches: cfg.mc.batches,
        measure_every: cfg.mc.measure_every,
        overrelax: true,
        k_max: cfg.mc.k_max,
        exec: Exec::default(),
    };
    let est = mc_estimate(&model, &mc, cfg.seed)?;
    let mut violations: Vec<String> = est
        .gks
        .iter()
        .chain(&est.gaussian_upper)
        .chain(&est.correlation)
        .filter(|c| !c.pass)
        .map(|c| c.label.clone())
        .collect();
    if !est.ursell_table()?.sign_rule_holds(3.0) {
        violations.push("sign rule (-1)^(k-1) U_2k >= 0".into());
    }
    if !symbol.pass {
        violations.push("temporal symbol".into());
    }
    let result = json!({ "estimates": est, "temporal_symbol": symbol });
    Ok(Artifact { csv: est.to_csv(), result, status: Status::from_violations(violations) })
}

fn rgflow(cfg: &ExperimentConfig) -> Result<Artifact, CliError> {
    let p = cfg.params();
    let hier = cfg.hier();
    let mut fc = FlowConfig::new(&p, cfg.rg.pop, cfg.rg.n_max);
    fc.cutoff = cfg.rg.cutoff;
    fc.replicas = cfg.rg.replicas;
    if !p.is_gaussian() {
        fc.level0 = Level0Source::Lattice {
            slices: cfg.rg.slices,
            burn_in: cfg.rg.burn_in,
            thin: cfg.rg.thin,
            chains: cfg.mc.chains,
        };
    }
    let table = flow_run(&p, &hier, &fc, cfg.seed)?;
    let kernels = Kernels::new(hier.kappa, hier.delta)?;
    let violations: Vec<String> = table
        .upper_recurrence_violations(&kernels)
        .iter()
        .map(|n| format!("upper recurrence u_n <= sigma(u_(n-1)) u_(n-1) at level {n}"))
        .collect();
    let oracle = if p.is_gaussian() {
        table
            .rows
            .iter()
            .map(|r| {
                let o = gaussian_oracle(r.level, &hier, &p)?.u_hat(0.0);
                Ok(json!({ "level": r.level, "oracle": o, "z": r.u_hat.z_score(o, 0.0) }))
            })
            .collect::<Result<Vec<_>, hqo_core::Error>>()?
    } else {
        Vec::new()
    };
    let result = json!({
        "table": table,
        "decay_fit": table.decay_fit(hier.kappa),
        "gaussian_oracle": oracle,
    });
    Ok(Artifact { csv: table.to_csv(), result, status: Status::from_violations(violations) })
}

/// `(û₀, X₀)` of the configured model at `beta`.
fn initial_data(p: &ModelParams, k_start: usize) -> Result<(f64, f64), CliError> {
    if p.is_gaussian() {
        return Ok((1.0 / p.a, 0.0));
    }
    let spec = build_and_diagonalize(p, k_start)?;
    let th = spec.thermal(p.beta)?;
    Ok((th.u_hat(0.0), th.x0()))
}

fn window(cfg: &ExperimentConfig) -> Result<EpsilonWindow, CliError> {
    Ok(epsilon_window(cfg.hierarchy.kappa, cfg.hierarchy.delta, cfg.bounds.epsilon)?)
}

fn bounds(cfg: &ExperimentConfig) -> Result<Artifact, CliError> {
    let win = window(cfg)?;
    let invariants = win.invariants();
    let p = cfg.params();
    let (u0, x0) = initial_data(&p, cfg.spectral.k_start)?;
    let trace = propagate_and_classify(Interval::point(u0), x0, &win, cfg.bounds.n_max);
    let search = parameter_search(cfg.hierarchy.kappa, cfg.hierarchy.delta, cfg.bounds.epsilon, 20.0)?;
    let mut csv = String::from("level,u_lo,u_hi,x_hi,regime\n");
    for l in &trace.levels {
        let regime = serde_json::to_value(l.regime)?;
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            l.level, f(l.u.lo), f(l.u.hi), f(l.x_hi), regime.as_str().unwrap_or_default()
        ));
    }
    let violations = invariants.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
    let result = json!({
        "window": win,
        "invariants": invariants,
        "initial": { "u_hat0": u0, "x0": x0, "beta": p.beta },
        "trace": trace,
        "parameter_search": search,
    });
    Ok(Artifact { csv, result, status: Status::from_violations(violations) })
}

fn brackets_csv(b: &BetaBrackets) -> String {
    let mut csv = String::from(
        "level,beta_minus_lo,beta_minus_hi,beta_plus_lo,beta_plus_hi,nested_lo,nested_hi,minus_resolved,plus_resolved\n",
    );
    for l in &b.levels {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            l.level,
            f(l.beta_minus.lo),
            f(l.beta_minus.hi),
            f(l.beta_plus.lo),
            f(l.beta_plus.hi),
            f(l.nested.lo),
            f(l.nested.hi),
            l.minus_resolved as u8,
            l.plus_resolved as u8
        ));
    }
    csv
}

/// β* bracket from the selected parameters; when selection is infeasible the
/// configured model is bracketed instead, the outcome still reports exit 3.
fn betastar(cfg: &ExperimentConfig) -> Result<Artifact, CliError> {
    let win = window(cfg)?;
    let (kappa, delta, eps) = (cfg.hierarchy.kappa, cfg.hierarchy.delta, cfg.bounds.epsilon);
    let (family_params, search_range, mut checks, infeasible) = match select_parameters(kappa, delta, eps) {
        Ok((p, search)) => (p, (cfg.bounds.beta_min, search.beta_cap), search.checks, None),
        Err(hqo_core::Error::Infeasible(msg)) => {
            let search = parameter_search(kappa, delta, eps, 20.0)?;
            (cfg.params(), (cfg.bounds.beta_min, cfg.bounds.beta_max), search.checks, Some(msg))
        }
        Err(e) => return Err(e.into()),
    };
    let family: Box<dyn ModelFamily> = if family_params.is_gaussian() {
        let u = 1.0 / family_params.a;
        Box::new(move |_b: f64| Ok((u, 0.0)))
    } else {
        let p = family_params;
        Box::new(SpectralFamily::new(p.mass, p.a, p.b, search_range.0)?)
    };
    let brackets = find_beta_brackets(
        family.as_ref(),
        &win,
        search_range,
        cfg.bounds.tol,
        cfg.bounds.n_max,
        Exec::default(),
    )?;
    let below = decay_check(family.as_ref(), &win, (0.9 * brackets.beta_star.lo).max(search_range.0), cfg.bounds.n_max)?;
    checks.push(hqo_core::spectral::BoundCheck::le(
        "beta* bracket relative width <= tol",
        brackets.relative_width,
        cfg.bounds.tol,
        0.0,
    ));
    let params = infeasible.is_none().then_some(family_params);
    let cert = Certificate::new(&win, params, Some(&brackets), checks);
    let status = match &infeasible {
        Some(msg) => Status::Infeasible(msg.clone()),
        None => Status::from_violations(cert.checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect()),
    };
    let result = json!({
        "selected": infeasible.is_none(),
        "bracketed_params": family_params,
        "brackets": brackets,
        "decay_below_bracket": below,
        "certificate": cert,
    });
    Ok(Artifact { csv: brackets_csv(&brackets), result, status })
}

//! Invariant suite: every module's structural and numerical invariants at desk
//! scale with fixed seeds. Model-dependent checks use the configured model;
//! with `b = 0` only the Gaussian sector runs.

use std::f64::consts::PI;

use hqo_core::bounds::{
    epsilon_window, find_beta_brackets, propagate_and_classify, recurrence_step, Interval, Kernels, Regime,
};
use hqo_core::hierarchy::HierarchyParams;
use hqo_core::lattice::{
    build_lattice_model, check_temporal_symbol, exact_enumeration, gaussian_u_hat, lambda_q, mc_estimate,
    Enumeration, IsingInstance, McConfig,
};
use hqo_core::rgflow::{flow_run, init_level0, rg_step, FlowConfig, Level0Source, PathEnsemble};
use hqo_core::spectral::{build_and_diagonalize, check_initial_bounds, double_commutator_defect, ModelParams};
use hqo_core::ursell::{
    cumulants_from_moments, inequality_suite, leeyang_product_fit, moments_from_cumulants, root_locus_check,
    UrsellTable,
};
use hqo_core::{Exec, Result};
use serde::Serialize;

use crate::ExperimentConfig;

/// Deliberate corruptions used to show the suite is sensitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mutation {
    /// Compare the lattice operator against λ_q built with N + 1 slices.
    SymbolOffByOne,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub module: String,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub mutation: Option<Mutation>,
    pub gaussian_only: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    /// `module: name` of every failed check.
    pub fn failures(&self) -> Vec<String> {
        self.checks.iter().filter(|c| !c.pass).map(|c| format!("{}: {}", c.module, c.name)).collect()
    }

    /// `module,name,pass,detail`.
    pub fn to_csv(&self) -> String {
        let quote = |s: &str| format!("\"{}\"", s.replace('"', "\"\""));
        let mut s = String::from("module,name,pass,detail\n");
        for c in &self.checks {
            s.push_str(&format!("{},{},{},{}\n", c.module, quote(&c.name), c.pass as u8, quote(&c.detail)));
        }
        s
    }
}

struct Suite {
    checks: Vec<CheckResult>,
}

impl Suite {
    fn push(&mut self, module: &str, name: &str, pass: bool, detail: String) {
        self.checks.push(CheckResult { module: module.into(), name: name.into(), pass, detail });
    }

    /// `lhs <= rhs`, reported with both sides.
    fn le(&mut self, module: &str, name: &str, lhs: f64, rhs: f64) {
        self.push(module, name, lhs <= rhs, format!("{lhs:.6e} <= {rhs:.6e}"));
    }
}

pub fn verify_suite(cfg: &ExperimentConfig, mutation: Option<Mutation>) -> Result<VerifyReport> {
    let gaussian_only = cfg.model.b == 0.0;
    let mut s = Suite { checks: Vec::new() };
    hierarchy_checks(&mut s, cfg)?;
    spectral_checks(&mut s, cfg, gaussian_only)?;
    lattice_checks(&mut s, cfg, gaussian_only, mutation)?;
    if !gaussian_only {
        enumeration_checks(&mut s)?;
    }
    ursell_checks(&mut s)?;
    rgflow_checks(&mut s, cfg)?;
    bounds_checks(&mut s, cfg)?;
    Ok(VerifyReport { mutation, gaussian_only, checks: s.checks })
}

fn hierarchy_checks(s: &mut Suite, cfg: &ExperimentConfig) -> Result<()> {
    let m = "hierarchy";
    let h = cfg.hier();
    let sites = 64u64.min(h.block_size(3)?.max(16));
    let d = |a: u64, b: u64| h.distance(a, b);
    let (mut ultra, mut triangle) = (true, true);
    for a in 0..sites {
        for b in 0..sites {
            for c in 0..sites {
                let (ab, ac, bc) = (d(a, b), d(a, c), d(b, c));
                ultra &= ab == ac || ab == bc || ac == bc;
                triangle &= ab <= ac + bc;
            }
        }
    }
    s.push(m, "two of three pairwise distances coincide", ultra, format!("sites 0..{sites}"));
    s.push(m, "triangle inequality", triangle, format!("sites 0..{sites}"));
    let mut n = 1;
    while h.block_size(n + 1)? <= 256 {
        n += 1;
    }
    for n in 1..=n {
        let mat = h.coupling_matrix(n)?;
        let size = mat.nrows();
        let sym = (0..size).all(|i| (0..size).all(|j| mat[(i, j)] == mat[(j, i)]));
        let diag = (0..size).all(|i| mat[(i, i)] == mat[(0, 0)]);
        s.push(m, &format!("coupling matrix symmetric, constant diagonal (n = {n})"), sym && diag, format!("size {size}"));
        // swap the first two sub-blocks of level n−1 and, inside the first, its first two sites
        let k = h.kappa as usize;
        let sub = size / k;
        let perm = |i: usize| -> usize {
            let i = if i < sub { i + sub } else if i < 2 * sub { i - sub } else { i };
            match i {
                0 => 1,
                1 => 0,
                x => x,
            }
        };
        let inv = (0..size).all(|i| (0..size).all(|j| mat[(perm(i), perm(j))] == mat[(i, j)]));
        s.push(m, &format!("coupling matrix invariant under block-preserving permutations (n = {n})"), inv, String::new());
        let worst = (0..size)
            .map(|i| (mat.row(i).sum() + h.coupling_row_sum(n)).abs())
            .fold(0.0, f64::max);
        s.le(m, &format!("row sums equal -theta sum kappa^(-m delta) (n = {n})"), worst, 1e-12);
    }
    Ok(())
}

fn spectral_checks(s: &mut Suite, cfg: &ExperimentConfig, gaussian_only: bool) -> Result<()> {
    let m = "spectral";
    // harmonic reference
    for beta in [1.0, 4.0] {
        let p = ModelParams::gaussian(1.0, 1.0, beta)?;
        let th_sol = build_and_diagonalize(&p, 128)?;
        let th = th_sol.thermal(beta)?;
        let worst = (-8..=8i64)
            .map(|k| {
                let q = 2.0 * PI * k as f64 / beta;
                (th.u_hat(q) * (q * q + 1.0) - 1.0).abs()
            })
            .fold(0.0, f64::max);
        s.le(m, &format!("harmonic u_hat0(q) = 1/(q^2 + 1), |k| <= 8, beta = {beta}"), worst, 1e-6);
    }
    let p = cfg.params();
    let beta = p.beta;
    let sol = build_and_diagonalize(&p.with_beta(0.5 * beta), cfg.spectral.k_start)?;
    let th = sol.thermal(beta)?;
    let u0 = th.u_hat(0.0);
    let q_of = |k: i64| 2.0 * PI * k as f64 / beta;
    let qmax = cfg.spectral.q_max.max(8);
    let us: Vec<f64> = (0..=qmax).map(|k| th.u_hat(q_of(k))).collect();
    s.push(
        m,
        "0 < u_hat0(q) <= u_hat0(0)",
        us.iter().all(|&u| u > 0.0 && u <= u0),
        format!("k = 0..{qmax}"),
    );
    let worst = (1..=qmax)
        .map(|k| us[k as usize] * p.mass * q_of(k).powi(2))
        .fold(0.0, f64::max);
    s.le(m, "u_hat0(q) m q^2 <= 1 for q != 0", worst, 1.0);
    let g0 = th.gamma2(0.0)?;
    let sum: f64 = us[0] + 2.0 * (1..=256).map(|k| th.u_hat(q_of(k))).sum::<f64>();
    let tail = 2.0 * beta * beta / (4.0 * PI * PI * p.mass) / 256.0;
    let gap = g0 - sum / beta;
    s.push(
        m,
        "Gamma2(0,0) = (1/beta) sum_q u_hat0(q), |k| <= 256 plus tail",
        gap >= -1e-9 * g0 && gap <= tail / beta + 1e-9 * g0,
        format!("gap {gap:.6e}, tail bound {:.6e}", tail / beta),
    );
    let kms = (1..8)
        .map(|i| {
            let tau = beta * i as f64 / 16.0;
            Ok((th.gamma2(tau)? - th.gamma2(beta - tau)?).abs())
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    s.le(m, "KMS reflection Gamma2(tau) = Gamma2(beta - tau)", kms, 1e-12 * g0);
    let dc = double_commutator_defect(&p, 64)?;
    s.le(m, "interior [Q,[H0,Q]] = 1/m", dc, 1e-8);
    let grid: Vec<f64> = (0..=8).map(|i| 0.5 * beta * 4f64.powf(i as f64 / 8.0)).collect();
    let u_grid = grid
        .iter()
        .map(|&b| Ok(sol.thermal(b)?.u_hat(0.0)))
        .collect::<Result<Vec<f64>>>()?;
    let mono = u_grid.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12));
    s.push(m, "u_hat0 non-decreasing in beta", mono, format!("beta in [{:.3}, {:.3}]", grid[0], grid[8]));
    if !gaussian_only && p.a < 0.0 {
        let rep = check_initial_bounds(&sol, &p)?;
        for c in rep.checks {
            s.push(m, &c.name, c.pass, format!("margin {:.6e}", c.margin));
        }
    }
    Ok(())
}

fn lattice_checks(s: &mut Suite, cfg: &ExperimentConfig, gaussian_only: bool, mutation: Option<Mutation>) -> Result<()> {
    let m = "lattice";
    let p = cfg.params();
    let hier = cfg.hier();
    for slices in [2, 8, cfg.mc.slices] {
        let model = build_lattice_model(0, slices, hier, p)?;
        let n_ref = match mutation {
            Some(Mutation::SymbolOffByOne) => slices + 1,
            None => slices,
        };
        let chk = check_temporal_symbol(&model, |q| lambda_q(p.mass, p.beta, n_ref, q));
        s.push(m, &format!("temporal symbol reproduces lambda_q (N = {slices})"), chk.pass, format!("max rel defect {:.3e}", chk.max_rel_defect));
    }
    // Gaussian reference against the all-ones eigenvector formula
    let a_g = if gaussian_only { p.a } else { 2.0 };
    let gp = ModelParams::gaussian(p.mass, a_g, p.beta)?;
    let k = hier.kappa as f64;
    for n in 0..=3 {
        let r = hier.coupling_row_sum(n);
        if a_g <= r {
            continue;
        }
        let sym = 1.5;
        let expect = k.powf(-(n as f64) * hier.delta) / (sym + a_g - r);
        let got = gaussian_u_hat(n, &hier, &gp, sym)?;
        s.le(m, &format!("Gaussian u_hat_n = kappa^(-n delta)/(symbol + a - r_n) (n = {n})"), (got / expect - 1.0).abs(), 1e-12);
    }
    // short Gaussian chain against its finite-N law, and seed determinism
    let model = build_lattice_model(1, 16, hier, gp)?;
    let mc = McConfig { sweeps: 10_000, burn_in: 1_000, chains: 1, batches: 16, measure_every: 2, overrelax: true, k_max: 2, exec: Exec::Sequential };
    let est = mc_estimate(&model, &mc, cfg.seed)?;
    let again = mc_estimate(&model, &mc, cfg.seed)?;
    let exact = model.gaussian_reference()?.u_hat_at(0).unwrap_or(f64::NAN);
    let z = est.u_hat[0].2.z_score(exact, 0.0);
    s.le(m, "Gaussian chain u_hat(0) within 4 sigma of the finite-N law", z, 4.0);
    s.push(m, "identical seed gives identical estimates", est == again, String::new());
    if !gaussian_only {
        let model = build_lattice_model(cfg.mc.level, cfg.mc.slices, hier, p)?;
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
        s.push(m, "sign rule within 3 sigma (MC)", est.ursell_table()?.sign_rule_holds(3.0), String::new());
        for (name, list) in [("GKS", &est.gks), ("Gaussian upper bound", &est.gaussian_upper), ("correlation inequality", &est.correlation)] {
            let failed: Vec<&str> = list.iter().filter(|c| !c.pass).map(|c| c.label.as_str()).collect();
            s.push(m, &format!("{name} within 3 sigma (MC)"), failed.is_empty(), failed.join("; "));
        }
    }
    Ok(())
}

fn enumeration_fixtures() -> Result<Vec<(String, IsingInstance)>> {
    let h = HierarchyParams::new(2, 0.25)?;
    let mut out = Vec::new();
    for n in 1..=3 {
        out.push((format!("hierarchical n = {n}"), IsingInstance::hierarchical(&h, n, 0.7)?));
    }
    out.push(("ring of 5".into(), IsingInstance::new(5, (0..5).map(|i| (i.min((i + 1) % 5), i.max((i + 1) % 5), 0.4)).collect())?));
    let cw: Vec<(usize, usize, f64)> = (0..6).flat_map(|i| (i + 1..6).map(move |j| (i, j, 0.15))).collect();
    out.push(("complete graph of 6".into(), IsingInstance::new(6, cw)?));
    Ok(out)
}

fn enumeration_checks(s: &mut Suite) -> Result<()> {
    let m = "lattice";
    for (label, inst) in enumeration_fixtures()? {
        let en = exact_enumeration(&inst)?;
        let rl = root_locus_check(&en)?;
        s.push(m, &format!("Lee-Yang zeros on the imaginary axis ({label})"), rl.pass, format!("max |Re z|/|z| {:.3e}", rl.max_real_ratio));
        s.push(m, &format!("sign rule exact, k <= 4 ({label})"), en.ursell(4).sign_rule_holds(0.0), String::new());
        let (upper, gks) = four_point_inequalities(&en);
        s.push(m, &format!("Gaussian upper bound exact ({label})"), upper, String::new());
        s.push(m, &format!("GKS exact ({label})"), gks, String::new());
        let t = en.ursell(4);
        let rep = inequality_suite(&t, t.values[0], None);
        s.push("ursell", &format!("Ursell bounds k <= 4 ({label})"), rep.all_pass(), format!("{} checks", rep.checks.len()));
    }
    let anti = exact_enumeration(&IsingInstance::new(2, vec![(0, 1, -1.0)])?)?;
    let rl = root_locus_check(&anti)?;
    s.push(m, "antiferromagnetic control leaves the imaginary axis", !rl.pass, format!("max |Re z|/|z| {:.3e}", rl.max_real_ratio));
    Ok(())
}

/// `(⟨ijkl⟩ ≤ Σ pairings, ⟨ijkl⟩ ≥ ⟨ij⟩⟨kl⟩)` over distinct quadruples.
fn four_point_inequalities(en: &Enumeration) -> (bool, bool) {
    let n = en.spins;
    let c2 = |i: usize, j: usize| en.correlation(&[i, j]);
    let (mut upper, mut gks) = (true, true);
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                for l in k + 1..n {
                    let g4 = en.correlation(&[i, j, k, l]);
                    upper &= g4 <= c2(i, j) * c2(k, l) + c2(i, k) * c2(j, l) + c2(i, l) * c2(j, k);
                    gks &= g4 >= c2(i, j) * c2(k, l) && g4 >= c2(i, k) * c2(j, l) && g4 >= c2(i, l) * c2(j, k);
                }
            }
        }
    }
    (upper, gks)
}

fn ursell_checks(s: &mut Suite) -> Result<()> {
    let m = "ursell";
    let cum = [1.0, -0.5, 0.8, -2.0, 5.0];
    let back = cumulants_from_moments(&moments_from_cumulants(&cum));
    let worst = cum.iter().zip(&back).map(|(a, b)| (a - b).abs() / a.abs()).fold(0.0, f64::max);
    s.le(m, "cumulants -> moments -> cumulants, k <= 5", worst, 1e-12);
    let c = [0.6, 0.25, 0.1];
    let t = UrsellTable::from_coefficients(&c, 5);
    let fit = leeyang_product_fit(&t, 3)?;
    let worst = c.iter().zip(&fit.c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    s.le(m, "Lee-Yang coefficients -> table -> fit", worst, 1e-8);
    s.push(m, "sign rule on a product-form table", t.sign_rule_holds(0.0), String::new());
    let rep = inequality_suite(&UrsellTable::from_coefficients(&c, 4), t.values[0], Some(&fit));
    s.push(m, "Ursell bounds on a product-form table", rep.all_pass(), format!("{} checks", rep.checks.len()));
    Ok(())
}

fn rgflow_checks(s: &mut Suite, cfg: &ExperimentConfig) -> Result<()> {
    let m = "rgflow";
    let hier = cfg.hier();
    let a_g = if cfg.model.b == 0.0 { cfg.model.a } else { 1.0 };
    let gp = ModelParams::gaussian(cfg.model.mass, a_g, cfg.beta.value)?;
    let e = init_level0(&gp, Level0Source::Gaussian, 2000, 4, cfg.seed, Exec::Sequential)?;
    let (free, _) = rg_step(&e, &hier.decoupled(), cfg.seed, Exec::Sequential)?;
    let spread = free.weights.iter().map(|w| (w * free.pop() as f64 - 1.0).abs()).fold(0.0, f64::max);
    s.le(m, "theta = 0 leaves weights equal", spread, 1e-12);
    let (next, _) = rg_step(&e, &hier, cfg.seed, Exec::Sequential)?;
    let mut rev = next.clone();
    let d = rev.dim();
    rev.paths = next.paths.chunks(d).rev().flatten().copied().collect();
    rev.weights.reverse();
    let stats = |x: &PathEnsemble| [x.mode_variance(0), x.mode_variance(1), x.x(), x.ursell().0, x.ursell().1];
    let worst = stats(&next)
        .iter()
        .zip(stats(&rev))
        .map(|(a, b)| (a - b).abs() / a.abs().max(1e-300))
        .fold(0.0, f64::max);
    s.le(m, "estimators invariant under reordering the population", worst, 1e-10);
    let mut fc = FlowConfig::new(&gp, 4000, 3);
    fc.cutoff = 4;
    fc.replicas = 4;
    let table = flow_run(&gp, &hier, &fc, cfg.seed)?;
    for r in &table.rows {
        let o = hqo_core::lattice::gaussian_oracle(r.level, &hier, &gp)?.u_hat(0.0);
        let z = r.u_hat.z_score(o, 0.0);
        s.le(m, &format!("Gaussian flow u_hat_n within 4 sigma of the oracle (n = {})", r.level), z, 4.0);
    }
    let kernels = Kernels::new(hier.kappa, hier.delta)?;
    let v = table.upper_recurrence_violations(&kernels);
    s.push(m, "u_n below sigma(u_(n-1)) u_(n-1) + 3 sigma", v.is_empty(), format!("{v:?}"));
    Ok(())
}

fn bounds_checks(s: &mut Suite, cfg: &ExperimentConfig) -> Result<()> {
    let m = "bounds";
    let (kappa, delta) = (cfg.hierarchy.kappa, cfg.hierarchy.delta);
    let ker = Kernels::new(kappa, delta)?;
    let hi = (1.0 - 2.0 * delta) / 4.0;
    let mut failed = Vec::new();
    for i in 1..=20 {
        let eps = hi * i as f64 / 21.0;
        let w = epsilon_window(kappa, delta, eps)?;
        failed.extend(w.invariants().into_iter().filter(|c| !c.pass).map(|c| format!("eps {eps:.4}: {}", c.name)));
    }
    s.push(m, "window invariants on 20 epsilon values", failed.is_empty(), failed.join("; "));
    let lim = ker.domain_limit();
    let sv: Vec<f64> = (0..=400)
        .map(|i| 0.999 * lim * i as f64 / 400.0)
        .map(|v| ker.sigma(v).map(|sg| sg * v))
        .collect::<Result<_>>()?;
    s.push(m, "sigma(v) v strictly increasing on the domain", sv.windows(2).all(|w| w[1] > w[0]), String::new());
    let mut u = Interval::point(0.9);
    let mut ratio = 0.0;
    for _ in 0..200 {
        let (next, _) = recurrence_step(u, 0.0, &ker)?;
        ratio = next.hi / u.hi;
        u = next;
    }
    let c = ker.contraction();
    s.le(m, "iteration from u < 1 decays at rate kappa^(-delta)", (ratio / c - 1.0).abs(), 1e-6);
    let win = epsilon_window(kappa, delta, cfg.bounds.epsilon)?;
    let x_dec = (0..=50).all(|i| {
        let hi = 1.0 + (win.v_bar - 1.0) * i as f64 / 50.0;
        recurrence_step(Interval::new(1.0, hi), 0.5 * win.w_bar, &ker).map_or(false, |(_, x)| x < 0.5 * win.w_bar)
    });
    s.push(m, "x strictly decreasing while u.hi <= v_bar", x_dec, String::new());
    let fam = |b: f64| Ok((b / 2.0, 0.05 * b));
    let br = find_beta_brackets(&fam, &win, (0.5, 10.0), 1e-9, 8, Exec::Sequential)?;
    let classify = |b: f64| -> Result<Regime> {
        let (u, x) = fam(b)?;
        Ok(propagate_and_classify(Interval::point(u), x, &win, 8).regime())
    };
    let below = classify(br.beta_star.lo * (1.0 - 1e-6))?;
    let above = classify(br.beta_star.hi * (1.0 + 1e-6))?;
    s.push(
        m,
        "bracket endpoints classify differently",
        below == Regime::Decaying && matches!(above, Regime::EscapedAbove | Regime::DomainViolated),
        format!("{below:?} / {above:?}"),
    );
    let t1 = propagate_and_classify(Interval::point(1.05), 0.3, &win, 12);
    let t2 = propagate_and_classify(Interval::point(1.05), 0.3, &win, 12);
    s.push(m, "identical inputs give identical traces", t1 == t2, String::new());
    Ok(())
}

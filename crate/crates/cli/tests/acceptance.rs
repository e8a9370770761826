//! Acceptance criteria, one printed line each. Run with `--nocapture` to see
//! the table on success; on failure it is part of the panic output.

use std::f64::consts::PI;
use std::process::Command;
use std::time::Instant;

use hqo_core::bounds::{
    decay_check, epsilon_window, find_beta_brackets, propagate_and_classify, select_parameters, BetaBrackets,
    Interval, SpectralFamily,
};
use hqo_core::hierarchy::HierarchyParams;
use hqo_core::lattice::{
    build_lattice_model, exact_enumeration, gaussian_oracle, mc_estimate, Enumeration, IsingInstance, McConfig,
    McEstimates,
};
use hqo_core::rgflow::{flow_run, FlowConfig, Level0Source};
use hqo_core::spectral::{build_and_diagonalize, double_commutator_defect, ModelParams};
use hqo_core::ursell::{inequality_suite, root_locus_check, UrsellTable};
use hqo_core::{Error, Exec};

type Outcome = Result<(bool, String), Error>;

/// One-sided 95% normal quantile.
const Z95: f64 = 1.6448536269514722;

fn hier() -> HierarchyParams {
    HierarchyParams::new(2, 0.25).unwrap()
}

fn physical() -> ModelParams {
    ModelParams::new(20.0, -1.0, 0.05, 4.0).unwrap()
}

fn harmonic_oracle() -> Outcome {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let mut k_used = usize::MAX;
    for beta in [1.0, 4.0] {
        let p = ModelParams::gaussian(1.0, 1.0, beta)?;
        let sol = build_and_diagonalize(&p, 128)?;
        k_used = k_used.min(sol.basis_size);
        let th = sol.thermal(beta)?;
        for k in -8..=8i64 {
            let q = 2.0 * PI * k as f64 / beta;
            let exact = 1.0 / (q * q + 1.0);
            worst = worst.max((th.u_hat(q) - exact).abs() / exact);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((worst < 1e-6 && k_used >= 100 && secs < 5.0, format!("max rel err {worst:.2e}, K = {k_used}, {secs:.2} s")))
}

/// `κ^{−nδ}/(a − θ Σ_{m≤n} κ^{−mδ})`: the all-ones vector diagonalizes the level-n form.
fn hand_gaussian_u0(n: u32, kappa: f64, delta: f64, theta: f64, a: f64) -> f64 {
    let r: f64 = (1..=n).map(|m| theta * kappa.powf(-(m as f64) * delta)).sum();
    kappa.powf(-(n as f64) * delta) / (a - r)
}

fn gaussian_flow() -> Outcome {
    let p = ModelParams::gaussian(1.0, 1.0, 1.0)?;
    let mut details = Vec::new();
    let mut pass = true;
    for (label, h) in [("coupled", hier()), ("theta = 0", hier().decoupled())] {
        let mut cfg = FlowConfig::new(&p, 100_000, 6);
        cfg.cutoff = 8;
        cfg.replicas = 10;
        let table = flow_run(&p, &h, &cfg, 2024)?;
        if table.rows.len() != 7 {
            pass = false;
        }
        let mut worst_z: f64 = 0.0;
        for r in &table.rows {
            let hand = hand_gaussian_u0(r.level, 2.0, 0.25, h.theta, 1.0);
            let lib = gaussian_oracle(r.level, &h, &p)?.u_hat(0.0);
            pass &= (lib / hand - 1.0).abs() < 1e-12;
            worst_z = worst_z.max(r.u_hat.z_score(hand, 0.0));
        }
        pass &= worst_z <= 3.0;
        details.push(format!("{label}: max z {worst_z:.2}"));
        if h.is_decoupled() {
            let fit = table.decay_fit(2);
            pass &= (fit.slope - 0.25).abs() < 0.02;
            details.push(format!("fitted delta {:.4} ± {:.4}", fit.slope, fit.slope_err));
        }
    }
    Ok((pass, details.join("; ")))
}

fn initial_bounds_grid() -> Outcome {
    let mut points = 0;
    let mut min_margin = f64::INFINITY;
    let mut worst = String::new();
    let mut i = 0;
    for m in [1.0, 10.0, 100.0] {
        for gamma in [5.0, 20.0, 50.0] {
            for beta in [0.5, 2.0, 10.0] {
                // the oscillator basis does not converge for the heaviest mass at the highest temperature
                if m == 100.0 && beta == 0.5 {
                    continue;
                }
                i += 1;
                let a: f64 = if i % 2 == 0 { 2.0 } else { 1.0 };
                let b = a / gamma;
                let p = ModelParams::new(m, -a, b, beta)?;
                let th_sol = build_and_diagonalize(&p, 64)?;
                let th = th_sol.thermal(beta)?;
                let u = th.u_hat(0.0);
                let eta = th.eta();
                let lower = (m * gamma * gamma / 36.0) * (1.0 - (-3.0 * beta / (m * gamma)).exp());
                let upper = (beta * gamma / 8.0) * (1.0 + (1.0 + 16.0 / (beta * gamma)).sqrt());
                let margins = [
                    (u - lower) / u,
                    (upper - u) / u,
                    (beta * eta - u) / u,
                    (eta - gamma / 12.0) / eta,
                ];
                let mm = margins.iter().copied().fold(f64::INFINITY, f64::min);
                if mm < min_margin {
                    min_margin = mm;
                    worst = format!("m {m}, gamma {gamma}, beta {beta}, |a| {a}");
                }
                points += 1;
            }
        }
    }
    Ok((points >= 20 && min_margin > 0.0, format!("{points} points, min relative margin {min_margin:.3e} at {worst}")))
}

fn sum_rule() -> Outcome {
    let p = physical();
    let sol = build_and_diagonalize(&p, 64)?;
    let r = sol.thermal(p.beta)?.sum_rule_residual(p.a);
    Ok((r.abs() < 1e-3, format!("residual {r:.3e}")))
}

fn double_commutator() -> Outcome {
    let mut worst: f64 = 0.0;
    for p in [ModelParams::gaussian(1.0, 1.0, 1.0)?, physical(), ModelParams::new(1.0, -1.0, 0.05, 1.0)?] {
        for k in [64, 128] {
            worst = worst.max(double_commutator_defect(&p, k)?);
        }
    }
    Ok((worst <= 1e-8, format!("max defect {worst:.2e}")))
}

fn physical_mc() -> Result<(McEstimates, f64), Error> {
    let t = Instant::now();
    let model = build_lattice_model(0, 64, hier(), physical())?;
    let cfg = McConfig { sweeps: 100_000, burn_in: 5_000, chains: 4, batches: 32, ..McConfig::default() };
    let est = mc_estimate(&model, &cfg, 7)?;
    Ok((est, t.elapsed().as_secs_f64()))
}

fn lattice_vs_spectral(est: &McEstimates, secs: f64) -> Outcome {
    let p = physical();
    let sol = build_and_diagonalize(&p, 64)?;
    let th = sol.thermal(p.beta)?;
    let (u, g) = (th.u_hat(0.0), th.gamma2(p.beta / 2.0)?);
    let mc_u = est.u_hat.iter().find(|r| r.0 == 0).map(|r| r.2).ok_or_else(|| Error::Shape("no q = 0".into()))?;
    let mc_g = est
        .gamma2
        .iter()
        .find(|(tau, _)| (tau - p.beta / 2.0).abs() < 1e-12)
        .map(|r| r.1)
        .ok_or_else(|| Error::Shape("no tau = beta/2".into()))?;
    let (zu, zg) = (mc_u.z_score(u, 0.0), mc_g.z_score(g, 0.0));
    Ok((
        zu <= 3.0 && zg <= 3.0 && secs < 120.0,
        format!("u_hat0: z {zu:.2}, Gamma2(beta/2): z {zg:.2}, MC {secs:.1} s"),
    ))
}

fn ferromagnetic_fixtures() -> Vec<(String, IsingInstance)> {
    let h = hier();
    let mut out = vec![("single spin".to_string(), IsingInstance::new(1, vec![]).unwrap())];
    for n in 1..=3 {
        out.push((format!("hierarchical n = {n}"), IsingInstance::hierarchical(&h, n, 0.7).unwrap()));
    }
    for n in [3usize, 6, 12] {
        let ring = (0..n).map(|i| (i.min((i + 1) % n), i.max((i + 1) % n), 0.4)).collect();
        out.push((format!("ring of {n}"), IsingInstance::new(n, ring).unwrap()));
    }
    for n in [4usize, 12] {
        let all = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j, 0.8 / n as f64))).collect();
        out.push((format!("complete graph of {n}"), IsingInstance::new(n, all).unwrap()));
    }
    let mixed = (0..10)
        .flat_map(|i| (i + 1..10).map(move |j| (i, j, 0.02 + 0.03 * ((7 * i + 3 * j) % 5) as f64)))
        .collect();
    out.push(("inhomogeneous 10".into(), IsingInstance::new(10, mixed).unwrap()));
    out
}

fn enumerations() -> Result<Vec<(String, Enumeration)>, Error> {
    ferromagnetic_fixtures().into_iter().map(|(l, i)| Ok((l, exact_enumeration(&i)?))).collect()
}

fn lee_yang(ens: &[(String, Enumeration)]) -> Outcome {
    let mut worst: f64 = 0.0;
    for (_, en) in ens {
        worst = worst.max(root_locus_check(en)?.max_real_ratio);
    }
    let anti = [
        IsingInstance::new(2, vec![(0, 1, -1.0)])?,
        IsingInstance::new(3, vec![(0, 1, -0.5), (1, 2, -0.5), (0, 2, -0.5)])?,
    ];
    let mut control_ratio = f64::INFINITY;
    for inst in &anti {
        control_ratio = control_ratio.min(root_locus_check(&exact_enumeration(inst)?)?.max_real_ratio);
    }
    Ok((
        worst < 1e-9 && control_ratio >= 1e-9,
        format!("{} ferromagnetic fixtures, max |Re z|/|z| {worst:.1e}; antiferromagnetic controls {control_ratio:.2e}", ens.len()),
    ))
}

fn sign_gaussian_gks(ens: &[(String, Enumeration)], est: &McEstimates) -> Outcome {
    let mut pass = true;
    let mut failed = Vec::new();
    for (label, en) in ens {
        let sign = en.ursell(4).sign_rule_holds(0.0);
        let n = en.spins;
        let c2 = |i: usize, j: usize| en.correlation(&[i, j]);
        let (mut upper, mut gks) = (true, true);
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    for l in k + 1..n {
                        let g4 = en.correlation(&[i, j, k, l]);
                        upper &= g4 <= c2(i, j) * c2(k, l) + c2(i, k) * c2(j, l) + c2(i, l) * c2(j, k);
                        gks &= g4 >= c2(i, j) * c2(k, l);
                    }
                }
            }
        }
        if !(sign && upper && gks) {
            pass = false;
            failed.push(label.clone());
        }
    }
    let mc_sign = est.ursell_table()?.sign_rule_holds(3.0);
    let mc_ineq = est.gks.iter().chain(&est.gaussian_upper).all(|c| c.pass);
    let n_mc = est.gks.len() + est.gaussian_upper.len();
    Ok((
        pass && mc_sign && mc_ineq,
        format!("exact: {} fixtures, failing {failed:?}; MC: sign rule {mc_sign}, {n_mc} GKS/upper checks pass {mc_ineq}", ens.len()),
    ))
}

/// The first bound at k = 1 and the second at k = 2 reduce to identities.
fn is_identity(name: &str) -> bool {
    name.starts_with("|U2| <= 2^(1-k)") || name.starts_with("|U4| <= (2k-1)!/(3")
}

fn ursell_bounds(ens: &[(String, Enumeration)], est: &McEstimates) -> Outcome {
    let mut tables: Vec<(String, UrsellTable)> = ens.iter().map(|(l, e)| (l.clone(), e.ursell(4))).collect();
    tables.push(("lattice MC".into(), est.ursell_table()?));
    let mut min_margin = f64::INFINITY;
    let mut pass = true;
    let mut count = 0;
    for (label, t) in &tables {
        let rep = inequality_suite(t, t.values[0], None);
        for c in rep.checks.iter().filter(|c| !is_identity(&c.name)) {
            count += 1;
            let rel = c.margin / c.rhs.abs().max(1e-300);
            if rel < min_margin {
                min_margin = rel;
            }
            if !(c.pass && c.margin > 0.0) {
                pass = false;
                eprintln!("  {label}: {} margin {:.3e}", c.name, c.margin);
            }
        }
    }
    Ok((pass, format!("{} tables, {count} non-identity checks, min relative margin {min_margin:.3e}", tables.len())))
}

fn sigma_hand(v: f64, k: f64, d: f64) -> f64 {
    let c = k.powf(-d);
    c / (1.0 - (1.0 - c) * v)
}

fn window_certification() -> Result<((bool, String), Option<BetaBrackets>), Error> {
    let t = Instant::now();
    let win = epsilon_window(2, 0.25, 0.05)?;
    let (k, d, e) = (2.0f64, 0.25, 0.05);
    // defining conditions, evaluated independently of the library kernels
    let sigma_ok = (sigma_hand(win.v_bar, k, d) - k.powf(e)).abs() < 1e-12;
    let cap = k.powf(2.0 * d + 4.0 * e - 1.0);
    let phi_ok = (0..=1000)
        .map(|i| 1.0 + (win.v_bar - 1.0) * i as f64 / 1000.0)
        .all(|v| k.powf(2.0 * d - 1.0) * sigma_hand(v, k, d).powi(4) <= cap + 1e-12);
    let window_ok = sigma_ok && phi_ok && (win.v_bar - 1.18).abs() < 0.005 && (win.w_bar - 0.667).abs() < 0.005;
    let mut parts = vec![format!("v_bar {:.6}, w_bar {:.6}, defining conditions {window_ok}", win.v_bar, win.w_bar)];
    let selected = match select_parameters(2, 0.25, 0.05) {
        Ok((p, _)) => Some(p),
        Err(Error::Infeasible(msg)) => {
            parts.push(format!("select_parameters infeasible ({msg})"));
            None
        }
        Err(e) => return Err(e),
    };
    // without selected parameters, bracket the documented fallback family
    let (fam, range) = match selected {
        Some(p) => (SpectralFamily::new(p.mass, p.a, p.b, 0.1)?, (0.1, p.beta)),
        None => (SpectralFamily::new(1.0, -1.0, 0.05, 0.1)?, (0.1, 4.0)),
    };
    let br = find_beta_brackets(&fam, &win, range, 1e-4, 12, Exec::default())?;
    let width_ok = br.relative_width <= 1e-4;
    let nested_ok = br.levels.len() == 12
        && br.levels.windows(2).all(|w| w[1].nested.lo >= w[0].nested.lo && w[1].nested.hi <= w[0].nested.hi);
    let below = decay_check(&fam, &win, 0.9 * br.beta_star.lo, 12)?;
    let mid = 0.5 * (br.beta_star.lo + br.beta_star.hi);
    let (u, x) = hqo_core::bounds::ModelFamily::eval(&fam, mid)?;
    let trace = propagate_and_classify(Interval::point(u), x, &win, 12);
    let inside_ok = trace.levels.len() == 13 && trace.levels.iter().all(|l| l.u.lo > 1.0 && l.u.hi < win.v_bar);
    let secs = t.elapsed().as_secs_f64();
    parts.push(format!(
        "beta* in [{:.6}, {:.6}], relative width {:.3e} (<= 1e-4: {width_ok}), nested {nested_ok}, decay below {}, u_n in (1, v_bar) inside {inside_ok} (stopped at n = {} as {:?}), {secs:.1} s",
        br.beta_star.lo,
        br.beta_star.hi,
        br.relative_width,
        below.pass,
        trace.last().level,
        trace.regime()
    ));
    let pass = window_ok && selected.is_some() && width_ok && nested_ok && below.pass && inside_ok && secs < 60.0;
    Ok(((pass, parts.join("; ")), Some(br)))
}

fn critical_trend(br: Option<&BetaBrackets>) -> Outcome {
    let Some(br) = br else {
        return Ok((false, "no beta* bracket available".into()));
    };
    let mid = 0.5 * (br.beta_star.lo + br.beta_star.hi);
    let p = ModelParams::new(1.0, -1.0, 0.05, mid)?;
    let mut cfg = FlowConfig::new(&p, 20_000, 5);
    cfg.cutoff = 8;
    cfg.replicas = 4;
    cfg.level0 = Level0Source::Lattice { slices: 64, burn_in: 5_000, thin: 5, chains: 1 };
    let table = flow_run(&p, &hier(), &cfg, 99)?;
    let rows: Vec<_> = table
        .rows
        .iter()
        .filter(|r| table.collapse_level.map_or(true, |c| r.level < c))
        .collect();
    // non-Gaussianity |U4|/U2^2 should shrink and u_n approach 1
    let ratio: Vec<f64> = rows.iter().map(|r| r.ursell_ratio.mean.abs()).collect();
    let dist: Vec<f64> = rows.iter().map(|r| (r.u_hat.mean - 1.0).abs()).collect();
    let (zr, zd) = (mann_kendall_z(&ratio), mann_kendall_z(&dist));
    let ratio_down = zr < -Z95;
    let toward_one = zd < -Z95;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ");
    let u: Vec<f64> = rows.iter().map(|r| r.u_hat.mean).collect();
    Ok((
        rows.len() >= 3 && ratio_down && toward_one,
        format!(
            "beta {mid:.5}, levels 0..={}, |U4|/U2^2 = [{}] (trend z {zr:.2}, decreasing {ratio_down}), u_n = [{}] (|u_n - 1| trend z {zd:.2}, toward 1 {toward_one})",
            rows.len().saturating_sub(1),
            fmt(&ratio),
            fmt(&u),
        ),
    ))
}

/// Mann-Kendall trend statistic with continuity correction; negative for a decreasing sequence.
fn mann_kendall_z(x: &[f64]) -> f64 {
    let n = x.len();
    let s: f64 = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| (x[j] - x[i]).signum())
        .sum();
    let var = (n * (n - 1) * (2 * n + 5)) as f64 / 18.0;
    if s == 0.0 {
        0.0
    } else {
        (s - s.signum()) / var.sqrt()
    }
}

fn determinism() -> Outcome {
    let p = ModelParams::gaussian(1.0, 1.0, 2.0)?;
    let mut cfg = FlowConfig::new(&p, 2_000, 3);
    cfg.replicas = 2;
    cfg.cutoff = 4;
    let a = flow_run(&p, &hier(), &cfg, 5)?.to_csv();
    let b = flow_run(&p, &hier(), &cfg, 5)?.to_csv();
    cfg.exec = Exec::Sequential;
    let c = flow_run(&p, &hier(), &cfg, 5)?.to_csv();
    let model = build_lattice_model(1, 8, hier(), p)?;
    let mc = McConfig { sweeps: 10_000, chains: 2, batches: 16, ..McConfig::default() };
    let m1 = mc_estimate(&model, &mc, 3)?.to_csv();
    let m2 = mc_estimate(&model, &mc, 3)?.to_csv();
    let dir = std::env::temp_dir().join(format!("hqo-acceptance-{}", std::process::id()));
    let mut cli_same = true;
    for cmd in ["spectral", "lattice", "rgflow"] {
        let mut outs = Vec::new();
        for run in ["a", "b"] {
            let out = dir.join(run);
            let status = Command::new(env!("CARGO_BIN_EXE_hqo"))
                .args([cmd, "--out", out.to_str().unwrap(), "--seed", "17"])
                .env_remove("HQO_SEED")
                .env_remove("HQO_OUT")
                .status()
                .map_err(|e| Error::Domain(e.to_string()))?;
            cli_same &= status.success();
            outs.push(std::fs::read(out.join(format!("{cmd}.csv"))).unwrap_or_default());
        }
        cli_same &= !outs[0].is_empty() && outs[0] == outs[1];
    }
    let _ = std::fs::remove_dir_all(&dir);
    let pass = a == b && a == c && m1 == m2 && cli_same;
    Ok((pass, format!("flow rerun {}, sequential = parallel {}, MC rerun {}, CLI CSV reruns {cli_same}", a == b, a == c, m1 == m2)))
}

#[test]
fn acceptance_criteria() {
    let mut lines: Vec<(u32, &str, Outcome)> = Vec::new();
    let fail = |e: Error| -> Outcome { Ok((false, format!("error: {e}"))) };
    lines.push((1, "harmonic oracle", harmonic_oracle().or_else(fail)));
    lines.push((2, "Gaussian hierarchical oracle", gaussian_flow().or_else(fail)));
    lines.push((3, "initial-bound grid", initial_bounds_grid().or_else(fail)));
    lines.push((4, "sum rule", sum_rule().or_else(fail)));
    lines.push((5, "double commutator", double_commutator().or_else(fail)));
    let mc = physical_mc();
    let ens = enumerations();
    match &mc {
        Ok((est, secs)) => lines.push((6, "lattice vs spectral", lattice_vs_spectral(est, *secs).or_else(fail))),
        Err(e) => lines.push((6, "lattice vs spectral", Ok((false, format!("error: {e}"))))),
    }
    match &ens {
        Ok(ens) => lines.push((7, "exact Lee-Yang", lee_yang(ens).or_else(fail))),
        Err(e) => lines.push((7, "exact Lee-Yang", Ok((false, format!("error: {e}"))))),
    }
    match (&ens, &mc) {
        (Ok(ens), Ok((est, _))) => {
            lines.push((8, "sign rule, Gaussian upper bound, GKS", sign_gaussian_gks(ens, est).or_else(fail)));
            lines.push((9, "Ursell bounds", ursell_bounds(ens, est).or_else(fail)));
        }
        _ => {
            lines.push((8, "sign rule, Gaussian upper bound, GKS", Ok((false, "inputs unavailable".into()))));
            lines.push((9, "Ursell bounds", Ok((false, "inputs unavailable".into()))));
        }
    }
    let (c10, br) = match window_certification() {
        Ok((o, br)) => (Ok(o), br),
        Err(e) => (fail(e), None),
    };
    lines.push((10, "window certification", c10));
    lines.push((11, "critical trend", critical_trend(br.as_ref()).or_else(fail)));
    lines.push((12, "determinism", determinism().or_else(fail)));

    let mut red = Vec::new();
    for (id, title, out) in &lines {
        let (pass, detail) = out.as_ref().expect("errors are mapped to failures");
        println!("criterion {id:>2} {} {title}: {detail}", if *pass { "PASS" } else { "FAIL" });
        if !pass {
            red.push(*id);
        }
    }
    assert!(red.is_empty(), "criteria not met: {red:?}");
}

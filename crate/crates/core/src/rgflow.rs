//! Population dynamics for the level recursion of the single-block measure.
//!
//! A path is stored by its real Fourier coefficients
//! `[a₀, a₁, b₁, …, a_c, b_c]` with `ω(τ) = a₀/√β + √(2/β) Σ_k (a_k cos q_kτ + b_k sin q_kτ)`,
//! so that `Var a_k = Var b_k = û(q_k)` and `‖ω‖² = Σ (modes)²`. One step draws
//! κ parents in proportion to their weights, forms `κ^{−(1+δ)/2}(ω₁ + … + ω_κ)`
//! and multiplies the weight by `exp(θ‖ω‖²/2)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bounds::Kernels;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hierarchy::HierarchyParams;
use crate::lattice::{build_lattice_model, sample_fields};
use crate::spectral::ModelParams;
use crate::stats::{line_fit, mean_and_stderr, Estimate, LineFit};

pub const DEFAULT_CUTOFF: usize = 32;
/// Paths per RNG stream.
pub const CHUNK: usize = 1024;
/// Spread of log-weights beyond which a level is reported as divergent.
pub const LOG_WEIGHT_CEILING: f64 = 600.0;
pub const MIN_POPULATION: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub level: u32,
    pub beta: f64,
    pub cutoff: usize,
    /// Row-major `pop × (2·cutoff + 1)` mode coefficients.
    pub paths: Vec<f64>,
    /// Normalized weights.
    pub weights: Vec<f64>,
    pub ess: f64,
}

fn chunk_rng(seed: u64, level: u32, salt: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((level as u64) << 40) ^ (salt << 32) ^ chunk as u64);
    rng
}

fn effective_sample_size(w: &[f64]) -> f64 {
    1.0 / w.iter().map(|w| w * w).sum::<f64>()
}

impl PathEnsemble {
    pub fn dim(&self) -> usize {
        2 * self.cutoff + 1
    }

    pub fn pop(&self) -> usize {
        self.weights.len()
    }

    pub fn path(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.paths[i * d..(i + 1) * d]
    }

    pub fn frequency(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.beta
    }

    fn weighted(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        (0..self.pop()).map(|i| self.weights[i] * f(self.path(i))).sum()
    }

    /// Weighted `û(q_k)`; for `k ≥ 1` the cosine and sine modes are averaged.
    pub fn mode_variance(&self, k: usize) -> f64 {
        if k == 0 {
            self.weighted(|p| p[0] * p[0])
        } else {
            self.weighted(|p| 0.5 * (p[2 * k - 1].powi(2) + p[2 * k].powi(2)))
        }
    }

    pub fn mode_mean(&self, idx: usize) -> f64 {
        self.weighted(|p| p[idx])
    }

    pub fn norm2(p: &[f64]) -> f64 {
        p.iter().map(|v| v * v).sum()
    }

    /// `X = −Cov(‖ω‖², a₀²) + 2⟨a₀²⟩²`.
    pub fn x(&self) -> f64 {
        let m2 = self.mode_variance(0);
        let n2 = self.weighted(Self::norm2);
        let cross = self.weighted(|p| Self::norm2(p) * p[0] * p[0]);
        -(cross - n2 * m2) + 2.0 * m2 * m2
    }

    /// `(𝒰₂, 𝒰₄)` of `Ω = √β a₀`.
    pub fn ursell(&self) -> (f64, f64) {
        let m2 = self.mode_variance(0);
        let m4 = self.weighted(|p| p[0].powi(4));
        (self.beta * m2, self.beta * self.beta * (m4 - 3.0 * m2 * m2))
    }

    /// Systematic resampling to equal weights.
    pub fn resample(&mut self, u: f64) {
        let pop = self.pop();
        let d = self.dim();
        let mut out = Vec::with_capacity(self.paths.len());
        let mut cum = self.weights[0];
        let mut j = 0;
        for i in 0..pop {
            let target = (i as f64 + u) / pop as f64;
            while cum < target && j + 1 < pop {
                j += 1;
                cum += self.weights[j];
            }
            out.extend_from_slice(&self.paths[j * d..(j + 1) * d]);
        }
        self.paths = out;
        self.weights = vec![1.0 / pop as f64; pop];
        self.ess = pop as f64;
    }
}

/// How level-0 paths are produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Level0Source {
    /// Independent modes with variance `1/(m q² + a)`; requires `b = 0`, `a > 0`.
    Gaussian,
    /// Snapshots of the n = 0 lattice chain projected onto modes.
    Lattice { slices: usize, burn_in: usize, thin: usize, chains: usize },
}

impl Level0Source {
    pub fn for_params(params: &ModelParams) -> Self {
        if params.is_gaussian() {
            Level0Source::Gaussian
        } else {
            Level0Source::Lattice { slices: 64, burn_in: 5_000, thin: 10, chains: 4 }
        }
    }
}

pub fn init_level0(
    params: &ModelParams,
    source: Level0Source,
    pop: usize,
    cutoff: usize,
    seed: u64,
    exec: Exec,
) -> Result<PathEnsemble> {
    if pop < MIN_POPULATION {
        return Err(Error::Domain(format!("population must be >= {MIN_POPULATION}, got {pop}")));
    }
    params.validate()?;
    let beta = params.beta;
    let dim = 2 * cutoff + 1;
    let paths = match source {
        Level0Source::Gaussian => {
            if !params.is_gaussian() {
                return Err(Error::Domain("Gaussian level 0 needs b = 0".into()));
            }
            if params.a <= 0.0 {
                return Err(Error::Stability(format!("a = {} gives no Gaussian measure", params.a)));
            }
            let sd: Vec<f64> = (0..dim)
                .map(|i| {
                    let q = 2.0 * PI * i.div_ceil(2) as f64 / beta;
                    (1.0 / (params.mass * q * q + params.a)).sqrt()
                })
                .collect();
            let mut paths = vec![0.0; pop * dim];
            exec.for_each_chunk_mut(&mut paths, CHUNK * dim, |c, chunk| {
                let mut rng = chunk_rng(seed, 0, 1, c);
                for (j, v) in chunk.iter_mut().enumerate() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = sd[j % dim] * z;
                }
            });
            paths
        }
        Level0Source::Lattice { slices, burn_in, thin, chains } => {
            if cutoff + 1 > slices / 2 {
                return Err(Error::Domain(format!(
                    "cutoff {cutoff} needs more than {slices} slices"
                )));
            }
            let chains = chains.max(1);
            let hier = HierarchyParams::new(2, 0.25)?;
            let model = build_lattice_model(0, slices, hier, *params)?;
            let eps = model.eps;
            let per = pop.div_ceil(chains);
            let runs = exec.map_range(chains, |c| sample_fields(&model, burn_in, per, thin, seed, c as u64));
            let (c0, c1) = ((1.0 / beta).sqrt() * eps, (2.0 / beta).sqrt() * eps);
            let trig: Vec<(Vec<f64>, Vec<f64>)> = (1..=cutoff)
                .map(|k| {
                    let q = 2.0 * PI * k as f64 / beta;
                    let t = |s: usize| s as f64 * eps;
                    ((0..slices).map(|s| (q * t(s)).cos()).collect(), (0..slices).map(|s| (q * t(s)).sin()).collect())
                })
                .collect();
            let mut paths = Vec::with_capacity(pop * dim);
            for run in runs {
                for f in run? {
                    if paths.len() == pop * dim {
                        break;
                    }
                    paths.push(c0 * f.iter().sum::<f64>());
                    for (cs, sn) in &trig {
                        paths.push(c1 * f.iter().zip(cs).map(|(a, b)| a * b).sum::<f64>());
                        paths.push(c1 * f.iter().zip(sn).map(|(a, b)| a * b).sum::<f64>());
                    }
                }
            }
            paths
        }
    };
    Ok(PathEnsemble {
        level: 0,
        beta,
        cutoff,
        paths,
        weights: vec![1.0 / pop as f64; pop],
        ess: pop as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub level: u32,
    /// ESS right after reweighting.
    pub ess: f64,
    pub resampled: bool,
    pub diverged: bool,
    pub log_weight_spread: f64,
}

/// One level of the recursion. Estimators should be read from the returned
/// ensemble before the next step; resampling, when it happens, is already applied.
pub fn rg_step(
    ens: &PathEnsemble,
    hier: &HierarchyParams,
    seed: u64,
    exec: Exec,
) -> Result<(PathEnsemble, StepInfo)> {
    let pop = ens.pop();
    if ens.ess <= 0.1 * pop as f64 {
        return Err(Error::Stability(format!(
            "effective sample size {:.1} below 10% of {pop}",
            ens.ess
        )));
    }
    let level = ens.level + 1;
    let d = ens.dim();
    let kappa = hier.kappa as usize;
    let scale = (hier.kappa as f64).powf(-(1.0 + hier.delta) / 2.0);
    let mut cdf = Vec::with_capacity(pop);
    let mut acc = 0.0;
    for w in &ens.weights {
        acc += w;
        cdf.push(acc);
    }
    let mut paths = vec![0.0; pop * d];
    exec.for_each_chunk_mut(&mut paths, CHUNK * d, |c, chunk| {
        let mut rng = chunk_rng(seed, level, 2, c);
        for out in chunk.chunks_mut(d) {
            for _ in 0..kappa {
                let u: f64 = rng.random::<f64>() * acc;
                let j = cdf.partition_point(|&x| x < u).min(pop - 1);
                for (o, v) in out.iter_mut().zip(ens.path(j)) {
                    *o += v;
                }
            }
            out.iter_mut().for_each(|v| *v *= scale);
        }
    });
    let half_theta = 0.5 * hier.theta;
    let log_w: Vec<f64> = paths.chunks(d).map(|p| half_theta * PathEnsemble::norm2(p)).collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = log_w.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = max - min;
    let diverged = !spread.is_finite() || spread > LOG_WEIGHT_CEILING;
    let mut weights: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let ess = effective_sample_size(&weights);
    let mut next = PathEnsemble { level, beta: ens.beta, cutoff: ens.cutoff, paths, weights, ess };
    let resampled = ess < 0.5 * pop as f64;
    if resampled {
        next.resample(chunk_rng(seed, level, 3, 0).random());
    }
    Ok((next, StepInfo { level, ess, resampled, diverged, log_weight_spread: spread }))
}

/// Estimates at one level from a single ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSample {
    pub level: u32,
    pub u_hat: Vec<f64>,
    pub x: f64,
    pub ursell2: f64,
    pub ursell4: f64,
    pub ess: f64,
    pub diverged: bool,
}

fn level_sample(e: &PathEnsemble, ess: f64, diverged: bool, k_report: usize) -> LevelSample {
    let (u2, u4) = e.ursell();
    LevelSample {
        level: e.level,
        u_hat: (0..=k_report.min(e.cutoff)).map(|k| e.mode_variance(k)).collect(),
        x: e.x(),
        ursell2: u2,
        ursell4: u4,
        ess,
        diverged,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Population per replica.
    pub pop: usize,
    pub cutoff: usize,
    pub n_max: u32,
    /// Independent replicas; error bars are their standard error.
    pub replicas: usize,
    /// Highest mode index reported per level.
    pub k_report: usize,
    pub level0: Level0Source,
    pub exec: Exec,
}

impl FlowConfig {
    pub fn new(params: &ModelParams, pop: usize, n_max: u32) -> Self {
        Self {
            pop,
            cutoff: DEFAULT_CUTOFF,
            n_max,
            replicas: 8,
            k_report: 4,
            level0: Level0Source::for_params(params),
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRow {
    pub level: u32,
    pub u_hat: Estimate,
    /// `û(q_k)` for `k = 0..=k_report`.
    pub u_hat_modes: Vec<Estimate>,
    pub x: Estimate,
    pub ursell2: Estimate,
    pub ursell4: Estimate,
    /// `𝒰₄/𝒰₂²`.
    pub ursell_ratio: Estimate,
    /// Smallest ESS over replicas after reweighting.
    pub ess: f64,
    pub diverged: bool,
    /// Upper bound on the mean of `‖ω‖²` carried by modes beyond the cutoff.
    pub tail_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTable {
    pub beta: f64,
    pub pop: usize,
    pub replicas: usize,
    pub cutoff: usize,
    pub seed: u64,
    pub rows: Vec<FlowRow>,
    /// First level at which some replica's ESS fell below 10% of the population.
    pub collapse_level: Option<u32>,
}

fn replica_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_add((r as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn run_replica(
    params: &ModelParams,
    hier: &HierarchyParams,
    cfg: &FlowConfig,
    seed: u64,
) -> Result<(Vec<LevelSample>, Option<u32>)> {
    let mut e = init_level0(params, cfg.level0, cfg.pop, cfg.cutoff, seed, cfg.exec)?;
    let mut out = vec![level_sample(&e, e.ess, false, cfg.k_report)];
    for _ in 1..=cfg.n_max {
        match rg_step(&e, hier, seed, cfg.exec) {
            Ok((next, info)) => {
                // estimators use the reweighted population; when it has been
                // resampled the weights are equal and the estimate unbiased too
                out.push(level_sample(&next, info.ess, info.diverged, cfg.k_report));
                if info.diverged || info.ess < 0.1 * cfg.pop as f64 {
                    return Ok((out, Some(info.level)));
                }
                e = next;
            }
            Err(Error::Stability(_)) => return Ok((out, Some(e.level))),
            Err(err) => return Err(err),
        }
    }
    Ok((out, None))
}

pub fn flow_run(params: &ModelParams, hier: &HierarchyParams, cfg: &FlowConfig, seed: u64) -> Result<FlowTable> {
    if cfg.replicas < 2 {
        return Err(Error::Domain("need at least 2 replicas for error bars".into()));
    }
    let runs = cfg
        .exec
        .map_range(cfg.replicas, |r| run_replica(params, hier, cfg, replica_seed(seed, r)));
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let collapse_level = runs.iter().filter_map(|r| r.1).min();
    let depth = runs.iter().map(|r| r.0.len()).min().unwrap_or(0);
    let kappa = hier.kappa as f64;
    let est = |f: &dyn Fn(&LevelSample) -> f64, n: usize| {
        mean_and_stderr(&runs.iter().map(|r| f(&r.0[n])).collect::<Vec<_>>())
    };
    let rows = (0..depth)
        .map(|n| {
            let k_modes = runs[0].0[n].u_hat.len();
            let tail = 2.0 * kappa.powf(-(n as f64) * hier.delta) * params.beta.powi(2)
                / (4.0 * PI * PI * params.mass * cfg.cutoff.max(1) as f64);
            FlowRow {
                level: n as u32,
                u_hat: est(&|s| s.u_hat[0], n),
                u_hat_modes: (0..k_modes).map(|k| est(&|s| s.u_hat[k], n)).collect(),
                x: est(&|s| s.x, n),
                ursell2: est(&|s| s.ursell2, n),
                ursell4: est(&|s| s.ursell4, n),
                ursell_ratio: est(&|s| s.ursell4 / (s.ursell2 * s.ursell2), n),
                ess: runs.iter().map(|r| r.0[n].ess).fold(f64::INFINITY, f64::min),
                diverged: runs.iter().any(|r| r.0[n].diverged),
                tail_bound: tail,
            }
        })
        .collect();
    Ok(FlowTable { beta: params.beta, pop: cfg.pop, replicas: cfg.replicas, cutoff: cfg.cutoff, seed, rows, collapse_level })
}

impl FlowTable {
    /// `level,u_hat,u_hat_err,X,X_err,ess,diverged`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,u_hat,u_hat_err,X,X_err,ess,diverged\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
                r.level, r.u_hat.mean, r.u_hat.err, r.x.mean, r.x.err, r.ess, r.diverged as u8
            ));
        }
        s
    }

    /// Fit of `ln û_n` against n; the decay exponent is `−slope/ln κ`.
    pub fn decay_fit(&self, kappa: u64) -> LineFit {
        let rows: Vec<&FlowRow> = self.rows.iter().filter(|r| r.u_hat.mean > 0.0).collect();
        let x: Vec<f64> = rows.iter().map(|r| r.level as f64).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.u_hat.mean.ln()).collect();
        let s: Vec<f64> = rows.iter().map(|r| (r.u_hat.err / r.u_hat.mean).max(1e-15)).collect();
        let f = line_fit(&x, &y, Some(&s));
        let l = (kappa as f64).ln();
        LineFit { slope: -f.slope / l, intercept: f.intercept, slope_err: f.slope_err / l }
    }

    /// Levels where `û_n > σ(û_{n−1})û_{n−1} + 3σ` while `û_{n−1}` is in the domain of σ.
    pub fn upper_recurrence_violations(&self, kernels: &Kernels) -> Vec<u32> {
        self.rows
            .windows(2)
            .filter_map(|w| {
                let prev = w[0].u_hat.mean;
                let s = kernels.sigma(prev).ok()?;
                let bound = s * prev;
                let err = (w[1].u_hat.err.powi(2) + (s * w[0].u_hat.err).powi(2)).sqrt();
                (w[1].u_hat.mean > bound + 3.0 * err).then_some(w[1].level)
            })
            .collect()
    }
}

//! Quasi-Bayesian minimisation of the CUE-GMM distance: multistart random
//! search, block random-walk Metropolis–Hastings on the flat Θ₀ prior,
//! reversible-jump moves between θP = θQ (s₁) and θP ≠ θQ (s₂), and
//! batch-means inference from the chain.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::gmm::{self, GmmContext, Weight};
use crate::model::{self, ParamVector, Theta0Bounds, GAMMA0, THETA_P, THETA_Q};

/// How the reversible-jump acceptance ratio treats the half-gap u = (θQ − θP)/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RjRatio {
    /// u carries a N(0, σ_u²) prior in s₂ (when jumps are enabled), so the
    /// proposal density and the Jacobian cancel against it: the ratio is
    /// L'/L·(1−p_s1)/p_s1 and a flat objective spends exactly p_s1 of the
    /// time in s₁.
    Balanced,
    /// Flat prior on (θP, θQ) in s₂: L'/L·(1−p_s1)/p_s1·2/f_N(0,σ_u²)(u).  The
    /// model-occupancy then depends on how far the s₂ chain spreads.
    Printed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub n_starts: usize,
    pub n_draws: usize,
    pub burnin: usize,
    pub c_theta: f64,
    /// Small random-walk scale relative to |ϑ_j|.
    pub rw_scale: f64,
    /// Probability of the large scale for a coordinate.
    pub big_move_prob: f64,
    pub big_scale: f64,
    /// Scale floor so coordinates at zero can move.
    pub scale_floor: f64,
    /// Include the Hastings factor of the state-dependent proposal scale.
    pub hastings_correction: bool,
    pub rj_prob: f64,
    pub p_s1: f64,
    pub tie_prob: f64,
    pub sigma_u: f64,
    pub sigma_ugamma: f64,
    pub rj_update_gamma0: bool,
    pub rj_ratio: RjRatio,
    pub max_start_rejections: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl SamplerConfig {
    /// Full-length profile (2000 starts, 20000 draws, 5000 burn-in).
    pub fn paper() -> Self {
        Self {
            n_starts: 2000,
            n_draws: 20000,
            burnin: 5000,
            c_theta: 1.0,
            rw_scale: 0.01,
            big_move_prob: 0.10,
            big_scale: 0.1,
            scale_floor: 0.01,
            hastings_correction: true,
            rj_prob: 0.10,
            p_s1: 0.90,
            tie_prob: 0.80,
            sigma_u: 1.0,
            sigma_ugamma: 0.5,
            rj_update_gamma0: true,
            rj_ratio: RjRatio::Balanced,
            max_start_rejections: 10_000,
            seed: 1,
        }
    }

    /// Desk-scale profile (200 starts, 2000 draws, 500 burn-in).
    pub fn desk() -> Self {
        Self {
            n_starts: 200,
            n_draws: 2000,
            burnin: 500,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burnin >= self.n_draws {
            return invalid("burn-in must be shorter than the chain");
        }
        for (name, p) in [
            ("big_move_prob", self.big_move_prob),
            ("rj_prob", self.rj_prob),
            ("p_s1", self.p_s1),
            ("tie_prob", self.tie_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return invalid(format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.p_s1 > 0.0 && self.p_s1 < 1.0) {
            return invalid("p_s1 must lie strictly inside (0, 1)");
        }
        if !(self.sigma_u > 0.0 && self.sigma_ugamma > 0.0 && self.rw_scale > 0.0 && self.big_scale > 0.0) {
            return invalid("proposal scales must be positive");
        }
        Ok(())
    }
}

/// Quasi-posterior the sampler explores: L(ϑ) = exp(−½·T·Q_T(ϑ)) on a support.
pub trait Target {
    /// Sample size T in the exponent.
    fn sample_size(&self) -> f64;
    /// Refresh any state-dependent weighting at ϑ (called once per sweep).
    fn refresh(&mut self, theta: &ParamVector);
    /// Q_T under the current weighting (+∞ if not computable).
    fn q(&self, theta: &ParamVector) -> f64;
    /// Q_T with identity weighting, used by the multistart search.
    fn q_identity(&self, theta: &ParamVector) -> f64;
    /// Prior support Θ₀.
    fn in_support(&self, theta: &ParamVector) -> bool;
    /// Names of failed support constraints (diagnostics only).
    fn support_failures(&self, _theta: &ParamVector) -> Vec<String> {
        Vec::new()
    }
}

/// CUE-GMM target built on sample moments.
#[derive(Debug, Clone)]
pub struct GmmTarget {
    pub ctx: GmmContext,
    pub bounds: Theta0Bounds,
    weight: Weight,
    identity: Weight,
    pub ridge_count: usize,
    pub refresh_failures: usize,
}

impl GmmTarget {
    pub fn new(ctx: GmmContext, bounds: Theta0Bounds) -> Self {
        let q = ctx.q();
        Self {
            ctx,
            bounds,
            weight: Weight::identity(q),
            identity: Weight::identity(q),
            ridge_count: 0,
            refresh_failures: 0,
        }
    }

    pub fn weight(&self) -> &Weight {
        &self.weight
    }
}

impl Target for GmmTarget {
    fn sample_size(&self) -> f64 {
        self.ctx.t() as f64
    }

    fn refresh(&mut self, theta: &ParamVector) {
        match gmm::cue_weight(theta, &self.ctx) {
            Ok(cw) => {
                self.ridge_count += cw.ridged as usize;
                self.weight = cw.weight;
            }
            Err(_) => self.refresh_failures += 1,
        }
    }

    fn q(&self, theta: &ParamVector) -> f64 {
        gmm::distance(theta, &self.ctx, &self.weight).unwrap_or(f64::INFINITY)
    }

    fn q_identity(&self, theta: &ParamVector) -> f64 {
        gmm::distance(theta, &self.ctx, &self.identity).unwrap_or(f64::INFINITY)
    }

    fn in_support(&self, theta: &ParamVector) -> bool {
        model::theta0_ok(theta, self.ctx.short_mean, &self.bounds)
    }

    fn support_failures(&self, theta: &ParamVector) -> Vec<String> {
        model::in_theta0_with(theta, self.ctx.short_mean, &self.bounds)
            .failures()
            .into_iter()
            .map(|c| c.name.clone())
            .collect()
    }
}

/// Parameter blocks (0-based positions): {θQ, θP, γ0}, βQ, βP without βP33,
/// {βP33, Bx12, Bx13}, {Σ1, Σ2, Σ3, σ²ε [, σ̃⁴ε]}.
pub fn blocks(n_params: usize) -> Vec<Vec<usize>> {
    let mut last: Vec<usize> = (19..23).collect();
    if n_params > 23 {
        last.push(23);
    }
    vec![vec![0, 1, 18], (2..9).collect(), (9..15).collect(), vec![15, 16, 17], last]
}

/// Coordinates whose sign is fixed by the model; perturbed on the log scale.
pub fn sign_constrained(j: usize) -> bool {
    // βQ32, βQ23, βP32, βP23 and γ0 live on the real line
    !matches!(j, 6 | 7 | 13 | 14 | GAMMA0)
}

fn draw_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Randomised starting value around `center`.
pub fn perturb_start(center: &ParamVector, cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> ParamVector {
    let mut p = center.clone();
    if cfg.c_theta != 0.0 {
        for j in 0..p.len() {
            let x = center.v[j];
            let z = draw_normal(rng);
            p.v[j] = if sign_constrained(j) {
                if x == 0.0 {
                    0.0
                } else {
                    (x.abs().ln() + cfg.c_theta * z).exp() * x.signum()
                }
            } else {
                x + cfg.c_theta * x.abs().max(cfg.scale_floor) * z
            };
        }
    }
    if rng.random::<f64>() < cfg.tie_prob {
        p.v[THETA_P] = p.v[THETA_Q];
    }
    p
}

/// Draws perturbed starts until one lies in the support.
pub fn feasible_start<T: Target>(
    target: &T,
    center: &ParamVector,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ParamVector> {
    let mut failures: HashMap<String, usize> = HashMap::new();
    for _ in 0..cfg.max_start_rejections.max(1) {
        let p = perturb_start(center, cfg, rng);
        if target.in_support(&p) {
            return Ok(p);
        }
        for f in target.support_failures(&p) {
            *failures.entry(f).or_default() += 1;
        }
    }
    let mut top: Vec<(String, usize)> = failures.into_iter().collect();
    top.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let names: Vec<String> = top.iter().take(5).map(|(n, c)| format!("{n} ({c})")).collect();
    Err(Error::GaveUp(format!(
        "{} consecutive starts outside the support; binding constraints: {}",
        cfg.max_start_rejections,
        names.join(", ")
    )))
}

#[derive(Debug, Clone)]
pub struct MultistartResult {
    pub best: ParamVector,
    pub best_q: f64,
    pub evaluated: usize,
    pub finite: usize,
}

/// Evaluates identity-weight Q_T at `n_starts` feasible perturbed points and
/// returns the minimiser.
pub fn multistart<T: Target>(
    target: &T,
    center: &ParamVector,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MultistartResult> {
    let mut best: Option<(ParamVector, f64)> = None;
    let mut finite = 0;
    for _ in 0..cfg.n_starts.max(1) {
        let p = feasible_start(target, center, cfg, rng)?;
        let q = target.q_identity(&p);
        if q.is_finite() {
            finite += 1;
            if best.as_ref().is_none_or(|(_, bq)| q < *bq) {
                best = Some((p, q));
            }
        }
    }
    match best {
        Some((best, best_q)) => Ok(MultistartResult {
            best,
            best_q,
            evaluated: cfg.n_starts.max(1),
            finite,
        }),
        None => Err(Error::GaveUp("no start has a computable distance".into())),
    }
}

/// Chain state: parameters, s₁ flag and log L under the sweep's weighting.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub theta: ParamVector,
    pub s1: bool,
    pub q: f64,
}

fn log_l<T: Target>(target: &T, q: f64) -> f64 {
    -0.5 * target.sample_size() * q
}

fn normal_pdf(x: f64, sd: f64) -> f64 {
    (-(x * x) / (2.0 * sd * sd)).exp() / (sd * (2.0 * PI).sqrt())
}

/// log density of the scale-mixture random-walk proposal for one coordinate.
fn log_q_coord(to: f64, from: f64, cfg: &SamplerConfig) -> f64 {
    let base = from.abs().max(cfg.scale_floor);
    let small = normal_pdf(to - from, cfg.rw_scale * base);
    let big = normal_pdf(to - from, cfg.big_scale * base);
    ((1.0 - cfg.big_move_prob) * small + cfg.big_move_prob * big).ln()
}

fn propose_coord(x: f64, cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> f64 {
    let base = x.abs().max(cfg.scale_floor);
    let scale = if rng.random::<f64>() < cfg.big_move_prob {
        cfg.big_scale
    } else {
        cfg.rw_scale
    };
    x + scale * base * draw_normal(rng)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tried: usize,
    pub accepted: usize,
}

/// One block random-walk MH update.  In s₁ the pair (θQ, θP) moves as one
/// coordinate so the tie is preserved.
pub fn mh_block_step<T: Target>(
    state: &mut ChainState,
    block: &[usize],
    target: &T,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> bool {
    let old = &state.theta;
    let mut new = old.clone();
    let mut log_hastings = 0.0;
    for &j in block {
        if state.s1 && j == THETA_P {
            continue;
        }
        new.v[j] = propose_coord(old.v[j], cfg, rng);
        if cfg.hastings_correction {
            log_hastings += log_q_coord(old.v[j], new.v[j], cfg) - log_q_coord(new.v[j], old.v[j], cfg);
        }
    }
    if state.s1 && block.contains(&THETA_Q) {
        new.v[THETA_P] = new.v[THETA_Q];
    }
    // the gap prior belongs to the two-state model; without jumps the chain
    // targets L alone
    if !state.s1 && cfg.rj_prob > 0.0 && cfg.rj_ratio == RjRatio::Balanced && block.contains(&THETA_Q) {
        log_hastings += log_gap_prior(&new, cfg) - log_gap_prior(old, cfg);
    }
    mh_accept(state, new, log_hastings, target, rng)
}

/// Accept `new` with probability min{1, L(new)/L(old)·exp(log_extra)}.
fn mh_accept<T: Target>(
    state: &mut ChainState,
    new: ParamVector,
    log_extra: f64,
    target: &T,
    rng: &mut ChaCha8Rng,
) -> bool {
    if !target.in_support(&new) {
        return false;
    }
    let q_new = target.q(&new);
    if !q_new.is_finite() {
        return false;
    }
    let log_ratio = log_l(target, q_new) - log_l(target, state.q) + log_extra;
    let accept = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
    if accept {
        state.theta = new;
        state.q = q_new;
    }
    accept
}

/// Split proposal from s₁ for given (η, u, u_γ):
/// θP = θ − 2ηu, θQ = θ + 2(1−η)u, γ0 ← γ0 − 2ηu + u_γ.
pub fn split_params(theta: &ParamVector, eta: f64, u: f64, u_gamma: f64, update_gamma0: bool) -> ParamVector {
    let mut p = theta.clone();
    let t = theta.v[THETA_Q];
    p.v[THETA_P] = t - 2.0 * eta * u;
    p.v[THETA_Q] = t + 2.0 * (1.0 - eta) * u;
    if update_gamma0 {
        p.v[GAMMA0] = theta.v[GAMMA0] - 2.0 * eta * u + u_gamma;
    }
    p
}

/// Merge proposal from s₂ — the inverse of [`split_params`]:
/// u = (θQ − θP)/2, θ = (1−η)θP + ηθQ, γ0 ← γ0 + 2ηu − u_γ.  Returns (ϑ, u).
pub fn merge_params(
    theta: &ParamVector,
    eta: f64,
    u_gamma: f64,
    update_gamma0: bool,
) -> (ParamVector, f64) {
    let mut p = theta.clone();
    let (tp, tq) = (theta.v[THETA_P], theta.v[THETA_Q]);
    let u = 0.5 * (tq - tp);
    let t = (1.0 - eta) * tp + eta * tq;
    p.v[THETA_P] = t;
    p.v[THETA_Q] = t;
    if update_gamma0 {
        p.v[GAMMA0] = theta.v[GAMMA0] + 2.0 * eta * u - u_gamma;
    }
    (p, u)
}

/// log f_N(0,σ_u²)((θQ − θP)/2): the s₂ prior on the half-gap under
/// [`RjRatio::Balanced`].
fn log_gap_prior(theta: &ParamVector, cfg: &SamplerConfig) -> f64 {
    normal_pdf(0.5 * (theta.v[THETA_Q] - theta.v[THETA_P]), cfg.sigma_u).ln()
}

/// Log of the split acceptance factor besides the likelihood ratio:
/// (1−p_s1)/p_s1, times 2/f_N(0,σ_u²)(u) under [`RjRatio::Printed`].
pub fn split_log_factor(u: f64, cfg: &SamplerConfig) -> f64 {
    let base = ((1.0 - cfg.p_s1) / cfg.p_s1).ln();
    match cfg.rj_ratio {
        RjRatio::Balanced => base,
        RjRatio::Printed => base + 2f64.ln() - normal_pdf(u, cfg.sigma_u).ln(),
    }
}

/// Log of the merge acceptance factor, the reciprocal of the split factor.
pub fn merge_log_factor(u: f64, cfg: &SamplerConfig) -> f64 {
    -split_log_factor(u, cfg)
}

fn draw_eta(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let e: f64 = rng.random();
        if e > 0.0 && e < 1.0 {
            return e;
        }
    }
}

pub fn rj_split<T: Target>(state: &mut ChainState, target: &T, cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> bool {
    debug_assert!(state.s1);
    let eta = draw_eta(rng);
    let u = cfg.sigma_u * draw_normal(rng);
    let ug = cfg.sigma_ugamma * draw_normal(rng);
    let new = split_params(&state.theta, eta, u, ug, cfg.rj_update_gamma0);
    let accepted = mh_accept(state, new, split_log_factor(u, cfg), target, rng);
    if accepted {
        state.s1 = false;
    }
    accepted
}

pub fn rj_merge<T: Target>(state: &mut ChainState, target: &T, cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> bool {
    debug_assert!(!state.s1);
    let eta = draw_eta(rng);
    let ug = cfg.sigma_ugamma * draw_normal(rng);
    let (new, u) = merge_params(&state.theta, eta, ug, cfg.rj_update_gamma0);
    let accepted = mh_accept(state, new, merge_log_factor(u, cfg), target, rng);
    if accepted {
        state.s1 = true;
    }
    accepted
}

#[derive(Debug, Clone)]
pub struct ChainTrace {
    pub names: Vec<String>,
    /// M × 𝔭 draws.
    pub draws: DMatrix<f64>,
    /// s₁ flag per draw.
    pub s1: Vec<bool>,
    /// Q_T of each stored draw under its sweep's weighting.
    pub q: Vec<f64>,
    pub block_counts: Vec<Counts>,
    pub split: Counts,
    pub merge: Counts,
    pub burnin: usize,
}

impl ChainTrace {
    pub fn len(&self) -> usize {
        self.draws.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.nrows() == 0
    }

    pub fn post_burnin(&self) -> DMatrix<f64> {
        self.draws.rows(self.burnin, self.len() - self.burnin).into_owned()
    }

    pub fn s1_occupancy(&self) -> f64 {
        let tail = &self.s1[self.burnin..];
        tail.iter().filter(|&&b| b).count() as f64 / tail.len().max(1) as f64
    }

    /// CSV text: m, state_flag, Q_T, then the parameters.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("m,state_flag,Q_T");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for m in 0..self.len() {
            out.push_str(&format!("{},{},{}", m + 1, if self.s1[m] { "s1" } else { "s2" }, self.q[m]));
            for v in self.draws.row(m).iter() {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, burnin: usize) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Data("empty trace".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 4 || cols[..3] != ["m", "state_flag", "Q_T"] {
            return Err(Error::Data("trace header must start with m,state_flag,Q_T".into()));
        }
        let names: Vec<String> = cols[3..].iter().map(|s| s.to_string()).collect();
        let p = names.len();
        let (mut vals, mut s1, mut q) = (Vec::new(), Vec::new(), Vec::new());
        for (k, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != p + 3 {
                return Err(Error::Data(format!("trace row {} has {} fields", k + 1, f.len())));
            }
            s1.push(f[1] == "s1");
            q.push(f[2].parse::<f64>().map_err(|_| Error::Data("bad Q_T".into()))?);
            for x in &f[3..] {
                vals.push(x.parse::<f64>().map_err(|_| Error::Data(format!("bad value '{x}'")))?);
            }
        }
        let m = s1.len();
        if burnin >= m {
            return invalid("burn-in exceeds the trace length");
        }
        Ok(Self {
            names,
            draws: DMatrix::from_row_slice(m, p, &vals),
            s1,
            q,
            block_counts: Vec::new(),
            split: Counts::default(),
            merge: Counts::default(),
            burnin,
        })
    }
}

/// Runs M sweeps from `start`: weight refresh at ϑ^(m−1), the five block
/// updates, then a reversible-jump move with probability `rj_prob`.
pub fn run_chain<T: Target>(
    target: &mut T,
    start: &ParamVector,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ChainTrace> {
    cfg.validate()?;
    if !target.in_support(start) {
        return invalid("chain start lies outside the support");
    }
    let p = start.len();
    let blks = blocks(p);
    let mut state = ChainState {
        theta: start.clone(),
        s1: start.v[THETA_P] == start.v[THETA_Q],
        q: f64::INFINITY,
    };
    let mut draws = DMatrix::zeros(cfg.n_draws, p);
    let mut flags = Vec::with_capacity(cfg.n_draws);
    let mut qs = Vec::with_capacity(cfg.n_draws);
    let mut block_counts = vec![Counts::default(); blks.len()];
    let (mut split, mut merge) = (Counts::default(), Counts::default());
    for m in 0..cfg.n_draws {
        target.refresh(&state.theta);
        state.q = target.q(&state.theta);
        for (b, blk) in blks.iter().enumerate() {
            block_counts[b].tried += 1;
            if mh_block_step(&mut state, blk, target, cfg, rng) {
                block_counts[b].accepted += 1;
            }
        }
        if rng.random::<f64>() < cfg.rj_prob {
            if state.s1 {
                split.tried += 1;
                split.accepted += rj_split(&mut state, target, cfg, rng) as usize;
            } else {
                merge.tried += 1;
                merge.accepted += rj_merge(&mut state, target, cfg, rng) as usize;
            }
        }
        debug_assert!(target.in_support(&state.theta));
        debug_assert!(!state.s1 || state.theta.v[THETA_P] == state.theta.v[THETA_Q]);
        draws.row_mut(m).copy_from_slice(&state.theta.v);
        flags.push(state.s1);
        qs.push(state.q);
    }
    Ok(ChainTrace {
        names: start.names().iter().map(|s| s.to_string()).collect(),
        draws,
        s1: flags,
        q: qs,
        block_counts,
        split,
        merge,
        burnin: cfg.burnin,
    })
}

/// Multistart followed by the chain, all driven by `cfg.seed`.
pub fn estimate_chain<T: Target>(
    target: &mut T,
    center: &ParamVector,
    cfg: &SamplerConfig,
) -> Result<(MultistartResult, ChainTrace)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ms = multistart(target, center, cfg, &mut rng)?;
    let trace = run_chain(target, &ms.best, cfg, &mut rng)?;
    Ok((ms, trace))
}

/// Batch-means asymptotic variance σ²_BM = b·Var(batch means), b = ⌊√n⌋, so
/// that Var(chain mean) ≈ σ²_BM / n.
pub fn batch_means_variance(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 100 {
        return invalid(format!("batch means needs at least 100 draws, got {n}"));
    }
    let b = (n as f64).sqrt().floor() as usize;
    let a = n / b;
    let means: Vec<f64> = (0..a)
        .map(|k| series[k * b..(k + 1) * b].iter().sum::<f64>() / b as f64)
        .collect();
    let mu = means.iter().sum::<f64>() / a as f64;
    let var = means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / (a - 1) as f64;
    Ok(b as f64 * var)
}

/// Multivariate batch-means asymptotic covariance of the rows of `x` (n × k).
pub fn batch_means_covariance(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if n < 100 {
        return invalid(format!("batch means needs at least 100 draws, got {n}"));
    }
    let k = x.ncols();
    let b = (n as f64).sqrt().floor() as usize;
    let a = n / b;
    let mut means = DMatrix::zeros(a, k);
    for i in 0..a {
        let blk = x.rows(i * b, b);
        for j in 0..k {
            means[(i, j)] = blk.column(j).mean();
        }
    }
    let mu = means.row_mean();
    for mut r in means.row_iter_mut() {
        r -= &mu;
    }
    Ok(means.tr_mul(&means) * (b as f64 / (a - 1) as f64))
}

fn sample_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mu = x.row_mean();
    let mut c = x.clone();
    for mut r in c.row_iter_mut() {
        r -= &mu;
    }
    c.tr_mul(&c) / (n.max(2) - 1) as f64
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub theta_hat: ParamVector,
    /// Covariance of ϑ̂: quasi-posterior covariance of the draws plus the
    /// batch-means Monte-Carlo error of the chain mean.
    pub cov: DMatrix<f64>,
    pub sd: DVector<f64>,
    /// Batch-means standard error of the chain mean alone.
    pub mcse: DVector<f64>,
    pub n: usize,
}

pub fn estimate(trace: &ChainTrace) -> Result<Estimate> {
    let x = trace.post_burnin();
    let n = x.nrows();
    let mean: Vec<f64> = (0..x.ncols()).map(|j| x.column(j).mean()).collect();
    let post = sample_covariance(&x);
    let bm = batch_means_covariance(&x)? / n as f64;
    let cov = &post + &bm;
    let sd = cov.diagonal().map(|v| v.max(0.0).sqrt());
    let mcse = bm.diagonal().map(|v| v.max(0.0).sqrt());
    Ok(Estimate {
        theta_hat: ParamVector { v: mean },
        cov,
        sd,
        mcse,
        n,
    })
}

/// Contrast restrictions of the form Rϑ = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Restriction {
    /// θQ − θP = 0
    Theta,
    /// βQ − βP = 0 (7 restrictions)
    Beta,
}

impl std::str::FromStr for Restriction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theta" => Ok(Restriction::Theta),
            "beta" => Ok(Restriction::Beta),
            _ => invalid(format!("unknown restriction '{s}' (expected theta or beta)")),
        }
    }
}

pub fn restriction_matrix(r: Restriction, n_params: usize) -> DMatrix<f64> {
    match r {
        Restriction::Theta => {
            let mut m = DMatrix::zeros(1, n_params);
            m[(0, THETA_Q)] = 1.0;
            m[(0, THETA_P)] = -1.0;
            m
        }
        Restriction::Beta => {
            let mut m = DMatrix::zeros(7, n_params);
            for k in 0..7 {
                m[(k, model::BETA_Q + k)] = 1.0;
                m[(k, model::BETA_P + k)] = -1.0;
            }
            m
        }
    }
}

/// Wald test of Rϑ = 0 from chain output.  With V = T·cov the statistic is
/// the usual W = T r'(RVR')⁻¹r.
pub fn chain_wald(est: &Estimate, r: Restriction, t: f64) -> Result<gmm::WaldResult> {
    let rm = restriction_matrix(r, est.theta_hat.len());
    let rv = &rm * DVector::from_column_slice(&est.theta_hat.v);
    gmm::wald(&rv, &rm, &(&est.cov * t), t)
}

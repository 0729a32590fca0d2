//! Command implementations behind the `atsm-gmm` binary: simulate yield
//! panels, list moment catalogues, estimate by quasi-Bayesian GMM, run Wald
//! tests and replication sweeps.

pub mod config;
pub mod report;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use atsm_gmm::gmm::{sample_moments_with, GmmContext};
use atsm_gmm::model::{check_admissibility, check_feller, check_stationarity, ParamVector};
use atsm_gmm::qbayes::{self, chain_wald, estimate_chain, ChainTrace, Estimate, GmmTarget, Restriction, SamplerConfig};
use atsm_gmm::riccati::{self, TimeGrid};
use atsm_gmm::simulate::{read_panel_csv, simulate_panel_from, write_panel_csv_annotated, YieldPanel};
use atsm_gmm::yieldmoments::{catalogue_labels, MomentEngine};
use rayon::prelude::*;
use thiserror::Error;

pub use config::{Overrides, Preset, RunConfig, Units};
pub use report::{ResultReport, WaldRow};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    fn context(self, ctx: &str) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{ctx}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{ctx}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{ctx}: {m}")),
        }
    }
}

impl From<atsm_gmm::Error> for CliError {
    fn from(e: atsm_gmm::Error) -> Self {
        use atsm_gmm::Error as E;
        match e {
            E::InvalidArgument(m) => CliError::Config(m),
            E::Data(m) => CliError::Data(m),
            E::Io(e) => CliError::Data(e.to_string()),
            E::Numerical(m) | E::GaveUp(m) => CliError::Numerical(m),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Admissibility, Feller and stationarity checks; the full report is part of
/// the error when any fails.
pub fn check_params(p: &ParamVector) -> Result<(), CliError> {
    let mut text = String::new();
    let mut ok = true;
    for rep in [check_admissibility(p), check_feller(p), check_stationarity(p)?] {
        ok &= rep.passed();
        text.push_str(&rep.to_string());
    }
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!("parameters violate model constraints:\n{text}")))
    }
}

fn grid(cfg: &RunConfig, maturities: &[f64]) -> Result<TimeGrid, CliError> {
    Ok(TimeGrid::new(maturities, cfg.grid_steps)?)
}

/// Simulates a panel in model units (percent) for `truth`.
pub fn simulate(cfg: &RunConfig, truth: &ParamVector, sim: &atsm_gmm::simulate::SimConfig) -> Result<YieldPanel, CliError> {
    check_params(truth)?;
    let g = grid(cfg, &cfg.maturities)?;
    let loadings = riccati::yield_loadings(&truth.q_spec(), &cfg.maturities, &g, cfg.scheme)?;
    Ok(simulate_panel_from(&truth.p_spec(), &loadings, truth.sigma2_eps(), sim)?)
}

fn scale_panel(panel: &mut YieldPanel, factor: f64) {
    if factor != 1.0 {
        panel.obs *= factor;
    }
}

/// Writes the panel, the generating parameters and a provenance sidecar.
/// Returns the panel path.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let mut panel = simulate(cfg, &cfg.params, &cfg.sim)?;
    ensure_dir(&cfg.out)?;
    scale_panel(&mut panel, 1.0 / cfg.units.to_model());
    let path = cfg.out.join("panel.csv");
    write_panel_csv_annotated(&path, &panel, Some(&cfg.provenance()))
        .map_err(|e| CliError::from(e).context("writing panel"))?;
    let truth = format!("# {}\n{}", cfg.provenance(), cfg.params.to_kv());
    write_file(&cfg.out.join("truth.kv"), &truth)?;
    Ok(path)
}

/// Reads the configured data panel, converted to model units.  Returns the
/// panel and the number of dropped rows.
pub fn load_panel(cfg: &RunConfig) -> Result<(YieldPanel, usize), CliError> {
    let path = cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::Config("no data file configured".into()))?;
    if !path.is_file() {
        return Err(CliError::Data(format!("data file {} not found", path.display())));
    }
    let (mut panel, dropped) = read_panel_csv(path).map_err(|e| match CliError::from(e) {
        CliError::Config(m) => CliError::Data(m),
        other => other,
    })?;
    if cfg.maturities_explicit
        && (panel.maturities.len() != cfg.maturities.len()
            || panel.maturities.iter().zip(&cfg.maturities).any(|(a, b)| (a - b).abs() > 1e-9))
    {
        return Err(CliError::Data(format!(
            "data maturities {:?} do not match configured {:?}",
            panel.maturities, cfg.maturities
        )));
    }
    if let Some(l) = cfg.selector.labels.iter().find(|l| l.max_index() > panel.m()) {
        return Err(CliError::Data(format!("selector label {l} needs more than {} maturities", panel.m())));
    }
    scale_panel(&mut panel, cfg.units.to_model());
    Ok((panel, dropped))
}

/// Model moment catalogue at the configured parameters, flagging selected
/// rows; sample moments alongside when data is configured.
pub fn cmd_moments(cfg: &RunConfig) -> Result<String, CliError> {
    check_params(&cfg.params)?;
    let data = match &cfg.data {
        Some(_) => Some(load_panel(cfg)?.0),
        None => None,
    };
    let maturities = data.as_ref().map_or(cfg.maturities.clone(), |p| p.maturities.clone());
    let g = grid(cfg, &maturities)?;
    let engine = MomentEngine::from_params(&cfg.params, &maturities, &g, cfg.scheme)?;
    let labels = catalogue_labels(maturities.len());
    let values = engine.values(&labels)?;
    let sample: Option<GmmContext> = match &data {
        Some(p) => {
            let sel = atsm_gmm::gmm::MomentSelector { labels: labels.clone() };
            Some(sample_moments_with(p, &sel, cfg.grid_steps, cfg.scheme)?)
        }
        None => None,
    };
    let mut s = String::new();
    let _ = writeln!(s, "# {}", cfg.provenance());
    let _ = write!(s, "{:<4} {:<18} {:>16}", "sel", "moment", "model");
    if sample.is_some() {
        let _ = write!(s, " {:>16}", "sample");
    }
    s.push('\n');
    for (k, l) in labels.iter().enumerate() {
        let sel = cfg.selector.labels.iter().any(|x| x.canonical() == l.canonical());
        let _ = write!(s, "{:<4} {:<18} {:>16.8e}", if sel { "*" } else { "" }, l.to_string(), values[k]);
        if let Some(ctx) = &sample {
            let _ = write!(s, " {:>16.8e}", ctx.m_t[k]);
        }
        s.push('\n');
    }
    let _ = writeln!(s, "# {} moments, {} selected", labels.len(), cfg.selector.q());
    Ok(s)
}

/// Everything one estimation run produces.
#[derive(Debug, Clone)]
pub struct EstimateOutcome {
    pub report: ResultReport,
    pub trace: ChainTrace,
    pub estimate: Estimate,
}

/// Multistart, chain and estimate on `panel` (model units), centred on the
/// configured parameters.
pub fn estimate_panel(
    cfg: &RunConfig,
    panel: &YieldPanel,
    dropped: usize,
    sampler: &SamplerConfig,
) -> Result<EstimateOutcome, CliError> {
    let ctx = sample_moments_with(panel, &cfg.selector, cfg.grid_steps, cfg.scheme)
        .map_err(|e| CliError::from(e).context("sample moments"))?;
    let mut target = GmmTarget::new(ctx, cfg.bounds.clone());
    let (ms, trace) =
        estimate_chain(&mut target, &cfg.params, sampler).map_err(|e| CliError::from(e).context("sampler"))?;
    let est = qbayes::estimate(&trace).map_err(|e| CliError::from(e).context("estimate"))?;
    let t = target.ctx.t() as f64;
    let wald = [("theta", Restriction::Theta), ("beta", Restriction::Beta)]
        .into_iter()
        .map(|(n, r)| (n.to_string(), chain_wald(&est, r, t).map_err(|e| e.to_string())))
        .collect();
    let report = ResultReport::build(report::ReportInputs {
        provenance: report::Provenance {
            config_sha256: cfg.hash.clone(),
            seed: sampler.seed,
        },
        estimate: &est,
        trace: &trace,
        multistart: &ms,
        sample_size: panel.t(),
        dropped_rows: dropped,
        weight_ridges: target.ridge_count,
        weight_refresh_failures: target.refresh_failures,
        wald,
    });
    Ok(EstimateOutcome {
        report,
        trace,
        estimate: est,
    })
}

/// Trace CSV with a leading provenance comment.
pub fn trace_text(cfg: &RunConfig, trace: &ChainTrace) -> String {
    format!("# {}\n{}", cfg.provenance(), trace.to_csv())
}

/// Estimates on the configured data and writes report.txt, report.json and
/// trace.csv to the output directory.
pub fn cmd_estimate(cfg: &RunConfig) -> Result<EstimateOutcome, CliError> {
    let (panel, dropped) = load_panel(cfg)?;
    check_params(&cfg.params).map_err(|e| e.context("start parameters"))?;
    let out = estimate_panel(cfg, &panel, dropped, &cfg.sampler)?;
    ensure_dir(&cfg.out)?;
    write_file(&cfg.out.join("report.txt"), &out.report.to_text())?;
    write_file(&cfg.out.join("report.json"), &out.report.to_json())?;
    write_file(&cfg.out.join("trace.csv"), &trace_text(cfg, &out.trace))?;
    Ok(out)
}

/// Wald test of `restriction` from a saved trace, discarding the configured
/// burn-in.
pub fn cmd_test(cfg: &RunConfig, trace_path: &Path, restriction: Restriction) -> Result<WaldRow, CliError> {
    let text = std::fs::read_to_string(trace_path).map_err(|e| io_err(trace_path, e))?;
    let trace = ChainTrace::from_csv(&text, cfg.sampler.burnin).map_err(|e| match CliError::from(e) {
        CliError::Config(m) => CliError::Data(m),
        other => other,
    })?;
    let est = qbayes::estimate(&trace)?;
    // The statistic does not depend on T once V = T·cov.
    let w = chain_wald(&est, restriction, 1.0)?;
    let name = match restriction {
        Restriction::Theta => "theta",
        Restriction::Beta => "beta",
    };
    Ok(WaldRow::new(name, &w))
}

/// Seeds for replication `k`: the simulation uses `seed + k`, the sampler a
/// scrambled variant so the two streams are unrelated.
pub fn replication_seeds(seed: u64, k: usize) -> (u64, u64) {
    let s = seed.wrapping_add(k as u64);
    (s, s ^ 0x9e37_79b9_7f4a_7c15)
}

#[derive(Debug, Clone)]
pub struct ReplicationResult {
    pub index: usize,
    pub sim_seed: u64,
    pub sampler_seed: u64,
    pub outcome: Result<ResultReport, String>,
}

/// Simulates a panel at the configured parameters and estimates on it.
pub fn run_replication(cfg: &RunConfig, k: usize) -> ReplicationResult {
    let (sim_seed, sampler_seed) = replication_seeds(cfg.seed, k);
    let sim = atsm_gmm::simulate::SimConfig {
        seed: sim_seed,
        ..cfg.sim.clone()
    };
    let sampler = SamplerConfig {
        seed: sampler_seed,
        ..cfg.sampler.clone()
    };
    let outcome = simulate(cfg, &cfg.params, &sim)
        .and_then(|panel| estimate_panel(cfg, &panel, 0, &sampler))
        .map(|o| o.report)
        .map_err(|e| e.to_string());
    ReplicationResult {
        index: k,
        sim_seed,
        sampler_seed,
        outcome,
    }
}

/// Worker count: AFFINE_GMM_THREADS if set and positive, otherwise rayon's
/// default.
pub fn worker_count() -> usize {
    std::env::var("AFFINE_GMM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Runs `n` replications on a pool of `workers` threads, in index order.
pub fn run_replications(cfg: &RunConfig, n: usize, workers: usize) -> Result<Vec<ReplicationResult>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(|k| run_replication(cfg, k)).collect()))
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub results: Vec<ReplicationResult>,
    /// (α, rejections of θQ = θP, successful replications)
    pub rejections: Vec<(f64, usize, usize)>,
    pub text: String,
}

/// Rejection counts of the θ restriction at each α over successful runs.
pub fn rejection_counts(results: &[ReplicationResult], alphas: &[f64]) -> Vec<(f64, usize, usize)> {
    let pvals: Vec<f64> = results
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok())
        .filter_map(|rep| rep.wald_for("theta").map(|w| w.p_value))
        .collect();
    alphas
        .iter()
        .map(|&a| (a, pvals.iter().filter(|&&p| p < a).count(), pvals.len()))
        .collect()
}

/// Replication study: per-run reports under `rep_NNNN/`, a `sweep.csv` of
/// Wald outcomes and a rejection-rate summary.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<SweepSummary, CliError> {
    check_params(&cfg.params)?;
    ensure_dir(&cfg.out)?;
    let results = run_replications(cfg, cfg.replications, worker_count())?;
    let mut csv = format!(
        "# {}\nrep,sim_seed,sampler_seed,status,W_theta,p_theta,W_beta,p_beta,thetaQ,thetaP\n",
        cfg.provenance()
    );
    for r in &results {
        let dir = cfg.out.join(format!("rep_{:04}", r.index + 1));
        ensure_dir(&dir)?;
        match &r.outcome {
            Ok(rep) => {
                write_file(&dir.join("report.json"), &rep.to_json())?;
                let cell = |name: &str| {
                    rep.wald_for(name)
                        .map_or(",".to_string(), |w| format!("{},{}", w.statistic, w.p_value))
                };
                let _ = writeln!(
                    csv,
                    "{},{},{},ok,{},{},{},{}",
                    r.index + 1,
                    r.sim_seed,
                    r.sampler_seed,
                    cell("theta"),
                    cell("beta"),
                    rep.params[0].estimate,
                    rep.params[1].estimate
                );
            }
            Err(e) => {
                write_file(&dir.join("error.txt"), &format!("{e}\n"))?;
                let _ = writeln!(csv, "{},{},{},failed,,,,,,", r.index + 1, r.sim_seed, r.sampler_seed);
            }
        }
    }
    write_file(&cfg.out.join("sweep.csv"), &csv)?;
    let rejections = rejection_counts(&results, &cfg.alphas);
    let mut text = format!("# {}\n", cfg.provenance());
    let failed = results.iter().filter(|r| r.outcome.is_err()).count();
    let _ = writeln!(text, "replications {} (failed {failed})", results.len());
    for (a, rej, n) in &rejections {
        let rate = if *n == 0 { f64::NAN } else { *rej as f64 / *n as f64 };
        let _ = writeln!(text, "alpha {a:<5} reject thetaQ = thetaP  {rej}/{n} = {rate:.4}");
    }
    write_file(&cfg.out.join("sweep_summary.txt"), &text)?;
    Ok(SweepSummary {
        results,
        rejections,
        text,
    })
}

//! Latent-path and yield-panel simulation under P, plus panel CSV I/O.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, numerical, Error, Result};
use crate::model::ParamVector;
use crate::polyproc::DiffusionSpec;
use crate::riccati::{self, YieldLoadings};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Number of observation dates.
    pub t: usize,
    /// Euler steps per observation interval.
    pub substeps: usize,
    pub seed: u64,
    /// Dates simulated and discarded before the first observation.
    pub burnin: usize,
    /// Observation interval Δ.
    pub dt: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t: 500,
            substeps: 1000,
            seed: 1,
            burnin: 500,
            dt: 1.0,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.t < 2 {
            return invalid("simulation needs T >= 2");
        }
        if self.substeps < 100 {
            return invalid("substeps must be at least 100 per observation interval");
        }
        if !(self.dt > 0.0) {
            return invalid("dt must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct YieldPanel {
    pub maturities: Vec<f64>,
    /// T×M observations.
    pub obs: DMatrix<f64>,
    pub dates: Option<Vec<String>>,
}

impl YieldPanel {
    pub fn t(&self) -> usize {
        self.obs.nrows()
    }

    pub fn m(&self) -> usize {
        self.obs.ncols()
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        self.obs.row(t).iter().copied().collect()
    }
}

/// Stationary mean −β⁻¹b, used as the starting state.
fn start_state(spec: &DiffusionSpec) -> Result<DVector<f64>> {
    let inv = spec
        .beta
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("drift slope is singular; no stationary mean".into()))?;
    Ok(-(inv * &spec.b))
}

/// Euler–Maruyama with full truncation: the S_ii arguments are floored at zero
/// inside the square root, and square-root factors (B0_i = 0) are floored at
/// zero after each substep.
pub fn simulate_latent(spec: &DiffusionSpec, cfg: &SimConfig) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    simulate_latent_rng(spec, cfg, &mut rng)
}

fn simulate_latent_rng(spec: &DiffusionSpec, cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    spec.validate()?;
    cfg.validate()?;
    let d = spec.dim();
    let sqrt_root: Vec<bool> = (0..d).map(|i| spec.b0[i] == 0.0).collect();
    let mut x: Vec<f64> = start_state(spec)?.iter().copied().collect();
    for (i, xi) in x.iter_mut().enumerate() {
        if sqrt_root[i] && *xi < 0.0 {
            *xi = 0.0;
        }
    }
    let h = cfg.dt / cfg.substeps as f64;
    let sh = h.sqrt();
    let beta: Vec<f64> = spec.beta.iter().copied().collect(); // column-major
    let bx: Vec<f64> = spec.bx.iter().copied().collect();
    let mut out = DMatrix::zeros(cfg.t, d);
    let mut drift = vec![0.0; d];
    let mut vol = vec![0.0; d];
    for date in 0..cfg.burnin + cfg.t {
        for _ in 0..cfg.substeps {
            for i in 0..d {
                let mut dr = spec.b[i];
                let mut s = spec.b0[i];
                for j in 0..d {
                    dr += beta[i + j * d] * x[j];
                    s += bx[j + i * d] * x[j];
                }
                drift[i] = dr;
                vol[i] = spec.sigma[i] * s.max(0.0).sqrt();
            }
            for i in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                x[i] += drift[i] * h + vol[i] * sh * z;
                if sqrt_root[i] && x[i] < 0.0 {
                    x[i] = 0.0;
                }
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return numerical(format!("latent path exploded at date {date}"));
        }
        if date >= cfg.burnin {
            for i in 0..d {
                out[(date - cfg.burnin, i)] = x[i];
            }
        }
    }
    Ok(out)
}

/// y_t = Φ̃ + Ψ̃X_t + ε_t, ε iid N(0, σ²) across dates and maturities.
pub fn simulate_panel_from(
    spec: &DiffusionSpec,
    loadings: &YieldLoadings,
    sigma2_eps: f64,
    cfg: &SimConfig,
) -> Result<YieldPanel> {
    if !(sigma2_eps >= 0.0) {
        return invalid("noise variance must be nonnegative");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let path = simulate_latent_rng(spec, cfg, &mut rng)?;
    let m = loadings.maturities.len();
    let sd = sigma2_eps.sqrt();
    let mut obs = &path * loadings.psi_tilde.transpose();
    for t in 0..cfg.t {
        for i in 0..m {
            obs[(t, i)] += loadings.phi_tilde[i];
            if sd > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                obs[(t, i)] += sd * z;
            }
        }
    }
    Ok(YieldPanel {
        maturities: loadings.maturities.clone(),
        obs,
        dates: None,
    })
}

pub fn simulate_panel(p: &ParamVector, maturities: &[f64], cfg: &SimConfig) -> Result<YieldPanel> {
    let loadings = riccati::yield_loadings_default(&p.q_spec(), maturities)?;
    simulate_panel_from(&p.p_spec(), &loadings, p.sigma2_eps(), cfg)
}

/// The ten maturities (in years) used by default: 1m, 3m, 6m, 1y, 2y, 3y, 5y,
/// 7y, 10y, 20y.  The month is rounded to four decimals so it survives the CSV
/// header round trip exactly.
pub const DEFAULT_MATURITIES: [f64; 10] = [0.0833, 0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 20.0];

fn tau_header(tau: f64) -> String {
    format!("tau_{tau}")
}

pub fn write_panel_csv(path: &Path, panel: &YieldPanel) -> Result<()> {
    write_panel_csv_annotated(path, panel, None)
}

/// Like [`write_panel_csv`], with an optional leading `# note` line that
/// [`read_panel_csv`] skips.
pub fn write_panel_csv_annotated(path: &Path, panel: &YieldPanel, note: Option<&str>) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    if let Some(n) = note {
        use std::io::Write;
        writeln!(file, "# {n}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["date".to_string()];
    header.extend(panel.maturities.iter().map(|&t| tau_header(t)));
    w.write_record(&header).map_err(csv_err)?;
    for t in 0..panel.t() {
        let mut rec = vec![match &panel.dates {
            Some(d) => d[t].clone(),
            None => (t + 1).to_string(),
        }];
        rec.extend(panel.obs.row(t).iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `date,tau_…` panel; rows with a missing or non-numeric cell are
/// dropped and counted.
pub fn read_panel_csv(path: &Path) -> Result<(YieldPanel, usize)> {
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.len() < 2 {
        return Err(Error::Data("panel needs a date column and at least one maturity".into()));
    }
    let maturities = header
        .iter()
        .skip(1)
        .map(|h| {
            let h = h.trim();
            h.strip_prefix("tau_")
                .unwrap_or(h)
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("cannot read maturity from column '{h}'")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if maturities.windows(2).any(|w| w[1] <= w[0]) || maturities.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::Data("maturity columns must be positive and ascending".into()));
    }
    let m = maturities.len();
    let mut dates = Vec::new();
    let mut vals = Vec::new();
    let mut dropped = 0;
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let row: Option<Vec<f64>> = if rec.len() == m + 1 {
            rec.iter()
                .skip(1)
                .map(|c| c.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect()
        } else {
            None
        };
        match row {
            Some(row) => {
                dates.push(rec[0].to_string());
                vals.extend(row);
            }
            None => dropped += 1,
        }
    }
    let t = dates.len();
    if t == 0 {
        return Err(Error::Data("panel has no complete rows".into()));
    }
    Ok((
        YieldPanel {
            maturities,
            obs: DMatrix::from_row_slice(t, m, &vals),
            dates: Some(dates),
        },
        dropped,
    ))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(e.to_string())
}

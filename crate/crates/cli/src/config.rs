//! Run configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use atsm_gmm::gmm::{default_selector, MomentSelector};
use atsm_gmm::model::{ParamVector, Theta0Bounds};
use atsm_gmm::qbayes::{RjRatio, SamplerConfig};
use atsm_gmm::riccati::{Scheme, DEFAULT_GRID};
use atsm_gmm::simulate::{SimConfig, DEFAULT_MATURITIES};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Unit of the yields in data files.  The model works in percent (a 3.5%
/// short rate is 3.5), so decimal panels are scaled by 100 on the way in
/// and on the way out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Percent,
    Decimal,
}

impl Units {
    pub fn to_model(self) -> f64 {
        match self {
            Units::Percent => 1.0,
            Units::Decimal => 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub n_starts: Option<usize>,
    pub n_draws: Option<usize>,
    pub burnin: Option<usize>,
    pub c_theta: Option<f64>,
    pub rw_scale: Option<f64>,
    pub big_move_prob: Option<f64>,
    pub big_scale: Option<f64>,
    pub scale_floor: Option<f64>,
    pub hastings_correction: Option<bool>,
    pub rj_prob: Option<f64>,
    pub p_s1: Option<f64>,
    pub tie_prob: Option<f64>,
    pub sigma_u: Option<f64>,
    pub sigma_ugamma: Option<f64>,
    pub rj_update_gamma0: Option<bool>,
    /// "balanced" or "printed"
    pub rj_ratio: Option<String>,
    pub max_start_rejections: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub t: Option<usize>,
    pub substeps: Option<usize>,
    pub burnin: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub replications: Option<usize>,
    /// Significance levels at which rejection rates are reported.
    pub alphas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    /// Width c of the mean-rate band [ȳ/c, c·ȳ].
    pub mean_band: Option<f64>,
    pub sigma2_eps: Option<(f64, f64)>,
}

/// The TOML file as written by the user.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub units: Units,
    #[serde(default)]
    pub model: Option<String>,
    /// "table1", "table2" or a `name=value` parameter file.
    #[serde(default)]
    pub params: Option<String>,
    #[serde(default)]
    pub maturities: Option<Vec<f64>>,
    /// "default27" or a selector file (one label per line).
    #[serde(default)]
    pub selector: Option<String>,
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub preset: Option<Preset>,
    #[serde(default)]
    pub grid_steps: Option<usize>,
    /// "accurate" or "right_riemann"
    #[serde(default)]
    pub scheme: Option<String>,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub bounds: BoundsSection,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub preset: Option<Preset>,
    pub selector: Option<String>,
}

/// Fully resolved configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub units: Units,
    pub params: ParamVector,
    pub maturities: Vec<f64>,
    /// Whether the maturities were set in the file rather than defaulted.
    pub maturities_explicit: bool,
    pub selector: MomentSelector,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub sim: SimConfig,
    pub bounds: Theta0Bounds,
    pub grid_steps: usize,
    pub scheme: Scheme,
    pub replications: usize,
    pub alphas: Vec<f64>,
    /// sha256 of the config text and the overrides, hex encoded.
    pub hash: String,
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn load(path: &Path, ov: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_text(&text, base, ov)
    }

    pub fn from_text(text: &str, base: &Path, ov: &Overrides) -> Result<Self, CliError> {
        let file: FileConfig = toml::from_str(text).map_err(|e| cfg_err(format!("config: {e}")))?;
        if let Some(m) = &file.model {
            if m != "A1(3)" {
                return Err(cfg_err(format!("unsupported model '{m}'; only A1(3) is available")));
            }
        }
        let params = match file.params.as_deref().unwrap_or("table1") {
            "table1" => ParamVector::table1(),
            "table2" => ParamVector::table2(),
            p => {
                let path = resolve(base, Path::new(p));
                let kv = std::fs::read_to_string(&path)
                    .map_err(|e| cfg_err(format!("cannot read parameter file {}: {e}", path.display())))?;
                ParamVector::from_kv(&kv).map_err(|e| cfg_err(e.to_string()))?
            }
        };
        let maturities = file.maturities.clone().unwrap_or_else(|| DEFAULT_MATURITIES.to_vec());
        let sel_name = ov.selector.clone().or(file.selector.clone()).unwrap_or_else(|| "default27".into());
        let selector = if sel_name == "default27" {
            default_selector(maturities.len()).map_err(|e| cfg_err(e.to_string()))?
        } else {
            let path = resolve(base, Path::new(&sel_name));
            let t = std::fs::read_to_string(&path)
                .map_err(|e| cfg_err(format!("cannot read selector {}: {e}", path.display())))?;
            MomentSelector::parse(&t).map_err(|e| cfg_err(e.to_string()))?
        };
        if let Some(l) = selector.labels.iter().find(|l| l.max_index() > maturities.len()) {
            return Err(cfg_err(format!("selector label {l} exceeds the {} maturities", maturities.len())));
        }
        let seed = ov.seed.or(file.seed).unwrap_or(1);
        let preset = ov.preset.or(file.preset).unwrap_or(Preset::Desk);
        let mut sampler = match preset {
            Preset::Desk => SamplerConfig::desk(),
            Preset::Paper => SamplerConfig::paper(),
        };
        apply_sampler(&mut sampler, &file.sampler)?;
        sampler.seed = seed;
        sampler.validate().map_err(|e| cfg_err(e.to_string()))?;
        let mut sim = SimConfig {
            seed,
            ..SimConfig::default()
        };
        if let Some(t) = file.simulate.t {
            sim.t = t;
        }
        if let Some(s) = file.simulate.substeps {
            sim.substeps = s;
        }
        if let Some(b) = file.simulate.burnin {
            sim.burnin = b;
        }
        let mut bounds = Theta0Bounds::default();
        if let Some(c) = file.bounds.mean_band {
            bounds.c = c;
        }
        if let Some(s) = file.bounds.sigma2_eps {
            bounds.sigma2_eps = s;
        }
        let scheme = match file.scheme.as_deref().unwrap_or("accurate") {
            "accurate" => Scheme::Accurate,
            "right_riemann" => Scheme::RightRiemann,
            s => return Err(cfg_err(format!("unknown scheme '{s}'"))),
        };
        let out = ov
            .out
            .clone()
            .or_else(|| file.out.as_ref().map(|o| resolve(base, o)))
            .unwrap_or_else(|| PathBuf::from("out"));
        let alphas = file.sweep.alphas.clone().unwrap_or_else(|| vec![0.01, 0.05, 0.10]);
        if alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(cfg_err("sweep alphas must lie in (0, 1)"));
        }
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        h.update(format!("\nseed={seed}\npreset={preset:?}\nselector={sel_name}\n").as_bytes());
        Ok(Self {
            units: file.units,
            params,
            maturities,
            maturities_explicit: file.maturities.is_some(),
            selector,
            data: file.data.as_ref().map(|d| resolve(base, d)),
            out,
            seed,
            sampler,
            sim,
            bounds,
            grid_steps: file.grid_steps.unwrap_or(DEFAULT_GRID),
            scheme,
            replications: file.sweep.replications.unwrap_or(50),
            alphas,
            hash: hex::encode(h.finalize()),
        })
    }

    /// One-line provenance stamp embedded in every output file.
    pub fn provenance(&self) -> String {
        format!("config_sha256={} seed={}", self.hash, self.seed)
    }
}

fn apply_sampler(c: &mut SamplerConfig, s: &SamplerSection) -> Result<(), CliError> {
    macro_rules! set {
        ($($f:ident),*) => {$( if let Some(v) = s.$f { c.$f = v; } )*};
    }
    set!(
        n_starts,
        n_draws,
        burnin,
        c_theta,
        rw_scale,
        big_move_prob,
        big_scale,
        scale_floor,
        hastings_correction,
        rj_prob,
        p_s1,
        tie_prob,
        sigma_u,
        sigma_ugamma,
        rj_update_gamma0,
        max_start_rejections
    );
    if let Some(r) = &s.rj_ratio {
        c.rj_ratio = match r.as_str() {
            "balanced" => RjRatio::Balanced,
            "printed" => RjRatio::Printed,
            _ => return Err(cfg_err(format!("unknown rj_ratio '{r}' (balanced or printed)"))),
        };
    }
    Ok(())
}

//! Estimation report: a plain-text table and a JSON document with the same
//! content.

use std::fmt::Write as _;

use atsm_gmm::gmm::WaldResult;
use atsm_gmm::qbayes::{ChainTrace, Counts, Estimate, MultistartResult};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub name: String,
    pub estimate: f64,
    pub sd: f64,
    pub mcse: f64,
    pub start: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldRow {
    pub restriction: String,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

impl WaldRow {
    pub fn new(restriction: &str, w: &WaldResult) -> Self {
        Self {
            restriction: restriction.to_string(),
            statistic: w.statistic,
            df: w.df,
            p_value: w.p_value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub sample_size: usize,
    pub dropped_rows: usize,
    pub n_draws: usize,
    pub burnin: usize,
    pub starts_evaluated: usize,
    pub starts_finite: usize,
    pub start_q: f64,
    pub best_q: f64,
    pub block_acceptance: Vec<f64>,
    pub split_acceptance: f64,
    pub merge_acceptance: f64,
    pub s1_occupancy: f64,
    pub weight_ridges: usize,
    pub weight_refresh_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultReport {
    pub provenance: Provenance,
    pub params: Vec<ParamRow>,
    /// Wald tests that could not be computed carry the reason instead.
    pub wald: Vec<WaldRow>,
    pub wald_failures: Vec<String>,
    pub diagnostics: Diagnostics,
}

fn rate(c: &Counts) -> f64 {
    if c.tried == 0 {
        0.0
    } else {
        c.accepted as f64 / c.tried as f64
    }
}

pub struct ReportInputs<'a> {
    pub provenance: Provenance,
    pub estimate: &'a Estimate,
    pub trace: &'a ChainTrace,
    pub multistart: &'a MultistartResult,
    pub sample_size: usize,
    pub dropped_rows: usize,
    pub weight_ridges: usize,
    pub weight_refresh_failures: usize,
    pub wald: Vec<(String, Result<WaldResult, String>)>,
}

impl ResultReport {
    pub fn build(inp: ReportInputs<'_>) -> Self {
        let est = inp.estimate;
        let params = est
            .theta_hat
            .names()
            .iter()
            .enumerate()
            .map(|(j, n)| ParamRow {
                name: n.to_string(),
                estimate: est.theta_hat.v[j],
                sd: est.sd[j],
                mcse: est.mcse[j],
                start: inp.multistart.best.v[j],
            })
            .collect();
        let mut wald = Vec::new();
        let mut wald_failures = Vec::new();
        for (name, w) in inp.wald {
            match w {
                Ok(w) => wald.push(WaldRow::new(&name, &w)),
                Err(e) => wald_failures.push(format!("{name}: {e}")),
            }
        }
        let t = inp.trace;
        let best_q = t.q.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            provenance: inp.provenance,
            params,
            wald,
            wald_failures,
            diagnostics: Diagnostics {
                sample_size: inp.sample_size,
                dropped_rows: inp.dropped_rows,
                n_draws: t.len(),
                burnin: t.burnin,
                starts_evaluated: inp.multistart.evaluated,
                starts_finite: inp.multistart.finite,
                start_q: inp.multistart.best_q,
                best_q,
                block_acceptance: t.block_counts.iter().map(rate).collect(),
                split_acceptance: rate(&t.split),
                merge_acceptance: rate(&t.merge),
                s1_occupancy: t.s1_occupancy(),
                weight_ridges: inp.weight_ridges,
                weight_refresh_failures: inp.weight_refresh_failures,
            },
        }
    }

    pub fn wald_for(&self, restriction: &str) -> Option<&WaldRow> {
        self.wald.iter().find(|w| w.restriction == restriction)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = &self.provenance;
        let _ = writeln!(s, "# config_sha256={} seed={}", p.config_sha256, p.seed);
        let _ = writeln!(s, "{:<10} {:>14} {:>12} {:>12} {:>14}", "parameter", "estimate", "sd", "mcse", "start");
        for r in &self.params {
            let _ = writeln!(
                s,
                "{:<10} {:>14.6} {:>12.6} {:>12.6} {:>14.6}",
                r.name, r.estimate, r.sd, r.mcse, r.start
            );
        }
        let _ = writeln!(s, "\nWald tests");
        for w in &self.wald {
            let _ = writeln!(
                s,
                "  {:<6} W = {:>12.4}  df = {}  p = {:.4}",
                w.restriction, w.statistic, w.df, w.p_value
            );
        }
        for f in &self.wald_failures {
            let _ = writeln!(s, "  failed: {f}");
        }
        let d = &self.diagnostics;
        let _ = writeln!(s, "\nDiagnostics");
        let _ = writeln!(s, "  sample size T        {} ({} rows dropped)", d.sample_size, d.dropped_rows);
        let _ = writeln!(s, "  draws / burn-in      {} / {}", d.n_draws, d.burnin);
        let _ = writeln!(s, "  starts (finite)      {} ({})", d.starts_evaluated, d.starts_finite);
        let _ = writeln!(s, "  Q_T start / best     {:.6e} / {:.6e}", d.start_q, d.best_q);
        let acc: Vec<String> = d.block_acceptance.iter().map(|a| format!("{a:.3}")).collect();
        let _ = writeln!(s, "  block acceptance     {}", acc.join(" "));
        let _ = writeln!(
            s,
            "  split / merge        {:.3} / {:.3}",
            d.split_acceptance, d.merge_acceptance
        );
        let _ = writeln!(s, "  s1 occupancy         {:.4}", d.s1_occupancy);
        let _ = writeln!(
            s,
            "  weight ridges        {} (refresh failures {})",
            d.weight_ridges, d.weight_refresh_failures
        );
        s
    }
}

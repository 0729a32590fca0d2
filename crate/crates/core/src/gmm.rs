//! Sample moments, moment selection, the CUE-GMM distance and classical
//! covariance / Wald machinery.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, numerical, Error, Result};
use crate::linalg;
use crate::model::ParamVector;
use crate::riccati::{Scheme, TimeGrid, DEFAULT_GRID};
use crate::simulate::YieldPanel;
use crate::yieldmoments::{MomentEngine, MomentLabel};

/// The q catalogue entries used as moment conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSelector {
    pub labels: Vec<MomentLabel>,
}

impl MomentSelector {
    pub fn new(labels: Vec<MomentLabel>) -> Result<Self> {
        if labels.is_empty() {
            return invalid("selector is empty");
        }
        let mut seen = std::collections::HashSet::new();
        for l in &labels {
            if !seen.insert(l.canonical()) {
                return invalid(format!("duplicate moment label '{l}'"));
            }
        }
        Ok(Self { labels })
    }

    /// Selector plus the order condition q ≥ 𝔭.
    pub fn with_order_condition(labels: Vec<MomentLabel>, n_params: usize) -> Result<Self> {
        let s = Self::new(labels)?;
        if s.q() < n_params {
            return invalid(format!("{} moment conditions for {} parameters violates q >= p", s.q(), n_params));
        }
        Ok(s)
    }

    pub fn q(&self) -> usize {
        self.labels.len()
    }

    /// One label per line; blank lines and `#` comments ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let labels = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::parse)
            .collect::<Result<Vec<MomentLabel>>>()?;
        Self::new(labels)
    }

    pub fn to_text(&self) -> String {
        self.labels.iter().map(|l| format!("{l}\n")).collect()
    }

    /// The selector matrix 𝓜 (q × catalogue size) against a catalogue order.
    pub fn matrix(&self, catalogue: &[MomentLabel]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(self.q(), catalogue.len());
        for (r, l) in self.labels.iter().enumerate() {
            let c = catalogue
                .iter()
                .position(|x| x.canonical() == l.canonical())
                .ok_or_else(|| Error::InvalidArgument(format!("label {l} not in catalogue")))?;
            m[(r, c)] = 1.0;
        }
        Ok(m)
    }
}

/// The 27 default conditions for ten maturities: E y_i and E y_{t,i}y_{t−1,i}
/// for every i, plus seven contemporaneous second moments.
pub fn default_selector(m: usize) -> Result<MomentSelector> {
    if m != 10 {
        return invalid(format!("the default selector needs 10 maturities, got {m}; supply a selector"));
    }
    let mut labels: Vec<MomentLabel> = (1..=10).map(MomentLabel::Ey).collect();
    labels.extend((1..=10).map(MomentLabel::Eylag));
    for (i, j) in [(1, 1), (2, 2), (3, 2), (5, 5), (7, 7), (9, 10), (10, 10)] {
        labels.push(MomentLabel::Eyy(i, j));
    }
    MomentSelector::new(labels)
}

/// Data side of the GMM problem; immutable once built.
#[derive(Debug, Clone)]
pub struct GmmContext {
    pub panel: YieldPanel,
    pub selector: MomentSelector,
    /// Per-date moment rows m_(t) for t = 2..T, as a (T−1)×q matrix.
    pub rows: DMatrix<f64>,
    /// m_T: contemporaneous terms averaged over t = 1..T, lag terms over t = 2..T.
    pub m_t: DVector<f64>,
    /// Sample mean of the shortest maturity.
    pub short_mean: f64,
    pub grid: TimeGrid,
    pub scheme: Scheme,
}

impl GmmContext {
    pub fn t(&self) -> usize {
        self.panel.t()
    }

    pub fn q(&self) -> usize {
        self.selector.q()
    }

    /// Theoretical moments of the selected conditions.
    pub fn model_moments(&self, theta: &ParamVector) -> Result<DVector<f64>> {
        let engine = MomentEngine::for_labels(
            theta,
            &self.panel.maturities,
            &self.grid,
            self.scheme,
            &self.selector.labels,
        )?;
        let mu = engine.values(&self.selector.labels)?;
        if mu.iter().any(|v| !v.is_finite()) {
            return numerical("non-finite model moments");
        }
        Ok(mu)
    }

    /// h_T(ϑ) = m_T − μ(ϑ).
    pub fn h(&self, theta: &ParamVector) -> Result<DVector<f64>> {
        Ok(&self.m_t - self.model_moments(theta)?)
    }
}

pub fn sample_moments(panel: &YieldPanel, selector: &MomentSelector) -> Result<GmmContext> {
    sample_moments_with(panel, selector, DEFAULT_GRID, Scheme::Accurate)
}

pub fn sample_moments_with(
    panel: &YieldPanel,
    selector: &MomentSelector,
    grid_steps: usize,
    scheme: Scheme,
) -> Result<GmmContext> {
    let t = panel.t();
    if t < 2 {
        return invalid("need at least two dates");
    }
    if panel.obs.iter().any(|v| !v.is_finite()) {
        return invalid("panel has missing or non-finite entries");
    }
    let m = panel.m();
    if let Some(l) = selector.labels.iter().find(|l| l.max_index() > m) {
        return invalid(format!("label {l} needs more than {m} maturities"));
    }
    let q = selector.q();
    let mut rows = DMatrix::zeros(t - 1, q);
    let mut m_t = DVector::zeros(q);
    let first = panel.row(0);
    for (k, l) in selector.labels.iter().enumerate() {
        if !l.is_lag() {
            m_t[k] += l.sample_term(&first, None).unwrap();
        }
    }
    let mut prev = first;
    for date in 1..t {
        let cur = panel.row(date);
        for (k, l) in selector.labels.iter().enumerate() {
            let v = l.sample_term(&cur, Some(&prev)).unwrap();
            rows[(date - 1, k)] = v;
            m_t[k] += v;
        }
        prev = cur;
    }
    for (k, l) in selector.labels.iter().enumerate() {
        m_t[k] /= if l.is_lag() { (t - 1) as f64 } else { t as f64 };
    }
    let short_mean = panel.obs.column(0).mean();
    let grid = TimeGrid::new(&panel.maturities, grid_steps)?;
    Ok(GmmContext {
        panel: panel.clone(),
        selector: selector.clone(),
        rows,
        m_t,
        short_mean,
        grid,
        scheme,
    })
}

/// A validated symmetric positive semidefinite weight matrix.
#[derive(Debug, Clone)]
pub struct Weight {
    pub c: DMatrix<f64>,
}

impl Weight {
    pub fn new(c: DMatrix<f64>) -> Result<Self> {
        if !c.is_square() {
            return invalid("weight matrix must be square");
        }
        let scale = c.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        if (&c - c.transpose()).iter().any(|v| v.abs() > 1e-9 * scale) {
            return invalid("weight matrix is not symmetric");
        }
        let eig = c.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale) {
            return invalid("weight matrix is not positive semidefinite");
        }
        Ok(Self { c })
    }

    pub fn identity(q: usize) -> Self {
        Self {
            c: DMatrix::identity(q, q),
        }
    }
}

pub fn quadratic_form(h: &DVector<f64>, w: &Weight) -> f64 {
    (h.transpose() * &w.c * h)[(0, 0)]
}

/// Q_T(ϑ) = h_T'C h_T; +∞ when the model moments cannot be computed.
pub fn distance(theta: &ParamVector, ctx: &GmmContext, w: &Weight) -> Result<f64> {
    if w.c.nrows() != ctx.q() {
        return invalid("weight dimension does not match the selector");
    }
    Ok(match ctx.h(theta) {
        Ok(h) => quadratic_form(&h, w),
        Err(_) => f64::INFINITY,
    })
}

#[derive(Debug, Clone)]
pub struct CueWeight {
    pub weight: Weight,
    pub lambda: DMatrix<f64>,
    /// True when the ridge had to be added.
    pub ridged: bool,
}

/// Λ̂ = (1/(T−1)) Σ_{t≥2} h_(t)h_(t)' with h_(t) = m_(t) − μ.
pub fn lambda_hat(rows: &DMatrix<f64>, mu: &DVector<f64>) -> DMatrix<f64> {
    let n = rows.nrows();
    let mut centred = rows.clone();
    for mut r in centred.row_iter_mut() {
        r -= mu.transpose();
    }
    centred.tr_mul(&centred) / n as f64
}

/// Inverse of Λ̂, with a 1e−10·trace/q ridge when its reciprocal condition
/// number drops below 1e−14.
pub fn invert_lambda(lambda: DMatrix<f64>) -> Result<CueWeight> {
    let q = lambda.nrows();
    let mut ridged = false;
    let mut lam = lambda.clone();
    if linalg::rcond(&lam) < 1e-14 {
        let ridge = 1e-10 * lam.trace() / q as f64;
        for i in 0..q {
            lam[(i, i)] += ridge;
        }
        ridged = true;
    }
    let inv = match lam.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => return numerical("moment covariance is singular even after ridging"),
    };
    if inv.iter().any(|v| !v.is_finite()) {
        return numerical("moment covariance inverse is not finite");
    }
    let inv = (&inv + inv.transpose()) * 0.5;
    Ok(CueWeight {
        weight: Weight { c: inv },
        lambda: lam,
        ridged,
    })
}

pub fn cue_weight(theta: &ParamVector, ctx: &GmmContext) -> Result<CueWeight> {
    let mu = ctx.model_moments(theta)?;
    invert_lambda(lambda_hat(&ctx.rows, &mu))
}

/// Central finite-difference Jacobian of h_T (q × 𝔭).
pub fn jacobian(theta: &ParamVector, ctx: &GmmContext) -> Result<DMatrix<f64>> {
    fd_jacobian(theta, |p| ctx.h(p), true)
}

/// FD Jacobian of `f` with relative step 1e−5 and absolute floor 1e−7.
pub fn fd_jacobian<F>(theta: &ParamVector, f: F, central: bool) -> Result<DMatrix<f64>>
where
    F: Fn(&ParamVector) -> Result<DVector<f64>>,
{
    let base = f(theta)?;
    let q = base.len();
    let p = theta.len();
    let mut jac = DMatrix::zeros(q, p);
    for j in 0..p {
        let h = (1e-5 * theta.v[j].abs()).max(1e-7);
        let mut up = theta.clone();
        up.v[j] += h;
        let fu = f(&up)?;
        let col = if central {
            let mut dn = theta.clone();
            dn.v[j] -= h;
            (fu - f(&dn)?) / (2.0 * h)
        } else {
            (fu - &base) / h
        };
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// V̂ = (Ĥ'Λ̂⁻¹Ĥ)⁻¹.
pub fn standard_covariance_from(jac: &DMatrix<f64>, lambda: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let lam_inv = lambda
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("moment covariance is singular".into()))?;
    let info = jac.transpose() * lam_inv * jac;
    if linalg::rcond(&info) < 1e-14 {
        return numerical("H'Λ⁻¹H is singular; parameters not locally identified by the selected moments");
    }
    let v = info.try_inverse().unwrap();
    Ok((&v + v.transpose()) * 0.5)
}

pub fn standard_covariance(theta_hat: &ParamVector, ctx: &GmmContext) -> Result<DMatrix<f64>> {
    let jac = jacobian(theta_hat, ctx)?;
    let cw = cue_weight(theta_hat, ctx)?;
    standard_covariance_from(&jac, &cw.lambda)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaldResult {
    pub statistic: f64,
    pub p_value: f64,
    pub df: usize,
}

/// W = T r'(R V R')⁻¹ r, χ²(rank) p-value.
pub fn wald(r: &DVector<f64>, rmat: &DMatrix<f64>, v: &DMatrix<f64>, t: f64) -> Result<WaldResult> {
    let k = r.len();
    if rmat.nrows() != k || rmat.ncols() != v.nrows() || !v.is_square() {
        return invalid("Wald dimensions disagree");
    }
    if r.iter().all(|&x| x == 0.0) {
        return Ok(WaldResult {
            statistic: 0.0,
            p_value: 1.0,
            df: k,
        });
    }
    let middle = rmat * v * rmat.transpose();
    if linalg::rcond(&middle) < 1e-14 {
        return numerical("R V R' is rank deficient");
    }
    let inv = middle.try_inverse().unwrap();
    let w = t * (r.transpose() * inv * r)[(0, 0)];
    let chi = ChiSquared::new(k as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(WaldResult {
        statistic: w,
        p_value: (1.0 - chi.cdf(w)).clamp(0.0, 1.0),
        df: k,
    })
}

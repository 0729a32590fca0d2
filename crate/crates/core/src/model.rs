//! The A1(3) parameter vector, its mapping to P/Q diffusion specs, and the
//! admissibility / stationarity / prior-support checks.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::polyproc::DiffusionSpec;
use crate::riccati::QSpec;

pub const THETA_Q: usize = 0;
pub const THETA_P: usize = 1;
pub const BETA_Q: usize = 2;
pub const BETA_P: usize = 9;
pub const BX12: usize = 16;
pub const BX13: usize = 17;
pub const GAMMA0: usize = 18;
pub const SIGMA: usize = 19;
pub const SIGMA2_EPS: usize = 22;
pub const SIGMA4_EPS: usize = 23;

/// Number of parameters without / with the noise fourth moment.
pub const P_BASE: usize = 23;

/// Positions of (β11, β21, β31, β22, β32, β23, β33) inside the 3×3 drift slope.
pub const BETA_SLOTS: [(usize, usize); 7] = [(0, 0), (1, 0), (2, 0), (1, 1), (2, 1), (1, 2), (2, 2)];

pub const NAMES: [&str; 24] = [
    "thetaQ", "thetaP", "betaQ11", "betaQ21", "betaQ31", "betaQ22", "betaQ32", "betaQ23",
    "betaQ33", "betaP11", "betaP21", "betaP31", "betaP22", "betaP32", "betaP23", "betaP33",
    "Bx12", "Bx13", "gamma0", "Sigma1", "Sigma2", "Sigma3", "sigma2eps", "sigma4eps",
];

/// Parameter vector in the frozen order
/// θQ, θP, βQ(7), βP(7), Bx12, Bx13, γ0, Σ1..Σ3, σ²ε [, σ̃⁴ε].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub v: Vec<f64>,
}

impl ParamVector {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.len() != P_BASE && v.len() != P_BASE + 1 {
            return invalid(format!("parameter vector needs 23 or 24 entries, got {}", v.len()));
        }
        Ok(Self { v })
    }

    /// The data-generating vector used in the paper's first simulation design.
    pub fn table1() -> Self {
        Self {
            v: vec![
                10.0, 1.5, //
                -1.0, 0.2, 0.02, -1.0, 0.04, 0.0, -0.8, //
                -1.0, 0.02, 0.01, -0.7, 0.01, 0.0, -0.7, //
                0.1, 0.01, 2.0, 0.7, 1.0, 0.8, 0.0067,
            ],
        }
    }

    /// Same as [`Self::table1`] with θQ = θP = 1.5 (the null design).
    pub fn table2() -> Self {
        let mut p = Self::table1();
        p.v[THETA_Q] = 1.5;
        p
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn names(&self) -> &'static [&'static str] {
        &NAMES[..self.v.len()]
    }

    pub fn has_sigma4(&self) -> bool {
        self.v.len() == P_BASE + 1
    }

    pub fn theta_q(&self) -> f64 {
        self.v[THETA_Q]
    }

    pub fn theta_p(&self) -> f64 {
        self.v[THETA_P]
    }

    pub fn gamma0(&self) -> f64 {
        self.v[GAMMA0]
    }

    pub fn sigma2_eps(&self) -> f64 {
        self.v[SIGMA2_EPS]
    }

    pub fn sigma4_eps(&self) -> Option<f64> {
        self.v.get(SIGMA4_EPS).copied()
    }

    pub fn sigma(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.v[SIGMA..SIGMA + 3])
    }

    fn beta_at(&self, start: usize) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(3, 3);
        for (k, &(r, c)) in BETA_SLOTS.iter().enumerate() {
            b[(r, c)] = self.v[start + k];
        }
        b
    }

    pub fn beta_q(&self) -> DMatrix<f64> {
        self.beta_at(BETA_Q)
    }

    pub fn beta_p(&self) -> DMatrix<f64> {
        self.beta_at(BETA_P)
    }

    pub fn b0(&self) -> DVector<f64> {
        DVector::from_column_slice(&[0.0, 1.0, 1.0])
    }

    pub fn bx(&self) -> DMatrix<f64> {
        let mut bx = DMatrix::zeros(3, 3);
        bx[(0, 0)] = 1.0;
        bx[(0, 1)] = self.v[BX12];
        bx[(0, 2)] = self.v[BX13];
        bx
    }

    pub fn b_p(&self) -> DVector<f64> {
        b_from_theta(&self.beta_p(), &theta3(self.theta_p()))
    }

    pub fn b_q(&self) -> DVector<f64> {
        b_from_theta(&self.beta_q(), &theta3(self.theta_q()))
    }

    pub fn p_spec(&self) -> DiffusionSpec {
        DiffusionSpec {
            b: self.b_p(),
            beta: self.beta_p(),
            sigma: self.sigma(),
            b0: self.b0(),
            bx: self.bx(),
        }
    }

    pub fn q_spec(&self) -> QSpec {
        QSpec {
            m: 1,
            b: self.b_q(),
            beta: self.beta_q(),
            sigma: self.sigma(),
            b0: self.b0(),
            bx: self.bx(),
            gamma0: self.gamma0(),
            gammax: DVector::from_element(3, 1.0),
        }
    }

    /// Flat `name=value` text, one parameter per line.
    pub fn to_kv(&self) -> String {
        self.names()
            .iter()
            .zip(&self.v)
            .map(|(n, v)| format!("{n}={v}\n"))
            .collect()
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut vals: Vec<Option<f64>> = vec![None; NAMES.len()];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("line {}: expected name=value", lineno + 1)))?;
            let idx = NAMES
                .iter()
                .position(|n| *n == k.trim())
                .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter '{}'", k.trim())))?;
            let x: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad value for {}: '{}'", k.trim(), v.trim())))?;
            if vals[idx].replace(x).is_some() {
                return invalid(format!("parameter {} given twice", NAMES[idx]));
            }
        }
        let mut v = Vec::with_capacity(24);
        for (i, x) in vals.iter().take(P_BASE).enumerate() {
            v.push(x.ok_or_else(|| Error::InvalidArgument(format!("missing parameter {}", NAMES[i])))?);
        }
        if let Some(s4) = vals[SIGMA4_EPS] {
            v.push(s4);
        }
        Self::new(v)
    }
}

fn theta3(theta: f64) -> DVector<f64> {
    DVector::from_column_slice(&[theta, 0.0, 0.0])
}

/// b = −β θ.
pub fn b_from_theta(beta: &DMatrix<f64>, theta: &DVector<f64>) -> DVector<f64> {
    -(beta * theta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub pass: bool,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintReport {
    pub items: Vec<Constraint>,
}

impl ConstraintReport {
    fn check(&mut self, name: impl Into<String>, pass: bool, value: f64) {
        self.items.push(Constraint {
            name: name.into(),
            pass,
            value,
        });
    }

    pub fn passed(&self) -> bool {
        self.items.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&Constraint> {
        self.items.iter().filter(|c| !c.pass).collect()
    }

    fn extend(&mut self, other: ConstraintReport) {
        self.items.extend(other.items);
    }
}

impl fmt::Display for ConstraintReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.items {
            writeln!(f, "{:<40} {:<4} {}", c.name, if c.pass { "ok" } else { "FAIL" }, c.value)?;
        }
        Ok(())
    }
}

pub fn check_admissibility(p: &ParamVector) -> ConstraintReport {
    let mut r = ConstraintReport::default();
    let finite = p.v.iter().all(|x| x.is_finite());
    r.check("finite parameters", finite, if finite { 0.0 } else { f64::NAN });
    for (label, theta, beta) in [("Q", p.theta_q(), p.beta_q()), ("P", p.theta_p(), p.beta_p())] {
        r.check(format!("theta{label} >= 0"), theta >= 0.0, theta);
        r.check(format!("beta{label}11 < 0 (beta_II diagonal negative)"), beta[(0, 0)] < 0.0, beta[(0, 0)]);
        r.check(format!("beta{label}21 >= 0"), beta[(1, 0)] >= 0.0, beta[(1, 0)]);
        r.check(format!("beta{label}31 >= 0"), beta[(2, 0)] >= 0.0, beta[(2, 0)]);
        let bt = beta[(0, 0)] * theta;
        r.check(format!("beta{label}_II theta_I < 0"), bt < 0.0, bt);
    }
    r.check("Bx12 >= 0", p.v[BX12] >= 0.0, p.v[BX12]);
    r.check("Bx13 >= 0", p.v[BX13] >= 0.0, p.v[BX13]);
    for i in 0..3 {
        let s = p.v[SIGMA + i];
        r.check(format!("Sigma{} > 0", i + 1), s > 0.0, s);
    }
    r.check("sigma2eps > 0", p.sigma2_eps() > 0.0, p.sigma2_eps());
    if let Some(s4) = p.sigma4_eps() {
        let s2 = p.sigma2_eps();
        r.check("sigma4eps >= sigma2eps^2", s4 >= s2 * s2, s4);
    }
    r
}

/// Feller / boundary-non-attainment: b_1 ≥ ½Σ_1² under both measures.
/// Advisory only.
pub fn check_feller(p: &ParamVector) -> ConstraintReport {
    let mut r = ConstraintReport::default();
    let half = 0.5 * p.v[SIGMA].powi(2);
    for (label, b) in [("Q", p.b_q()), ("P", p.b_p())] {
        r.check(format!("b{label}_1 >= Sigma1^2/2"), b[0] >= half, b[0] - half);
    }
    r
}

/// Feller check for a generic intercept / scale list of the square-root block.
pub fn feller_holds(b_i: &[f64], sigma_i: &[f64]) -> bool {
    b_i.iter().zip(sigma_i).all(|(b, s)| *b >= 0.5 * s * s)
}

pub const STATIONARITY_TOL: f64 = -1e-10;

pub fn check_stationarity(p: &ParamVector) -> Result<ConstraintReport> {
    let mut r = ConstraintReport::default();
    for (label, beta) in [("P", p.beta_p()), ("Q", p.beta_q())] {
        let max_re = max_real_eigenvalue(&beta)?;
        r.check(format!("max Re eig(beta{label}) < 0"), max_re < STATIONARITY_TOL, max_re);
    }
    Ok(r)
}

pub fn max_real_eigenvalue(beta: &DMatrix<f64>) -> Result<f64> {
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite drift matrix".into()));
    }
    let eig = beta.complex_eigenvalues();
    let m = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    if m.is_nan() {
        return Err(Error::Numerical("eigenvalue solver failed".into()));
    }
    Ok(m)
}

/// Support bounds of the flat prior.
#[derive(Debug, Clone, Copy)]
pub struct Theta0Bounds {
    pub sigma: (f64, f64),
    pub bx: (f64, f64),
    pub sigma2_eps: (f64, f64),
    pub beta_diag: (f64, f64),
    pub beta_off: (f64, f64),
    pub c: f64,
}

impl Default for Theta0Bounds {
    fn default() -> Self {
        Self {
            sigma: (0.1, 2.0),
            bx: (0.0, 2.0),
            sigma2_eps: (0.005, 0.025),
            beta_diag: (-50.0, -0.1),
            beta_off: (-10.0, 10.0),
            c: 1.45,
        }
    }
}

pub fn in_theta0(p: &ParamVector, shortest_yield_mean: f64, c: f64) -> ConstraintReport {
    in_theta0_with(p, shortest_yield_mean, &Theta0Bounds { c, ..Default::default() })
}

pub fn in_theta0_with(p: &ParamVector, mbar: f64, b: &Theta0Bounds) -> ConstraintReport {
    let mut r = check_admissibility(p);
    let within = |x: f64, (lo, hi): (f64, f64)| x >= lo && x <= hi;
    for i in 0..3 {
        let s = p.v[SIGMA + i];
        r.check(format!("Sigma{} in [{}, {}]", i + 1, b.sigma.0, b.sigma.1), within(s, b.sigma), s);
    }
    for (name, idx) in [("Bx12", BX12), ("Bx13", BX13)] {
        r.check(format!("{name} in [{}, {}]", b.bx.0, b.bx.1), within(p.v[idx], b.bx), p.v[idx]);
    }
    r.check(
        format!("sigma2eps in [{}, {}]", b.sigma2_eps.0, b.sigma2_eps.1),
        within(p.sigma2_eps(), b.sigma2_eps),
        p.sigma2_eps(),
    );
    for start in [BETA_Q, BETA_P] {
        for (k, &(row, col)) in BETA_SLOTS.iter().enumerate() {
            let x = p.v[start + k];
            let name = NAMES[start + k];
            if row == col {
                r.check(format!("{name} in diagonal band"), within(x, b.beta_diag), x);
            } else {
                r.check(format!("{name} in off-diagonal band"), within(x, b.beta_off), x);
            }
        }
    }
    let mean_rate = p.gamma0() + p.theta_p();
    let band = mbar > 0.0 && mean_rate >= mbar / b.c && mean_rate <= b.c * mbar;
    r.check("gamma0 + thetaP within mean-rate band", band, mean_rate);
    match check_stationarity(p) {
        Ok(s) => r.extend(s),
        Err(_) => r.check("stationarity eigen-solve", false, f64::NAN),
    }
    r
}

/// Fast boolean version of [`in_theta0_with`] for the sampler hot loop.
pub fn theta0_ok(p: &ParamVector, mbar: f64, b: &Theta0Bounds) -> bool {
    in_theta0_with(p, mbar, b).passed()
}

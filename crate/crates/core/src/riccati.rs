//! Riccati system for zero-coupon bond prices under Q and the implied yield
//! loadings y(τ) = Φ̃(τ) + Ψ̃(τ)'x.
//!
//! P(t, t+τ) = exp(Φ(τ) + Ψ(τ)'x) with
//!   ∂Φ = ½ Σ_k Σ_k² B0_k Ψ_k² + b'Ψ − γ0,
//!   ∂Ψ_i = ½ Σ_k Σ_k² Bx_{ik} Ψ_k² + (β'Ψ)_i − γx_i,   Φ(0) = 0, Ψ(0) = u.
//! For the canonical A_m(d) structure (β_II diagonal, β_IJ = 0) the J block is
//! linear and solved in closed form; each square-root component is a scalar
//! Riccati equation linearised through a 2×2 system.

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::error::{invalid, numerical, Result};
use crate::linalg;

#[derive(Debug, Clone)]
pub struct QSpec {
    /// Number of square-root factors; they come first.
    pub m: usize,
    pub b: DVector<f64>,
    pub beta: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub b0: DVector<f64>,
    pub bx: DMatrix<f64>,
    pub gamma0: f64,
    pub gammax: DVector<f64>,
}

impl QSpec {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn n(&self) -> usize {
        self.dim() - self.m
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.m > d
            || self.beta.shape() != (d, d)
            || self.sigma.len() != d
            || self.b0.len() != d
            || self.bx.shape() != (d, d)
            || self.gammax.len() != d
        {
            return invalid("Q spec dimensions disagree");
        }
        let m = self.m;
        for i in 0..m {
            for k in 0..d {
                if k != i && self.beta[(k, i)] != 0.0 && k < m {
                    return invalid("beta_II must be diagonal");
                }
            }
            for j in m..d {
                if self.beta[(i, j)] != 0.0 {
                    return invalid("beta_IJ must be zero");
                }
            }
            if !(self.sigma[i] > 0.0) {
                return invalid("square-root factors need Sigma_i > 0");
            }
        }
        if self.b.iter().chain(self.beta.iter()).any(|v| !v.is_finite()) {
            return invalid("non-finite Q parameters");
        }
        Ok(())
    }

    fn beta_jj_t(&self) -> DMatrix<f64> {
        let (m, n) = (self.m, self.n());
        self.beta.view((m, m), (n, n)).transpose()
    }
}

/// Integration grid: 0 = t_0 < … < t_G = τ_M with every maturity a grid point.
#[derive(Debug, Clone)]
pub struct TimeGrid {
    pub points: Vec<f64>,
    /// `maturity_index[l]` is the k with points[k] == τ_l.
    pub maturity_index: Vec<usize>,
}

pub const DEFAULT_GRID: usize = 2000;

impl TimeGrid {
    /// Equally spaced grid with `g` steps on [0, max τ], maturities inserted.
    pub fn new(maturities: &[f64], g: usize) -> Result<Self> {
        check_maturities(maturities)?;
        if g == 0 {
            return invalid("grid needs at least one step");
        }
        let tmax = *maturities.last().unwrap();
        let mut pts: Vec<f64> = (0..=g).map(|k| tmax * k as f64 / g as f64).collect();
        pts.extend_from_slice(maturities);
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * tmax.max(1.0));
        // snap so maturities are represented exactly
        let mut maturity_index = Vec::with_capacity(maturities.len());
        for &tau in maturities {
            let k = pts
                .iter()
                .position(|&t| (t - tau).abs() <= 1e-12 * tmax.max(1.0))
                .expect("maturity inserted above");
            pts[k] = tau;
            maturity_index.push(k);
        }
        Ok(Self {
            points: pts,
            maturity_index,
        })
    }

    pub fn index_of(&self, t: f64) -> Result<usize> {
        if t == 0.0 {
            return Ok(0);
        }
        self.points
            .iter()
            .position(|&p| p == t)
            .ok_or_else(|| crate::error::Error::InvalidArgument(format!("t={t} is not a grid point")))
    }
}

fn check_maturities(maturities: &[f64]) -> Result<()> {
    if maturities.is_empty() {
        return invalid("no maturities");
    }
    if maturities.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return invalid("maturities must be positive and finite");
    }
    if maturities.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("maturities must be distinct and sorted ascending");
    }
    Ok(())
}

/// Numerical scheme for the non-closed-form parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Simpson quadrature and fourth-order Magnus stepping of the 2×2 system.
    #[default]
    Accurate,
    /// Right Riemann sums and a single 2×2 exponential of the integrated
    /// coefficient matrix (first Magnus term); cheaper, first order in the step.
    RightRiemann,
}

#[derive(Debug, Clone)]
pub struct YieldLoadings {
    pub maturities: Vec<f64>,
    pub phi_tilde: DVector<f64>,
    pub psi_tilde: DMatrix<f64>,
}

impl YieldLoadings {
    pub fn yields(&self, x: &[f64]) -> DVector<f64> {
        &self.phi_tilde + &self.psi_tilde * DVector::from_column_slice(x)
    }
}

fn exp_small(b: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    match b.nrows() {
        0 => DMatrix::zeros(0, 0),
        1 => DMatrix::from_element(1, 1, (b[(0, 0)] * t).exp()),
        2 => {
            let k = Matrix2::new(b[(0, 0)], b[(0, 1)], b[(1, 0)], b[(1, 1)]) * t;
            let e = linalg::expm2(&k);
            DMatrix::from_row_slice(2, 2, &[e[(0, 0)], e[(0, 1)], e[(1, 0)], e[(1, 1)]])
        }
        _ => linalg::expm(b, t).expect("finite input"),
    }
}

/// Closed-form J-block solver, caching (β_JJ')⁻¹.
struct JSolver {
    bt: DMatrix<f64>,
    bt_inv: DMatrix<f64>,
    gamma: DVector<f64>,
    /// B⁻¹γ_J, so that Ψ_J(t,0) = w − e^{tB}w.
    w: DVector<f64>,
}

impl JSolver {
    fn new(spec: &QSpec) -> Result<Self> {
        let bt = spec.beta_jj_t();
        let n = bt.nrows();
        let gamma = spec.gammax.rows(spec.m, n).into_owned();
        if n == 0 {
            return Ok(Self {
                bt,
                bt_inv: DMatrix::zeros(0, 0),
                gamma,
                w: DVector::zeros(0),
            });
        }
        if linalg::rcond(&bt) < 1e-12 {
            return numerical("beta_JJ is (near) singular");
        }
        let bt_inv = bt.clone().try_inverse().unwrap();
        let w = &bt_inv * &gamma;
        Ok(Self { bt, bt_inv, gamma, w })
    }

    /// Ψ_J(t,u) = e^{tB}u − B⁻¹(e^{tB} − I)γ_J, B = β_JJ'.
    fn psi(&self, t: f64, u: &DVector<f64>) -> DVector<f64> {
        let n = self.bt.nrows();
        if n == 0 {
            return DVector::zeros(0);
        }
        let e = exp_small(&self.bt, t);
        &e * u - &self.bt_inv * ((e - DMatrix::identity(n, n)) * &self.gamma)
    }

    /// ∫₀ᵗ Ψ_J(s,u) ds = B⁻¹(e^{tB} − I)u − B⁻¹[B⁻¹(e^{tB} − I) − tI]γ_J.
    fn integral(&self, t: f64, u: &DVector<f64>) -> DVector<f64> {
        let n = self.bt.nrows();
        if n == 0 {
            return DVector::zeros(0);
        }
        let em = exp_small(&self.bt, t) - DMatrix::identity(n, n);
        let inner = &self.bt_inv * &em - DMatrix::identity(n, n) * t;
        &self.bt_inv * (em * u) - &self.bt_inv * (inner * &self.gamma)
    }
}

/// Ψ_J(t, u) in closed form.
pub fn psi_j(t: f64, u_j: &DVector<f64>, spec: &QSpec) -> Result<DVector<f64>> {
    spec.validate()?;
    if !(t >= 0.0) {
        return invalid("t must be nonnegative");
    }
    if u_j.len() != spec.n() {
        return invalid("u_J has wrong length");
    }
    Ok(JSolver::new(spec)?.psi(t, u_j))
}

/// (∫₀ᵗ Ψ_J ds, ∫₀ᵗ Ψ_J² ds) at u = 0.  The first integral is exact; the
/// elementwise-square integral uses the grid quadrature of `scheme`.
pub fn integrate_psi_j(
    t: f64,
    spec: &QSpec,
    grid: &TimeGrid,
    scheme: Scheme,
) -> Result<(DVector<f64>, DVector<f64>)> {
    spec.validate()?;
    let k = grid.index_of(t)?;
    let js = JSolver::new(spec)?;
    let zero = DVector::zeros(spec.n());
    let lin = js.integral(t, &zero);
    let mut sq = DVector::zeros(spec.n());
    for step in 1..=k {
        let (a, b) = (grid.points[step - 1], grid.points[step]);
        let h = b - a;
        if h == 0.0 {
            continue;
        }
        let fb = js.psi(b, &zero).map(|v| v * v);
        match scheme {
            Scheme::RightRiemann => sq += fb * h,
            Scheme::Accurate => {
                let fa = js.psi(a, &zero).map(|v| v * v);
                let fm = js.psi(0.5 * (a + b), &zero).map(|v| v * v);
                sq += (fa + fm * 4.0 + fb) * (h / 6.0);
            }
        }
    }
    Ok((lin, sq))
}

/// Solution of the Riccati system at u = 0 on every grid point.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<DVector<f64>>,
}

struct Solver<'a> {
    spec: &'a QSpec,
    js: JSolver,
    zero: DVector<f64>,
}

impl<'a> Solver<'a> {
    fn psi_j(&self, t: f64) -> DVector<f64> {
        self.js.psi(t, &self.zero)
    }

    /// γ̃_i(t) = γx_i − Σ_j β_{m+j,i} Ψ_J,j − ½ Σ_j Σ²_{m+j} Bx_{i,m+j} Ψ_J,j².
    fn gamma_tilde(&self, i: usize, pj: &[f64]) -> f64 {
        let s = self.spec;
        let m = s.m;
        let mut g = s.gammax[i];
        for (j, &v) in pj.iter().enumerate() {
            g -= s.beta[(m + j, i)] * v;
            g -= 0.5 * s.sigma[m + j].powi(2) * s.bx[(i, m + j)] * v * v;
        }
        g
    }

    fn kmat(&self, i: usize, gt: f64) -> Matrix2<f64> {
        let s2 = self.spec.sigma[i].powi(2);
        Matrix2::new(self.spec.beta[(i, i)], -s2 * gt, -0.5, 0.0)
    }

    /// Φ integrand without the −γ0 term.
    fn phi_rate(&self, psi: &DVector<f64>) -> f64 {
        let s = self.spec;
        (0..s.dim())
            .map(|k| 0.5 * s.sigma[k].powi(2) * s.b0[k] * psi[k] * psi[k] + s.b[k] * psi[k])
            .sum()
    }

    fn full_psi(&self, psi_i: &[f64], pj: &[f64]) -> DVector<f64> {
        let mut v = DVector::zeros(self.spec.dim());
        for (i, &p) in psi_i.iter().enumerate() {
            v[i] = p;
        }
        v.as_mut_slice()[self.spec.m..].copy_from_slice(pj);
        v
    }

    /// One fourth-order Magnus step of the 2×2 linear system on [a, a+h]
    /// given γ̃ at the two Gauss nodes.
    fn magnus_step(&self, i: usize, h: f64, g1: f64, g2: f64) -> Matrix2<f64> {
        let k1 = self.kmat(i, g1);
        let k2 = self.kmat(i, g2);
        let omega = (k1 + k2) * (0.5 * h) + (k2 * k1 - k1 * k2) * (3f64.sqrt() * h * h / 12.0);
        linalg::expm2(&omega)
    }
}

/// Node offsets (fractions of a step) at which Ψ_J is needed: Gauss nodes of
/// both half steps, the midpoint and the right end.
fn node_offsets() -> [f64; 6] {
    let c = 3f64.sqrt() / 6.0;
    [
        0.5 * (0.5 - c),
        0.5 * (0.5 + c),
        0.5,
        0.5 + 0.5 * (0.5 - c),
        0.5 + 0.5 * (0.5 + c),
        1.0,
    ]
}

/// Marches v(t) = e^{tB}w along the grid so that Ψ_J(t,0) = w − v(t) costs a
/// small mat-vec per node; e^{δhB} is cached per step length h.  n ≤ 3, so
/// everything lives on the stack.
struct JMarch {
    n: usize,
    w: [f64; 3],
    v: [f64; 3],
    h: f64,
    /// row-major 3×3 blocks, one per node offset
    exps: [[f64; 9]; 6],
    bt: DMatrix<f64>,
}

impl JMarch {
    fn new(js: &JSolver) -> Self {
        let n = js.bt.nrows();
        let mut w = [0.0; 3];
        w[..n].copy_from_slice(js.w.as_slice());
        Self {
            n,
            w,
            v: w,
            h: f64::NAN,
            exps: [[0.0; 9]; 6],
            bt: js.bt.clone(),
        }
    }

    /// Ψ_J at the six node offsets of the step [a, a+h]; advances to a+h.
    fn step(&mut self, h: f64) -> [[f64; 3]; 6] {
        let n = self.n;
        // grid steps differ only by rounding; reuse the cached exponentials
        if !((h - self.h).abs() <= 1e-12 * h) {
            self.h = h;
            for (k, &d) in node_offsets().iter().enumerate() {
                let e = exp_small(&self.bt, d * h);
                for i in 0..n {
                    for j in 0..n {
                        self.exps[k][i * 3 + j] = e[(i, j)];
                    }
                }
            }
        }
        let mut out = [[0.0; 3]; 6];
        let mut next = [0.0; 3];
        for (k, e) in self.exps.iter().enumerate() {
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += e[i * 3 + j] * self.v[j];
                }
                out[k][i] = self.w[i] - acc;
                if k == 5 {
                    next[i] = acc;
                }
            }
        }
        self.v = next;
        out
    }
}

fn nu_from(mat: &Matrix2<f64>, t: f64) -> Result<f64> {
    let m4 = mat[(1, 1)];
    // the denominator starts at 1 and only reaches zero at a pole
    if !(m4 > 1e-300) || !m4.is_finite() {
        return numerical(format!("Riccati solution blows up before maturity {t}"));
    }
    Ok(mat[(0, 1)] / m4)
}

pub fn solve_trajectory(spec: &QSpec, grid: &TimeGrid, scheme: Scheme) -> Result<Trajectory> {
    spec.validate()?;
    let solver = Solver {
        spec,
        js: JSolver::new(spec)?,
        zero: DVector::zeros(spec.n()),
    };
    let m = spec.m;
    let g = grid.points.len();
    let mut psi = Vec::with_capacity(g);
    let mut phi = Vec::with_capacity(g);
    psi.push(DVector::zeros(spec.dim()));
    phi.push(0.0);
    let mut phi_acc = 0.0;
    match scheme {
        Scheme::Accurate => {
            let mut mats = vec![Matrix2::<f64>::identity(); m];
            let mut march = JMarch::new(&solver.js);
            let mut prev_rate = 0.0; // Φ rate at Ψ = 0
            for k in 1..g {
                let (a, b) = (grid.points[k - 1], grid.points[k]);
                let h = b - a;
                if h == 0.0 {
                    psi.push(psi[k - 1].clone());
                    phi.push(phi[k - 1]);
                    continue;
                }
                let nodes = march.step(h);
                let nn = spec.n();
                let mut mid_i = [0.0; 3];
                let mut end_i = [0.0; 3];
                for i in 0..m {
                    let mut g = [0.0; 5];
                    for (q, gq) in g.iter_mut().enumerate() {
                        *gq = solver.gamma_tilde(i, &nodes[q][..nn]);
                    }
                    let half1 = solver.magnus_step(i, 0.5 * h, g[0], g[1]);
                    let mid = half1 * mats[i];
                    mid_i[i] = nu_from(&mid, a + 0.5 * h)? / spec.sigma[i].powi(2);
                    let half2 = solver.magnus_step(i, 0.5 * h, g[3], g[4]);
                    mats[i] = half2 * mid;
                    end_i[i] = nu_from(&mats[i], b)? / spec.sigma[i].powi(2);
                }
                let pm = solver.full_psi(&mid_i[..m], &nodes[2][..nn]);
                let pb = solver.full_psi(&end_i[..m], &nodes[5][..nn]);
                let rate_m = solver.phi_rate(&pm);
                let rate_b = solver.phi_rate(&pb);
                phi_acc += (prev_rate + 4.0 * rate_m + rate_b) * (h / 6.0);
                prev_rate = rate_b;
                psi.push(pb);
                phi.push(phi_acc - spec.gamma0 * b);
            }
        }
        Scheme::RightRiemann => {
            // running right sums of ∫Ψ_J² ; ∫Ψ_J is closed form
            let n = spec.n();
            let mut sq = DVector::zeros(n);
            for k in 1..g {
                let (a, b) = (grid.points[k - 1], grid.points[k]);
                let h = b - a;
                let pj = solver.psi_j(b);
                sq += pj.map(|v| v * v) * h;
                let lin = solver.js.integral(b, &solver.zero);
                let mut end_i = vec![0.0; m];
                for i in 0..m {
                    let mut int_g = spec.gammax[i] * b;
                    for j in 0..n {
                        int_g -= spec.beta[(m + j, i)] * lin[j];
                        int_g -= 0.5 * spec.sigma[m + j].powi(2) * spec.bx[(i, m + j)] * sq[j];
                    }
                    let s2 = spec.sigma[i].powi(2);
                    let big = Matrix2::new(b * spec.beta[(i, i)], -s2 * int_g, -0.5 * b, 0.0);
                    end_i[i] = nu_from(&linalg::expm2(&big), b)? / s2;
                }
                let pb = solver.full_psi(&end_i, pj.as_slice());
                phi_acc += solver.phi_rate(&pb) * h;
                psi.push(pb);
                phi.push(phi_acc - spec.gamma0 * b);
            }
        }
    }
    Ok(Trajectory {
        t: grid.points.clone(),
        phi,
        psi,
    })
}

/// Ψ_i(t, 0) for a square-root index i (0-based, i < m).
pub fn psi_i(t: f64, i: usize, spec: &QSpec, grid: &TimeGrid, scheme: Scheme) -> Result<f64> {
    if i >= spec.m {
        return invalid(format!("index {i} is not a square-root factor"));
    }
    let k = grid.index_of(t)?;
    Ok(solve_trajectory(spec, grid, scheme)?.psi[k][i])
}

/// Φ(t, 0).
pub fn phi(t: f64, spec: &QSpec, grid: &TimeGrid, scheme: Scheme) -> Result<f64> {
    let k = grid.index_of(t)?;
    Ok(solve_trajectory(spec, grid, scheme)?.phi[k])
}

pub fn yield_loadings(
    spec: &QSpec,
    maturities: &[f64],
    grid: &TimeGrid,
    scheme: Scheme,
) -> Result<YieldLoadings> {
    check_maturities(maturities)?;
    let traj = solve_trajectory(spec, grid, scheme)?;
    let d = spec.dim();
    let mm = maturities.len();
    let mut phi_tilde = DVector::zeros(mm);
    let mut psi_tilde = DMatrix::zeros(mm, d);
    for (l, &tau) in maturities.iter().enumerate() {
        let k = grid.index_of(tau)?;
        phi_tilde[l] = -traj.phi[k] / tau;
        for j in 0..d {
            psi_tilde[(l, j)] = -traj.psi[k][j] / tau;
        }
    }
    if phi_tilde.iter().chain(psi_tilde.iter()).any(|v| !v.is_finite()) {
        return numerical("non-finite yield loadings");
    }
    Ok(YieldLoadings {
        maturities: maturities.to_vec(),
        phi_tilde,
        psi_tilde,
    })
}

/// Convenience: default grid for the given maturities.
pub fn yield_loadings_default(spec: &QSpec, maturities: &[f64]) -> Result<YieldLoadings> {
    let grid = TimeGrid::new(maturities, DEFAULT_GRID)?;
    yield_loadings(spec, maturities, &grid, Scheme::Accurate)
}

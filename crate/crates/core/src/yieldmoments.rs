//! Theoretical moments of observed yields y_t = Φ̃ + Ψ̃X_t + ε_t: first to
//! fourth contemporaneous moments and own lag-1 products of yields and
//! squared yields, computed exactly from the stationary polynomial moments.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::model::ParamVector;
use crate::polyproc::{self, DiffusionSpec, GeneratorMatrix, MonomialBasis};
use crate::riccati::{self, Scheme, TimeGrid, YieldLoadings};

/// Moments of the observation noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma2: f64,
    /// E ε⁴; `None` means Gaussian noise, i.e. 3σ⁴.
    pub sigma4: Option<f64>,
}

impl NoiseSpec {
    pub fn gaussian(sigma2: f64) -> Self {
        Self { sigma2, sigma4: None }
    }

    pub fn fourth(&self) -> f64 {
        self.sigma4.unwrap_or(3.0 * self.sigma2 * self.sigma2)
    }
}

/// vech⁻¹: (a1..a_{d(d+1)/2}) → symmetric d×d, filled row-wise on the upper triangle.
pub fn vech_inverse(v: &[f64], d: usize) -> Result<DMatrix<f64>> {
    if v.len() != d * (d + 1) / 2 {
        return invalid(format!("vech of a {d}x{d} matrix has {} entries, got {}", d * (d + 1) / 2, v.len()));
    }
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in i..d {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
            k += 1;
        }
    }
    Ok(m)
}

pub fn vech(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut v = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in i..d {
            v.push(m[(i, j)]);
        }
    }
    v
}

fn check_sorted(idx: &[usize], d: usize) -> Result<()> {
    if idx.iter().any(|&i| i < 1 || i > d) || idx.windows(2).any(|w| w[1] < w[0]) {
        return invalid(format!("index tuple {idx:?} must be sorted within 1..={d}"));
    }
    Ok(())
}

/// 1-based position of x_i x_j (i ≤ j) inside the degree-2 block.
pub fn g2(i: usize, j: usize, d: usize) -> Result<usize> {
    check_sorted(&[i, j], d)?;
    // (i−1)(d − i/2) + j, kept in integers: (i−1)(2d − i)/2 + j
    Ok((i - 1) * (2 * d - i) / 2 + j)
}

/// 1-based rank of a sorted index tuple among all sorted tuples of its length:
/// 1 + Σ_p Σ_{v = i_{p−1}}^{i_p − 1} C(d − v + k − p, k − p), with i_0 = 1.
fn tuple_rank(idx: &[usize], d: usize) -> usize {
    let k = idx.len();
    let mut rank = 1;
    let mut prev = 1;
    for (p, &ip) in idx.iter().enumerate() {
        let rest = k - p - 1;
        for v in prev..ip {
            rank += polyproc::binom(d - v + rest, rest);
        }
        prev = ip;
    }
    rank
}

/// 1-based position of x_i x_j x_m (i ≤ j ≤ m) inside the degree-3 block.
pub fn g3(i: usize, j: usize, m: usize, d: usize) -> Result<usize> {
    check_sorted(&[i, j, m], d)?;
    Ok(tuple_rank(&[i, j, m], d))
}

/// 1-based position of x_i x_j x_m x_n (i ≤ j ≤ m ≤ n) inside the degree-4 block.
pub fn g4(i: usize, j: usize, m: usize, n: usize, d: usize) -> Result<usize> {
    check_sorted(&[i, j, m, n], d)?;
    Ok(tuple_rank(&[i, j, m, n], d))
}

/// Checks the closed-form index maps against brute-force enumeration of the basis.
pub fn verify_index_maps(d: usize) -> Result<()> {
    let basis = polyproc::enumerate_basis(d, 4)?;
    for (pos, e) in basis.exponents.iter().enumerate() {
        let mut idx = Vec::new();
        for (var, &k) in e.iter().enumerate() {
            idx.extend(std::iter::repeat_n(var + 1, k as usize));
        }
        let deg = idx.len();
        let g = match deg {
            0 | 1 => continue,
            2 => g2(idx[0], idx[1], d)?,
            3 => g3(idx[0], idx[1], idx[2], d)?,
            _ => g4(idx[0], idx[1], idx[2], idx[3], d)?,
        };
        if basis.offsets[deg] + g - 1 != pos {
            return Err(Error::Numerical(format!("index map disagrees with enumeration at {idx:?}")));
        }
    }
    Ok(())
}

/// Degree-block coefficient vectors of the products of linear forms
/// a = Ψ_i'x, b = Ψ_j'x:
/// m2'E(x²) = E(ab), m3a'E(x³) = E(a²b), m3b'E(x³) = E(ab²), m4'E(x⁴) = E(a²b²).
#[derive(Debug, Clone)]
pub struct CoeffVectors {
    pub m2: DVector<f64>,
    pub m3a: DVector<f64>,
    pub m3b: DVector<f64>,
    pub m4: DVector<f64>,
}

pub fn moment_coeff_vectors(psi_i: &[f64], psi_j: &[f64]) -> Result<CoeffVectors> {
    let d = psi_i.len();
    if psi_j.len() != d {
        return invalid("loading vectors differ in length");
    }
    let basis = polyproc::enumerate_basis(d, 4)?;
    let a = basis.linear(0.0, psi_i);
    let b = basis.linear(0.0, psi_j);
    let ab = basis.mul(&a, &b)?;
    let aab = basis.mul(&ab, &a)?;
    let abb = basis.mul(&ab, &b)?;
    let aabb = basis.mul(&aab, &b)?;
    let block = |v: &DVector<f64>, k: usize| {
        let (s, e) = (basis.offsets[k], basis.offsets[k + 1]);
        v.rows(s, e - s).into_owned()
    };
    Ok(CoeffVectors {
        m2: block(&ab, 2),
        m3a: block(&aab, 3),
        m3b: block(&abb, 3),
        m4: block(&aabb, 4),
    })
}

/// One entry of the moment catalogue.  Indices are 1-based maturities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MomentLabel {
    /// E y_i
    Ey(usize),
    /// E y_i y_j
    Eyy(usize, usize),
    /// E y_i² y_j
    Ey2y(usize, usize),
    /// E y_i² y_j²
    Ey2y2(usize, usize),
    /// E y_{t,i} y_{t−1,i}
    Eylag(usize),
    /// E y²_{t,i} y²_{t−1,i}
    Ey2y2lag(usize),
}

impl MomentLabel {
    pub fn is_lag(&self) -> bool {
        matches!(self, MomentLabel::Eylag(_) | MomentLabel::Ey2y2lag(_))
    }

    /// Polynomial degree in the state needed to evaluate the moment.
    pub fn degree(&self) -> usize {
        use MomentLabel::*;
        match self {
            Ey(_) => 1,
            Eyy(..) | Eylag(_) => 2,
            Ey2y(..) => 3,
            Ey2y2(..) | Ey2y2lag(_) => 4,
        }
    }

    /// Uses fourth-order noise moments.
    pub fn is_fourth_order(&self) -> bool {
        matches!(self, MomentLabel::Ey2y2(_, _))
    }

    /// Key under which symmetric labels compare equal.
    pub fn canonical(&self) -> MomentLabel {
        use MomentLabel::*;
        match *self {
            Eyy(i, j) => Eyy(i.min(j), i.max(j)),
            Ey2y2(i, j) => Ey2y2(i.min(j), i.max(j)),
            other => other,
        }
    }

    pub fn max_index(&self) -> usize {
        use MomentLabel::*;
        match *self {
            Ey(i) | Eylag(i) | Ey2y2lag(i) => i,
            Eyy(i, j) | Ey2y(i, j) | Ey2y2(i, j) => i.max(j),
        }
    }

    fn min_index(&self) -> usize {
        use MomentLabel::*;
        match *self {
            Ey(i) | Eylag(i) | Ey2y2lag(i) => i,
            Eyy(i, j) | Ey2y(i, j) | Ey2y2(i, j) => i.min(j),
        }
    }

    /// Value of the per-date product for this label; `prev` is the previous date.
    pub fn sample_term(&self, cur: &[f64], prev: Option<&[f64]>) -> Option<f64> {
        use MomentLabel::*;
        let y = |i: usize| cur[i - 1];
        Some(match *self {
            Ey(i) => y(i),
            Eyy(i, j) => y(i) * y(j),
            Ey2y(i, j) => y(i) * y(i) * y(j),
            Ey2y2(i, j) => y(i) * y(i) * y(j) * y(j),
            Eylag(i) => y(i) * prev?[i - 1],
            Ey2y2lag(i) => {
                let p = prev?[i - 1];
                y(i) * y(i) * p * p
            }
        })
    }
}

impl fmt::Display for MomentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use MomentLabel::*;
        match *self {
            Ey(i) => write!(f, "Ey {i}"),
            Eyy(i, j) => write!(f, "Eyy {i} {j}"),
            Ey2y(i, j) => write!(f, "Ey2y {i} {j}"),
            Ey2y2(i, j) => write!(f, "Ey2y2 {i} {j}"),
            Eylag(i) => write!(f, "Eylag {i}"),
            Ey2y2lag(i) => write!(f, "Ey2y2lag {i}"),
        }
    }
}

impl FromStr for MomentLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let bad = || Error::InvalidArgument(format!("cannot parse moment label '{s}'"));
        let idx = |k: usize| -> Result<usize> {
            let v: usize = parts.get(k).ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if v == 0 {
                return Err(bad());
            }
            Ok(v)
        };
        let (label, arity) = match parts.first().copied() {
            Some("Ey") => (MomentLabel::Ey(idx(1)?), 1),
            Some("Eyy") => (MomentLabel::Eyy(idx(1)?, idx(2)?), 2),
            Some("Ey2y") => (MomentLabel::Ey2y(idx(1)?, idx(2)?), 2),
            Some("Eyy2") => (MomentLabel::Ey2y(idx(2)?, idx(1)?), 2),
            Some("Ey2y2") => (MomentLabel::Ey2y2(idx(1)?, idx(2)?), 2),
            Some("Eylag") => (MomentLabel::Eylag(idx(1)?), 1),
            Some("Ey2y2lag") => (MomentLabel::Ey2y2lag(idx(1)?), 1),
            _ => return Err(bad()),
        };
        if parts.len() != arity + 1 {
            return Err(bad());
        }
        Ok(label)
    }
}

/// All labels for M maturities, in frozen order: Ey, Eyy (i ≤ j), Ey2y (all
/// ordered pairs, so E y_i y_j² = Ey2y j i), Ey2y2 (i ≤ j), Eylag, Ey2y2lag.
pub fn catalogue_labels(m: usize) -> Vec<MomentLabel> {
    use MomentLabel::*;
    let mut v: Vec<MomentLabel> = (1..=m).map(Ey).collect();
    for i in 1..=m {
        for j in i..=m {
            v.push(Eyy(i, j));
        }
    }
    for i in 1..=m {
        for j in 1..=m {
            v.push(Ey2y(i, j));
        }
    }
    for i in 1..=m {
        for j in i..=m {
            v.push(Ey2y2(i, j));
        }
    }
    v.extend((1..=m).map(Eylag));
    v.extend((1..=m).map(Ey2y2lag));
    v
}

#[derive(Debug, Clone)]
pub struct MomentCatalogue {
    pub labels: Vec<MomentLabel>,
    pub values: DVector<f64>,
}

impl MomentCatalogue {
    pub fn get(&self, label: &MomentLabel) -> Option<f64> {
        let key = label.canonical();
        self.labels
            .iter()
            .position(|l| l.canonical() == key)
            .map(|k| self.values[k])
    }
}

/// Everything needed to evaluate yield moments for one parameter value.
#[derive(Debug, Clone)]
pub struct MomentEngine {
    pub gen: GeneratorMatrix,
    /// exp(Δ·A)
    pub transition: DMatrix<f64>,
    /// (1, E x̃') aligned with the basis.
    pub stat: DVector<f64>,
    pub loadings: YieldLoadings,
    pub noise: NoiseSpec,
    pub dt: f64,
}

impl MomentEngine {
    pub fn new(pspec: &DiffusionSpec, loadings: YieldLoadings, noise: NoiseSpec, dt: f64) -> Result<Self> {
        Self::with_degree(pspec, loadings, noise, dt, 4)
    }

    /// Engine on the degree-`p` basis.  Moments of degree ≤ p are exact on it
    /// because exp(tA) is block lower triangular in the degree grading.
    pub fn with_degree(
        pspec: &DiffusionSpec,
        loadings: YieldLoadings,
        noise: NoiseSpec,
        dt: f64,
        p: usize,
    ) -> Result<Self> {
        if !(dt > 0.0) {
            return invalid("dt must be positive");
        }
        if loadings.psi_tilde.ncols() != pspec.dim() {
            return invalid("loadings and diffusion spec disagree on dimension");
        }
        let basis = polyproc::cached_basis(pspec.dim(), p)?;
        let gen = polyproc::build_generator(pspec, basis)?;
        let transition = polyproc::matrix_exponential(&gen.a, dt)?;
        let stat = polyproc::stationary_from_exp(&gen, &transition)?.full();
        Ok(Self {
            gen,
            transition,
            stat,
            loadings,
            noise,
            dt,
        })
    }

    /// Engine for the A1(3) parameter vector with Δ = 1.
    pub fn from_params(p: &ParamVector, maturities: &[f64], grid: &TimeGrid, scheme: Scheme) -> Result<Self> {
        let loadings = riccati::yield_loadings(&p.q_spec(), maturities, grid, scheme)?;
        let noise = NoiseSpec {
            sigma2: p.sigma2_eps(),
            sigma4: p.sigma4_eps(),
        };
        Self::new(&p.p_spec(), loadings, noise, 1.0)
    }

    /// Like [`MomentEngine::from_params`] on the smallest basis covering `labels`.
    pub fn for_labels(
        p: &ParamVector,
        maturities: &[f64],
        grid: &TimeGrid,
        scheme: Scheme,
        labels: &[MomentLabel],
    ) -> Result<Self> {
        let loadings = riccati::yield_loadings(&p.q_spec(), maturities, grid, scheme)?;
        let noise = NoiseSpec {
            sigma2: p.sigma2_eps(),
            sigma4: p.sigma4_eps(),
        };
        let deg = labels.iter().map(|l| l.degree()).max().unwrap_or(1);
        Self::with_degree(&p.p_spec(), loadings, noise, 1.0, deg)
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.gen.basis
    }

    pub fn n_maturities(&self) -> usize {
        self.loadings.maturities.len()
    }

    /// Coefficients of a_i = Φ̃_i + Ψ̃_i'x.
    fn affine(&self, i: usize) -> DVector<f64> {
        let row: Vec<f64> = self.loadings.psi_tilde.row(i - 1).iter().copied().collect();
        self.basis().linear(self.loadings.phi_tilde[i - 1], &row)
    }

    /// Stationary expectation of a polynomial.
    pub fn expect(&self, poly: &DVector<f64>) -> f64 {
        poly.dot(&self.stat)
    }

    /// E[f(X_{t+Δ}) g(X_t)] for polynomials with deg f + deg g ≤ 4.
    pub fn expect_cross(&self, f: &DVector<f64>, g: &DVector<f64>) -> Result<f64> {
        let b = self.basis();
        let mut cond = self.transition.tr_mul(f);
        // moment closure: E[f(X_{t+Δ}) | X_t] has the degree of f; anything
        // above it is round-off from the matrix exponential
        let deg_f = (0..f.len()).rev().find(|&k| f[k] != 0.0).map_or(0, |k| b.degree(k));
        for k in b.offsets[deg_f + 1]..cond.len() {
            cond[k] = 0.0;
        }
        Ok(self.expect(&b.mul(&cond, g)?))
    }

    fn check_index(&self, label: &MomentLabel) -> Result<()> {
        if label.min_index() < 1 || label.max_index() > self.n_maturities() {
            return invalid(format!("label {label} refers to a maturity outside 1..={}", self.n_maturities()));
        }
        Ok(())
    }

    pub fn value(&self, label: &MomentLabel) -> Result<f64> {
        use MomentLabel::*;
        self.check_index(label)?;
        let b = self.basis();
        let s2 = self.noise.sigma2;
        let v = match *label {
            Ey(i) => self.expect(&self.affine(i)),
            Eyy(i, j) => {
                let e = self.expect(&b.mul(&self.affine(i), &self.affine(j))?);
                e + if i == j { s2 } else { 0.0 }
            }
            Ey2y(i, j) => {
                let (ai, aj) = (self.affine(i), self.affine(j));
                let ai2 = b.mul(&ai, &ai)?;
                let core = self.expect(&b.mul(&ai2, &aj)?);
                // E(a_i+ε_i)²(a_j+ε_j) with symmetric noise
                core + s2 * self.expect(&aj) + if i == j { 2.0 * s2 * self.expect(&ai) } else { 0.0 }
            }
            Ey2y2(i, j) => {
                let (ai, aj) = (self.affine(i), self.affine(j));
                let ai2 = b.mul(&ai, &ai)?;
                let aj2 = b.mul(&aj, &aj)?;
                let core = self.expect(&b.mul(&ai2, &aj2)?);
                let (ei2, ej2) = (self.expect(&ai2), self.expect(&aj2));
                if i == j {
                    core + 6.0 * s2 * ei2 + self.noise.fourth()
                } else {
                    core + s2 * ei2 + s2 * ej2 + s2 * s2
                }
            }
            Eylag(i) => {
                let ai = self.affine(i);
                self.expect_cross(&ai, &ai)?
            }
            Ey2y2lag(i) => {
                let ai = self.affine(i);
                let ai2 = b.mul(&ai, &ai)?;
                // E(a_t+ε_t)²(a_s+ε_s)² = E a_t²a_s² + σ²(E a_t² + E a_s²) + σ⁴
                self.expect_cross(&ai2, &ai2)? + 2.0 * s2 * self.expect(&ai2) + s2 * s2
            }
        };
        Ok(v)
    }

    pub fn values(&self, labels: &[MomentLabel]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(labels.len());
        for (k, l) in labels.iter().enumerate() {
            out[k] = self.value(l)?;
        }
        Ok(out)
    }

    /// Contemporaneous part of the catalogue.
    pub fn contemporaneous_moments(&self) -> Result<MomentCatalogue> {
        let labels: Vec<MomentLabel> = catalogue_labels(self.n_maturities())
            .into_iter()
            .filter(|l| !l.is_lag())
            .collect();
        let values = self.values(&labels)?;
        Ok(MomentCatalogue { labels, values })
    }

    /// Lag-1 own products of yields and squared yields.
    pub fn autocovariance_moments(&self) -> Result<MomentCatalogue> {
        let labels: Vec<MomentLabel> = catalogue_labels(self.n_maturities())
            .into_iter()
            .filter(|l| l.is_lag())
            .collect();
        let values = self.values(&labels)?;
        Ok(MomentCatalogue { labels, values })
    }

    pub fn catalogue(&self) -> Result<MomentCatalogue> {
        let labels = catalogue_labels(self.n_maturities());
        let values = self.values(&labels)?;
        Ok(MomentCatalogue { labels, values })
    }

    /// E(X_{t+Δ}^v (X_t^w)'): rows index degree-v monomials, columns degree-w.
    pub fn cross_time_moments(&self, v: usize, w: usize) -> Result<DMatrix<f64>> {
        cross_time_moments(&self.gen, &self.stat, v, w, &self.transition)
    }
}

/// E(X_{t+dt}^v (X_t^w)') from a generator, full stationary moments and exp(dt·A).
pub fn cross_time_moments(
    gen: &GeneratorMatrix,
    stat_full: &DVector<f64>,
    v: usize,
    w: usize,
    transition: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if v + w > gen.basis.p {
        return invalid(format!("v + w = {} exceeds the basis degree", v + w));
    }
    let b = &gen.basis;
    let n = b.len();
    let rows: Vec<usize> = (b.offsets[v]..b.offsets[v + 1]).collect();
    let cols: Vec<usize> = (b.offsets[w]..b.offsets[w + 1]).collect();
    let mut out = DMatrix::zeros(rows.len(), cols.len());
    for (ri, &r) in rows.iter().enumerate() {
        // E[x^r(t+dt) | x(t)] = Σ_c E_{r,c} x^c(t); only degree ≤ v columns are non-zero
        for (ci, &c) in cols.iter().enumerate() {
            let mut acc = 0.0;
            for k in 0..b.offsets[v + 1].min(n) {
                let e = transition[(r, k)];
                if e != 0.0 {
                    let prod = b.product(k, c).expect("degree bounded by v + w");
                    acc += e * stat_full[prod];
                }
            }
            out[(ri, ci)] = acc;
        }
    }
    Ok(out)
}

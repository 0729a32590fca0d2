//! Synthetic targets shared by the sampler tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use atsm_gmm::model::ParamVector;
use atsm_gmm::polyproc::DiffusionSpec;
use atsm_gmm::qbayes::Target;
use atsm_gmm::riccati::QSpec;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use nalgebra::{DMatrix, DVector};
use num_rational::Rational64;

pub type Poly = BTreeMap<Vec<u32>, Rational64>;

pub fn r(x: f64) -> Rational64 {
    Rational64::approximate_float(x).expect("representable")
}

/// Independent symbolic generator: differentiate the monomial term by term
/// in exact rational arithmetic.
pub fn symbolic_generator(
    alpha: &[u32],
    b: &[Rational64],
    beta: &[Vec<Rational64>],
    sig2: &[Rational64],
    b0: &[Rational64],
    bx: &[Vec<Rational64>],
) -> Poly {
    let d = alpha.len();
    let mut out = Poly::new();
    let mut add = |e: Vec<u32>, c: Rational64| {
        *out.entry(e).or_insert(Rational64::from_integer(0)) += c;
    };
    for i in 0..d {
        if alpha[i] == 0 {
            continue;
        }
        // ∂_i x^α = α_i x^{α-e_i}
        let mut di = alpha.to_vec();
        di[i] -= 1;
        let a_i = Rational64::from_integer(alpha[i] as i64);
        // drift (b_i + Σ_j β_ij x_j) ∂_i
        add(di.clone(), a_i * b[i]);
        for j in 0..d {
            let mut e = di.clone();
            e[j] += 1;
            add(e, a_i * beta[i][j]);
        }
        if alpha[i] >= 2 {
            // ½ Σ_i² S_ii ∂_ii
            let mut dii = di.clone();
            dii[i] -= 1;
            let c = Rational64::new((alpha[i] * (alpha[i] - 1)) as i64, 2) * sig2[i];
            add(dii.clone(), c * b0[i]);
            for j in 0..d {
                let mut e = dii.clone();
                e[j] += 1;
                add(e, c * bx[j][i]);
            }
        }
    }
    out
}

/// A generic 3-d spec with dyadic entries so f64 arithmetic is exact.
pub fn dyadic_spec() -> DiffusionSpec {
    DiffusionSpec {
        b: DVector::from_column_slice(&[0.75, -0.5, -0.25]),
        beta: DMatrix::from_row_slice(3, 3, &[-1.5, 0.125, 0.375, 0.25, -0.625, 0.5, 0.0625, -0.75, -0.875]),
        sigma: DVector::from_column_slice(&[0.5, 1.25, 0.75]),
        b0: DVector::from_column_slice(&[0.25, 1.0, 1.5]),
        bx: DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.25, 0.125, 0.75, 0.375, 0.625, 0.0625, 1.5]),
    }
}

/// Q(ϑ) = (ϑ − ϑ*)'P(ϑ − ϑ*) with T = 1, so the quasi-posterior is
/// N(ϑ*, P⁻¹) restricted to the support.
pub struct QuadraticTarget {
    pub center: DVector<f64>,
    pub precision: DMatrix<f64>,
    pub lo: f64,
    pub hi: f64,
}

impl QuadraticTarget {
    /// Independent coordinates with sd_j = rel·max(|ϑ*_j|, floor).
    pub fn diagonal(center: &ParamVector, rel: f64, floor: f64) -> Self {
        let n = center.len();
        let sd: Vec<f64> = center.v.iter().map(|x| rel * x.abs().max(floor)).collect();
        Self {
            center: DVector::from_column_slice(&center.v),
            precision: DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / sd[i].powi(2) } else { 0.0 }),
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn sd(&self) -> DVector<f64> {
        self.precision.clone().try_inverse().unwrap().diagonal().map(f64::sqrt)
    }
}

impl Target for QuadraticTarget {
    fn sample_size(&self) -> f64 {
        1.0
    }

    fn refresh(&mut self, _theta: &ParamVector) {}

    fn q(&self, theta: &ParamVector) -> f64 {
        let d = DVector::from_column_slice(&theta.v) - &self.center;
        (d.transpose() * &self.precision * &d)[(0, 0)]
    }

    fn q_identity(&self, theta: &ParamVector) -> f64 {
        let d = DVector::from_column_slice(&theta.v) - &self.center;
        d.norm_squared()
    }

    fn in_support(&self, theta: &ParamVector) -> bool {
        theta.v.iter().all(|x| x.is_finite() && *x >= self.lo && *x <= self.hi)
    }

    fn support_failures(&self, theta: &ParamVector) -> Vec<String> {
        theta
            .names()
            .iter()
            .zip(&theta.v)
            .filter(|(_, x)| !(**x >= self.lo && **x <= self.hi))
            .map(|(n, _)| format!("{n} in box"))
            .collect()
    }
}

/// L ≡ 1 on every finite parameter vector.
pub struct FlatTarget;

impl Target for FlatTarget {
    fn sample_size(&self) -> f64 {
        1.0
    }

    fn refresh(&mut self, _theta: &ParamVector) {}

    fn q(&self, _theta: &ParamVector) -> f64 {
        0.0
    }

    fn q_identity(&self, _theta: &ParamVector) -> f64 {
        0.0
    }

    fn in_support(&self, theta: &ParamVector) -> bool {
        theta.v.iter().all(|x| x.is_finite())
    }
}

/// Gaussian AR(1) path x_t = ρx_{t−1} + e_t, e_t ~ N(0,1), started stationary.
pub fn ar1(n: usize, rho: f64, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut z = || -> f64 { rng.sample(rand_distr::StandardNormal) };
    let mut x = z() / (1.0 - rho * rho).sqrt();
    (0..n)
        .map(|_| {
            let out = x;
            x = rho * x + z();
            out
        })
        .collect()
}

/// One-factor Q-spec: Vasicek for m = 0, CIR for m = 1, r = γ0 + X.
pub fn scalar(m: usize, b: f64, beta: f64, sigma: f64, gamma0: f64) -> QSpec {
    QSpec {
        m,
        b: DVector::from_element(1, b),
        beta: DMatrix::from_element(1, 1, beta),
        sigma: DVector::from_element(1, sigma),
        b0: DVector::from_element(1, if m == 0 { 1.0 } else { 0.0 }),
        bx: DMatrix::from_element(1, 1, if m == 0 { 0.0 } else { 1.0 }),
        gamma0,
        gammax: DVector::from_element(1, 1.0),
    }
}

/// Vasicek bond exponent (Φ, Ψ) for r = γ0 + X, dX = (b + βX)dt + σdW.
pub fn vasicek_closed(tau: f64, b: f64, beta: f64, s: f64, g0: f64) -> (f64, f64) {
    let e = (beta * tau).exp();
    let psi = (1.0 - e) / beta;
    let int_psi = (tau - (e - 1.0) / beta) / beta;
    let int_psi2 = (tau - 2.0 * (e - 1.0) / beta + ((2.0 * beta * tau).exp() - 1.0) / (2.0 * beta)) / (beta * beta);
    (0.5 * s * s * int_psi2 + b * int_psi - g0 * tau, psi)
}

/// CIR bond exponent for dX = (b + βX)dt + σ√X dW.
pub fn cir_closed(tau: f64, b: f64, beta: f64, s: f64, g0: f64) -> (f64, f64) {
    let k = -beta;
    let g = (k * k + 2.0 * s * s).sqrt();
    let den = (g + k) * ((g * tau).exp() - 1.0) + 2.0 * g;
    let psi = -2.0 * ((g * tau).exp() - 1.0) / den;
    let phi = 2.0 * b / (s * s) * (2.0 * g * ((g + k) * tau / 2.0).exp() / den).ln() - g0 * tau;
    (phi, psi)
}

/// Random admissible A1(3) P-spec with stable drift.
pub fn random_a13(rng: &mut ChaCha8Rng) -> DiffusionSpec {
    let u = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    let mut p = ParamVector::table1();
    p.v[0] = u(rng, 0.1, 5.0);
    p.v[1] = u(rng, 0.1, 5.0);
    for start in [2usize, 9] {
        p.v[start] = u(rng, -3.0, -0.1);
        p.v[start + 1] = u(rng, 0.0, 1.0);
        p.v[start + 2] = u(rng, 0.0, 1.0);
        p.v[start + 3] = u(rng, -3.0, -0.5);
        p.v[start + 4] = u(rng, -0.3, 0.3);
        p.v[start + 5] = u(rng, -0.3, 0.3);
        p.v[start + 6] = u(rng, -3.0, -0.5);
    }
    p.v[16] = u(rng, 0.0, 2.0);
    p.v[17] = u(rng, 0.0, 2.0);
    for i in 19..22 {
        p.v[i] = u(rng, 0.1, 2.0);
    }
    p.p_spec()
}

//! Polynomial-process machinery: the graded monomial basis, the generator
//! matrix of an affine diffusion with diagonal diffusion, and conditional /
//! stationary moments through exp(tA).

use std::collections::HashMap;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, numerical, Result};
use crate::linalg;

/// Graded monomial basis in `d` variables up to total degree `p`.
///
/// Within a degree the monomials follow the lexicographic order of their
/// sorted index tuples, e.g. for d = 3, degree 2:
/// x1², x1x2, x1x3, x2², x2x3, x3².  Positions are a frozen contract: the
/// entries of the generator matrix depend on them.
#[derive(Debug, Clone)]
pub struct MonomialBasis {
    pub d: usize,
    pub p: usize,
    pub exponents: Vec<Vec<u32>>,
    /// `offsets[k]` is the position of the first degree-k monomial; `offsets[p+1] = N`.
    pub offsets: Vec<usize>,
    index: HashMap<Vec<u32>, usize>,
    /// `products[i*N + j]` is the position of x^(e_i+e_j) when its degree ≤ p.
    products: Vec<Option<usize>>,
}

/// Number of monomials of exact degree k in d variables, C(k+d−1, k).
pub fn count_degree(d: usize, k: usize) -> usize {
    binom(k + d - 1, k)
}

pub(crate) fn binom(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

fn sorted_tuples(d: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(d: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..d {
            cur.push(i);
            rec(d, k, i, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, k, 0, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Shared copy of the basis for (d, p); bases are immutable, so one per shape.
pub fn cached_basis(d: usize, p: usize) -> Result<&'static MonomialBasis> {
    static CACHE: OnceLock<Vec<MonomialBasis>> = OnceLock::new();
    if !(1..=3).contains(&d) || !(1..=4).contains(&p) {
        // reuse the argument errors
        return enumerate_basis(d, p).map(|_| unreachable!("shape is out of range"));
    }
    let all = CACHE.get_or_init(|| {
        (1..=3)
            .flat_map(|d| (1..=4).map(move |p| enumerate_basis(d, p).expect("valid shape")))
            .collect()
    });
    Ok(&all[(d - 1) * 4 + (p - 1)])
}

pub fn enumerate_basis(d: usize, p: usize) -> Result<MonomialBasis> {
    if !(1..=3).contains(&d) {
        return invalid(format!("state dimension d={d} outside 1..=3"));
    }
    if !(1..=4).contains(&p) {
        return invalid(format!("max degree p={p} outside 1..=4"));
    }
    let mut exponents = Vec::new();
    let mut offsets = Vec::with_capacity(p + 2);
    for k in 0..=p {
        offsets.push(exponents.len());
        for tuple in sorted_tuples(d, k) {
            let mut e = vec![0u32; d];
            for i in tuple {
                e[i] += 1;
            }
            exponents.push(e);
        }
    }
    offsets.push(exponents.len());
    let index: HashMap<Vec<u32>, usize> = exponents
        .iter()
        .enumerate()
        .map(|(i, e)| (e.clone(), i))
        .collect();
    let n = exponents.len();
    let mut products = vec![None; n * n];
    for i in 0..n {
        for j in 0..n {
            let e: Vec<u32> = exponents[i].iter().zip(&exponents[j]).map(|(a, b)| a + b).collect();
            products[i * n + j] = index.get(&e).copied();
        }
    }
    Ok(MonomialBasis {
        d,
        p,
        exponents,
        offsets,
        index,
        products,
    })
}

impl MonomialBasis {
    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn position(&self, exponent: &[u32]) -> Option<usize> {
        self.index.get(exponent).copied()
    }

    /// Position of the product of two basis monomials, if it stays in the basis.
    pub fn product(&self, i: usize, j: usize) -> Option<usize> {
        self.products[i * self.len() + j]
    }

    /// Product of two polynomials given by basis coefficients; fails when the
    /// product has degree above p.
    pub fn mul(&self, a: &DVector<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.len();
        let mut out = DVector::zeros(n);
        for i in (0..n).filter(|&i| a[i] != 0.0) {
            for j in (0..n).filter(|&j| b[j] != 0.0) {
                match self.product(i, j) {
                    Some(k) => out[k] += a[i] * b[j],
                    None => return invalid("polynomial product exceeds the basis degree"),
                }
            }
        }
        Ok(out)
    }

    /// Coefficients of the affine form c + Σ_k w_k x_k.
    pub fn linear(&self, c: f64, w: &[f64]) -> DVector<f64> {
        let mut v = DVector::zeros(self.len());
        v[0] = c;
        for (k, &wk) in w.iter().enumerate() {
            v[1 + k] = wk;
        }
        v
    }

    pub fn degree(&self, pos: usize) -> usize {
        self.exponents[pos].iter().sum::<u32>() as usize
    }

    /// Stacked monomials x̃ = (1, x', (x²)', …, (x^p)')'.
    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.exponents.iter().map(|e| {
                e.iter()
                    .zip(x)
                    .map(|(&k, &xi)| xi.powi(k as i32))
                    .product::<f64>()
            }),
        )
    }
}

/// Affine diffusion with diagonal diffusion matrix:
/// dX = (b + βX)dt + Σ diag(√S_ii) dW, S_ii = B0_i + Σ_j Bx_{ji} X_j.
#[derive(Debug, Clone)]
pub struct DiffusionSpec {
    pub b: DVector<f64>,
    pub beta: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub b0: DVector<f64>,
    pub bx: DMatrix<f64>,
}

impl DiffusionSpec {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.beta.shape() != (d, d)
            || self.sigma.len() != d
            || self.b0.len() != d
            || self.bx.shape() != (d, d)
        {
            return invalid("diffusion spec dimensions disagree");
        }
        if self.sigma.iter().any(|&s| !(s >= 0.0)) {
            return invalid("Sigma entries must be nonnegative");
        }
        Ok(())
    }

    /// S_ii(x) = B0_i + Σ_j Bx_{ji} x_j.
    pub fn s_diag(&self, x: &[f64], i: usize) -> f64 {
        self.b0[i] + (0..self.dim()).map(|j| self.bx[(j, i)] * x[j]).sum::<f64>()
    }

    /// Vasicek: dX = (b + βX)dt + Σ dW.
    pub fn vasicek(b: f64, beta: f64, sigma: f64) -> Self {
        Self {
            b: DVector::from_element(1, b),
            beta: DMatrix::from_element(1, 1, beta),
            sigma: DVector::from_element(1, sigma),
            b0: DVector::from_element(1, 1.0),
            bx: DMatrix::zeros(1, 1),
        }
    }

    /// CIR: dX = (b + βX)dt + Σ √X dW.
    pub fn cir(b: f64, beta: f64, sigma: f64) -> Self {
        Self {
            b: DVector::from_element(1, b),
            beta: DMatrix::from_element(1, 1, beta),
            sigma: DVector::from_element(1, sigma),
            b0: DVector::zeros(1),
            bx: DMatrix::from_element(1, 1, 1.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    pub a: DMatrix<f64>,
    pub basis: MonomialBasis,
}

/// Row r of A holds the basis coefficients of G applied to the r-th monomial.
pub fn build_generator(spec: &DiffusionSpec, basis: &MonomialBasis) -> Result<GeneratorMatrix> {
    spec.validate()?;
    let d = basis.d;
    if spec.dim() != d {
        return invalid(format!("spec has dimension {}, basis {}", spec.dim(), d));
    }
    let n = basis.len();
    let mut a = DMatrix::zeros(n, n);
    for (r, alpha) in basis.exponents.iter().enumerate() {
        for i in 0..d {
            let ai = alpha[i];
            if ai == 0 {
                continue;
            }
            // first-order part: ai x^(α−e_i) (b_i + Σ_j β_ij x_j)
            let mut base = alpha.clone();
            base[i] -= 1;
            let f = ai as f64;
            a[(r, pos(basis, &base))] += f * spec.b[i];
            for j in 0..d {
                let mut e = base.clone();
                e[j] += 1;
                a[(r, pos(basis, &e))] += f * spec.beta[(i, j)];
            }
            if ai < 2 {
                continue;
            }
            // second-order part: ½Σ_i² ai(ai−1) x^(α−2e_i) S_ii(x)
            let mut base2 = alpha.clone();
            base2[i] -= 2;
            let g = 0.5 * spec.sigma[i].powi(2) * (ai * (ai - 1)) as f64;
            a[(r, pos(basis, &base2))] += g * spec.b0[i];
            for j in 0..d {
                let mut e = base2.clone();
                e[j] += 1;
                a[(r, pos(basis, &e))] += g * spec.bx[(j, i)];
            }
        }
    }
    Ok(GeneratorMatrix {
        a,
        basis: basis.clone(),
    })
}

fn pos(basis: &MonomialBasis, e: &[u32]) -> usize {
    basis
        .position(e)
        .expect("generator preserves degree, so every image monomial is in the basis")
}

pub fn matrix_exponential(m: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if t < 0.0 {
        return invalid("negative time in matrix exponential");
    }
    linalg::expm(m, t)
}

/// E[x̃(t+dt) | X(t) = x] = exp(dt·A) x̃.
pub fn conditional_moments(gen: &GeneratorMatrix, x: &[f64], dt: f64) -> Result<DVector<f64>> {
    if !(dt >= 0.0) {
        return invalid("dt must be nonnegative");
    }
    if x.len() != gen.basis.d {
        return invalid("state has wrong dimension");
    }
    let e = linalg::expm(&gen.a, dt)?;
    let mut out = e * gen.basis.eval(x);
    out[0] = 1.0;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct StationaryMoments {
    /// E x̃ without the leading 1 (length N−1).
    pub moments: DVector<f64>,
    /// 1-norm condition number of the solved system.
    pub condition: f64,
}

impl StationaryMoments {
    /// (1, moments')', aligned with the basis.
    pub fn full(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.moments.len() + 1);
        v[0] = 1.0;
        v.rows_mut(1, self.moments.len()).copy_from(&self.moments);
        v
    }
}

/// Solves (I − E_{2:N,2:N}) m = E_{2:N,1}, E = exp(dt·A).
pub fn stationary_moments(gen: &GeneratorMatrix, dt: f64) -> Result<StationaryMoments> {
    if !(dt > 0.0) {
        return invalid("dt must be positive");
    }
    let e = linalg::expm(&gen.a, dt)?;
    stationary_from_exp(gen, &e)
}

/// Same as [`stationary_moments`] with a precomputed exp(dt·A).
pub fn stationary_from_exp(gen: &GeneratorMatrix, e: &DMatrix<f64>) -> Result<StationaryMoments> {
    let n = gen.a.nrows();
    // the degree-k block's spectrum is made of k-sums of the drift spectrum, so
    // a stable drift is necessary and sufficient for an attracting fixed point
    let d = gen.basis.d;
    let drift_eig = gen.a.view((1, 1), (d, d)).clone_owned().complex_eigenvalues();
    if drift_eig.iter().any(|z| !(z.re < 0.0)) {
        return numerical(format!(
            "process is not stationary; drift eigenvalues {:?}",
            drift_eig.iter().map(|z| (z.re, z.im)).collect::<Vec<_>>()
        ));
    }
    let sys = DMatrix::identity(n - 1, n - 1) - e.view((1, 1), (n - 1, n - 1));
    let rhs = e.view((1, 0), (n - 1, 1)).clone_owned();
    let rc = linalg::rcond(&sys);
    let lu = sys.lu();
    let sol = lu.solve(&rhs);
    match sol {
        Some(m) if rc > 1e-14 && m.iter().all(|v| v.is_finite()) => Ok(StationaryMoments {
            moments: m.column(0).into_owned(),
            condition: 1.0 / rc,
        }),
        _ => {
            let d = gen.basis.d;
            let beta = gen.a.view((1, 1), (d, d)).clone_owned();
            let eig = beta.complex_eigenvalues();
            numerical(format!(
                "stationary moment system is singular (rcond {rc:.3e}); drift eigenvalues {:?}",
                eig.iter().map(|z| (z.re, z.im)).collect::<Vec<_>>()
            ))
        }
    }
}

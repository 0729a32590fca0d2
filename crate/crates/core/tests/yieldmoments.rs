use approx::assert_relative_eq;
use atsm_gmm::model::ParamVector;
use atsm_gmm::polyproc::{enumerate_basis, DiffusionSpec};
use atsm_gmm::riccati::{Scheme, TimeGrid, YieldLoadings, DEFAULT_GRID};
use atsm_gmm::simulate::DEFAULT_MATURITIES;
use atsm_gmm::yieldmoments::{
    catalogue_labels, g2, g3, g4, moment_coeff_vectors, vech, vech_inverse, verify_index_maps, MomentEngine,
    MomentLabel, NoiseSpec,
};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

#[test]
fn g_tables_for_three_factors() {
    let mut k = 0;
    for i in 1..=3 {
        for j in i..=3 {
            k += 1;
            assert_eq!(g2(i, j, 3).unwrap(), k);
        }
    }
    assert_eq!(k, 6);
    let mut k = 0;
    for i in 1..=3 {
        for j in i..=3 {
            for m in j..=3 {
                k += 1;
                assert_eq!(g3(i, j, m, 3).unwrap(), k);
            }
        }
    }
    assert_eq!(k, 10);
    let mut k = 0;
    for i in 1..=3 {
        for j in i..=3 {
            for m in j..=3 {
                for n in m..=3 {
                    k += 1;
                    assert_eq!(g4(i, j, m, n, 3).unwrap(), k);
                }
            }
        }
    }
    assert_eq!(k, 15);
}

#[test]
fn g2_for_six_factors_has_21_cases() {
    let mut k = 0;
    for i in 1..=6 {
        for j in i..=6 {
            k += 1;
            assert_eq!(g2(i, j, 6).unwrap(), k);
        }
    }
    assert_eq!(k, 21);
}

#[test]
fn index_maps_agree_with_enumeration() {
    for d in 1..=3 {
        verify_index_maps(d).unwrap();
    }
}

#[test]
fn index_maps_reject_unsorted_or_out_of_range() {
    assert!(g2(2, 1, 3).is_err());
    assert!(g2(0, 1, 3).is_err());
    assert!(g3(1, 1, 4, 3).is_err());
    assert!(g4(1, 3, 2, 3, 3).is_err());
}

#[test]
fn vech_examples() {
    let m = vech_inverse(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3).unwrap();
    assert_eq!(m, DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]));
    assert!(vech_inverse(&[1.0, 2.0], 3).is_err());
}

proptest! {
    #[test]
    fn vech_round_trip(v in prop::collection::vec(-10.0f64..10.0, 10)) {
        let m = vech_inverse(&v, 4).unwrap();
        prop_assert_eq!(&m, &m.transpose());
        prop_assert_eq!(vech(&m), v);
    }

    #[test]
    fn coeff_vectors_reproduce_products(
        a in prop::collection::vec(-2.0f64..2.0, 3),
        b in prop::collection::vec(-2.0f64..2.0, 3),
        x in prop::collection::vec(-1.5f64..1.5, 3),
    ) {
        let basis = enumerate_basis(3, 4).unwrap();
        let mono = basis.eval(&x);
        let c = moment_coeff_vectors(&a, &b).unwrap();
        let la: f64 = a.iter().zip(&x).map(|(p, q)| p * q).sum();
        let lb: f64 = b.iter().zip(&x).map(|(p, q)| p * q).sum();
        let dot = |v: &DVector<f64>, k: usize| v.dot(&mono.rows(basis.offsets[k], v.len()));
        prop_assert!((dot(&c.m2, 2) - la * lb).abs() < 1e-10);
        prop_assert!((dot(&c.m3a, 3) - la * la * lb).abs() < 1e-10);
        prop_assert!((dot(&c.m3b, 3) - la * lb * lb).abs() < 1e-10);
        prop_assert!((dot(&c.m4, 4) - la * la * lb * lb).abs() < 1e-9);
    }

    #[test]
    fn labels_round_trip_through_text(i in 1usize..12, j in 1usize..12, kind in 0usize..6) {
        use MomentLabel::*;
        let l = [Ey(i), Eyy(i, j), Ey2y(i, j), Ey2y2(i, j), Eylag(i), Ey2y2lag(i)][kind];
        prop_assert_eq!(l.to_string().parse::<MomentLabel>().unwrap(), l);
    }
}

#[test]
fn label_parsing_rejects_garbage() {
    for s in ["", "Ey", "Ey 0", "Eyy 1", "Ey 1 2", "Exx 1", "Ey -1"] {
        assert!(s.parse::<MomentLabel>().is_err(), "{s}");
    }
    assert_eq!("Eyy2 3 1".parse::<MomentLabel>().unwrap(), MomentLabel::Ey2y(1, 3));
}

#[test]
fn catalogue_size_and_order() {
    for m in 1..=10 {
        let l = catalogue_labels(m);
        assert_eq!(l.len(), m + m * (m + 1) / 2 + m * m + m * (m + 1) / 2 + 2 * m);
    }
    let l = catalogue_labels(2);
    assert_eq!(l[0], MomentLabel::Ey(1));
    assert_eq!(l[2], MomentLabel::Eyy(1, 1));
    assert_eq!(*l.last().unwrap(), MomentLabel::Ey2y2lag(2));
}

/// Nodes and weights of Gauss–Hermite quadrature for E f(Z), Z ~ N(0,1).
fn hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::zeros(n, n);
    for k in 1..n {
        j[(k, k - 1)] = (k as f64).sqrt();
        j[(k - 1, k)] = (k as f64).sqrt();
    }
    let e = SymmetricEigen::new(j);
    let w = (0..n).map(|k| e.eigenvectors[(0, k)].powi(2)).collect();
    (e.eigenvalues.iter().copied().collect(), w)
}

/// Gaussian one-factor yields: moments by quadrature over the latent AR(1)
/// pair and the measurement noise.
struct GaussOracle {
    mu: f64,
    v: f64,
    rho: f64,
    phi: Vec<f64>,
    psi: Vec<f64>,
    s: f64,
}

impl GaussOracle {
    fn moment(&self, l: &MomentLabel) -> f64 {
        use MomentLabel::*;
        let (z, w) = hermite(8);
        let (i, j) = match *l {
            Ey(i) | Eylag(i) | Ey2y2lag(i) => (i, i),
            Eyy(i, j) | Ey2y(i, j) | Ey2y2(i, j) => (i, j),
        };
        let m = self.phi.len();
        let mut acc = 0.0;
        let idx = (0..5).map(|_| 0..8).multi();
        for k in idx {
            let wt: f64 = k.iter().map(|&q| w[q]).product();
            let x_prev = self.mu + self.v.sqrt() * z[k[0]];
            let x = self.mu + self.rho * (x_prev - self.mu) + (self.v * (1.0 - self.rho * self.rho)).sqrt() * z[k[1]];
            let mut cur = vec![0.0; m];
            let mut prev = vec![0.0; m];
            for q in 0..m {
                cur[q] = self.phi[q] + self.psi[q] * x;
                prev[q] = self.phi[q] + self.psi[q] * x_prev;
            }
            cur[i - 1] += self.s * z[k[2]];
            if j != i {
                cur[j - 1] += self.s * z[k[3]];
            }
            prev[i - 1] += self.s * z[k[4]];
            acc += wt * l.sample_term(&cur, Some(&prev)).unwrap();
        }
        acc
    }
}

/// Cartesian power of small ranges.
trait Multi {
    fn multi(self) -> Vec<Vec<usize>>;
}

impl<I: Iterator<Item = std::ops::Range<usize>>> Multi for I {
    fn multi(self) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for r in self {
            out = out
                .into_iter()
                .flat_map(|p| {
                    r.clone().map(move |k| {
                        let mut q = p.clone();
                        q.push(k);
                        q
                    })
                })
                .collect();
        }
        out
    }
}

fn vasicek_engine(p: usize) -> (MomentEngine, GaussOracle) {
    let (b, beta, sig) = (0.4, -0.7, 0.5);
    let loadings = YieldLoadings {
        maturities: vec![1.0, 2.0, 5.0],
        phi_tilde: DVector::from_vec(vec![0.01, 0.02, 0.03]),
        psi_tilde: DMatrix::from_column_slice(3, 1, &[0.9, 0.7, 0.4]),
    };
    let s2 = 0.04;
    let eng = MomentEngine::with_degree(&DiffusionSpec::vasicek(b, beta, sig), loadings, NoiseSpec::gaussian(s2), 1.0, p)
        .unwrap();
    let oracle = GaussOracle {
        mu: -b / beta,
        v: sig * sig / (-2.0 * beta),
        rho: beta.exp(),
        phi: vec![0.01, 0.02, 0.03],
        psi: vec![0.9, 0.7, 0.4],
        s: s2.sqrt(),
    };
    (eng, oracle)
}

#[test]
fn gaussian_catalogue_matches_quadrature() {
    let (eng, oracle) = vasicek_engine(4);
    let cat = eng.catalogue().unwrap();
    for (l, v) in cat.labels.iter().zip(cat.values.iter()) {
        assert_relative_eq!(*v, oracle.moment(l), max_relative = 1e-9);
    }
}

#[test]
fn non_gaussian_noise_shifts_only_own_fourth_moments() {
    let (eng, _) = vasicek_engine(4);
    let mut heavy = eng.clone();
    heavy.noise.sigma4 = Some(5.0 * 0.04 * 0.04);
    let shift = 2.0 * 0.04 * 0.04;
    for l in catalogue_labels(3) {
        let d = heavy.value(&l).unwrap() - eng.value(&l).unwrap();
        let expect = if matches!(l, MomentLabel::Ey2y2(i, j) if i == j) { shift } else { 0.0 };
        assert!((d - expect).abs() < 1e-14, "{l}: {d}");
    }
}

#[test]
fn labels_outside_panel_are_rejected() {
    let (eng, _) = vasicek_engine(4);
    assert!(eng.value(&MomentLabel::Ey(4)).is_err());
    assert!(eng.value(&MomentLabel::Eyy(1, 7)).is_err());
}

#[test]
fn reduced_basis_agrees_with_full_basis() {
    let p = ParamVector::table1();
    let grid = TimeGrid::new(&DEFAULT_MATURITIES, DEFAULT_GRID).unwrap();
    let full = MomentEngine::from_params(&p, &DEFAULT_MATURITIES, &grid, Scheme::Accurate).unwrap();
    for l in catalogue_labels(10) {
        let small =
            MomentEngine::for_labels(&p, &DEFAULT_MATURITIES, &grid, Scheme::Accurate, &[l]).unwrap();
        assert_eq!(small.basis().p, l.degree());
        assert_relative_eq!(small.value(&l).unwrap(), full.value(&l).unwrap(), max_relative = 1e-9);
    }
}

#[test]
fn symmetric_labels_agree() {
    let p = ParamVector::table1();
    let grid = TimeGrid::new(&DEFAULT_MATURITIES, DEFAULT_GRID).unwrap();
    let eng = MomentEngine::from_params(&p, &DEFAULT_MATURITIES, &grid, Scheme::Accurate).unwrap();
    for (i, j) in [(1, 4), (3, 10), (2, 7)] {
        use MomentLabel::*;
        assert_eq!(eng.value(&Eyy(i, j)).unwrap(), eng.value(&Eyy(j, i)).unwrap());
        assert_relative_eq!(eng.value(&Ey2y2(i, j)).unwrap(), eng.value(&Ey2y2(j, i)).unwrap(), max_relative = 1e-12);
    }
    let cat = eng.contemporaneous_moments().unwrap();
    assert!(cat.get(&MomentLabel::Eyy(5, 2)).is_some());
    assert!(cat.get(&MomentLabel::Eylag(1)).is_none());
    assert_eq!(eng.autocovariance_moments().unwrap().labels.len(), 20);
}

#[test]
fn a13_moments_are_coherent() {
    // variances and the lag-1 correlation bound hold for any valid law
    let p = ParamVector::table1();
    let grid = TimeGrid::new(&DEFAULT_MATURITIES, DEFAULT_GRID).unwrap();
    let eng = MomentEngine::from_params(&p, &DEFAULT_MATURITIES, &grid, Scheme::Accurate).unwrap();
    use MomentLabel::*;
    for i in 1..=10 {
        let m = eng.value(&Ey(i)).unwrap();
        let var = eng.value(&Eyy(i, i)).unwrap() - m * m;
        let cov = eng.value(&Eylag(i)).unwrap() - m * m;
        assert!(var > 0.0);
        assert!(cov.abs() <= var);
        let m2 = eng.value(&Eyy(i, i)).unwrap();
        assert!(eng.value(&Ey2y2(i, i)).unwrap() >= m2 * m2);
    }
}

#[test]
fn cross_time_matrix_matches_expect_cross() {
    let p = ParamVector::table1();
    let grid = TimeGrid::new(&DEFAULT_MATURITIES, DEFAULT_GRID).unwrap();
    let eng = MomentEngine::from_params(&p, &DEFAULT_MATURITIES, &grid, Scheme::Accurate).unwrap();
    let c = eng.cross_time_moments(1, 1).unwrap();
    let b = eng.basis();
    for r in 0..3 {
        for s in 0..3 {
            let mut f = DVector::zeros(b.len());
            let mut g = DVector::zeros(b.len());
            f[1 + r] = 1.0;
            g[1 + s] = 1.0;
            assert_relative_eq!(c[(r, s)], eng.expect_cross(&f, &g).unwrap(), max_relative = 1e-10);
        }
    }
    assert!(eng.cross_time_moments(3, 2).is_err());
}

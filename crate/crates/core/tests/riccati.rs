mod common;

use approx::assert_relative_eq;
use atsm_gmm::model::ParamVector;
use atsm_gmm::riccati::{
    integrate_psi_j, phi, psi_i, psi_j, solve_trajectory, yield_loadings, QSpec, Scheme, TimeGrid, DEFAULT_GRID,
};
use common::{cir_closed, scalar, vasicek_closed};
use nalgebra::DVector;

const TAUS: [f64; 5] = [1.0 / 12.0, 1.0, 5.0, 10.0, 20.0];

#[test]
fn psi_j_examples() {
    let s = scalar(0, 0.0, -1.0, 0.5, 0.0);
    let u = DVector::from_element(1, 0.0);
    assert_eq!(psi_j(0.0, &DVector::from_element(1, 0.7), &s).unwrap()[0], 0.7);
    assert_relative_eq!(psi_j(1.0, &u, &s).unwrap()[0], (-1.0f64).exp() - 1.0, max_relative = 1e-14);
    assert_relative_eq!(psi_j(100.0, &u, &s).unwrap()[0], -1.0, epsilon = 1e-10);
    let sing = scalar(0, 0.0, 0.0, 0.5, 0.0);
    assert!(psi_j(1.0, &u, &sing).is_err());
}

#[test]
fn integrate_psi_j_examples() {
    let s = scalar(0, 0.0, -1.0, 0.5, 0.0);
    let grid = TimeGrid::new(&[1.0], DEFAULT_GRID).unwrap();
    let (lin, sq) = integrate_psi_j(0.0, &s, &grid, Scheme::Accurate).unwrap();
    assert_eq!((lin[0], sq[0]), (0.0, 0.0));
    let (lin, sq) = integrate_psi_j(1.0, &s, &grid, Scheme::Accurate).unwrap();
    assert_relative_eq!(lin[0], -(-1.0f64).exp(), max_relative = 1e-14);
    // ∫(e^{-s} − 1)² ds = ½(1 − e^{-2}) − 2(1 − e^{-1}) + 1
    let e1 = (-1.0f64).exp();
    let exact = 0.5 * (1.0 - e1 * e1) - 2.0 * (1.0 - e1) + 1.0;
    assert_relative_eq!(sq[0], exact, max_relative = 1e-12);
    assert!(integrate_psi_j(0.3337, &s, &grid, Scheme::Accurate).is_err());
    // right sums converge at first order
    let (_, r1) = integrate_psi_j(1.0, &s, &grid, Scheme::RightRiemann).unwrap();
    let grid2 = TimeGrid::new(&[1.0], 2 * DEFAULT_GRID).unwrap();
    let (_, r2) = integrate_psi_j(1.0, &s, &grid2, Scheme::RightRiemann).unwrap();
    assert!((r1[0] - r2[0]).abs() < 1e-4);
    assert!((r1[0] - exact).abs() < 1e-3);
}

#[test]
fn psi_i_examples() {
    let (b, beta, s) = (0.4, -0.8, 0.6);
    let spec = scalar(1, b, beta, s, 0.0);
    let grid = TimeGrid::new(&TAUS, DEFAULT_GRID).unwrap();
    assert_eq!(psi_i(0.0, 0, &spec, &grid, Scheme::Accurate).unwrap(), 0.0);
    for &t in &TAUS {
        let v = psi_i(t, 0, &spec, &grid, Scheme::Accurate).unwrap();
        assert_relative_eq!(v, cir_closed(t, b, beta, s, 0.0).1, max_relative = 1e-8);
    }
    assert!(psi_i(1.0, 1, &spec, &grid, Scheme::Accurate).is_err());
}

#[test]
fn psi_i_ode_residual_on_a13() {
    let spec = ParamVector::table1().q_spec();
    let grid = TimeGrid::new(&[10.0], DEFAULT_GRID).unwrap();
    let tr = solve_trajectory(&spec, &grid, Scheme::Accurate).unwrap();
    for k in [10usize, 500, 1500] {
        let h = tr.t[k + 1] - tr.t[k];
        let d1 = (tr.psi[k + 1][0] - tr.psi[k - 1][0]) / (2.0 * h);
        let p = &tr.psi[k];
        let rhs = 0.5 * spec.sigma[0].powi(2) * spec.bx[(0, 0)] * p[0] * p[0]
            + (0..3).map(|j| spec.beta[(j, 0)] * p[j]).sum::<f64>()
            + 0.5 * (1..3).map(|j| spec.sigma[j].powi(2) * spec.bx[(0, j)] * p[j] * p[j]).sum::<f64>()
            - 1.0;
        assert!((d1 - rhs).abs() < 1e-5, "t={}: {d1} vs {rhs}", tr.t[k]);
    }
}

#[test]
fn phi_examples() {
    let grid = TimeGrid::new(&TAUS, DEFAULT_GRID).unwrap();
    let v = scalar(0, 0.3, -0.5, 0.2, 0.02);
    let c = scalar(1, 0.3, -0.5, 0.2, 0.02);
    assert_eq!(phi(0.0, &v, &grid, Scheme::Accurate).unwrap(), 0.0);
    for &t in &[1.0, 5.0, 10.0] {
        let pv = phi(t, &v, &grid, Scheme::Accurate).unwrap();
        assert!((pv - vasicek_closed(t, 0.3, -0.5, 0.2, 0.02).0).abs() < 1e-6);
        let pc = phi(t, &c, &grid, Scheme::Accurate).unwrap();
        assert!((pc - cir_closed(t, 0.3, -0.5, 0.2, 0.02).0).abs() < 1e-6);
    }
}

#[test]
fn yields_match_closed_forms() {
    let grid = TimeGrid::new(&TAUS, DEFAULT_GRID).unwrap();
    let (b, beta, s, g0) = (0.3, -0.5, 0.2, 0.02);
    let x = 0.03;
    for (spec, closed) in [
        (scalar(0, b, beta, s, g0), vasicek_closed as fn(f64, f64, f64, f64, f64) -> (f64, f64)),
        (scalar(1, b, beta, s, g0), cir_closed),
    ] {
        let l = yield_loadings(&spec, &TAUS, &grid, Scheme::Accurate).unwrap();
        let y = l.yields(&[x]);
        for (i, &t) in TAUS.iter().enumerate() {
            let (ph, ps) = closed(t, b, beta, s, g0);
            assert!((y[i] - (-(ph + ps * x) / t)).abs() < 1e-6);
        }
    }
}

#[test]
fn short_rate_limit() {
    let p = ParamVector::table1();
    let taus = [1e-4, 1.0];
    let grid = TimeGrid::new(&taus, DEFAULT_GRID).unwrap();
    let l = yield_loadings(&p.q_spec(), &taus, &grid, Scheme::Accurate).unwrap();
    let x = [1.5, 0.1, -0.2];
    let r = p.gamma0() + x.iter().sum::<f64>();
    assert_relative_eq!(l.yields(&x)[0], r, max_relative = 1e-2);
}

#[test]
fn rejects_bad_maturities() {
    let s = scalar(0, 0.3, -0.5, 0.2, 0.02);
    let grid = TimeGrid::new(&[1.0], 10).unwrap();
    assert!(yield_loadings(&s, &[0.0, 1.0], &grid, Scheme::Accurate).is_err());
    assert!(yield_loadings(&s, &[-1.0], &grid, Scheme::Accurate).is_err());
    assert!(yield_loadings(&s, &[2.0, 1.0], &grid, Scheme::Accurate).is_err());
    assert!(TimeGrid::new(&[1.0, 1.0], 10).is_err());
}

#[test]
fn degenerate_fast_mean_reversion_is_finite_and_monotone() {
    let taus: Vec<f64> = (1..=20).map(|k| k as f64).collect();
    let grid = TimeGrid::new(&taus, DEFAULT_GRID).unwrap();
    for beta in [-5.0, -20.0, -50.0] {
        let l = yield_loadings(&scalar(0, 0.0, beta, 0.5, 0.0), &taus, &grid, Scheme::Accurate).unwrap();
        assert!(l.phi_tilde.iter().chain(l.psi_tilde.iter()).all(|v| v.is_finite()));
        let psi: Vec<f64> = l.psi_tilde.column(0).iter().copied().collect();
        assert!(psi.windows(2).all(|w| w[1] <= w[0]), "loadings not monotone for beta={beta}");
    }
}

#[test]
fn grid_points_cover_maturities_once() {
    let grid = TimeGrid::new(&[0.0833, 0.25, 1.0, 7.0, 20.0], 2000).unwrap();
    for (l, &tau) in [0.0833, 0.25, 1.0, 7.0, 20.0].iter().enumerate() {
        assert_eq!(grid.points.iter().filter(|&&t| t == tau).count(), 1);
        assert_eq!(grid.points[grid.maturity_index[l]], tau);
    }
    assert!(grid.points.windows(2).all(|w| w[1] > w[0]));
}

/// Plain RK4 on the full three-factor Riccati system, as an independent oracle.
fn rk4_full(spec: &QSpec, tau: f64, steps: usize) -> (f64, [f64; 3]) {
    let rhs = |psi: &[f64; 3]| -> (f64, [f64; 3]) {
        let mut d = [0.0; 3];
        for i in 0..3 {
            d[i] = -spec.gammax[i];
            for k in 0..3 {
                d[i] += spec.beta[(k, i)] * psi[k] + 0.5 * spec.sigma[k].powi(2) * spec.bx[(i, k)] * psi[k] * psi[k];
            }
        }
        let dphi = (0..3)
            .map(|k| spec.b[k] * psi[k] + 0.5 * spec.sigma[k].powi(2) * spec.b0[k] * psi[k] * psi[k])
            .sum::<f64>()
            - spec.gamma0;
        (dphi, d)
    };
    let h = tau / steps as f64;
    let (mut ph, mut ps) = (0.0, [0.0; 3]);
    let add = |a: &[f64; 3], b: &[f64; 3], c: f64| [a[0] + c * b[0], a[1] + c * b[1], a[2] + c * b[2]];
    for _ in 0..steps {
        let (f1, k1) = rhs(&ps);
        let (f2, k2) = rhs(&add(&ps, &k1, h / 2.0));
        let (f3, k3) = rhs(&add(&ps, &k2, h / 2.0));
        let (f4, k4) = rhs(&add(&ps, &k3, h));
        ph += h / 6.0 * (f1 + 2.0 * f2 + 2.0 * f3 + f4);
        for i in 0..3 {
            ps[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    (ph, ps)
}

#[test]
fn a13_loadings_match_rk4_oracle() {
    let p = ParamVector::table1();
    let spec = p.q_spec();
    let grid = TimeGrid::new(&TAUS, DEFAULT_GRID).unwrap();
    let l = yield_loadings(&spec, &TAUS, &grid, Scheme::Accurate).unwrap();
    for (i, &t) in TAUS.iter().enumerate() {
        let (ph, ps) = rk4_full(&spec, t, 20_000);
        assert_relative_eq!(l.phi_tilde[i], -ph / t, max_relative = 1e-8, epsilon = 1e-10);
        for j in 0..3 {
            assert_relative_eq!(l.psi_tilde[(i, j)], -ps[j] / t, max_relative = 1e-8, epsilon = 1e-10);
        }
    }
}

#[test]
fn right_riemann_scheme_is_close_but_coarser() {
    // the right-sum scheme freezes the time-varying coefficients inside each
    // matrix exponential, so it is only accurate to a few percent
    let spec = ParamVector::table1().q_spec();
    let grid = TimeGrid::new(&TAUS, DEFAULT_GRID).unwrap();
    let a = yield_loadings(&spec, &TAUS, &grid, Scheme::Accurate).unwrap();
    let r = yield_loadings(&spec, &TAUS, &grid, Scheme::RightRiemann).unwrap();
    let rel = a
        .phi_tilde
        .iter()
        .zip(r.phi_tilde.iter())
        .chain(a.psi_tilde.iter().zip(r.psi_tilde.iter()))
        .map(|(x, y)| ((x - y) / x).abs())
        .fold(0.0, f64::max);
    assert!(rel < 0.05 && rel > 1e-9, "scheme gap {rel}");
}

#[test]
fn loadings_ignore_p_parameters() {
    let p = ParamVector::table1();
    let mut q = p.clone();
    for k in 9..16 {
        q.v[k] *= 1.3;
    }
    q.v[1] = 2.2;
    let grid = TimeGrid::new(&TAUS, DEFAULT_GRID).unwrap();
    let a = yield_loadings(&p.q_spec(), &TAUS, &grid, Scheme::Accurate).unwrap();
    let b = yield_loadings(&q.q_spec(), &TAUS, &grid, Scheme::Accurate).unwrap();
    assert_eq!(a.phi_tilde, b.phi_tilde);
    assert_eq!(a.psi_tilde, b.psi_tilde);
}

#[test]
fn blow_up_is_reported() {
    // large Σ with weak mean reversion: the scalar Riccati equation explodes
    let spec = QSpec {
        gammax: DVector::from_element(1, -1.0),
        ..scalar(1, 0.1, -0.01, 2.0, 0.0)
    };
    let grid = TimeGrid::new(&[30.0], DEFAULT_GRID).unwrap();
    let err = yield_loadings(&spec, &[30.0], &grid, Scheme::Accurate).unwrap_err().to_string();
    assert!(err.contains("blows up") || err.contains("non-finite"), "{err}");
}

#[test]
fn a13_loadings_stable_under_grid_refinement() {
    let spec = ParamVector::table1().q_spec();
    let g1 = TimeGrid::new(&TAUS, DEFAULT_GRID).unwrap();
    let g2 = TimeGrid::new(&TAUS, 2 * DEFAULT_GRID).unwrap();
    let a = yield_loadings(&spec, &TAUS, &g1, Scheme::Accurate).unwrap();
    let b = yield_loadings(&spec, &TAUS, &g2, Scheme::Accurate).unwrap();
    assert!((&a.phi_tilde - &b.phi_tilde).amax() < 1e-5);
    assert!((&a.psi_tilde - &b.psi_tilde).amax() < 1e-5);
}

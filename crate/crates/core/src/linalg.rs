//! Dense helpers: matrix exponential, 2×2 closed forms, small solves.

use nalgebra::{DMatrix, Matrix2};

use crate::error::{invalid, Result};

// Padé(13) coefficients, Higham (2005).
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// exp(t·M) by scaling and squaring with a degree-13 Padé approximant.
pub fn expm(m: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return invalid("expm needs a square matrix");
    }
    if !t.is_finite() || m.iter().any(|v| !v.is_finite()) {
        return invalid("expm input is not finite");
    }
    let n = m.nrows();
    let a = m * t;
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if norm1 == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    let s = if norm1 > THETA13 {
        (norm1 / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = a / 2f64.powi(s);
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &B13;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = &a * (u_inner + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let v_inner = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = v_inner + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| crate::error::Error::Numerical("expm Padé denominator singular".into()))?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

/// exp(K) for a real 2×2 matrix, closed form.
pub fn expm2(k: &Matrix2<f64>) -> Matrix2<f64> {
    let s = 0.5 * (k[(0, 0)] + k[(1, 1)]);
    let det = k[(0, 0)] * k[(1, 1)] - k[(0, 1)] * k[(1, 0)];
    let disc = s * s - det;
    // exp(K) = e^s [c(q) I + sh(q) (K - sI)], with c = cosh(√disc), sh = sinh(√disc)/√disc
    let (c, sh) = if disc.abs() < 1e-8 {
        // series in disc
        (1.0 + disc / 2.0 + disc * disc / 24.0, 1.0 + disc / 6.0 + disc * disc / 120.0)
    } else if disc > 0.0 {
        let q = disc.sqrt();
        (q.cosh(), q.sinh() / q)
    } else {
        let q = (-disc).sqrt();
        (q.cos(), q.sin() / q)
    };
    let shifted = k - Matrix2::identity() * s;
    (Matrix2::identity() * c + shifted * sh) * s.exp()
}

/// Reciprocal 1-norm condition estimate via explicit inverse; fine for the small
/// matrices used here.
pub fn rcond(m: &DMatrix<f64>) -> f64 {
    let n1 = norm1(m);
    match m.clone().try_inverse() {
        Some(inv) if n1 > 0.0 => 1.0 / (n1 * norm1(&inv)),
        _ => 0.0,
    }
}

pub fn norm1(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

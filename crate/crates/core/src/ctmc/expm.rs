//! Dense matrix exponential by scaling and squaring with diagonal Pade
//! approximants, order selected from the 1-norm of the argument.

use nalgebra::DMatrix;

use crate::{Error, Result};

const THETA_3: f64 = 1.495_585_217_958_292e-2;
const THETA_5: f64 = 2.539_398_330_063_23e-1;
const THETA_7: f64 = 9.504_178_996_162_932e-1;
const THETA_9: f64 = 2.097_847_961_257_068;
const THETA_13: f64 = 5.371_920_351_148_152;

const B_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B_7: [f64; 8] = [
    17_297_280.0,
    8_648_640.0,
    1_995_840.0,
    277_200.0,
    25_200.0,
    1_512.0,
    56.0,
    1.0,
];
const B_9: [f64; 10] = [
    17_643_225_600.0,
    8_821_612_800.0,
    2_075_673_600.0,
    302_702_400.0,
    30_270_240.0,
    2_162_160.0,
    110_880.0,
    3_960.0,
    90.0,
    1.0,
];
const B_13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

fn one_norm(a: &DMatrix<f64>) -> f64 {
    let mut max = 0.0f64;
    for j in 0..a.ncols() {
        let s: f64 = a.column(j).iter().map(|v| v.abs()).sum();
        max = max.max(s);
    }
    max
}

/// Solve (V - U) F = (V + U); the Pade numerator/denominator share U and V.
fn pade_solve(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let denom = &v - &u;
    let numer = v + u;
    denom
        .lu()
        .solve(&numer)
        .ok_or_else(|| Error::Numerical("singular Pade denominator in matrix exponential".into()))
}

/// Orders 3, 5, 7, 9: U = A (b1 I + b3 A^2 + ...), V = b0 I + b2 A^2 + ...
fn pade_low(a: &DMatrix<f64>, b: &[f64]) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let a2 = a * a;
    let mut even = DMatrix::<f64>::identity(n, n) * b[0];
    let mut odd = DMatrix::<f64>::identity(n, n) * b[1];
    let mut pow = DMatrix::<f64>::identity(n, n);
    for k in 1..=(b.len() - 1) / 2 {
        pow = &pow * &a2;
        even += &pow * b[2 * k];
        if 2 * k + 1 < b.len() {
            odd += &pow * b[2 * k + 1];
        }
    }
    pade_solve(a * odd, even)
}

fn pade_13(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let b = &B_13;
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_hi = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u_lo = &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1];
    let u = a * (u_hi + u_lo);
    let v_hi = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = v_hi + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    pade_solve(u, v)
}

/// exp(A) for a square real matrix.
pub(crate) fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    assert_eq!(a.nrows(), a.ncols(), "expm requires a square matrix");
    let norm = one_norm(a);
    if !norm.is_finite() {
        return Err(Error::Numerical("non-finite entries in matrix exponential".into()));
    }
    if norm <= THETA_3 {
        return pade_low(a, &B_3);
    }
    if norm <= THETA_5 {
        return pade_low(a, &B_5);
    }
    if norm <= THETA_7 {
        return pade_low(a, &B_7);
    }
    if norm <= THETA_9 {
        return pade_low(a, &B_9);
    }
    let s = if norm <= THETA_13 {
        0
    } else {
        (norm / THETA_13).log2().ceil() as u32
    };
    let scaled = a / 2f64.powi(s as i32);
    let mut f = pade_13(&scaled)?;
    for _ in 0..s {
        f = &f * &f;
    }
    Ok(f)
}

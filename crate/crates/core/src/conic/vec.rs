use std::f64::consts::SQRT_2;

use nalgebra::DMatrix;
use num_complex::Complex64;

pub fn svec_len(m: usize) -> usize {
    m * (m + 1) / 2
}

/// Lower-triangle column-major vectorisation with √2 on off-diagonals.
pub fn svec(x: &DMatrix<f64>) -> Vec<f64> {
    let m = x.nrows();
    let mut out = Vec::with_capacity(svec_len(m));
    for j in 0..m {
        out.push(x[(j, j)]);
        for i in j + 1..m {
            out.push(SQRT_2 * 0.5 * (x[(i, j)] + x[(j, i)]));
        }
    }
    out
}

pub fn smat(v: &[f64], m: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(m, m);
    let mut idx = 0;
    for j in 0..m {
        x[(j, j)] = v[idx];
        idx += 1;
        for i in j + 1..m {
            let val = v[idx] / SQRT_2;
            x[(i, j)] = val;
            x[(j, i)] = val;
            idx += 1;
        }
    }
    x
}

pub fn hvec_len(m: usize) -> usize {
    m * m
}

/// Hermitian vectorisation: for each column j the diagonal entry, then
/// √2·Re and √2·Im of every strictly-lower entry. Preserves Re tr(XᴴY).
pub fn hvec(x: &DMatrix<Complex64>) -> Vec<f64> {
    let m = x.nrows();
    let mut out = Vec::with_capacity(hvec_len(m));
    for j in 0..m {
        out.push(x[(j, j)].re);
        for i in j + 1..m {
            let z = (x[(i, j)] + x[(j, i)].conj()) * 0.5;
            out.push(SQRT_2 * z.re);
            out.push(SQRT_2 * z.im);
        }
    }
    out
}

pub fn hmat(v: &[f64], m: usize) -> DMatrix<Complex64> {
    let mut x = DMatrix::zeros(m, m);
    let mut idx = 0;
    for j in 0..m {
        x[(j, j)] = Complex64::new(v[idx], 0.0);
        idx += 1;
        for i in j + 1..m {
            let z = Complex64::new(v[idx], v[idx + 1]) / SQRT_2;
            x[(i, j)] = z;
            x[(j, i)] = z.conj();
            idx += 2;
        }
    }
    x
}

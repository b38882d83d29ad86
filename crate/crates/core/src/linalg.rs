//! Small dense helpers for per-node n×n matrices stored row-major in slices.

use nalgebra::{DMatrix, Matrix3};

/// Number of stored entries of a symmetric n×n matrix.
pub fn sym_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Packed upper-triangle index of entry (i, j).
pub fn sym_index(n: usize, i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    a * n - a * (a + 1) / 2 + b
}

/// Expands packed channels at `node` into a full row-major matrix.
pub fn unpack(n: usize, channels: &[Vec<f64>], node: usize, out: &mut [f64]) {
    for i in 0..n {
        for j in i..n {
            let v = channels[sym_index(n, i, j)][node];
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
}

pub fn cholesky_ok(n: usize, a: &[f64]) -> bool {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    true
}

pub fn determinant(n: usize, a: &[f64]) -> f64 {
    match n {
        1 => a[0],
        2 => a[0] * a[3] - a[1] * a[2],
        3 => {
            a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
                + a[2] * (a[3] * a[7] - a[4] * a[6])
        }
        _ => DMatrix::from_row_slice(n, n, a).determinant(),
    }
}

/// Inverse of a symmetric matrix; `None` when singular.
pub fn inverse(n: usize, a: &[f64], out: &mut [f64]) -> Option<()> {
    match n {
        2 => {
            let det = determinant(2, a);
            if det == 0.0 || !det.is_finite() {
                return None;
            }
            out[0] = a[3] / det;
            out[1] = -a[1] / det;
            out[2] = -a[2] / det;
            out[3] = a[0] / det;
        }
        3 => {
            let det = determinant(3, a);
            if det == 0.0 || !det.is_finite() {
                return None;
            }
            out[0] = (a[4] * a[8] - a[5] * a[7]) / det;
            out[1] = (a[2] * a[7] - a[1] * a[8]) / det;
            out[2] = (a[1] * a[5] - a[2] * a[4]) / det;
            out[3] = (a[5] * a[6] - a[3] * a[8]) / det;
            out[4] = (a[0] * a[8] - a[2] * a[6]) / det;
            out[5] = (a[2] * a[3] - a[0] * a[5]) / det;
            out[6] = (a[3] * a[7] - a[4] * a[6]) / det;
            out[7] = (a[1] * a[6] - a[0] * a[7]) / det;
            out[8] = (a[0] * a[4] - a[1] * a[3]) / det;
        }
        _ => {
            let inv = DMatrix::from_row_slice(n, n, a).try_inverse()?;
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] = inv[(i, j)];
                }
            }
        }
    }
    Some(())
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(n: usize, a: &[f64]) -> Vec<f64> {
    if n == 2 {
        let tr = 0.5 * (a[0] + a[3]);
        let d = 0.5 * (a[0] - a[3]);
        let rad = (d * d + a[1] * a[1]).sqrt();
        return vec![tr - rad, tr + rad];
    }
    let mut ev: Vec<f64> = if n == 3 {
        Matrix3::from_row_slice(a)
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect()
    } else {
        DMatrix::from_row_slice(n, n, a)
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect()
    };
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

pub fn quad_form(n: usize, a: &[f64], u: &[f64], v: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += a[i * n + j] * v[j];
        }
        s += u[i] * row;
    }
    s
}

/// `out = Jᵀ G J` for row-major n×n matrices.
pub fn congruence(n: usize, jac: &[f64], g: &[f64], out: &mut [f64]) {
    for a in 0..n {
        for b in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                let ji = jac[i * n + a];
                if ji == 0.0 {
                    continue;
                }
                for k in 0..n {
                    s += ji * g[i * n + k] * jac[k * n + b];
                }
            }
            out[a * n + b] = s;
        }
    }
}

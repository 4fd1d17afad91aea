use alloc::vec;
use alloc::vec::Vec;

use super::Matrix;
use crate::error::{Error, Result};

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (n, m, p) = (a.rows(), a.cols(), b.cols());
    let mut out = Matrix::zeros(n, p);
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    for i in 0..n {
        for k in 0..m {
            let aik = ad[i * m + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &bd[k * p..(k + 1) * p];
            let orow = &mut od[i * p..(i + 1) * p];
            for (o, &b) in orow.iter_mut().zip(brow) {
                *o += aik * b;
            }
        }
    }
    Ok(out)
}

/// Returns `(dL/da, dL/db)` for `c = a b` given `grad = dL/dc`.
pub fn matmul_backward(a: &Matrix, b: &Matrix, grad: &Matrix) -> Result<(Matrix, Matrix)> {
    if grad.shape() != (a.rows(), b.cols()) {
        return Err(Error::shape("matmul_backward", (a.rows(), b.cols()), grad.shape()));
    }
    let ga = matmul(grad, &b.transpose())?;
    let gb = matmul(&a.transpose(), grad)?;
    Ok((ga, gb))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = libm::exp(*x - max);
            total += *x;
        }
        for x in row.iter_mut() {
            *x /= total;
        }
    }
    out
}

/// Backward of [`softmax_rows`] expressed through its output `y`:
/// `dx = y * (g - <g, y>)` per row.
pub fn softmax_rows_backward(y: &Matrix, grad: &Matrix) -> Result<Matrix> {
    if y.shape() != grad.shape() {
        return Err(Error::shape("softmax_rows_backward", y.shape(), grad.shape()));
    }
    let mut out = Matrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let (yr, gr) = (y.row(r), grad.row(r));
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, &yv), &gv) in out.row_mut(r).iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot);
        }
    }
    Ok(out)
}

/// Normalizes `v` to zero mean and unit population variance, then applies the
/// affine `gamma * x + beta`. A constant `v` maps to `beta`.
pub fn layer_norm(v: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let (normalized, _) = normalize(v, eps);
    normalized
        .iter()
        .zip(gamma)
        .zip(beta)
        .map(|((x, g), b)| g * x + b)
        .collect()
}

fn normalize(v: &[f64], eps: f64) -> (Vec<f64>, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / libm::sqrt(var + eps);
    (v.iter().map(|x| (x - mean) * inv_std).collect(), inv_std)
}

/// Forward results of a row-wise layer norm, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormRows {
    pub output: Matrix,
    pub normalized: Matrix,
    pub inv_std: Vec<f64>,
}

/// Layer norm applied independently to every row; `gamma` and `beta` are `1 x cols`.
pub fn layer_norm_rows(x: &Matrix, gamma: &Matrix, beta: &Matrix, eps: f64) -> Result<LayerNormRows> {
    if gamma.shape() != (1, x.cols()) {
        return Err(Error::shape("layer_norm_rows", x.shape(), gamma.shape()));
    }
    if beta.shape() != (1, x.cols()) {
        return Err(Error::shape("layer_norm_rows", x.shape(), beta.shape()));
    }
    let mut normalized = Matrix::zeros(x.rows(), x.cols());
    let mut output = Matrix::zeros(x.rows(), x.cols());
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let (n, s) = normalize(x.row(r), eps);
        for (c, &xn) in n.iter().enumerate() {
            output.set(r, c, gamma.data()[c] * xn + beta.data()[c]);
        }
        normalized.row_mut(r).copy_from_slice(&n);
        inv_std.push(s);
    }
    Ok(LayerNormRows {
        output,
        normalized,
        inv_std,
    })
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward(saved: &LayerNormRows, gamma: &Matrix, grad: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
    let xhat = &saved.normalized;
    if grad.shape() != xhat.shape() {
        return Err(Error::shape("layer_norm_backward", xhat.shape(), grad.shape()));
    }
    let cols = xhat.cols();
    let n = cols as f64;
    let mut dx = Matrix::zeros(xhat.rows(), cols);
    let mut dgamma = Matrix::zeros(1, cols);
    let mut dbeta = Matrix::zeros(1, cols);
    let mut dxhat = vec![0.0; cols];
    for r in 0..xhat.rows() {
        let (xr, gr) = (xhat.row(r), grad.row(r));
        for c in 0..cols {
            dgamma.data_mut()[c] += gr[c] * xr[c];
            dbeta.data_mut()[c] += gr[c];
            dxhat[c] = gr[c] * gamma.data()[c];
        }
        let mean_d = dxhat.iter().sum::<f64>() / n;
        let mean_dx = dxhat.iter().zip(xr).map(|(d, x)| d * x).sum::<f64>() / n;
        let s = saved.inv_std[r];
        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = s * (dxhat[c] - mean_d - xr[c] * mean_dx);
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// Side-by-side concatenation of matrices with equal row counts.
pub fn concat_cols(parts: &[&Matrix]) -> Result<Matrix> {
    let rows = parts.first().map_or(0, |m| m.rows());
    let total: usize = parts.iter().map(|m| m.cols()).sum();
    let mut out = Matrix::zeros(rows, total);
    let mut offset = 0;
    for part in parts {
        if part.rows() != rows {
            return Err(Error::shape("concat_cols", (rows, offset), part.shape()));
        }
        for r in 0..rows {
            out.row_mut(r)[offset..offset + part.cols()].copy_from_slice(part.row(r));
        }
        offset += part.cols();
    }
    Ok(out)
}

/// Column means as a `1 x cols` matrix.
pub fn mean_rows(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for r in 0..m.rows() {
        out.accumulate(&Matrix::row_vector(m.row(r).to_vec()));
    }
    out.scale(1.0 / m.rows() as f64)
}

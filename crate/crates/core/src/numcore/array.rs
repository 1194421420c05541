use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major `f64` array.
///
/// The shape is fixed at construction; all operations return new arrays.
#[derive(Clone, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Array {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Array{:?}{:?}", self.shape, self.data)
    }
}

impl Array {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Array {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Array {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Array {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Array {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// A 1-D vector.
    pub fn vector(data: Vec<f64>) -> Self {
        Array {
            shape: vec![data.len()],
            data,
        }
    }

    /// A single-row matrix `[1 × n]`.
    pub fn row(data: Vec<f64>) -> Self {
        Array {
            shape: vec![1, data.len()],
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Array::new(&[rows.len(), cols], data)
    }

    pub fn eye(n: usize) -> Self {
        let mut a = Array::zeros(&[n, n]);
        for i in 0..n {
            a.data[i * n + i] = 1.0;
        }
        a
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows when viewed as a matrix (product of all leading extents).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    /// Extent of the last axis.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// Same data, new shape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Array::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Array, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Array {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub(crate) fn check_same_shape(&self, other: &Array) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, &x| acc + x)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, &x| acc + x * x).sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Array) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn transpose(&self) -> Result<Self> {
        if self.shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "transpose needs a matrix, got {:?}",
                self.shape
            )));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Array {
            shape: vec![n, m],
            data: out,
        })
    }

    /// Matrix product `self · other`.
    pub fn matmul(&self, other: &Array) -> Result<Self> {
        let (m, k) = as_matrix(self)?;
        let (k2, n) = as_matrix(other)?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner extents differ: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(&self.data, &other.data, &mut out, m, k, n);
        Ok(Array {
            shape: vec![m, n],
            data: out,
        })
    }

    /// `self · otherᵀ` where `other` is `[n × k]`.
    pub fn matmul_nt(&self, other: &Array) -> Result<Self> {
        let (m, k) = as_matrix(self)?;
        let (n, k2) = as_matrix(other)?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul_nt inner extents differ: {:?} x {:?}T",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(&self.data, &other.data, &mut out, m, k, n);
        Ok(Array {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Numerically stable softmax along `axis` of a 1-D or 2-D array.
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        match (self.shape.len(), axis) {
            (1, 0) => {
                if self.data.is_empty() {
                    return Err(Error::Dimension("softmax over empty axis".into()));
                }
                let mut out = self.data.clone();
                softmax_in_place(&mut out);
                Ok(Array::new(&self.shape, out)?)
            }
            (2, 1) => {
                let (m, n) = (self.shape[0], self.shape[1]);
                if n == 0 {
                    return Err(Error::Dimension("softmax over empty axis".into()));
                }
                let mut out = self.data.clone();
                for i in 0..m {
                    softmax_in_place(&mut out[i * n..(i + 1) * n]);
                }
                Ok(Array::new(&self.shape, out)?)
            }
            (2, 0) => self.transpose()?.softmax(1)?.transpose(),
            _ => Err(Error::Dimension(format!(
                "softmax axis {} invalid for shape {:?}",
                axis, self.shape
            ))),
        }
    }
}

pub(crate) fn as_matrix(a: &Array) -> Result<(usize, usize)> {
    match a.shape.len() {
        1 => Ok((1, a.shape[0])),
        2 => Ok((a.shape[0], a.shape[1])),
        _ => Err(Error::Dimension(format!(
            "expected a matrix, got shape {:?}",
            a.shape
        ))),
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

// The kernels below accumulate each output element over the inner index in
// increasing order, so results are bitwise reproducible.

/// `c += a[m×k] · b[k×n]`
///
/// Every output element accumulates its `k` products in ascending `p`, so the
/// result does not depend on the row blocking below.
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    if n == 0 {
        return;
    }
    let mut rows = c.chunks_exact_mut(n).enumerate();
    let blocked = m - m % 4;
    while let Some((i, c0)) = rows.next() {
        if i >= blocked {
            axpy_row(&a[i * k..(i + 1) * k], b, c0, n);
            continue;
        }
        let (c1, c2, c3) = match (rows.next(), rows.next(), rows.next()) {
            (Some((_, c1)), Some((_, c2)), Some((_, c3))) => (c1, c2, c3),
            _ => unreachable!("blocked rows come in fours"),
        };
        for p in 0..k {
            let (a0, a1, a2, a3) = (a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]);
            if a0 == 0.0 && a1 == 0.0 && a2 == 0.0 && a3 == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for ((((x0, x1), x2), x3), &bv) in c0
                .iter_mut()
                .zip(c1.iter_mut())
                .zip(c2.iter_mut())
                .zip(c3.iter_mut())
                .zip(b_row)
            {
                *x0 += a0 * bv;
                *x1 += a1 * bv;
                *x2 += a2 * bv;
                *x3 += a3 * bv;
            }
        }
    }
}

fn axpy_row(a_row: &[f64], b: &[f64], c_row: &mut [f64], n: usize) {
    for (p, &aip) in a_row.iter().enumerate() {
        if aip == 0.0 {
            continue;
        }
        for (cv, &bv) in c_row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
            *cv += aip * bv;
        }
    }
}

/// `c += a[m×k] · b[n×k]ᵀ`, via a transposed copy of `b` so the inner loop
/// runs over contiguous memory.
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    let mut bt = vec![0.0; k * n];
    for j in 0..n {
        for p in 0..k {
            bt[p * n + j] = b[j * k + p];
        }
    }
    gemm_nn(a, &bt, c, m, k, n);
}

/// `c += a[k×m]ᵀ · b[k×n]`
///
/// Reduction rows are consumed four at a time, but each element still adds
/// them in ascending order.
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    if n == 0 {
        return;
    }
    let blocked = k - k % 4;
    for p in (0..blocked).step_by(4) {
        let (b0, b1, b2, b3) = (
            &b[p * n..(p + 1) * n],
            &b[(p + 1) * n..(p + 2) * n],
            &b[(p + 2) * n..(p + 3) * n],
            &b[(p + 3) * n..(p + 4) * n],
        );
        for (i, c_row) in c.chunks_exact_mut(n).enumerate().take(m) {
            let (a0, a1, a2, a3) = (a[p * m + i], a[(p + 1) * m + i], a[(p + 2) * m + i], a[(p + 3) * m + i]);
            if a0 == 0.0 && a1 == 0.0 && a2 == 0.0 && a3 == 0.0 {
                continue;
            }
            for ((((cv, &x0), &x1), &x2), &x3) in c_row.iter_mut().zip(b0).zip(b1).zip(b2).zip(b3) {
                *cv = *cv + a0 * x0 + a1 * x1 + a2 * x2 + a3 * x3;
            }
        }
    }
    for p in blocked..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &api) in a_row.iter().enumerate() {
            if api == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += api * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_length() {
        assert!(Array::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Array::new(&[0, 3], vec![]).is_ok());
    }

    #[test]
    fn identity_matmul() {
        let a = Array::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(Array::eye(2).matmul(&a).unwrap(), a);
    }

    #[test]
    fn projector_matmul() {
        let p = Array::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let b = Array::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let expected = Array::from_rows(&[vec![5.0, 6.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(p.matmul(&b).unwrap(), expected);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Array::zeros(&[2, 3]);
        let b = Array::zeros(&[2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn transposed_kernels_agree() {
        let a = Array::new(&[3, 4], (0..12).map(|x| x as f64 * 0.5 - 2.0).collect()).unwrap();
        let b = Array::new(&[2, 4], (0..8).map(|x| (x as f64).sin()).collect()).unwrap();
        let nt = a.matmul_nt(&b).unwrap();
        let nn = a.matmul(&b.transpose().unwrap()).unwrap();
        for (x, y) in nt.data().iter().zip(nn.data()) {
            assert!((x - y).abs() < 1e-14);
        }
        let mut tn = vec![0.0; 4 * 2];
        let c = Array::new(&[3, 2], vec![1.0, -1.0, 0.5, 2.0, 3.0, 0.0]).unwrap();
        gemm_tn(a.data(), c.data(), &mut tn, 4, 3, 2);
        let expect = a.transpose().unwrap().matmul(&c).unwrap();
        for (x, y) in tn.iter().zip(expect.data()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let s = Array::vector(vec![0.0, 0.0]).softmax(0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = Array::vector(vec![1000.0, 1000.0]).softmax(0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        assert!(Array::vector(vec![]).softmax(0).is_err());
    }

    #[test]
    fn softmax_columns() {
        let a = Array::from_rows(&[vec![0.0, 5.0], vec![0.0, 5.0]]).unwrap();
        let s = a.softmax(0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5, 0.5, 0.5]);
    }
}

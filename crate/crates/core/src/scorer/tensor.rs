//! Minimal dense row-major tensors in double precision.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data does not fit shape {shape:?}"
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Width of a matrix; 1 for vectors.
    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn fill(&mut self, x: f64) {
        self.data.fill(x);
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Row-wise concatenation `[self | other]`.
    pub fn hcat(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.rows(), other.rows());
        let (a, b) = (self.cols(), other.cols());
        let mut out = Tensor::zeros(&[self.rows(), a + b]);
        for i in 0..self.rows() {
            let r = out.row_mut(i);
            r[..a].copy_from_slice(self.row(i));
            r[a..].copy_from_slice(other.row(i));
        }
        out
    }

    /// Splits columns at `at` into `(left, right)`.
    pub fn hsplit(&self, at: usize) -> (Tensor, Tensor) {
        let (n, c) = (self.rows(), self.cols());
        let mut l = Tensor::zeros(&[n, at]);
        let mut r = Tensor::zeros(&[n, c - at]);
        for i in 0..n {
            l.row_mut(i).copy_from_slice(&self.row(i)[..at]);
            r.row_mut(i).copy_from_slice(&self.row(i)[at..]);
        }
        (l, r)
    }
}

/// `a · b` for `[n, k] · [k, m]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    assert_eq!(k, b.rows(), "matmul shapes {:?} {:?}", a.shape, b.shape);
    let mut out = Tensor::zeros(&[n, m]);
    for i in 0..n {
        let o = &mut out.data[i * m..(i + 1) * m];
        for (p, &x) in a.row(i).iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (y, &w) in o.iter_mut().zip(&b.data[p * m..(p + 1) * m]) {
                *y += x * w;
            }
        }
    }
    out
}

/// `aᵀ · b` for `[k, n]ᵀ · [k, m]`.
pub fn matmul_at_b(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, n, m) = (a.rows(), a.cols(), b.cols());
    assert_eq!(
        k,
        b.rows(),
        "matmul_at_b shapes {:?} {:?}",
        a.shape,
        b.shape
    );
    let mut out = Tensor::zeros(&[n, m]);
    for p in 0..k {
        let br = b.row(p);
        for (i, &x) in a.row(p).iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (y, &w) in out.data[i * m..(i + 1) * m].iter_mut().zip(br) {
                *y += x * w;
            }
        }
    }
    out
}

/// `a · bᵀ` for `[n, k] · [m, k]ᵀ`.
pub fn matmul_a_bt(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k, m) = (a.rows(), a.cols(), b.rows());
    assert_eq!(
        k,
        b.cols(),
        "matmul_a_bt shapes {:?} {:?}",
        a.shape,
        b.shape
    );
    let mut out = Tensor::zeros(&[n, m]);
    for i in 0..n {
        let ar = a.row(i);
        for j in 0..m {
            out.data[i * m + j] = ar.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_agree() {
        let a = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::from_vec(&[3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let ab = matmul(&a, &b);
        assert_eq!(ab.data, vec![58.0, 64.0, 139.0, 154.0]);
        let at = Tensor::from_vec(&[3, 2], vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(matmul_at_b(&at, &b), ab);
        let bt = Tensor::from_vec(&[2, 3], vec![7.0, 9.0, 11.0, 8.0, 10.0, 12.0]);
        assert_eq!(matmul_a_bt(&a, &bt), ab);
    }

    #[test]
    fn concat_and_split() {
        let a = Tensor::from_vec(&[2, 1], vec![1.0, 2.0]);
        let b = Tensor::from_vec(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]);
        let c = a.hcat(&b);
        assert_eq!(c.data, vec![1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        assert_eq!(c.hsplit(1), (a, b));
    }
}

use serde::{Deserialize, Serialize};

/// Dense row-major matrix of `f64`. Vectors are `1 x n` matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data does not match shape");
        Matrix { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        let cols = data.len();
        Matrix {
            rows: 1,
            cols,
            data,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Matrix {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self * other`
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            &self.data,
            self.cols as isize,
            1,
            &other.data,
            other.cols as isize,
            1,
            &mut out.data,
        );
        out
    }

    /// `self^T * other`
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "t_matmul shape mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        gemm(
            self.cols,
            self.rows,
            other.cols,
            &self.data,
            1,
            self.cols as isize,
            &other.data,
            other.cols as isize,
            1,
            &mut out.data,
        );
        out
    }

    /// `self * other^T`
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_t shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.rows);
        gemm(
            self.rows,
            self.cols,
            other.rows,
            &self.data,
            self.cols as isize,
            1,
            &other.data,
            1,
            other.cols as isize,
            &mut out.data,
        );
        out
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, k: f64) {
        for a in &mut self.data {
            *a *= k;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Single-row, rank-one and tiny products skip operand packing.
const DIRECT_GEMM_LIMIT: usize = 32 * 32 * 32;

#[allow(clippy::too_many_arguments)]
fn direct_gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
) {
    let idx =
        |r: usize, rs: isize, col: usize, cs: isize| (r as isize * rs + col as isize * cs) as usize;
    if csb == 1 {
        // rows of B are contiguous: accumulate scaled rows
        for i in 0..m {
            let crow = &mut c[i * n..(i + 1) * n];
            crow.iter_mut().for_each(|x| *x = 0.0);
            for p in 0..k {
                let x = a[idx(i, rsa, p, csa)];
                let start = idx(p, rsb, 0, 1);
                for (cj, bj) in crow.iter_mut().zip(&b[start..start + n]) {
                    *cj += x * bj;
                }
            }
        }
    } else if rsb == 1 && csa == 1 {
        // columns of B are contiguous: dot products
        for i in 0..m {
            let arow = &a[idx(i, rsa, 0, 1)..][..k];
            for j in 0..n {
                let bcol = &b[idx(0, 1, j, csb)..][..k];
                c[i * n + j] = arow.iter().zip(bcol).map(|(x, y)| x * y).sum();
            }
        }
    } else {
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k)
                    .map(|p| a[idx(i, rsa, p, csa)] * b[idx(p, rsb, j, csb)])
                    .sum();
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    if m == 1 || k == 1 || m * k * n <= DIRECT_GEMM_LIMIT {
        direct_gemm(m, k, n, a, rsa, csa, b, rsb, csb, c);
        return;
    }
    // SAFETY: callers pass slices sized for the given shapes and strides,
    // `c` is a fresh row-major m x n buffer that does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                let mut s = 0.0;
                for k in 0..a.cols {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn products_agree_with_naive() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Matrix::from_vec(3, 2, vec![0.5, -1.0, 2.0, 0.0, 1.0, 3.0]);
        assert_eq!(a.matmul(&b), naive(&a, &b));
        assert_eq!(a.t_matmul(&a), naive(&a.transpose(), &a));
        assert_eq!(b.matmul_t(&b), naive(&b, &b.transpose()));
    }

    fn close(x: &Matrix, y: &Matrix) -> bool {
        x.shape() == y.shape()
            && x.data
                .iter()
                .zip(&y.data)
                .all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + b.abs()))
    }

    #[test]
    fn direct_and_packed_paths_agree() {
        let fill = |r: usize, c: usize, s: f64| {
            Matrix::from_vec(
                r,
                c,
                (0..r * c)
                    .map(|i| ((i as f64 * s).sin() * 3.0).round() / 2.0)
                    .collect(),
            )
        };
        for &(m, k, n) in &[
            (1, 7, 5),
            (6, 1, 4),
            (3, 4, 2),
            (40, 50, 45),
            (1, 200, 300),
            (70, 1, 60),
        ] {
            let a = fill(m, k, 0.37);
            let b = fill(k, n, 0.91);
            assert!(close(&a.matmul(&b), &naive(&a, &b)), "matmul {m}x{k}x{n}");
            let at = a.transpose();
            assert!(
                close(&at.t_matmul(&b), &naive(&a, &b)),
                "t_matmul {m}x{k}x{n}"
            );
            let bt = b.transpose();
            assert!(
                close(&a.matmul_t(&bt), &naive(&a, &b)),
                "matmul_t {m}x{k}x{n}"
            );
        }
    }

    #[test]
    fn direct_path_propagates_nan() {
        let a = Matrix::from_vec(1, 2, vec![0.0, 1.0]);
        let b = Matrix::from_vec(2, 2, vec![f64::NAN, 1.0, 2.0, 3.0]);
        assert!(a.matmul(&b).data[0].is_nan());
    }
}

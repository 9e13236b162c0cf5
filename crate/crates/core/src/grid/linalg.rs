use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense square or rectangular matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] += v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.rows == self.cols
            && (0..self.rows)
                .all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    /// Solves `self · x = rhs` in place by Gaussian elimination with partial pivoting.
    /// The matrix is consumed as workspace.
    pub fn solve_in_place(&mut self, rhs: &mut [T]) -> Result<()> {
        let n = self.rows;
        if self.cols != n || rhs.len() != n {
            return Err(Error::Shape(format!(
                "solve needs square system, got {}x{} with rhs {}",
                self.rows,
                self.cols,
                rhs.len()
            )));
        }
        let scale = self
            .data
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m });
        let tiny = scale * T::epsilon() * T::lit(n.max(1) as f64);
        for k in 0..n {
            let (mut piv, mut best) = (k, self.get(k, k).abs());
            for i in k + 1..n {
                let v = self.get(i, k).abs();
                if v > best {
                    piv = i;
                    best = v;
                }
            }
            if !(best > tiny) {
                return Err(Error::Solver(format!("singular matrix at column {k}")));
            }
            if piv != k {
                for j in 0..n {
                    self.data.swap(k * n + j, piv * n + j);
                }
                rhs.swap(k, piv);
            }
            let d = self.get(k, k);
            for i in k + 1..n {
                let f = self.get(i, k) / d;
                if f == T::zero() {
                    continue;
                }
                self.set(i, k, T::zero());
                for j in k + 1..n {
                    let v = self.get(k, j);
                    if v != T::zero() {
                        self.data[i * n + j] -= f * v;
                    }
                }
                let r = rhs[k];
                rhs[i] -= f * r;
            }
        }
        for k in (0..n).rev() {
            let mut acc = rhs[k];
            for (j, &r) in rhs.iter().enumerate().skip(k + 1) {
                acc -= self.get(k, j) * r;
            }
            rhs[k] = acc / self.get(k, k);
        }
        Ok(())
    }
}

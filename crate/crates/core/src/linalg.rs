//! Small dense linear algebra: a square matrix type, complex LU with partial
//! pivoting, and symmetric-indefinite inertia via Bunch-Kaufman pivoting.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Square matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> DenseMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix { n, data: vec![T::default(); n * n] }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        DenseMatrix { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> DenseMatrix<U> {
        DenseMatrix { n: self.n, data: self.data.iter().map(|&x| f(x)).collect() }
    }
}

impl<T> std::ops::Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.n + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for DenseMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.n + j]
    }
}

impl DenseMatrix<f64> {
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self[(i, j)] == self[(j, i)]))
    }

    pub fn to_complex(&self) -> DenseMatrix<Complex64> {
        self.map(|x| Complex64::new(x, 0.0))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self[(i, i)]).collect()
    }
}

/// Relative pivot floor for the LU factorization.
pub const LU_PIVOT_TOL: f64 = 1e-13;

/// LU factorization `P A = L U` with partial pivoting.
#[derive(Clone, Debug)]
pub struct ComplexLu {
    n: usize,
    lu: Vec<Complex64>,
    perm: Vec<usize>,
}

impl ComplexLu {
    /// Fails with `SingularSystem` when a pivot is below `1e-13` of the
    /// largest entry of its original row.
    pub fn factor(a: &DenseMatrix<Complex64>) -> Result<Self> {
        let n = a.dim();
        let mut lu = a.data.clone();
        let row_scale: Vec<f64> = (0..n)
            .map(|i| a.row(i).iter().map(|x| x.norm()).fold(0.0, f64::max))
            .collect();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (mut p, mut best) = (k, -1.0);
            for i in k..n {
                let v = lu[i * n + k].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            let scale = row_scale[perm[p]];
            if !(best > LU_PIVOT_TOL * scale) || !best.is_finite() {
                return Err(Error::SingularSystem { pivot: best, row: perm[p] });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            let (upper, lower) = lu.split_at_mut((k + 1) * n);
            let prow = &upper[k * n..];
            for i in (k + 1)..n {
                let row = &mut lower[(i - k - 1) * n..(i - k) * n];
                let f = row[k] / pivot;
                row[k] = f;
                if f != Complex64::new(0.0, 0.0) {
                    for j in (k + 1)..n {
                        row[j] -= f * prow[j];
                    }
                }
            }
        }
        Ok(ComplexLu { n, lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut x: Vec<Complex64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..(i + 1) * n];
            let mut s = x[i];
            for j in 0..i {
                s -= row[j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n..(i + 1) * n];
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= row[j] * x[j];
            }
            x[i] = s / row[i];
        }
        x
    }

    /// Diagonal entry `(A^-1)[x][x]`.
    pub fn inverse_diagonal_entry(&self, x: usize) -> Complex64 {
        let mut e = vec![Complex64::new(0.0, 0.0); self.n];
        e[x] = Complex64::new(1.0, 0.0);
        self.solve(&e)[x]
    }
}

/// Eigenvalue counts relative to a shift.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Inertia {
    pub negative: usize,
    pub zero: usize,
    pub positive: usize,
}

/// Relative pivot floor below which a shift counts as an eigenvalue hit.
pub const INERTIA_PIVOT_TOL: f64 = 1e-12;

/// Inertia of `A - shift I` for symmetric `A`, by an `L D L^T` factorization
/// with Bunch-Kaufman symmetric pivoting. A pivot below `1e-12` times the
/// matrix scale is reported as `ExactEigenvalueHit`.
pub fn ldlt_inertia(a: &DenseMatrix<f64>, shift: f64) -> Result<Inertia> {
    let n = a.dim();
    let mut m: Vec<f64> = a.data.clone();
    for i in 0..n {
        m[i * n + i] -= shift;
    }
    let scale = m.iter().fold(0.0f64, |s, x| s.max(x.abs())).max(f64::MIN_POSITIVE);
    let tol = INERTIA_PIVOT_TOL * scale;
    let alpha = (1.0 + 17f64.sqrt()) / 8.0;
    let mut inertia = Inertia::default();
    let hit = || Error::ExactEigenvalueHit { threshold: shift };

    let sym_swap = |m: &mut Vec<f64>, i: usize, j: usize| {
        if i == j {
            return;
        }
        for c in 0..n {
            m.swap(i * n + c, j * n + c);
        }
        for r in 0..n {
            m.swap(r * n + i, r * n + j);
        }
    };

    let mut k = 0;
    while k < n {
        let akk = m[k * n + k].abs();
        let (mut r, mut colmax) = (k, 0.0);
        for i in (k + 1)..n {
            let v = m[i * n + k].abs();
            if v > colmax {
                colmax = v;
                r = i;
            }
        }
        if akk.max(colmax) <= tol {
            return Err(hit());
        }
        let two_by_two = if akk >= alpha * colmax {
            false
        } else {
            let mut rowmax = 0.0f64;
            for j in k..n {
                if j != r {
                    rowmax = rowmax.max(m[r * n + j].abs());
                }
            }
            if akk * rowmax >= alpha * colmax * colmax {
                false
            } else if m[r * n + r].abs() >= alpha * rowmax {
                sym_swap(&mut m, k, r);
                false
            } else {
                sym_swap(&mut m, k + 1, r);
                true
            }
        };
        if !two_by_two {
            let d = m[k * n + k];
            if d.abs() <= tol {
                return Err(hit());
            }
            if d > 0.0 {
                inertia.positive += 1;
            } else {
                inertia.negative += 1;
            }
            for i in (k + 1)..n {
                let f = m[i * n + k] / d;
                if f == 0.0 {
                    continue;
                }
                for j in (k + 1)..=i {
                    m[i * n + j] -= f * m[j * n + k];
                }
            }
            // Keep the trailing block symmetric for later pivot searches.
            for i in (k + 1)..n {
                for j in (k + 1)..i {
                    m[j * n + i] = m[i * n + j];
                }
            }
            k += 1;
        } else {
            let (a11, a21, a22) = (m[k * n + k], m[(k + 1) * n + k], m[(k + 1) * n + k + 1]);
            let det = a11 * a22 - a21 * a21;
            if det.abs() <= tol * tol {
                return Err(hit());
            }
            if det < 0.0 {
                inertia.positive += 1;
                inertia.negative += 1;
            } else if a11 > 0.0 {
                inertia.positive += 2;
            } else {
                inertia.negative += 2;
            }
            for i in (k + 2)..n {
                let (ci1, ci2) = (m[i * n + k], m[i * n + k + 1]);
                let w1 = (a22 * ci1 - a21 * ci2) / det;
                let w2 = (a11 * ci2 - a21 * ci1) / det;
                for j in (k + 2)..=i {
                    let (cj1, cj2) = (m[j * n + k], m[j * n + k + 1]);
                    m[i * n + j] -= w1 * cj1 + w2 * cj2;
                }
            }
            for i in (k + 2)..n {
                for j in (k + 2)..i {
                    m[j * n + i] = m[i * n + j];
                }
            }
            k += 2;
        }
    }
    Ok(inertia)
}

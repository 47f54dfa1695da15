//! Dense complex polynomials and companion-matrix root finding.

use num_complex::Complex64;

/// A polynomial with complex coefficients in ascending order.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly {
    coeffs: Vec<Complex64>,
}

impl Poly {
    pub fn new(mut coeffs: Vec<Complex64>) -> Self {
        while coeffs.last().is_some_and(|c| *c == Complex64::new(0.0, 0.0)) {
            coeffs.pop();
        }
        Poly { coeffs }
    }

    pub fn from_real(coeffs: &[f64]) -> Self {
        Self::new(coeffs.iter().map(|&c| Complex64::new(c, 0.0)).collect())
    }

    pub fn zero() -> Self {
        Poly { coeffs: Vec::new() }
    }

    pub fn constant(c: Complex64) -> Self {
        Self::new(vec![c])
    }

    /// The monomial `z`.
    pub fn x() -> Self {
        Self::from_real(&[0.0, 1.0])
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
    }

    pub fn derivative(&self) -> Poly {
        Poly::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| c * k as f64)
                .collect(),
        )
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Drops leading coefficients below `rel_tol` times the largest one.
    pub fn trimmed(&self, rel_tol: f64) -> Poly {
        let cut = rel_tol * self.max_abs_coeff();
        let mut coeffs = self.coeffs.clone();
        while coeffs.last().is_some_and(|c| c.norm() <= cut) {
            coeffs.pop();
        }
        Poly { coeffs }
    }

    pub fn scale(&self, s: Complex64) -> Poly {
        Poly::new(self.coeffs.iter().map(|&c| c * s).collect())
    }

    /// All roots, by eigenvalues of the companion matrix followed by a
    /// Newton polish against the original coefficients.
    pub fn roots(&self) -> Vec<Complex64> {
        let p = self.trimmed(1e-14);
        let Some(deg) = p.degree() else {
            return Vec::new();
        };
        if deg == 0 {
            return Vec::new();
        }
        let lead = p.coeffs[deg];
        let monic: Vec<Complex64> = p.coeffs[..deg].iter().map(|&c| c / lead).collect();
        let mut roots = companion_eigenvalues(&monic);
        let dp = p.derivative();
        for r in roots.iter_mut() {
            *r = newton_polish(&p, &dp, *r);
        }
        roots
    }

    /// Real roots inside `[lo, hi]`: companion roots whose imaginary part is
    /// negligible, refined on the real line. Sorted ascending.
    pub fn real_roots_in(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .roots()
            .into_iter()
            .filter(|r| r.im.abs() <= 1e-8 * (1.0 + r.re.abs()))
            .map(|r| r.re)
            .filter(|&x| x >= lo && x <= hi)
            .collect();
        out.sort_by(f64::total_cmp);
        out.dedup_by(|a, b| (*a - *b).abs() < 1e-10);
        out
    }
}

fn newton_polish(p: &Poly, dp: &Poly, mut z: Complex64) -> Complex64 {
    let mut best = p.eval(z).norm();
    for _ in 0..8 {
        let d = dp.eval(z);
        if d.norm() == 0.0 {
            break;
        }
        let cand = z - p.eval(z) / d;
        let r = p.eval(cand).norm();
        if r.is_finite() && r < best {
            best = r;
            z = cand;
        } else {
            break;
        }
    }
    z
}

impl std::ops::Add for &Poly {
    type Output = Poly;
    fn add(self, o: &Poly) -> Poly {
        let n = self.coeffs.len().max(o.coeffs.len());
        let zero = Complex64::new(0.0, 0.0);
        Poly::new(
            (0..n)
                .map(|k| {
                    self.coeffs.get(k).copied().unwrap_or(zero) + o.coeffs.get(k).copied().unwrap_or(zero)
                })
                .collect(),
        )
    }
}

impl std::ops::Sub for &Poly {
    type Output = Poly;
    fn sub(self, o: &Poly) -> Poly {
        self + &o.scale(Complex64::new(-1.0, 0.0))
    }
}

impl std::ops::Mul for &Poly {
    type Output = Poly;
    fn mul(self, o: &Poly) -> Poly {
        if self.coeffs.is_empty() || o.coeffs.is_empty() {
            return Poly::zero();
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.coeffs.len() + o.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in o.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly::new(out)
    }
}

/// Eigenvalues of the companion matrix of the monic polynomial
/// `z^n + c[n-1] z^(n-1) + ... + c[0]`.
pub fn companion_eigenvalues(c: &[Complex64]) -> Vec<Complex64> {
    let n = c.len();
    if n == 0 {
        return Vec::new();
    }
    let zero = Complex64::new(0.0, 0.0);
    let mut h = vec![vec![zero; n]; n];
    for j in 0..n {
        h[0][j] = -c[n - 1 - j];
    }
    for i in 1..n {
        h[i][i - 1] = Complex64::new(1.0, 0.0);
    }
    hessenberg_eigenvalues(h)
}

/// Shifted QR iteration on a complex upper Hessenberg matrix.
#[allow(clippy::needless_range_loop)]
pub fn hessenberg_eigenvalues(mut h: Vec<Vec<Complex64>>) -> Vec<Complex64> {
    let n = h.len();
    let mut eig = Vec::with_capacity(n);
    if n == 0 {
        return eig;
    }
    let zero = Complex64::new(0.0, 0.0);
    let mut hi = n - 1;
    let mut iter = 0usize;
    while hi > 0 {
        let mut l = hi;
        while l > 0 {
            let s = h[l - 1][l - 1].norm() + h[l][l].norm();
            let s = if s == 0.0 { 1.0 } else { s };
            if h[l][l - 1].norm() <= f64::EPSILON * s {
                h[l][l - 1] = zero;
                break;
            }
            l -= 1;
        }
        if l == hi {
            eig.push(h[hi][hi]);
            hi -= 1;
            iter = 0;
            continue;
        }
        iter += 1;
        if iter > 500 {
            // No convergence: return the diagonal of what is left.
            for k in (0..=hi).rev() {
                eig.push(h[k][k]);
            }
            return eig;
        }
        let (a, b, cc, d) = (h[hi - 1][hi - 1], h[hi - 1][hi], h[hi][hi - 1], h[hi][hi]);
        let shift = if iter % 10 == 0 {
            // Exceptional shift to break cycles.
            d + Complex64::new(h[hi][hi - 1].norm() * 0.75, 0.0)
        } else {
            let half = (a - d) * 0.5;
            let disc = (half * half + b * cc).sqrt();
            let m1 = (a + d) * 0.5 + disc;
            let m2 = (a + d) * 0.5 - disc;
            if (m1 - d).norm() < (m2 - d).norm() {
                m1
            } else {
                m2
            }
        };
        for k in l..=hi {
            h[k][k] -= shift;
        }
        let mut rots = Vec::with_capacity(hi - l);
        for k in l..hi {
            let x = h[k][k];
            let y = h[k + 1][k];
            let r = (x.norm_sqr() + y.norm_sqr()).sqrt();
            let (cr, sr) = if r == 0.0 {
                (Complex64::new(1.0, 0.0), zero)
            } else {
                (x / r, y / r)
            };
            for j in k..=hi {
                let u = h[k][j];
                let v = h[k + 1][j];
                h[k][j] = cr.conj() * u + sr.conj() * v;
                h[k + 1][j] = -sr * u + cr * v;
            }
            rots.push((cr, sr));
        }
        for (idx, k) in (l..hi).enumerate() {
            let (cr, sr) = rots[idx];
            let top = (k + 2).min(hi);
            for row in h.iter_mut().take(top + 1).skip(l) {
                let u = row[k];
                let v = row[k + 1];
                row[k] = u * cr + v * sr;
                row[k + 1] = -u * sr.conj() + v * cr.conj();
            }
        }
        for k in l..=hi {
            h[k][k] += shift;
        }
    }
    eig.push(h[0][0]);
    eig
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted_re(mut v: Vec<Complex64>) -> Vec<Complex64> {
        v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        v
    }

    #[test]
    fn cubic_with_known_roots() {
        // (z - 1)(z + 2)(z - 3i)
        let p = &(&Poly::from_real(&[-1.0, 1.0]) * &Poly::from_real(&[2.0, 1.0]))
            * &Poly::new(vec![Complex64::new(0.0, -3.0), Complex64::new(1.0, 0.0)]);
        let r = sorted_re(p.roots());
        let want = [Complex64::new(-2.0, 0.0), Complex64::new(0.0, 3.0), Complex64::new(1.0, 0.0)];
        for (a, b) in r.iter().zip(want) {
            assert!((a - b).norm() < 1e-13, "{a} vs {b}");
        }
    }

    #[test]
    fn chebyshev_roots() {
        // U_5(x) = 32x^5 - 32x^3 + 6x, roots cos(k pi / 6).
        let p = Poly::from_real(&[0.0, 6.0, 0.0, -32.0, 0.0, 32.0]);
        let got = p.real_roots_in(-1.0, 1.0);
        let mut want: Vec<f64> = (1..6).map(|k| (k as f64 * std::f64::consts::PI / 6.0).cos()).collect();
        want.sort_by(f64::total_cmp);
        assert_eq!(got.len(), 5);
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert!(Poly::zero().roots().is_empty());
        assert!(Poly::from_real(&[3.0]).roots().is_empty());
        assert_eq!(Poly::from_real(&[1.0, 0.0, 0.0]).degree(), Some(0));
        let r = Poly::from_real(&[0.0, 0.0, 0.0, -1.0]).roots();
        assert_eq!(r.len(), 3);
        assert!(r.iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn arithmetic() {
        let a = Poly::from_real(&[1.0, 2.0]);
        let b = Poly::from_real(&[0.0, 1.0, 1.0]);
        assert_eq!(&a * &b, Poly::from_real(&[0.0, 1.0, 3.0, 2.0]));
        assert_eq!(&a - &a, Poly::zero());
        assert_eq!(b.derivative(), Poly::from_real(&[1.0, 2.0]));
        assert_eq!(b.eval(Complex64::new(2.0, 0.0)), Complex64::new(6.0, 0.0));
    }
}

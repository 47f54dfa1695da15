//! The free operator: transfer matrices, the three-term recursion `R_k`,
//! the fixed point `z_lambda`, the support `F` and the exceptional set `S`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::Poly;
use crate::tree::TreeShape;
use crate::uhp::{MoebiusMap, UhpPoint, REL_TOL};

const ONE: Complex64 = Complex64::new(1.0, 0.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Matrix of the single step `z -> -1/(z + 1 + lambda - q)`.
pub fn transfer_matrix(lambda: Complex64, q: f64) -> MoebiusMap {
    MoebiusMap::new_unchecked(ZERO, -ONE, ONE, ONE + lambda - q)
}

/// Product `T_len ... T_1` of the transfer matrices of a chain.
pub fn chain_map(qs: &[f64], lambda: Complex64) -> MoebiusMap {
    qs.iter()
        .fold(MoebiusMap::IDENTITY, |acc, &q| transfer_matrix(lambda, q).mul_unchecked(&acc))
}

#[inline]
fn step(z: Complex64, q: f64, lambda: Complex64) -> Result<Complex64> {
    let shift = ONE + lambda - q;
    let den = z + shift;
    let mag = den.norm();
    if !(mag > REL_TOL * (z.norm() + shift.norm())) {
        return Err(Error::DegenerateDenominator { magnitude: mag });
    }
    Ok(-den.inv())
}

pub(crate) fn phi_chain_c(z: Complex64, qs: &[f64], lambda: Complex64) -> Result<Complex64> {
    qs.iter().try_fold(z, |acc, &q| step(acc, q, lambda))
}

/// The chain `phi_k(z, q_1..q_k, lambda)`; the empty chain is the identity.
pub fn phi_chain(z: UhpPoint, qs: &[f64], lambda: Complex64) -> Result<UhpPoint> {
    if lambda.im < 0.0 {
        return Err(Error::LowerHalfPlaneEnergy { im: lambda.im });
    }
    let w = phi_chain_c(z.to_complex(), qs, lambda)?;
    to_uhp(w)
}

fn to_uhp(w: Complex64) -> Result<UhpPoint> {
    if !(w.im > 0.0) {
        return Err(Error::LeftHalfPlane { im: w.im });
    }
    UhpPoint::new(w.re, w.im)
}

/// Where the principal step is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    /// A principal vertex of degree 3.
    #[default]
    Principal,
    /// The origin, of degree 2: its own diagonal term gains `+1`. The
    /// auxiliary chains below it are unchanged.
    Origin,
}

impl Site {
    fn offset(self) -> f64 {
        match self {
            Site::Principal => 0.0,
            Site::Origin => 1.0,
        }
    }
}

/// Complex-valued principal step without half-plane checks.
#[inline]
pub(crate) fn phi_c(
    z1: Complex64,
    z2: Complex64,
    qs: &[f64],
    lambda: Complex64,
    shape: TreeShape,
    site: Site,
) -> Result<Complex64> {
    let (n, m) = (shape.n, shape.m);
    let a = phi_chain_c(z1, &qs[..n], lambda)?;
    let b = phi_chain_c(z2, &qs[n..n + m], lambda)?;
    let own = lambda + site.offset() - qs[n + m];
    let den = a + b + own;
    let mag = den.norm();
    if !(mag > REL_TOL * (a.norm() + b.norm() + own.norm())) {
        return Err(Error::DegenerateDenominator { magnitude: mag });
    }
    Ok(-den.inv())
}

/// `phi(z1, z2, q_1..q_M, lambda)`: `z1` enters through the bottom chain with
/// `q_1..q_n`, `z2` through the top chain with `q_{n+1}..q_{n+m}`, and `q_M`
/// sits on the vertex itself.
pub fn phi(
    z1: UhpPoint,
    z2: UhpPoint,
    qs: &[f64],
    lambda: Complex64,
    shape: TreeShape,
    site: Site,
) -> Result<UhpPoint> {
    if qs.len() != shape.big_m() {
        return Err(Error::LengthMismatch { expected: shape.big_m(), got: qs.len() });
    }
    if lambda.im < 0.0 {
        return Err(Error::LowerHalfPlaneEnergy { im: lambda.im });
    }
    to_uhp(phi_c(z1.to_complex(), z2.to_complex(), qs, lambda, shape, site)?)
}

/// `R_count(z)` by the three-term recursion `R_0 = 1`, `R_1 = 1 + lambda + z`,
/// `R_{k+1} = (1 + lambda) R_k - R_{k-1}`.
pub fn cheb_r(count: usize, lambda: Complex64, z: Complex64) -> Complex64 {
    let t = ONE + lambda;
    let (mut prev, mut cur) = (-z, ONE);
    for _ in 0..count {
        let next = t * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Eigen-data of the matrix `[[1 + lambda, -1], [1, 0]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChebData {
    pub lambda: Complex64,
    pub mu1: Complex64,
    pub mu2: Complex64,
    pub det: Complex64,
}

/// `mu_{1,2} = t +- sqrt(t^2 - 1)` with `t = (1 + lambda)/2`, principal branch.
pub fn eigen_mu(lambda: Complex64) -> Result<ChebData> {
    if (lambda + 3.0).norm() < 1e-10 || (lambda - 1.0).norm() < 1e-10 {
        return Err(Error::DegenerateEigenvalues { lambda: format!("{lambda}") });
    }
    let t = (ONE + lambda) * 0.5;
    let s = (t * t - 1.0).sqrt();
    Ok(ChebData { lambda, mu1: t + s, mu2: t - s, det: s * 2.0 })
}

impl ChebData {
    /// Closed form of `R_count(z)`.
    pub fn r(&self, count: usize, z: Complex64) -> Complex64 {
        let k = count as i32;
        let diff = |e: i32| self.mu1.powi(e) - self.mu2.powi(e);
        (diff(k) * (ONE + self.lambda + z) - diff(k - 1)) / self.det
    }
}

/// `R_k` as a polynomial in `z`; `R_{-1} = -z`.
fn r_poly_pair(k: usize, lambda: Complex64) -> (Poly, Poly) {
    // Returns (R_{k-1}, R_k).
    let t = Poly::constant(ONE + lambda);
    let (mut prev, mut cur) = (Poly::from_real(&[0.0, -1.0]), Poly::constant(ONE));
    for _ in 0..k {
        let next = &(&t * &cur) - &prev;
        prev = cur;
        cur = next;
    }
    (prev, cur)
}

/// The cubic `z * den(z) - num(z)` whose roots are the fixed points of
/// `z -> phi(z, z, 0, lambda)`.
pub fn fixed_point_polynomial(lambda: Complex64, shape: TreeShape) -> Poly {
    let (rn1, rn) = r_poly_pair(shape.n, lambda);
    let (rm1, rm) = r_poly_pair(shape.m, lambda);
    let num = &rn * &rm;
    let den = &(&(&rn1 * &rm) + &(&rm1 * &rn)) - &num.scale(lambda);
    &(&Poly::x() * &den) - &num
}

/// Relative size below which an imaginary part counts as zero.
pub const FIXED_POINT_IM_TOL: f64 = 1e-10;

/// The fixed point: in the open half-plane, or a real boundary value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedPointValue {
    Upper(UhpPoint),
    RealBoundary(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointResult {
    pub lambda: Complex64,
    pub value: FixedPointValue,
    pub residual: f64,
    pub cubic_roots: Vec<Complex64>,
    /// Extrapolated small-epsilon limit, when the real-axis value needed it.
    pub richardson: Option<Complex64>,
}

impl FixedPointResult {
    pub fn z(&self) -> Complex64 {
        match self.value {
            FixedPointValue::Upper(z) => z.to_complex(),
            FixedPointValue::RealBoundary(x) => Complex64::new(x, 0.0),
        }
    }

    pub fn im(&self) -> f64 {
        self.z().im
    }

    pub fn upper(&self) -> Option<UhpPoint> {
        match self.value {
            FixedPointValue::Upper(z) => Some(z),
            FixedPointValue::RealBoundary(_) => None,
        }
    }

    pub fn upper_or_err(&self) -> Result<UhpPoint> {
        self.upper().ok_or_else(|| Error::NoUpperRoot { lambda: format!("{}", self.lambda) })
    }
}

fn residual_of(z: Complex64, lambda: Complex64, shape: TreeShape, poly: &Poly) -> f64 {
    let zeros = vec![0.0; shape.big_m()];
    match phi_c(z, z, &zeros, lambda, shape, Site::Principal) {
        Ok(w) if w.re.is_finite() && w.im.is_finite() => (z - w).norm(),
        _ => poly.eval(z).norm() / poly.max_abs_coeff().max(f64::MIN_POSITIVE),
    }
}

fn iterate_from_i(lambda: Complex64, shape: TreeShape) -> Complex64 {
    let zeros = vec![0.0; shape.big_m()];
    let mut z = Complex64::new(0.0, 1.0);
    for _ in 0..20_000 {
        match phi_c(z, z, &zeros, lambda, shape, Site::Principal) {
            Ok(w) => {
                let done = (w - z).norm() <= 1e-15 * (1.0 + z.norm());
                z = w;
                if done {
                    break;
                }
            }
            Err(_) => break,
        }
    }
    z
}

fn upper_root(lambda: Complex64, shape: TreeShape, roots: &[Complex64]) -> Complex64 {
    let cands: Vec<Complex64> = roots
        .iter()
        .copied()
        .filter(|r| r.im > FIXED_POINT_IM_TOL * r.norm().max(1.0))
        .collect();
    if cands.len() == 1 {
        return cands[0];
    }
    let it = iterate_from_i(lambda, shape);
    let pool = if cands.is_empty() { roots } else { &cands[..] };
    pool.iter()
        .copied()
        .min_by(|a, b| (a - it).norm().total_cmp(&(b - it).norm()))
        .unwrap_or(it)
}

/// Fixed point `z_lambda` of `z -> phi(z, z, 0, lambda)`.
///
/// For `Im lambda > 0` this is the unique root of the cubic in the upper
/// half-plane (ties broken by iterating from `i`). For real `lambda` a
/// strictly upper root, when present, is the boundary value; otherwise the
/// limit is extrapolated from `epsilon = 1e-9` and `1e-8` and snapped onto
/// the nearest real root.
pub fn fixed_point(lambda: Complex64, shape: TreeShape) -> Result<FixedPointResult> {
    if !(lambda.im >= 0.0) || !lambda.re.is_finite() {
        return Err(Error::LowerHalfPlaneEnergy { im: lambda.im });
    }
    let poly = fixed_point_polynomial(lambda, shape);
    let roots = poly.roots();
    let mut richardson = None;
    let z = if lambda.im > 0.0 {
        upper_root(lambda, shape, &roots)
    } else if let Some(r) = roots
        .iter()
        .copied()
        .filter(|r| r.im.abs() > FIXED_POINT_IM_TOL * r.norm().max(1.0))
        .max_by(|a, b| a.im.total_cmp(&b.im))
    {
        Complex64::new(r.re, r.im.abs())
    } else {
        let z1 = upper_root(lambda + Complex64::new(0.0, 1e-9), shape, &fixed_point_polynomial(lambda + Complex64::new(0.0, 1e-9), shape).roots());
        let z2 = upper_root(lambda + Complex64::new(0.0, 1e-8), shape, &fixed_point_polynomial(lambda + Complex64::new(0.0, 1e-8), shape).roots());
        let z0 = z1 - (z2 - z1) / 9.0;
        richardson = Some(z0);
        roots
            .iter()
            .copied()
            .min_by(|a, b| (a - z0).norm().total_cmp(&(b - z0).norm()))
            .map(|r| Complex64::new(r.re, 0.0))
            .unwrap_or(Complex64::new(z0.re, 0.0))
    };
    let value = if z.im > FIXED_POINT_IM_TOL * z.norm().max(1.0) || (lambda.im > 0.0 && z.im > 0.0) {
        FixedPointValue::Upper(UhpPoint::new(z.re, z.im)?)
    } else {
        FixedPointValue::RealBoundary(z.re)
    };
    let zv = match value {
        FixedPointValue::Upper(u) => u.to_complex(),
        FixedPointValue::RealBoundary(x) => Complex64::new(x, 0.0),
    };
    Ok(FixedPointResult { lambda, value, residual: residual_of(zv, lambda, shape, &poly), cubic_roots: roots, richardson })
}

/// `Im z_lambda` for real `lambda`, zero on failure.
fn im_z(lambda: f64, shape: TreeShape) -> f64 {
    fixed_point(Complex64::new(lambda, 0.0), shape).map(|r| r.im()).unwrap_or(0.0)
}

/// `U_k((1 + lambda)/2)` as a polynomial in `lambda`; `U_{-1} = 0`.
pub fn chebyshev_u_poly(k: isize) -> Poly {
    let t = Poly::from_real(&[1.0, 1.0]);
    let (mut prev, mut cur) = (Poly::zero(), Poly::from_real(&[1.0]));
    if k < 0 {
        return Poly::zero();
    }
    for _ in 0..k {
        let next = &(&t * &cur) - &prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `U_k((1 + lambda)/2)` by recursion.
pub fn chebyshev_u(k: isize, lambda: f64) -> f64 {
    if k < 0 {
        return 0.0;
    }
    let t = 1.0 + lambda;
    let (mut prev, mut cur) = (0.0, 1.0);
    for _ in 0..k {
        let next = t * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportOptions {
    /// `Im z_lambda` above this counts as inside `F`.
    pub threshold: f64,
    /// Endpoint bisection tolerance.
    pub refine_tol: f64,
}

impl Default for SupportOptions {
    fn default() -> Self {
        SupportOptions { threshold: 1e-6, refine_tol: 1e-9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportResult {
    pub shape: TreeShape,
    pub window: (f64, f64),
    /// Maximal open intervals where `Im z_lambda > 0`, before removing `S`.
    pub intervals: Vec<(f64, f64)>,
    /// Isolated real points inside a scanned run where `z_lambda` is real;
    /// intervals are split there.
    pub punctures: Vec<f64>,
    /// The exceptional set in the window (empty for symmetric shapes).
    pub exceptional: Vec<f64>,
    pub grid_step: f64,
}

impl SupportResult {
    pub fn contains(&self, lambda: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| a < lambda && lambda < b)
    }
}

fn grid(window: (f64, f64), step: f64) -> Vec<f64> {
    let (lo, hi) = window;
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| (lo + i as f64 * step).min(hi)).collect()
}

fn bisect(mut inside: f64, mut outside: f64, tol: f64, pred: impl Fn(f64) -> bool) -> f64 {
    while (inside - outside).abs() > tol {
        let mid = 0.5 * (inside + outside);
        if pred(mid) {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    0.5 * (inside + outside)
}

/// Support of the free spectral measure: where `Im z_lambda > 0` on the
/// real axis, plus the exceptional set for asymmetric shapes.
pub fn support_f(shape: TreeShape, window: (f64, f64), step: f64) -> Result<SupportResult> {
    let mut r = support_intervals(shape, window, step, SupportOptions::default())?;
    if !shape.is_symmetric() {
        r.exceptional = exceptional_s_in(shape, window, &r, EXCEPTIONAL_SCAN_STEP)?.lambdas();
    }
    Ok(r)
}

/// The interval part of [`support_f`], without the exceptional set.
pub fn support_intervals(shape: TreeShape, window: (f64, f64), step: f64, opts: SupportOptions) -> Result<SupportResult> {
    if !(step > 0.0) || !(window.0 < window.1) {
        return Err(Error::InvalidArgument("support scan needs step > 0 and lo < hi".into()));
    }
    let xs = grid(window, step);
    let ims: Vec<f64> = xs.par_iter().map(|&x| im_z(x, shape)).collect();
    let inside = |x: f64| im_z(x, shape) > opts.threshold;
    let mut intervals = Vec::new();
    let mut i = 0;
    while i < xs.len() {
        if ims[i] <= opts.threshold {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < xs.len() && ims[i + 1] > opts.threshold {
            i += 1;
        }
        let lo = if start == 0 { window.0 } else { bisect(xs[start], xs[start - 1], opts.refine_tol, inside) };
        let hi = if i + 1 == xs.len() { window.1 } else { bisect(xs[i], xs[i + 1], opts.refine_tol, inside) };
        intervals.push((lo, hi));
        i += 1;
    }

    // Isolated real points: exact candidates where the cubic loses its
    // constant term, and numerical minima of Im z along each run.
    let exact = (&chebyshev_u_poly(shape.n as isize) * &chebyshev_u_poly(shape.m as isize))
        .real_roots_in(window.0, window.1);
    let mut candidates = exact.clone();
    for k in 1..xs.len().saturating_sub(1) {
        if ims[k] > opts.threshold && ims[k] <= ims[k - 1] && ims[k] <= ims[k + 1] && ims[k] < 1e-2 {
            candidates.push(golden_min(xs[k - 1], xs[k + 1], |x| im_z(x, shape)));
        }
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let mut punctures = Vec::new();
    for &c in &candidates {
        let Some(pos) = intervals.iter().position(|&(a, b)| a + opts.refine_tol < c && c < b - opts.refine_tol) else {
            continue;
        };
        if im_z(c, shape) <= opts.threshold {
            let (a, b) = intervals[pos];
            intervals.splice(pos..=pos, [(a, c), (c, b)]);
            punctures.push(c);
        }
    }
    // Endpoints that land on an exact candidate are snapped onto it; a gap
    // of a single grid point around one is a puncture the grid hit.
    let snap = 10.0 * opts.refine_tol;
    for &c in &exact {
        for iv in intervals.iter_mut() {
            if (iv.0 - c).abs() <= snap {
                iv.0 = c;
            }
            if (iv.1 - c).abs() <= snap {
                iv.1 = c;
            }
        }
    }
    for k in 1..intervals.len() {
        let (left, right) = (intervals[k - 1].1, intervals[k].0);
        if right - left <= 2.0 * step {
            if let Some(&c) = exact.iter().find(|&&c| left <= c && c <= right) {
                intervals[k - 1].1 = c;
                intervals[k].0 = c;
                if !punctures.contains(&c) {
                    punctures.push(c);
                }
            }
        }
    }
    punctures.sort_by(f64::total_cmp);
    Ok(SupportResult { shape, window, intervals, punctures, exceptional: Vec::new(), grid_step: step })
}

fn golden_min(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > 1e-13 * (1.0 + a.abs()) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Which polynomial condition an exceptional energy satisfies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// `R_n(z) = R_m(z) = 0` for a common finite `z`.
    CommonZero,
    /// `mu1^{|n-m|} = mu2^{|n-m|}`: `R_n / R_m` is real.
    RatioReal,
    /// `Re(R_n(z_lambda) conj R_m(z_lambda)) = 0`: the ratio is imaginary.
    RatioImaginary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExceptionalPoint {
    pub lambda: f64,
    pub conditions: Vec<Condition>,
    /// Largest `|condition|` among those listed, evaluated directly.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExceptionalSet {
    pub shape: TreeShape,
    pub window: (f64, f64),
    pub points: Vec<ExceptionalPoint>,
    /// Sign changes of the imaginary-ratio condition that are jumps rather
    /// than zeros.
    pub discontinuities: Vec<f64>,
    pub scan_step: f64,
}

impl ExceptionalSet {
    pub fn lambdas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.lambda).collect()
    }
}

/// Grid step used to bracket sign changes of the imaginary-ratio condition.
pub const EXCEPTIONAL_SCAN_STEP: f64 = 1e-4;

/// Normalized resultant of `R_n` and `R_m` in `z`,
/// `U_{n-1} U_m - U_{m-1} U_n`.
pub fn condition_common_zero(shape: TreeShape, lambda: f64) -> f64 {
    let (n, m) = (shape.n as isize, shape.m as isize);
    let res = chebyshev_u(n - 1, lambda) * chebyshev_u(m, lambda) - chebyshev_u(m - 1, lambda) * chebyshev_u(n, lambda);
    let scale = chebyshev_u(n - 1, lambda).abs().max(chebyshev_u(n, lambda).abs()).max(1.0)
        * chebyshev_u(m - 1, lambda).abs().max(chebyshev_u(m, lambda).abs()).max(1.0);
    res / scale
}

/// `(mu1^d - mu2^d)/(mu1 - mu2) = U_{d-1}((1 + lambda)/2)` with `d = |n - m|`.
pub fn condition_ratio_real(shape: TreeShape, lambda: f64) -> f64 {
    let d = shape.n.abs_diff(shape.m) as isize;
    chebyshev_u(d - 1, lambda)
}

/// `Re(R_n conj R_m) / (|R_n|^2 + |R_m|^2)` at `z_lambda`; `None` off `F`.
pub fn condition_ratio_imaginary(shape: TreeShape, lambda: f64) -> Option<f64> {
    let z = fixed_point(Complex64::new(lambda, 0.0), shape).ok()?.upper()?.to_complex();
    Some(ratio_imaginary_at(shape, lambda, z))
}

fn ratio_imaginary_at(shape: TreeShape, lambda: f64, z: Complex64) -> f64 {
    let l = Complex64::new(lambda, 0.0);
    let rn = cheb_r(shape.n, l, z);
    let rm = cheb_r(shape.m, l, z);
    (rn * rm.conj()).re / (rn.norm_sqr() + rm.norm_sqr())
}

/// Exceptional energies in `window`, with the default scan step.
pub fn exceptional_s(shape: TreeShape, window: (f64, f64)) -> Result<ExceptionalSet> {
    exceptional_s_with(shape, window, EXCEPTIONAL_SCAN_STEP)
}

pub fn exceptional_s_with(shape: TreeShape, window: (f64, f64), scan_step: f64) -> Result<ExceptionalSet> {
    if shape.is_symmetric() {
        return Err(Error::ShapeSymmetric(shape.m));
    }
    let support = support_intervals(shape, window, 1e-3, SupportOptions::default())?;
    exceptional_s_in(shape, window, &support, scan_step)
}

fn exceptional_s_in(shape: TreeShape, window: (f64, f64), support: &SupportResult, scan_step: f64) -> Result<ExceptionalSet> {
    if shape.is_symmetric() {
        return Err(Error::ShapeSymmetric(shape.m));
    }
    let (n, m) = (shape.n as isize, shape.m as isize);
    let d = shape.n.abs_diff(shape.m) as isize;
    let mut found: Vec<(f64, Condition, f64)> = Vec::new();

    // Common zero: resultant roots, dropping common zeros at infinity.
    let res = &(&chebyshev_u_poly(n - 1) * &chebyshev_u_poly(m)) - &(&chebyshev_u_poly(m - 1) * &chebyshev_u_poly(n));
    for x in res.real_roots_in(window.0, window.1) {
        let x = polish_real_root(x, |t| condition_common_zero(shape, t));
        let lead = chebyshev_u(n - 1, x).abs() + chebyshev_u(m - 1, x).abs();
        if lead > 1e-8 {
            found.push((x, Condition::CommonZero, condition_common_zero(shape, x).abs()));
        }
    }
    for x in chebyshev_u_poly(d - 1).real_roots_in(window.0, window.1) {
        let x = polish_real_root(x, |t| condition_ratio_real(shape, t));
        found.push((x, Condition::RatioReal, condition_ratio_real(shape, x).abs()));
    }

    // Imaginary ratio: sign changes on a grid strictly inside each interval.
    let mut discontinuities = Vec::new();
    for &(a, b) in &support.intervals {
        let margin = 1e-7 * (1.0 + a.abs().max(b.abs()));
        let (a, b) = (a + margin, b - margin);
        if !(a < b) {
            continue;
        }
        let cells = ((b - a) / scan_step).ceil().max(1.0) as usize;
        let xs: Vec<f64> = (0..=cells).map(|i| if i == cells { b } else { a + i as f64 * (b - a) / cells as f64 }).collect();
        let gs: Vec<Option<f64>> = xs.par_iter().map(|&x| condition_ratio_imaginary(shape, x)).collect();
        for k in 0..cells {
            let (Some(g0), Some(g1)) = (gs[k], gs[k + 1]) else { continue };
            if g0 == 0.0 {
                found.push((xs[k], Condition::RatioImaginary, 0.0));
                continue;
            }
            if g0 * g1 >= 0.0 {
                continue;
            }
            let (mut lo, mut hi, glo) = (xs[k], xs[k + 1], g0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                match condition_ratio_imaginary(shape, mid) {
                    Some(g) if g * glo > 0.0 => lo = mid,
                    Some(_) => hi = mid,
                    None => break,
                }
            }
            let x = if condition_ratio_imaginary(shape, lo).map(f64::abs) <= condition_ratio_imaginary(shape, hi).map(f64::abs) {
                lo
            } else {
                hi
            };
            let g = condition_ratio_imaginary(shape, x).map(f64::abs).unwrap_or(f64::INFINITY);
            if g < 1e-8 {
                found.push((x, Condition::RatioImaginary, g));
            } else {
                discontinuities.push(x);
            }
        }
    }

    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut points: Vec<ExceptionalPoint> = Vec::new();
    for (x, c, r) in found {
        match points.last_mut() {
            Some(p) if (p.lambda - x).abs() < 1e-8 => {
                if !p.conditions.contains(&c) {
                    p.conditions.push(c);
                }
                p.residual = p.residual.max(r);
            }
            _ => points.push(ExceptionalPoint { lambda: x, conditions: vec![c], residual: r }),
        }
    }
    Ok(ExceptionalSet { shape, window, points, discontinuities, scan_step })
}

fn polish_real_root(mut x: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..6 {
        let h = 1e-7 * (1.0 + x.abs());
        let d = (f(x + h) - f(x - h)) / (2.0 * h);
        if d == 0.0 || !d.is_finite() {
            break;
        }
        let nx = x - f(x) / d;
        if f(nx).abs() < f(x).abs() {
            x = nx;
        } else {
            break;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn transfer_examples() {
        let t = transfer_matrix(c(0.0, 0.0), 0.0);
        assert_eq!(t, MoebiusMap::from_real(0.0, -1.0, 1.0, 1.0).unwrap());
        assert_eq!(transfer_matrix(c(1.0, 0.0), 1.0), t);
        let w = t.apply(UhpPoint::I).unwrap();
        assert!((w.to_complex() - c(-0.5, 0.5)).norm() < 1e-15);
    }

    #[test]
    fn chain_examples() {
        let z = UhpPoint::new(0.3, 0.7).unwrap();
        assert_eq!(phi_chain(z, &[], c(0.2, 0.0)).unwrap(), z);
        let w = phi_chain(UhpPoint::I, &[0.0], c(0.0, 0.0)).unwrap();
        assert!((w.to_complex() - c(-0.5, 0.5)).norm() < 1e-15);
        assert!(phi_chain(z, &[0.0], c(0.0, -1.0)).is_err());
    }

    #[test]
    fn phi_reduces_for_bare_binary_tree() {
        let s = TreeShape::new(0, 0);
        let w = phi(UhpPoint::I, UhpPoint::I, &[0.0], c(0.0, 0.0), s, Site::Principal).unwrap();
        assert!((w.to_complex() - c(0.0, 0.5)).norm() < 1e-15);
        assert!(matches!(
            phi(UhpPoint::I, UhpPoint::I, &[0.0, 0.0], c(0.0, 0.0), s, Site::Principal),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn cheb_examples() {
        assert_eq!(cheb_r(0, c(0.3, 0.1), c(2.0, 1.0)), c(1.0, 0.0));
        assert_eq!(cheb_r(1, c(0.0, 0.0), c(0.0, 1.0)), c(1.0, 1.0));
        assert_eq!(cheb_r(2, c(0.0, 0.0), c(0.0, 1.0)), c(0.0, 1.0));
    }

    #[test]
    fn eigen_examples() {
        let d = eigen_mu(c(-1.0, 0.0)).unwrap();
        assert!((d.mu1 - c(0.0, 1.0)).norm() < 1e-15);
        assert!((d.mu2 - c(0.0, -1.0)).norm() < 1e-15);
        assert!((d.det - c(0.0, 2.0)).norm() < 1e-15);
        assert!(matches!(eigen_mu(c(1.0, 0.0)), Err(Error::DegenerateEigenvalues { .. })));
        assert!(matches!(eigen_mu(c(-3.0, 0.0)), Err(Error::DegenerateEigenvalues { .. })));
    }

    #[test]
    fn fixed_point_binary() {
        let s = TreeShape::new(0, 0);
        let r = fixed_point(c(0.0, 0.0), s).unwrap();
        let z = r.upper().unwrap().to_complex();
        assert!((z - c(0.0, std::f64::consts::FRAC_1_SQRT_2)).norm() < 1e-14);
        assert!(r.residual < 1e-14);
        let out = fixed_point(c(3.0, 0.0), s).unwrap();
        assert!(matches!(out.value, FixedPointValue::RealBoundary(_)));
        assert!(fixed_point(c(0.0, -1e-3), s).is_err());
    }

    #[test]
    fn symmetric_shape_has_no_exceptional_set() {
        assert!(matches!(exceptional_s(TreeShape::new(2, 2), (-4.0, 4.0)), Err(Error::ShapeSymmetric(2))));
    }

    #[test]
    fn chebyshev_u_matches_poly() {
        for k in -1..8 {
            let p = chebyshev_u_poly(k);
            for &x in &[-2.5, -1.0, 0.3, 0.9] {
                assert!((p.eval(c(x, 0.0)).re - chebyshev_u(k, x)).abs() < 1e-10);
            }
        }
    }
}

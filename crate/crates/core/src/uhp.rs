//! Upper half-plane points, fractional linear maps, hyperbolic distance and
//! the weight `w`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used by the half-plane kernels.
pub const REL_TOL: f64 = 1e-14;
/// Points with `0 < im < BOUNDARY_IM` are accepted but treated as boundary.
pub const BOUNDARY_IM: f64 = 1e-300;

/// A point of the open upper half-plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct UhpPoint {
    re: f64,
    im: f64,
}

impl UhpPoint {
    pub const I: UhpPoint = UhpPoint { re: 0.0, im: 1.0 };

    pub fn new(re: f64, im: f64) -> Result<Self> {
        if re.is_finite() && im.is_finite() && im > 0.0 {
            Ok(UhpPoint { re, im })
        } else {
            Err(Error::NotInUpperHalfPlane { re, im })
        }
    }

    pub fn from_complex(z: Complex64) -> Result<Self> {
        Self::new(z.re, z.im)
    }

    #[inline]
    pub fn re(&self) -> f64 {
        self.re
    }

    #[inline]
    pub fn im(&self) -> f64 {
        self.im
    }

    #[inline]
    pub fn to_complex(self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }

    /// True when the imaginary part is so small that the point should be
    /// read as a boundary value.
    pub fn is_boundary_adjacent(&self) -> bool {
        self.im < BOUNDARY_IM
    }
}

impl TryFrom<[f64; 2]> for UhpPoint {
    type Error = Error;
    fn try_from(v: [f64; 2]) -> Result<Self> {
        UhpPoint::new(v[0], v[1])
    }
}

impl From<UhpPoint> for [f64; 2] {
    fn from(z: UhpPoint) -> Self {
        [z.re, z.im]
    }
}

impl From<UhpPoint> for Complex64 {
    fn from(z: UhpPoint) -> Self {
        z.to_complex()
    }
}

/// The map `z -> (a z + b) / (c z + d)`, stored unnormalized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MoebiusMap {
    pub a: Complex64,
    pub b: Complex64,
    pub c: Complex64,
    pub d: Complex64,
}

impl MoebiusMap {
    pub const IDENTITY: MoebiusMap = MoebiusMap {
        a: Complex64::new(1.0, 0.0),
        b: Complex64::new(0.0, 0.0),
        c: Complex64::new(0.0, 0.0),
        d: Complex64::new(1.0, 0.0),
    };

    /// Builds a map, rejecting `|ad - bc| <= 1e-12 * scale^2`.
    pub fn new(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Result<Self> {
        let m = MoebiusMap { a, b, c, d };
        m.check()?;
        Ok(m)
    }

    /// Builds a map without the determinant check. Callers guarantee it is
    /// nonsingular (e.g. transfer matrices, which have determinant 1).
    pub const fn new_unchecked(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Self {
        MoebiusMap { a, b, c, d }
    }

    pub fn from_real(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        Self::new(a.into(), b.into(), c.into(), d.into())
    }

    pub fn det(&self) -> Complex64 {
        self.a * self.d - self.b * self.c
    }

    fn scale(&self) -> f64 {
        self.a.norm().max(self.b.norm()).max(self.c.norm()).max(self.d.norm())
    }

    fn check(&self) -> Result<()> {
        let det = self.det().norm();
        let s = self.scale();
        if !(det > 1e-12 * s * s) || !det.is_finite() {
            return Err(Error::SingularMap { det });
        }
        Ok(())
    }

    /// Action on an arbitrary complex number; only the denominator is checked.
    #[inline]
    pub fn apply_complex(&self, z: Complex64) -> Result<Complex64> {
        let den = self.c * z + self.d;
        let scale = self.c.norm() * z.norm() + self.d.norm();
        let mag = den.norm();
        if !(mag > REL_TOL * scale) {
            return Err(Error::DegenerateDenominator { magnitude: mag });
        }
        Ok((self.a * z + self.b) / den)
    }

    /// Action on the upper half-plane.
    pub fn apply(&self, z: UhpPoint) -> Result<UhpPoint> {
        let w = self.apply_complex(z.to_complex())?;
        if !(w.im > 0.0) {
            return Err(Error::LeftHalfPlane { im: w.im });
        }
        UhpPoint::new(w.re, w.im)
    }

    /// Matrix product `self * other`: the result applies `other` first.
    pub fn compose(&self, other: &MoebiusMap) -> Result<MoebiusMap> {
        self.check()?;
        other.check()?;
        Ok(self.mul_unchecked(other))
    }

    #[inline]
    pub(crate) fn mul_unchecked(&self, o: &MoebiusMap) -> MoebiusMap {
        MoebiusMap {
            a: self.a * o.a + self.b * o.c,
            b: self.a * o.b + self.b * o.d,
            c: self.c * o.a + self.d * o.c,
            d: self.c * o.b + self.d * o.d,
        }
    }

    /// Scales to determinant 1. The sign ambiguity remains.
    pub fn normalized(&self) -> MoebiusMap {
        let s = self.det().sqrt();
        MoebiusMap { a: self.a / s, b: self.b / s, c: self.c / s, d: self.d / s }
    }

    /// Equality as maps of the Riemann sphere, i.e. up to a scalar.
    pub fn approx_eq(&self, other: &MoebiusMap, tol: f64) -> bool {
        let x = self.normalized();
        let y = other.normalized();
        let diff = |s: f64| {
            ((x.a - y.a * s).norm())
                .max((x.b - y.b * s).norm())
                .max((x.c - y.c * s).norm())
                .max((x.d - y.d * s).norm())
        };
        let scale = x.scale().max(1.0);
        diff(1.0).min(diff(-1.0)) <= tol * scale
    }
}

impl std::ops::Mul for MoebiusMap {
    type Output = MoebiusMap;
    fn mul(self, rhs: MoebiusMap) -> MoebiusMap {
        self.mul_unchecked(&rhs)
    }
}

/// Hyperbolic distance in the upper half-plane (curvature -1).
pub fn hyperbolic_distance(z1: UhpPoint, z2: UhpPoint) -> f64 {
    let num = (z1.to_complex() - z2.to_complex()).norm();
    2.0 * (num / (2.0 * (z1.im * z2.im).sqrt())).asinh()
}

/// `|z - z_ref|^2 / (Im z Im z_ref)`, which equals `2(cosh d - 1)`.
#[inline]
pub fn weight(z: UhpPoint, z_ref: UhpPoint) -> f64 {
    weight_c(z.to_complex(), z_ref.to_complex())
}

#[inline]
pub(crate) fn weight_c(z: Complex64, z_ref: Complex64) -> f64 {
    (z - z_ref).norm_sqr() / (z.im * z_ref.im)
}

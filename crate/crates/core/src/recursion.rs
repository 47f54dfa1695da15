//! Disordered recursion quantities: branch products, the weight-ratio
//! functional `mu_p`, its N/D bound, and sampling scans.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::free::{fixed_point, phi_c, Site};
use crate::rng::substream;
use crate::tree::TreeShape;
use crate::uhp::{weight_c, UhpPoint};

/// Default weight-sum threshold `W0` of the compact set `K`.
pub const DEFAULT_W0: f64 = 10.0;
/// Hill-climbing steps per start in envelope scans.
pub const DEFAULT_POLISH: usize = 100_000;

/// Chain denominator `A_k(z)`: the product of the factors
/// `1 + lambda - q_i + phi_{i-1}(z)`, computed through the equivalent
/// division-free recursion `A_i = (1 + lambda - q_i) A_{i-1} - A_{i-2}` with
/// `A_0 = 1`, `A_{-1} = -z`.
pub fn chain_denominator(z: Complex64, qs: &[f64], lambda: Complex64) -> Complex64 {
    let (mut prev, mut cur) = (-z, Complex64::new(1.0, 0.0));
    for &q in qs {
        let next = (1.0 + lambda - q) * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchQuantities {
    pub a_n: Complex64,
    pub a_m: Complex64,
    pub b_n: Complex64,
    pub b_m: Complex64,
    pub c_n: Complex64,
    pub c_m: Complex64,
}

/// `A` from `z1`, `B` from `z2`, `C` from `z_ref` with zero potential. The
/// `n` chains use `q_1..q_n`, the `m` chains `q_{n+1}..q_{n+m}`.
pub fn branch_quantities(
    z1: UhpPoint,
    z2: UhpPoint,
    qs: &[f64],
    lambda: Complex64,
    z_ref: UhpPoint,
    shape: TreeShape,
) -> Result<BranchQuantities> {
    if qs.len() != shape.big_m() {
        return Err(Error::LengthMismatch { expected: shape.big_m(), got: qs.len() });
    }
    Ok(branch_quantities_c(z1.to_complex(), z2.to_complex(), qs, lambda, z_ref.to_complex(), shape))
}

fn branch_quantities_c(
    z1: Complex64,
    z2: Complex64,
    qs: &[f64],
    lambda: Complex64,
    zr: Complex64,
    shape: TreeShape,
) -> BranchQuantities {
    let (n, m) = (shape.n, shape.m);
    let (qn, qm) = (&qs[..n], &qs[n..n + m]);
    BranchQuantities {
        a_n: chain_denominator(z1, qn, lambda),
        a_m: chain_denominator(z1, qm, lambda),
        b_n: chain_denominator(z2, qn, lambda),
        b_m: chain_denominator(z2, qm, lambda),
        c_n: chain_denominator(zr, &vec![0.0; n], lambda),
        c_m: chain_denominator(zr, &vec![0.0; m], lambda),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuResult {
    pub mu_p: f64,
    /// Numerator of the closed-form bound, present when all `q` vanish.
    pub n: Option<f64>,
    /// Denominator of the closed-form bound, present when all `q` vanish.
    pub d: Option<f64>,
}

impl MuResult {
    pub fn bound(&self) -> Option<f64> {
        Some(self.n? / self.d?)
    }
}

/// Energy, shape and reference point shared by many `mu_p` evaluations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MuContext {
    pub shape: TreeShape,
    pub lambda: Complex64,
    pub z_ref: UhpPoint,
}

impl MuContext {
    /// Uses the fixed point `z_lambda` as reference; fails off the support.
    pub fn new(lambda: Complex64, shape: TreeShape) -> Result<Self> {
        let z_ref = fixed_point(lambda, shape)?.upper_or_err()?;
        Ok(MuContext { shape, lambda, z_ref })
    }

    /// `mu_p(z1, z2, q, lambda)`, symmetric in `(z1, z2)` by construction.
    pub fn mu_p(&self, z1: UhpPoint, z2: UhpPoint, qs: &[f64], p: f64) -> Result<MuResult> {
        if qs.len() != self.shape.big_m() {
            return Err(Error::LengthMismatch { expected: self.shape.big_m(), got: qs.len() });
        }
        let (a, b) = (z1.to_complex(), z2.to_complex());
        let mu = self.mu_c(a, b, qs, p)?;
        let (n, d) = if qs.iter().all(|&q| q == 0.0) {
            let (n, d) = self.nd_c(a, b);
            (Some(n), Some(d))
        } else {
            (None, None)
        };
        Ok(MuResult { mu_p: mu, n, d })
    }

    pub(crate) fn mu_c(&self, z1: Complex64, z2: Complex64, qs: &[f64], p: f64) -> Result<f64> {
        let zr = self.z_ref.to_complex();
        let e = 1.0 + p;
        let (w1, w2) = (weight_c(z1, zr), weight_c(z2, zr));
        let den = w1.powf(e) + w2.powf(e);
        if !(den > 0.0) {
            return Err(Error::DegeneratePair);
        }
        let f = phi_c(z1, z2, qs, self.lambda, self.shape, Site::Principal)?;
        let g = phi_c(z2, z1, qs, self.lambda, self.shape, Site::Principal)?;
        if !(f.im > 0.0 && g.im > 0.0) {
            return Err(Error::LeftHalfPlane { im: f.im.min(g.im) });
        }
        Ok((weight_c(f, zr).powf(e) + weight_c(g, zr).powf(e)) / den)
    }

    /// Closed-form `N` and `D` with `mu_0 <= N / D` at zero potential.
    pub fn nd_bound(&self, z1: UhpPoint, z2: UhpPoint) -> (f64, f64) {
        self.nd_c(z1.to_complex(), z2.to_complex())
    }

    fn nd_c(&self, z1: Complex64, z2: Complex64) -> (f64, f64) {
        let zr = self.z_ref.to_complex();
        let bq = branch_quantities_c(z1, z2, &vec![0.0; self.shape.big_m()], self.lambda, zr, self.shape);
        let (y1, y2) = (z1.im, z2.im);
        let (x1, x2) = ((z1 - zr).norm(), (z2 - zr).norm());
        let (cn, cm) = (bq.c_n.norm(), bq.c_m.norm());
        let p1 = y1 * bq.b_m.norm_sqr() + y2 * bq.a_n.norm_sqr();
        let p2 = y2 * bq.a_m.norm_sqr() + y1 * bq.b_n.norm_sqr();
        let t1 = x1 * bq.b_m.norm() * cm + x2 * bq.a_n.norm() * cn;
        let t2 = x2 * bq.a_m.norm() * cm + x1 * bq.b_n.norm() * cn;
        let n = (t1 * t1 * p2 + t2 * t2 * p1) * y1 * y2;
        let d = (cm * cm + cn * cn) * p2 * p1 * (x1 * x1 * y2 + x2 * x2 * y1);
        (n, d)
    }

    /// `mu_p` together with `prod(1 + |q_i|^{2(1+p)})`, outside `K`.
    pub fn mu_bound_check(&self, z1: UhpPoint, z2: UhpPoint, qs: &[f64], p: f64, w0: f64) -> Result<(f64, f64)> {
        let zr = self.z_ref;
        let ws = crate::uhp::weight(z1, zr) + crate::uhp::weight(z2, zr);
        if ws < w0 {
            return Err(Error::InsideCompact { weight_sum: ws, threshold: w0 });
        }
        let r = self.mu_p(z1, z2, qs, p)?;
        Ok((r.mu_p, envelope_bound(qs, p)))
    }
}

/// `prod(1 + |q_i|^{2(1+p)})`.
pub fn envelope_bound(qs: &[f64], p: f64) -> f64 {
    qs.iter().map(|q| 1.0 + q.abs().powf(2.0 * (1.0 + p))).product()
}

pub fn mu_p(z1: UhpPoint, z2: UhpPoint, qs: &[f64], lambda: Complex64, p: f64, shape: TreeShape) -> Result<MuResult> {
    MuContext::new(lambda, shape)?.mu_p(z1, z2, qs, p)
}

pub fn mu_bound_check(
    z1: UhpPoint,
    z2: UhpPoint,
    qs: &[f64],
    lambda: Complex64,
    p: f64,
    shape: TreeShape,
    w0: f64,
) -> Result<(f64, f64)> {
    MuContext::new(lambda, shape)?.mu_bound_check(z1, z2, qs, p, w0)
}

/// How sample points are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLaw {
    /// Both points near the real axis: log-uniform `Im` in `[1e-6, 1e-2]`,
    /// Cauchy `Re` clipped to `|Re| <= 1e3`.
    Boundary,
    /// Each point is a boundary probe or a bulk point with equal odds.
    Mixed,
}

/// How potentials are drawn in a scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum QLaw {
    Zero,
    /// Uniform on `[-eta, eta]`.
    Uniform { eta: f64 },
    /// Random sign, `|q| = 10^u` with `u` uniform in `[lo, hi]`.
    LogUniform { lo: f64, hi: f64 },
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

fn boundary_probe<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let im = log_uniform(rng, 1e-6, 1e-2);
    let re = (std::f64::consts::PI * (rng.random::<f64>() - 0.5)).tan().clamp(-1e3, 1e3);
    Complex64::new(re, im)
}

fn bulk_point<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let im = log_uniform(rng, 1e-3, 1e1);
    let re = (std::f64::consts::PI * (rng.random::<f64>() - 0.5)).tan().clamp(-1e3, 1e3);
    Complex64::new(re, im)
}

impl PairLaw {
    fn im_range(&self) -> (f64, f64) {
        match self {
            PairLaw::Boundary => (1e-6, 1e-2),
            PairLaw::Mixed => (1e-6, 1e1),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Complex64, Complex64) {
        match self {
            PairLaw::Boundary => (boundary_probe(rng), boundary_probe(rng)),
            PairLaw::Mixed => {
                let one = |rng: &mut R| if rng.random::<bool>() { boundary_probe(rng) } else { bulk_point(rng) };
                (one(rng), one(rng))
            }
        }
    }
}

impl QLaw {
    /// Moves `q` by a relative step and keeps it inside the law's support.
    fn nudge(&self, q: f64, step: f64, flip: bool) -> f64 {
        match *self {
            QLaw::Zero => 0.0,
            QLaw::Uniform { eta } => (q + step * eta).clamp(-eta, eta),
            QLaw::LogUniform { lo, hi } => {
                let sign = if (q < 0.0) != flip { -1.0 } else { 1.0 };
                let u = (q.abs().log10() + step).clamp(lo, hi);
                sign * 10f64.powf(u)
            }
        }
    }

    pub fn fill<R: Rng + ?Sized>(&self, rng: &mut R, qs: &mut [f64]) {
        for q in qs.iter_mut() {
            *q = match *self {
                QLaw::Zero => 0.0,
                QLaw::Uniform { eta } => eta * (2.0 * rng.random::<f64>() - 1.0),
                QLaw::LogUniform { lo, hi } => {
                    let mag = 10f64.powf(lo + (hi - lo) * rng.random::<f64>());
                    if rng.random::<bool>() {
                        mag
                    } else {
                        -mag
                    }
                }
            };
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanSpec {
    pub pairs: PairLaw,
    pub q: QLaw,
    pub p: f64,
    pub samples: usize,
    pub seed: u64,
    /// When set, only pairs with weight sum at least this are kept.
    pub w0: Option<f64>,
    /// Divide `mu_p` by `prod(1 + |q_i|^{2(1+p)})`.
    pub normalize: bool,
    /// Hill-climbing steps from each of the best sampled points; zero
    /// reports the raw sample maximum.
    #[serde(default)]
    pub polish: usize,
}

/// Supremum found by a scan and where it was attained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanMax {
    pub value: f64,
    pub z1: Complex64,
    pub z2: Complex64,
    pub qs: Vec<f64>,
    /// Largest `N/D` seen (zero-potential scans only).
    pub max_nd: f64,
    /// Count of samples where `mu_0 > N/D` beyond rounding.
    pub nd_violations: usize,
    pub evaluated: usize,
    pub rejected_inside_k: usize,
    pub failures: usize,
}

impl ScanMax {
    fn empty() -> Self {
        ScanMax {
            value: f64::NEG_INFINITY,
            z1: Complex64::new(0.0, 0.0),
            z2: Complex64::new(0.0, 0.0),
            qs: Vec::new(),
            max_nd: f64::NEG_INFINITY,
            nd_violations: 0,
            evaluated: 0,
            rejected_inside_k: 0,
            failures: 0,
        }
    }

    fn merge(mut self, o: ScanMax) -> ScanMax {
        if o.value > self.value {
            self.value = o.value;
            self.z1 = o.z1;
            self.z2 = o.z2;
            self.qs = o.qs;
        }
        self.max_nd = self.max_nd.max(o.max_nd);
        self.nd_violations += o.nd_violations;
        self.evaluated += o.evaluated;
        self.rejected_inside_k += o.rejected_inside_k;
        self.failures += o.failures;
        self
    }
}

const SCAN_CHUNK: usize = 4096;

/// Samples `spec.samples` pairs and returns the largest (optionally
/// normalized) `mu_p`. Deterministic in the seed for any worker count.
pub fn scan_sup(ctx: &MuContext, spec: &ScanSpec) -> ScanMax {
    let n_chunks = spec.samples.div_ceil(SCAN_CHUNK);
    let bigm = ctx.shape.big_m();
    let zr = ctx.z_ref.to_complex();
    let zero_q = matches!(spec.q, QLaw::Zero);
    let chunks = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(spec.seed, &[c as u64]);
            let count = SCAN_CHUNK.min(spec.samples - c * SCAN_CHUNK);
            let mut best = ScanMax::empty();
            let mut qs = vec![0.0; bigm];
            for _ in 0..count {
                let (z1, z2) = spec.pairs.sample(&mut rng);
                spec.q.fill(&mut rng, &mut qs);
                if let Some(w0) = spec.w0 {
                    if weight_c(z1, zr) + weight_c(z2, zr) < w0 {
                        best.rejected_inside_k += 1;
                        continue;
                    }
                }
                let Ok(mu) = ctx.mu_c(z1, z2, &qs, spec.p) else {
                    best.failures += 1;
                    continue;
                };
                best.evaluated += 1;
                if zero_q && spec.p == 0.0 {
                    let (n, d) = ctx.nd_c(z1, z2);
                    let nd = n / d;
                    if nd.is_finite() {
                        best.max_nd = best.max_nd.max(nd);
                        if mu > nd * (1.0 + 1e-9) + 1e-12 {
                            best.nd_violations += 1;
                        }
                    }
                }
                let v = if spec.normalize { mu / envelope_bound(&qs, spec.p) } else { mu };
                if v > best.value {
                    best.value = v;
                    best.z1 = z1;
                    best.z2 = z2;
                    best.qs.clone_from(&qs);
                }
            }
            best
        })
        .collect::<Vec<_>>();
    let mut starts: Vec<(f64, Complex64, Complex64, Vec<f64>)> =
        chunks.iter().filter(|c| c.value.is_finite()).map(|c| (c.value, c.z1, c.z2, c.qs.clone())).collect();
    let mut total = chunks.into_iter().fold(ScanMax::empty(), ScanMax::merge);
    if spec.polish == 0 || starts.is_empty() {
        return total;
    }
    starts.sort_by(|a, b| b.0.total_cmp(&a.0));
    starts.truncate(POLISH_STARTS);
    let polished = starts
        .into_par_iter()
        .enumerate()
        .map(|(i, start)| polish(ctx, spec, start, i as u64))
        .collect::<Vec<_>>();
    for (v, z1, z2, qs) in polished {
        if v > total.value {
            total.value = v;
            total.z1 = z1;
            total.z2 = z2;
            total.qs = qs;
        }
    }
    total
}

const POLISH_STARTS: usize = 8;

/// Random-direction hill climbing in `(Re z, log Im z, log|q|)` with a
/// geometrically shrinking step, restricted to the sampling domain.
fn polish(
    ctx: &MuContext,
    spec: &ScanSpec,
    start: (f64, Complex64, Complex64, Vec<f64>),
    index: u64,
) -> (f64, Complex64, Complex64, Vec<f64>) {
    let mut rng = substream(spec.seed, &[u64::MAX, index]);
    let normal = rand_distr::StandardNormal;
    let zr = ctx.z_ref.to_complex();
    let (lo, hi) = spec.pairs.im_range();
    let eval = |z1: Complex64, z2: Complex64, qs: &[f64]| -> Option<f64> {
        if let Some(w0) = spec.w0 {
            if weight_c(z1, zr) + weight_c(z2, zr) < w0 {
                return None;
            }
        }
        let mu = ctx.mu_c(z1, z2, qs, spec.p).ok()?;
        let v = if spec.normalize { mu / envelope_bound(qs, spec.p) } else { mu };
        v.is_finite().then_some(v)
    };
    let (mut best, mut z1, mut z2, mut qs) = start;
    let move_z = |z: Complex64, h: f64, rng: &mut rand_chacha::ChaCha8Rng| {
        let a: f64 = rng.sample(normal);
        let b: f64 = rng.sample(normal);
        let re = (z.re + h * a * (1.0 + z.re.abs())).clamp(-1e3, 1e3);
        let im = (z.im * (h * b).exp()).clamp(lo, hi);
        Complex64::new(re, im)
    };
    let steps = spec.polish;
    for t in 0..steps {
        let h = 0.5 * (1e-4f64 / 0.5).powf(t as f64 / steps as f64);
        let c1 = move_z(z1, h, &mut rng);
        let c2 = move_z(z2, h, &mut rng);
        let cq: Vec<f64> = qs
            .iter()
            .map(|&q| {
                let d: f64 = rng.sample(normal);
                spec.q.nudge(q, h * d, rng.random::<f64>() < 0.1 * h)
            })
            .collect();
        if let Some(v) = eval(c1, c2, &cq) {
            if v > best {
                best = v;
                z1 = c1;
                z2 = c2;
                qs = cq;
            }
        }
    }
    (best, z1, z2, qs)
}

/// One row of a `mu` scan report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuScanRow {
    pub lambda: Complex64,
    /// Largest `mu_p` at zero potential over boundary probes.
    pub max_mu: f64,
    pub argmax_z1: Complex64,
    pub argmax_z2: Complex64,
    /// Supremum of `mu_p / prod(1 + |q_i|^{2(1+p)})` outside `K`.
    pub fitted_c: f64,
    /// `1 - max_mu`.
    pub fitted_eps: f64,
    /// `max_mu` within `1e-3` of one.
    pub near_one: bool,
    pub evaluated: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuScanConfig {
    pub p: f64,
    pub samples: usize,
    pub envelope_samples: usize,
    pub seed: u64,
    pub w0: f64,
    pub envelope_q: QLaw,
    pub polish: usize,
}

impl Default for MuScanConfig {
    fn default() -> Self {
        MuScanConfig {
            p: 0.1,
            samples: 100_000,
            envelope_samples: 100_000,
            seed: 0,
            w0: DEFAULT_W0,
            envelope_q: QLaw::LogUniform { lo: -3.0, hi: 3.0 },
            polish: DEFAULT_POLISH,
        }
    }
}

/// Boundary-probe maximum of `mu_p` and envelope constant at each energy.
pub fn mu_scan(shape: TreeShape, lambdas: &[Complex64], cfg: &MuScanConfig) -> Result<Vec<MuScanRow>> {
    lambdas
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let ctx = MuContext::new(lambda, shape)?;
            let seed = crate::rng::derive_seed(cfg.seed, &[i as u64]);
            let probe = scan_sup(
                &ctx,
                &ScanSpec { pairs: PairLaw::Boundary, q: QLaw::Zero, p: cfg.p, samples: cfg.samples, seed, w0: None, normalize: false, polish: 0 },
            );
            let env = scan_sup(
                &ctx,
                &ScanSpec {
                    pairs: PairLaw::Mixed,
                    q: cfg.envelope_q,
                    p: cfg.p,
                    samples: cfg.envelope_samples,
                    seed: seed ^ 0x5eed,
                    w0: Some(cfg.w0),
                    normalize: true,
                    polish: cfg.polish,
                },
            );
            Ok(MuScanRow {
                lambda,
                max_mu: probe.value,
                argmax_z1: probe.z1,
                argmax_z2: probe.z2,
                fitted_c: env.value,
                fitted_eps: 1.0 - probe.value,
                near_one: probe.value > 1.0 - 1e-3,
                evaluated: probe.evaluated,
                failures: probe.failures,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn single_factor() {
        let s = TreeShape::new(0, 1);
        let z_ref = UhpPoint::I;
        let bq = branch_quantities(UhpPoint::I, UhpPoint::I, &[0.0, 0.0], c(0.0, 0.0), z_ref, s).unwrap();
        assert_eq!(bq.a_n, c(1.0, 1.0));
        assert_eq!(bq.a_m, c(1.0, 0.0));
    }

    #[test]
    fn c1_at_binary_fixed_point() {
        let zr = UhpPoint::new(0.0, std::f64::consts::FRAC_1_SQRT_2).unwrap();
        assert_eq!(chain_denominator(zr.to_complex(), &[0.0], c(0.0, 0.0)), c(1.0, std::f64::consts::FRAC_1_SQRT_2));
    }

    #[test]
    fn degenerate_pair_and_compact() {
        let s = TreeShape::new(1, 2);
        let ctx = MuContext::new(c(-0.5, 0.0), s).unwrap();
        let q = [0.0; 4];
        assert!(matches!(ctx.mu_p(ctx.z_ref, ctx.z_ref, &q, 0.0), Err(Error::DegeneratePair)));
        assert!(matches!(ctx.mu_bound_check(ctx.z_ref, UhpPoint::I, &q, 0.1, 1e9), Err(Error::InsideCompact { .. })));
    }

    #[test]
    fn binary_isometry_control() {
        let s = TreeShape::new(0, 0);
        let ctx = MuContext::new(c(0.7, 0.0), s).unwrap();
        let z = UhpPoint::new(0.4, 0.2).unwrap();
        let r = ctx.mu_p(z, z, &[0.0], 0.0).unwrap();
        assert!((r.mu_p - 1.0).abs() < 1e-12, "{}", r.mu_p);
    }

    #[test]
    fn bound_term() {
        assert_eq!(envelope_bound(&[0.0; 4], 0.1), 1.0);
        let b = envelope_bound(&[1e3, 0.0, 0.0, 0.0], 0.1);
        assert!((b / 1e3f64.powf(2.2) - 1.0).abs() < 1e-6);
    }
}

//! Pool method for the recursive distributional equation of the forward
//! Green function, moment estimates, density of states and the Stieltjes
//! diagnostic.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::free::{fixed_point, phi_c, Site};
use crate::oracle::free_origin_green;
use crate::rng::{derive_seed, substream};
use crate::stats::{batch_means, median, trapezoid, BATCHES};
use crate::tree::{PotentialModel, Sampler, TreeShape};
use crate::uhp::{weight_c, UhpPoint};

/// Updates per RNG substream; fixed so results do not depend on threads.
const CHUNK: usize = 2048;
/// Retries allowed for one slot before the run is declared broken.
const MAX_RETRIES: usize = 1000;

/// A pool of samples approximating the law of `G^x(lambda)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub samples: Vec<UhpPoint>,
    pub lambda: Complex64,
    pub generation: u64,
    pub seed: u64,
    pub shape: TreeShape,
    /// `z_lambda`, when it lies in the open half-plane.
    pub reference: Option<UhpPoint>,
}

/// All samples start at `z_lambda` when it exists, otherwise at `i`.
pub fn init_population(lambda: Complex64, size: usize, shape: TreeShape, seed: u64) -> Result<Population> {
    if size < 2 {
        return Err(Error::InvalidArgument("population size must be at least 2".into()));
    }
    let reference = fixed_point(lambda, shape)?.upper();
    let start = reference.unwrap_or(UhpPoint::I);
    Ok(Population { samples: vec![start; size], lambda, generation: 0, seed, shape, reference })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    /// Pick the argument order of `phi` by a fair coin on each update.
    pub symmetrize: bool,
    /// Abort when the fraction of resampled updates exceeds this.
    pub max_degenerate_rate: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions { symmetrize: false, max_degenerate_rate: 1e-6 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvolveStats {
    pub generations: u64,
    pub updates: u64,
    pub resampled: u64,
}

impl EvolveStats {
    pub fn degenerate_rate(&self) -> f64 {
        if self.updates == 0 {
            0.0
        } else {
            self.resampled as f64 / self.updates as f64
        }
    }
}

struct Kernel<'a> {
    sampler: &'a Sampler,
    k: f64,
    lambda: Complex64,
    shape: TreeShape,
    site: Site,
    /// With no disorder the fixed point is returned as is, so a pool
    /// started there does not drift by rounding.
    fixed: Option<UhpPoint>,
}

impl Kernel<'_> {
    /// One draw of `phi(z_a, z_b, k q, lambda)`; returns the value and the
    /// number of rejected attempts.
    #[inline]
    fn draw<R: Rng>(
        &self,
        rng: &mut R,
        pool_a: &[UhpPoint],
        pool_b: &[UhpPoint],
        qs: &mut [f64],
        symmetrize: bool,
    ) -> Result<(UhpPoint, u64)> {
        let mut rejected = 0;
        for _ in 0..MAX_RETRIES {
            let (pa, pb) = (pool_a[rng.random_range(0..pool_a.len())], pool_b[rng.random_range(0..pool_b.len())]);
            if self.fixed.is_some_and(|f| f == pa && f == pb) {
                return Ok((pa, rejected));
            }
            let (a, b) = (pa.to_complex(), pb.to_complex());
            for q in qs.iter_mut() {
                *q = self.k * self.sampler.sample(rng);
            }
            let (z1, z2) = if symmetrize && rng.random::<bool>() { (b, a) } else { (a, b) };
            match phi_c(z1, z2, qs, self.lambda, self.shape, self.site) {
                Ok(w) if w.im > 0.0 && w.re.is_finite() && w.im.is_finite() => {
                    return Ok((UhpPoint::new(w.re, w.im)?, rejected));
                }
                _ => rejected += 1,
            }
        }
        Err(Error::DegenerateRate { rate: 1.0, limit: 0.0 })
    }
}

/// Advances the pool by `generations` steps.
pub fn evolve(pop: &Population, model: &PotentialModel, generations: usize) -> Result<Population> {
    Ok(evolve_with(pop, model, generations, EvolveOptions::default(), |_| {})?.0)
}

/// [`evolve`] with options and a callback invoked after every generation.
pub fn evolve_with(
    pop: &Population,
    model: &PotentialModel,
    generations: usize,
    opts: EvolveOptions,
    mut observer: impl FnMut(&Population),
) -> Result<(Population, EvolveStats)> {
    let sampler = model.distribution.sampler()?;
    let fixed = pop.reference.filter(|_| model.is_free());
    let kernel = Kernel { sampler: &sampler, k: model.coupling, lambda: pop.lambda, shape: pop.shape, site: Site::Principal, fixed };
    let mut cur = pop.clone();
    let mut next = pop.samples.clone();
    let mut stats = EvolveStats::default();
    let bigm = pop.shape.big_m();
    for _ in 0..generations {
        let g = cur.generation;
        let old = &cur.samples;
        let rejected: Result<u64> = next
            .par_chunks_mut(CHUNK)
            .enumerate()
            .map(|(c, out)| {
                let mut rng = substream(cur.seed, &[g, c as u64]);
                let mut qs = vec![0.0; bigm];
                let mut rej = 0;
                for slot in out.iter_mut() {
                    let (z, r) = kernel.draw(&mut rng, old, old, &mut qs, opts.symmetrize)?;
                    *slot = z;
                    rej += r;
                }
                Ok(rej)
            })
            .try_reduce(|| 0, |a, b| Ok(a + b));
        let rejected = rejected?;
        stats.generations += 1;
        stats.updates += old.len() as u64 + rejected;
        stats.resampled += rejected;
        if stats.degenerate_rate() > opts.max_degenerate_rate {
            return Err(Error::DegenerateRate { rate: stats.degenerate_rate(), limit: opts.max_degenerate_rate });
        }
        std::mem::swap(&mut cur.samples, &mut next);
        cur.generation += 1;
        observer(&cur);
    }
    Ok((cur, stats))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentQuantity {
    /// `E[w^{1+p}(z, z_lambda)]`.
    WMoment,
    /// `E[|z|^{1+p}]`.
    AbsGreenMoment,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub value: f64,
    pub stderr: f64,
    pub p: f64,
    pub quantity: MomentQuantity,
}

/// Pool average of the chosen moment with batch-means standard error.
pub fn estimate_moment(pop: &Population, p: f64, quantity: MomentQuantity) -> Result<MomentEstimate> {
    if pop.samples.is_empty() {
        return Err(Error::InvalidArgument("empty population".into()));
    }
    let e = 1.0 + p;
    let values: Vec<f64> = match quantity {
        MomentQuantity::WMoment => {
            let zr = pop
                .reference
                .ok_or_else(|| Error::NoUpperRoot { lambda: format!("{}", pop.lambda) })?
                .to_complex();
            pop.samples.iter().map(|z| weight_c(z.to_complex(), zr).powf(e)).collect()
        }
        MomentQuantity::AbsGreenMoment => pop.samples.iter().map(|z| z.to_complex().norm().powf(e)).collect(),
    };
    let (value, stderr) = batch_means(&values, BATCHES);
    Ok(MomentEstimate { value, stderr, p, quantity })
}

/// `count` samples of the origin Green function, with the two children
/// drawn from `pop_a` and `pop_b`.
pub fn green_at_origin(
    pop_a: &Population,
    pop_b: &Population,
    model: &PotentialModel,
    count: usize,
    seed: u64,
) -> Result<Vec<UhpPoint>> {
    if pop_a.lambda != pop_b.lambda || pop_a.shape != pop_b.shape {
        return Err(Error::LambdaMismatch);
    }
    let sampler = model.distribution.sampler()?;
    let kernel = Kernel { sampler: &sampler, k: model.coupling, lambda: pop_a.lambda, shape: pop_a.shape, site: Site::Origin, fixed: None };
    let bigm = pop_a.shape.big_m();
    let mut out = vec![UhpPoint::I; count];
    out.par_chunks_mut(CHUNK)
        .enumerate()
        .try_for_each(|(c, slots)| -> Result<()> {
            let mut rng = substream(seed, &[0x6f72_6967, c as u64]);
            let mut qs = vec![0.0; bigm];
            for s in slots.iter_mut() {
                *s = kernel.draw(&mut rng, &pop_a.samples, &pop_b.samples, &mut qs, false)?.0;
            }
            Ok(())
        })?;
    Ok(out)
}

/// One moment value per generation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub generation: u64,
    pub moment: f64,
    pub stderr: f64,
}

/// Evolves and records the moment after every generation.
pub fn moment_series(
    pop: &Population,
    model: &PotentialModel,
    generations: usize,
    p: f64,
    quantity: MomentQuantity,
    opts: EvolveOptions,
) -> Result<(Population, Vec<SeriesPoint>)> {
    let mut series = Vec::with_capacity(generations);
    let mut err = None;
    let (last, _) = evolve_with(pop, model, generations, opts, |pp| match estimate_moment(pp, p, quantity) {
        Ok(m) => series.push(SeriesPoint { generation: pp.generation, moment: m.value, stderr: m.stderr }),
        Err(e) => err = Some(e),
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok((last, series))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DosPoint {
    pub lambda: f64,
    pub epsilon: f64,
    pub density: f64,
    pub stderr: f64,
}

/// Parameters of a pool run at one energy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolParams {
    pub pool_size: usize,
    pub generations: usize,
    pub seed: u64,
}

/// Evolves a fresh pool at `lambda` and samples the origin Green function.
pub fn origin_samples(lambda: Complex64, model: &PotentialModel, shape: TreeShape, params: PoolParams) -> Result<Vec<UhpPoint>> {
    let pop = init_population(lambda, params.pool_size, shape, params.seed)?;
    let pop = evolve(&pop, model, params.generations)?;
    green_at_origin(&pop, &pop, model, params.pool_size, derive_seed(params.seed, &[1]))
}

/// Smoothed density of states at the origin,
/// `pi^-1 E[Im G_o(lambda + i epsilon)]`, on a grid over `window`.
///
/// With zero disorder the pool is exactly stationary at `z_lambda`, so the
/// free value is evaluated directly.
#[allow(clippy::too_many_arguments)]
pub fn dos_curve(
    model: &PotentialModel,
    shape: TreeShape,
    window: (f64, f64),
    step: f64,
    epsilon: f64,
    pool_size: usize,
    generations: usize,
    seed: u64,
) -> Result<Vec<DosPoint>> {
    if !(epsilon > 0.0) || !(step > 0.0) || !(window.0 < window.1) {
        return Err(Error::InvalidArgument("dos_curve needs epsilon > 0, step > 0 and lo < hi".into()));
    }
    let n = ((window.1 - window.0) / step + 1e-9).floor() as usize;
    let xs: Vec<f64> = (0..=n).map(|i| window.0 + i as f64 * step).collect();
    let pi = std::f64::consts::PI;
    if model.is_free() {
        return xs
            .par_iter()
            .map(|&x| {
                let g = free_origin_green(Complex64::new(x, epsilon), shape)?;
                Ok(DosPoint { lambda: x, epsilon, density: g.im / pi, stderr: 0.0 })
            })
            .collect();
    }
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let params = PoolParams { pool_size, generations, seed: derive_seed(seed, &[i as u64]) };
            let g = origin_samples(Complex64::new(x, epsilon), model, shape, params)?;
            let ims: Vec<f64> = g.iter().map(|z| z.im() / pi).collect();
            let (density, stderr) = batch_means(&ims, BATCHES);
            Ok(DosPoint { lambda: x, epsilon, density, stderr })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcRow {
    pub y: f64,
    pub integral: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcDiagnostic {
    pub rows: Vec<AcRow>,
    pub median: f64,
    /// `max(integral / median, median / integral)` over the rows.
    pub spread: f64,
    /// All integrals within a factor 2 of their median.
    pub bounded: bool,
}

/// For each `y`, the trapezoid estimate over `points` abscissae of
/// `int_E E|G_o(x + i y)|^{1+p} dx`.
#[allow(clippy::too_many_arguments)]
pub fn ac_diagnostic(
    model: &PotentialModel,
    shape: TreeShape,
    e: (f64, f64),
    p: f64,
    ys: &[f64],
    points: usize,
    pool_size: usize,
    generations: usize,
    seed: u64,
) -> Result<AcDiagnostic> {
    if ys.is_empty() || ys.iter().any(|&y| !(y > 0.0)) || ys.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("y sequence must be positive and strictly decreasing".into()));
    }
    if points < 2 || !(e.0 < e.1) {
        return Err(Error::InvalidArgument("need at least two abscissae and lo < hi".into()));
    }
    let xs: Vec<f64> = (0..points).map(|i| e.0 + (e.1 - e.0) * i as f64 / (points - 1) as f64).collect();
    let mut rows = Vec::with_capacity(ys.len());
    for (iy, &y) in ys.iter().enumerate() {
        let mut means = Vec::with_capacity(points);
        let mut errs = Vec::with_capacity(points);
        for (ix, &x) in xs.iter().enumerate() {
            let lambda = Complex64::new(x, y);
            let (m, s) = if model.is_free() {
                (free_origin_green(lambda, shape)?.norm().powf(1.0 + p), 0.0)
            } else {
                let params = PoolParams { pool_size, generations, seed: derive_seed(seed, &[iy as u64, ix as u64]) };
                let g = origin_samples(lambda, model, shape, params)?;
                let v: Vec<f64> = g.iter().map(|z| z.to_complex().norm().powf(1.0 + p)).collect();
                batch_means(&v, BATCHES)
            };
            means.push(m);
            errs.push(s);
        }
        let integral = trapezoid(&xs, &means);
        let h = (e.1 - e.0) / (points - 1) as f64;
        let var: f64 = errs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let w = if i == 0 || i + 1 == points { 0.5 * h } else { h };
                (w * s).powi(2)
            })
            .sum();
        rows.push(AcRow { y, integral, stderr: var.sqrt() });
    }
    let med = median(&rows.iter().map(|r| r.integral).collect::<Vec<_>>());
    let spread = rows.iter().map(|r| (r.integral / med).max(med / r.integral)).fold(1.0, f64::max);
    Ok(AcDiagnostic { rows, median: med, spread, bounded: spread <= 2.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::Distribution;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn init_examples() {
        let s = TreeShape::new(1, 2);
        let pop = init_population(c(0.5, 0.01), 1000, s, 3).unwrap();
        let zl = fixed_point(c(0.5, 0.01), s).unwrap().upper().unwrap();
        assert_eq!(pop.samples.len(), 1000);
        assert!(pop.samples.iter().all(|z| *z == zl));
        assert!(init_population(c(0.5, 0.01), 1, s, 3).is_err());
        assert_eq!(pop, init_population(c(0.5, 0.01), 1000, s, 3).unwrap());
    }

    #[test]
    fn moment_examples() {
        let s = TreeShape::new(1, 2);
        let mut pop = init_population(c(-0.5, 0.01), 64, s, 1).unwrap();
        let m = estimate_moment(&pop, 0.1, MomentQuantity::WMoment).unwrap();
        assert_eq!(m.value, 0.0);
        pop.samples = vec![UhpPoint::new(0.0, 2.0).unwrap(); 64];
        pop.reference = Some(UhpPoint::I);
        let m = estimate_moment(&pop, 0.0, MomentQuantity::WMoment).unwrap();
        assert_eq!(m.value, 0.5);
        assert_eq!(m.stderr, 0.0);
    }

    #[test]
    fn free_pool_is_stationary() {
        let s = TreeShape::new(1, 2);
        let pop = init_population(c(-0.5, 0.01), 500, s, 5).unwrap();
        let zl = pop.reference.unwrap().to_complex();
        let free = PotentialModel::free();
        let out = evolve(&pop, &free, 20).unwrap();
        assert_eq!(out.generation, 20);
        assert!(out.samples.iter().all(|z| (z.to_complex() - zl).norm() < 1e-12));
    }

    #[test]
    fn deterministic_evolution() {
        let s = TreeShape::new(1, 2);
        let m = PotentialModel::new(Distribution::Uniform { a: -1.0, b: 1.0 }, 0.3, 0.1).unwrap();
        let pop = init_population(c(0.9, 0.05), 5000, s, 11).unwrap();
        let a = evolve(&pop, &m, 5).unwrap();
        let b = evolve(&pop, &m, 5).unwrap();
        assert_eq!(a, b);
        let (c2, _) = evolve_with(&pop, &m, 5, EvolveOptions { symmetrize: true, ..Default::default() }, |_| {}).unwrap();
        assert_ne!(a, c2);
    }

    #[test]
    fn ac_rejects_bad_sequence() {
        let s = TreeShape::new(1, 2);
        let m = PotentialModel::free();
        assert!(ac_diagnostic(&m, s, (-0.5, -0.3), 0.1, &[1e-2, 1e-1], 5, 10, 1, 0).is_err());
    }
}

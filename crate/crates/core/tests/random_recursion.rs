use decotree::free::{cheb_r, fixed_point};
use decotree::recursion::{chain_denominator, envelope_bound, scan_sup, MuContext, PairLaw, QLaw, ScanSpec, DEFAULT_W0};
use decotree::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

const SHAPE: TreeShape = TreeShape { m: 1, n: 2 };
const E_GRID: [f64; 8] = [-2.7, -2.3, -1.7, -1.3, -0.6, -0.3, 0.9, 1.5];

proptest! {
    #[test]
    fn zero_potential_denominators_are_cheb(k in 0usize..=10, lre in -4.0..4.0f64, lim in 0.0..1.0f64, zre in -3.0..3.0f64, zim in 0.0..3.0f64) {
        let (l, z) = (c(lre, lim), c(zre, zim));
        let a = chain_denominator(z, &vec![0.0; k], l);
        let r = cheb_r(k, l, z);
        prop_assert!((a - r).norm() <= 1e-12 * r.norm().max(1.0));
    }

    #[test]
    fn mu_is_symmetric(
        z1 in (-5.0..5.0f64, -4.0..1.0f64), z2 in (-5.0..5.0f64, -4.0..1.0f64),
        qs in prop::array::uniform4(-2.0..2.0f64), p in 0.0..0.9f64, li in 0usize..8,
    ) {
        let ctx = MuContext::new(c(E_GRID[li], 0.0), SHAPE).unwrap();
        let a = UhpPoint::new(z1.0, 10f64.powf(z1.1)).unwrap();
        let b = UhpPoint::new(z2.0, 10f64.powf(z2.1)).unwrap();
        let (Ok(x), Ok(y)) = (ctx.mu_p(a, b, &qs, p), ctx.mu_p(b, a, &qs, p)) else { return Ok(()) };
        prop_assert_eq!(x.mu_p, y.mu_p);
    }
}

#[test]
fn branch_quantities_examples() {
    // n = 1 chain, single factor 1 + lambda - q + z.
    let s = TreeShape::new(0, 1);
    let z = UhpPoint::I;
    let b = branch_quantities(z, z, &[0.0, 0.0], c(0.0, 0.0), z, s).unwrap();
    assert_eq!(b.a_n, c(1.0, 1.0));
    assert_eq!(b.a_m, c(1.0, 0.0));
    let r = fixed_point(c(0.7, 0.0), SHAPE).unwrap().upper().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let z1 = UhpPoint::new(rng.random_range(-3.0..3.0), rng.random_range(1e-6..3.0)).unwrap();
        let z2 = UhpPoint::new(rng.random_range(-3.0..3.0), rng.random_range(1e-6..3.0)).unwrap();
        let qs: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b = branch_quantities(z1, z2, &qs, c(0.7, 0.0), r, SHAPE).unwrap();
        for v in [b.a_n, b.a_m, b.b_n, b.b_m] {
            assert!(v.norm() > 0.0);
        }
    }
}

#[test]
fn mu0_bounded_by_closed_form_and_closed_form_by_one() {
    for (i, &l) in E_GRID.iter().enumerate() {
        let ctx = MuContext::new(c(l, 0.0), SHAPE).unwrap();
        for pairs in [PairLaw::Boundary, PairLaw::Mixed] {
            let spec = ScanSpec { pairs, q: QLaw::Zero, p: 0.0, samples: 50_000, seed: i as u64, w0: None, normalize: false, polish: 0 };
            let r = scan_sup(&ctx, &spec);
            assert_eq!(r.nd_violations, 0, "lambda {l}");
            assert!(r.max_nd <= 1.0 + 1e-12, "lambda {l}: N/D {}", r.max_nd);
            assert!(r.value < 1.0, "lambda {l}: mu0 {}", r.value);
        }
    }
}

#[test]
fn mu_result_carries_closed_form_only_at_zero_potential() {
    let ctx = MuContext::new(c(1.2, 0.0), SHAPE).unwrap();
    let (a, b) = (UhpPoint::new(0.3, 0.01).unwrap(), UhpPoint::new(-4.0, 0.2).unwrap());
    let r = ctx.mu_p(a, b, &[0.0; 4], 0.0).unwrap();
    assert!(r.mu_p <= r.bound().unwrap());
    assert!(ctx.mu_p(a, b, &[0.0, 0.1, 0.0, 0.0], 0.0).unwrap().bound().is_none());
}

/// `|A_n|^2 <= C (1 + |z|^2) prod (1 + |q_i|^2)` with the constant
/// `C = (2 (1 + |1 + lambda|)^2)^n` from bounding each transfer factor.
#[test]
fn chain_growth_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1_000_000 {
        let n = rng.random_range(1..=4usize);
        let l = c(rng.random_range(-4.0..4.0), rng.random_range(0.0..0.1));
        let z = c((std::f64::consts::PI * (rng.random::<f64>() - 0.5)).tan(), 10f64.powf(rng.random_range(-6.0..2.0)));
        let qs: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(3) * 1e3 * if rng.random() { 1.0 } else { -1.0 }).collect();
        let a = chain_denominator(z, &qs, l).norm_sqr();
        let cst = (2.0 * (1.0 + (1.0 + l).norm()).powi(2)).powi(n as i32);
        let rhs = cst * (1.0 + z.norm_sqr()) * qs.iter().map(|q| 1.0 + q * q).product::<f64>();
        worst = worst.max(a / rhs);
    }
    assert!(worst <= 1.0, "ratio {worst}");
}

/// Fits `eta_1`, the largest potential bound on a ladder for which the
/// sampled `mu_p` (p = 0.05) stays below one outside K, and `eps = 1 - max`.
#[test]
fn small_disorder_contracts_outside_compact() {
    let ladder = [1e-2, 3e-3, 1e-3, 1e-4];
    for (i, &l) in E_GRID.iter().enumerate() {
        let ctx = MuContext::new(c(l, 0.0), SHAPE).unwrap();
        let fit = ladder.iter().find_map(|&eta| {
            let spec = ScanSpec {
                pairs: PairLaw::Mixed,
                q: QLaw::Uniform { eta },
                p: 0.05,
                samples: 100_000,
                seed: 40 + i as u64,
                w0: Some(DEFAULT_W0),
                normalize: false,
                polish: 0,
            };
            let r = scan_sup(&ctx, &spec);
            assert!(r.evaluated > 50_000);
            (r.value < 1.0).then_some((eta, 1.0 - r.value))
        });
        let (eta, eps) = fit.unwrap_or_else(|| panic!("lambda {l}: no contraction for any eta down to 1e-4"));
        println!("lambda {l}: eta_1 {eta:.0e}, eps {eps:.4}");
    }
}

#[test]
fn huge_potential_is_absorbed_by_envelope() {
    let ctx = MuContext::new(c(1.2, 0.0), SHAPE).unwrap();
    let qs = [0.0, 0.0, 0.0, 1e3];
    let bound = envelope_bound(&qs, 0.1);
    assert!((bound / 1e3f64.powf(2.2) - 1.0).abs() < 1e-6);
    let (a, b) = (UhpPoint::new(2.0, 0.01).unwrap(), UhpPoint::new(-1.0, 0.5).unwrap());
    let (ratio, bound) = ctx.mu_bound_check(a, b, &qs, 0.1, DEFAULT_W0).unwrap();
    // Direct evaluation of the definition.
    let l = c(1.2, 0.0);
    let w = |z: UhpPoint| weight(z, ctx.z_ref).powf(1.1);
    let f = decotree::free::phi(a, b, &qs, l, SHAPE, decotree::free::Site::Principal).unwrap();
    let g = decotree::free::phi(b, a, &qs, l, SHAPE, decotree::free::Site::Principal).unwrap();
    let direct = (w(f) + w(g)) / (w(a) + w(b));
    assert!((ratio - direct).abs() <= 1e-12 * direct);
    assert!(ratio / bound < 0.05, "{}", ratio / bound);
    assert!(matches!(ctx.mu_bound_check(ctx.z_ref, ctx.z_ref, &qs, 0.1, DEFAULT_W0), Err(Error::InsideCompact { .. })));
}

#[test]
fn envelope_sup_is_finite_and_deterministic() {
    let ctx = MuContext::new(c(-1.5, 0.0), SHAPE).unwrap();
    let spec = ScanSpec {
        pairs: PairLaw::Mixed,
        q: QLaw::LogUniform { lo: -3.0, hi: 3.0 },
        p: 0.1,
        samples: 50_000,
        seed: 5,
        w0: Some(DEFAULT_W0),
        normalize: true,
        polish: 2000,
    };
    let a = scan_sup(&ctx, &spec);
    let b = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(|| scan_sup(&ctx, &spec));
    assert!(a.value.is_finite() && a.value > 0.0);
    assert_eq!(a, b);
}

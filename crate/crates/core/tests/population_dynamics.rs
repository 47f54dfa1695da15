use decotree::free::{fixed_point, phi, support_f, Site};
use decotree::oracle::forward_greens;
use decotree::population::{
    ac_diagnostic, dos_curve, estimate_moment, evolve, evolve_with, green_at_origin, init_population, moment_series,
    EvolveOptions, MomentQuantity,
};
use decotree::stats::{ks_distance, trend};
use decotree::tree::{build_tree, diagonal, reroot, Convention, MatrixOptions};
use decotree::*;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

const SHAPE: TreeShape = TreeShape { m: 1, n: 2 };

fn uniform(k: f64) -> PotentialModel {
    PotentialModel::new(Distribution::Uniform { a: -1.0, b: 1.0 }, k, 0.1).unwrap()
}

#[test]
fn free_pool_contracts_to_fixed_point() {
    let lambda = c(0.5, 0.01);
    let zl = fixed_point(lambda, SHAPE).unwrap().upper().unwrap().to_complex();
    let mut pop = init_population(lambda, 1000, SHAPE, 1).unwrap();
    pop.samples = vec![UhpPoint::I; 1000];
    let out = evolve(&pop, &uniform(0.0), 200).unwrap();
    assert_eq!(out.generation, 200);
    let worst = out.samples.iter().map(|z| (z.to_complex() - zl).norm()).fold(0.0, f64::max);
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn free_origin_samples_are_deterministic() {
    let lambda = c(-0.4, 0.02);
    let pop = init_population(lambda, 500, SHAPE, 2).unwrap();
    let zl = pop.reference.unwrap();
    let want = phi(zl, zl, &[0.0; 4], lambda, SHAPE, Site::Origin).unwrap();
    let g = green_at_origin(&pop, &pop, &uniform(0.0), 5000, 3).unwrap();
    assert!(g.iter().all(|z| *z == want));
    assert!(want.im() > 0.0);
    let other = init_population(c(-0.3, 0.02), 500, SHAPE, 2).unwrap();
    assert!(matches!(green_at_origin(&pop, &other, &uniform(0.0), 10, 3), Err(Error::LambdaMismatch)));
}

#[test]
fn disordered_pool_stays_in_upper_half_plane() {
    let pop = init_population(c(1.0, 1e-4), 20_000, SHAPE, 4).unwrap();
    let (out, stats) = evolve_with(&pop, &uniform(1.0), 30, EvolveOptions::default(), |p| {
        assert!(p.samples.iter().all(|z| z.im() > 0.0));
    })
    .unwrap();
    assert_eq!(stats.generations, 30);
    assert!(stats.degenerate_rate() <= 1e-6);
    assert!(out.samples.iter().all(|z| z.im() > 0.0));
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let pop = init_population(c(-1.5, 1e-3), 10_000, SHAPE, 5).unwrap();
    let model = uniform(0.3);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            let p = evolve(&pop, &model, 20).unwrap();
            let g = green_at_origin(&p, &p, &model, 3000, 9).unwrap();
            (p, g)
        })
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn moments_obey_half_plane_inequality() {
    let pop = init_population(c(-0.5, 1e-2), 20_000, SHAPE, 6).unwrap();
    let pop = evolve(&pop, &uniform(0.5), 40).unwrap();
    let zl = pop.reference.unwrap();
    for p in [0.0, 0.1, 0.5] {
        let g = estimate_moment(&pop, p, MomentQuantity::AbsGreenMoment).unwrap();
        let bound: f64 = pop
            .samples
            .iter()
            .map(|z| (4.0 * zl.im() * weight(*z, zl) + 2.0 * zl.to_complex().norm()).powf(1.0 + p))
            .sum::<f64>()
            / pop.samples.len() as f64;
        assert!(g.value <= bound, "p={p}: {} > {bound}", g.value);
        assert!(g.stderr >= 0.0 && g.value.is_finite());
    }
}

#[test]
fn small_disorder_moment_stabilizes() {
    let pop = init_population(c(1.2, 1e-3), 20_000, SHAPE, 7).unwrap();
    let (_, series) = moment_series(&pop, &uniform(0.05), 150, 0.1, MomentQuantity::WMoment, EvolveOptions::default()).unwrap();
    let tail: Vec<f64> = series[100..].iter().map(|p| p.moment).collect();
    assert!(tail.windows(2).any(|w| w[1] < w[0]), "monotone growth over the last 50 generations");
    let fit = trend(&tail);
    println!("k=0.05: slope {:.3e} stderr {:.3e}", fit.slope, fit.stderr);

    // Strong disorder is reported, not asserted.
    let (_, strong) = moment_series(&pop, &uniform(10.0), 60, 0.1, MomentQuantity::WMoment, EvolveOptions::default()).unwrap();
    let fit = trend(&strong[30..].iter().map(|p| p.moment).collect::<Vec<_>>());
    println!("k=10: slope {:.3e} stderr {:.3e}", fit.slope, fit.stderr);
}

#[test]
fn symmetrized_pool_runs() {
    let pop = init_population(c(-2.5, 1e-2), 5000, SHAPE, 8).unwrap();
    let opts = EvolveOptions { symmetrize: true, ..EvolveOptions::default() };
    let (a, _) = evolve_with(&pop, &uniform(0.2), 20, opts, |_| {}).unwrap();
    let b = evolve(&pop, &uniform(0.2), 20).unwrap();
    assert_ne!(a.samples, b.samples);
    let ma = estimate_moment(&a, 0.1, MomentQuantity::WMoment).unwrap();
    let mb = estimate_moment(&b, 0.1, MomentQuantity::WMoment).unwrap();
    println!("one order {:.4e} +- {:.1e}, symmetrized {:.4e} +- {:.1e}", mb.value, mb.stderr, ma.value, ma.stderr);
}

/// Pool samples of the origin Green function against exact samples from
/// independent depth-10 truncations with fresh potentials.
#[test]
fn origin_law_matches_finite_tree() {
    let lambda = c(0.5, 0.05);
    let model = uniform(0.5);
    let pop = init_population(lambda, 20_000, SHAPE, 11).unwrap();
    let pop = evolve(&pop, &model, 60).unwrap();
    let pool = green_at_origin(&pop, &pop, &model, 20_000, 12).unwrap();

    let tree = build_tree(SHAPE, 10).unwrap();
    let view = reroot(&tree, 0).unwrap();
    let exact: Vec<Complex64> = (0..4000u64)
        .map(|s| {
            let q = sample_potential(&model, tree.len(), 1000 + s).unwrap();
            let d = diagonal(&tree, &model, &q, MatrixOptions::new(Convention::Paper)).unwrap();
            forward_greens(&view, &d, lambda).unwrap()[0]
        })
        .collect();
    let re = ks_distance(&pool.iter().map(|z| z.re()).collect::<Vec<_>>(), &exact.iter().map(|z| z.re).collect::<Vec<_>>());
    let im = ks_distance(&pool.iter().map(|z| z.im()).collect::<Vec<_>>(), &exact.iter().map(|z| z.im).collect::<Vec<_>>());
    assert!(re < 0.05 && im < 0.05, "KS re {re:.4} im {im:.4}");
}

#[test]
fn free_density_of_states() {
    let eps = 1e-2;
    let d = dos_curve(&uniform(0.0), SHAPE, (-1.0, 1.0), 0.25, eps, 0, 0, 0).unwrap();
    assert_eq!(d.len(), 9);
    for p in &d {
        let l = c(p.lambda, eps);
        let z = fixed_point(l, SHAPE).unwrap().upper().unwrap();
        let g = phi(z, z, &[0.0; 4], l, SHAPE, Site::Origin).unwrap();
        assert!((p.density - g.im() / std::f64::consts::PI).abs() < 1e-15);
        assert_eq!(p.stderr, 0.0);
    }
    assert!(dos_curve(&uniform(0.0), SHAPE, (-1.0, 1.0), 0.25, 0.0, 0, 0, 0).is_err());
}

#[test]
fn disordered_density_of_states_is_positive() {
    let d = dos_curve(&uniform(0.3), SHAPE, (1.0, 1.2), 0.1, 1e-2, 4000, 30, 3).unwrap();
    assert_eq!(d.len(), 3);
    assert!(d.iter().all(|p| p.density > 0.0 && p.stderr > 0.0));
}

#[test]
fn free_stieltjes_integrals_converge() {
    let ys = [1e-1, 1e-2, 1e-3, 1e-4];
    let inside = ac_diagnostic(&uniform(0.0), SHAPE, (0.8, 1.6), 0.1, &ys, 41, 0, 0, 0).unwrap();
    let v: Vec<f64> = inside.rows.iter().map(|r| r.integral).collect();
    assert!((v[3] - v[2]).abs() < (v[1] - v[0]).abs());
    assert!(inside.bounded);

    // Outside the spectrum the resolvent is analytic across E.
    let sup = support_f(SHAPE, (-4.0, 4.0), 1e-3).unwrap();
    assert!(!sup.contains(3.7));
    let outside = ac_diagnostic(&uniform(0.0), SHAPE, (3.6, 3.9), 0.1, &ys, 21, 0, 0, 0).unwrap();
    let v: Vec<f64> = outside.rows.iter().map(|r| r.integral).collect();
    assert!(v.iter().all(|x| x.is_finite() && *x > 0.0));
    assert!((v[3] - v[2]).abs() < 1e-3 * v[3]);
    let g = phi(
        fixed_point(c(3.7, 1e-4), SHAPE).unwrap().upper().unwrap(),
        fixed_point(c(3.7, 1e-4), SHAPE).unwrap().upper().unwrap(),
        &[0.0; 4],
        c(3.7, 1e-4),
        SHAPE,
        Site::Origin,
    )
    .unwrap();
    assert!(g.im() < 1e-3);
}

use decotree::oracle::{
    convention_lock, eigen_count_dense, eigenvalue_histogram, extreme_eigenvalues, forward_greens, tree_count_below,
    DenseResolvent,
};
use decotree::tree::{build_tree, diagonal, hamiltonian_matrix, reroot, Convention, LeafBoundary, MatrixOptions};
use decotree::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[test]
fn dense_and_recursion_agree_everywhere_on_depth_six() {
    let shape = TreeShape::new(1, 2);
    let t = build_tree(shape, 6).unwrap();
    let model = PotentialModel::new(Distribution::Uniform { a: -1.0, b: 1.0 }, 1.0, 0.1).unwrap();
    let q = sample_potential(&model, t.len(), 4).unwrap();
    let lambda = c(0.4, 0.05);
    for conv in [Convention::Paper, Convention::Spectral] {
        let lambda = conv.from_paper(lambda);
        let dense = DenseResolvent::new(&t, &model, &q, lambda, conv).unwrap();
        let diag = diagonal(&t, &model, &q, MatrixOptions::new(conv)).unwrap();
        for x in 0..t.len() {
            let d = dense.at(x).unwrap().value;
            let r = forward_greens(&reroot(&t, x).unwrap(), &diag, lambda).unwrap()[x];
            assert!((d - r).norm() <= 1e-10 * d.norm(), "{conv:?} vertex {x}: {d} vs {r}");
            assert!(d.im > 0.0 && r.im > 0.0);
        }
    }
    // Auxiliary vertices through the public entry point.
    for x in (0..t.len()).filter(|&v| !t.role(v).is_principal()).take(10) {
        let d = dense_resolvent(&t, &model, &q, lambda, x, Convention::Paper).unwrap();
        let r = recursion_green_finite(&t, &model, &q, lambda, x, Convention::Paper).unwrap();
        assert_eq!(d.vertex, x);
        assert!((d.value - r.value).norm() <= 1e-10 * d.value.norm());
    }
}

#[test]
fn conventions_differ_by_the_shift() {
    let t = build_tree(TreeShape::new(2, 1), 4).unwrap();
    let model = PotentialModel::new(Distribution::Gaussian { sigma: 1.0 }, 0.3, 0.1).unwrap();
    let q = sample_potential(&model, t.len(), 8).unwrap();
    let lp = c(-0.7, 0.2);
    let full = MatrixOptions::new(Convention::Spectral).with_boundary(LeafBoundary::FullDegree);
    let a = recursion_green_finite(&t, &model, &q, lp, 3, Convention::Paper).unwrap().value;
    let b = recursion_green_finite(&t, &model, &q, lp + 3.0, 3, full).unwrap().value;
    assert!((a - b).norm() <= 1e-13 * a.norm());
}

#[test]
fn singular_energies_are_reported() {
    // Path 1 - 0 - 2 with truncated degrees: eigenvalues 0, 1, 3.
    let t = build_tree(TreeShape::new(0, 0), 1).unwrap();
    let free = PotentialModel::free();
    let z = [0.0; 3];
    let r = dense_resolvent(&t, &free, &z, c(1.0, 0.0), 0, Convention::Spectral);
    assert!(matches!(r, Err(Error::SingularSystem { .. })));
    let r = recursion_green_finite(&t, &free, &z, c(1.0, 0.0), 1, Convention::Spectral);
    assert!(matches!(r, Err(Error::SingularSystem { .. })));
    assert!(matches!(dense_resolvent(&t, &free, &z, c(0.5, 0.1), 7, Convention::Spectral), Err(Error::UnknownVertex(7))));
}

#[test]
fn tree_inertia_matches_dense_inertia() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let model = PotentialModel::new(Distribution::Discrete { values: vec![-1.0, 0.0, 1.0], weights: vec![1.0, 2.0, 1.0] }, 1.0, 0.1)
        .unwrap();
    for case in 0..40 {
        let shape = TreeShape::new(rng.random_range(0..3), rng.random_range(0..3));
        let t = build_tree(shape, rng.random_range(0..5)).unwrap();
        let q = sample_potential(&model, t.len(), case).unwrap();
        let h = hamiltonian_matrix(&t, &model, &q, Convention::Paper).unwrap();
        let view = reroot(&t, rng.random_range(0..t.len())).unwrap();
        for _ in 0..20 {
            let th = rng.random_range(-5.0..5.0);
            let (Ok(a), Ok(b)) = (tree_count_below(&view, &h.diagonal(), th), eigen_count_dense(&h, th)) else { continue };
            assert_eq!(a, b, "case {case} threshold {th}");
            assert_eq!(eigen_count_below(&t, &model, &q, Convention::Paper, th).unwrap(), a);
        }
    }
}

#[test]
fn zero_pivot_pairs_count_correctly() {
    // Star 1 - 0 - 2 with zero diagonal at threshold 0 pairs a leaf with
    // the centre; the remaining leaf is a genuine zero eigenvalue.
    let t = build_tree(TreeShape::new(0, 0), 1).unwrap();
    let view = reroot(&t, 0).unwrap();
    let h = decotree::DenseMatrix::from_fn(3, |i, j| if i != j && (i == 0 || j == 0) { -1.0 } else { 0.0 });
    assert!(tree_count_below(&view, &h.diagonal(), 0.0).is_err());
    assert_eq!(tree_count_below(&view, &h.diagonal(), 1e-9).unwrap(), 2);
    // Two-vertex-like case: a chain root whose only child has zero pivot.
    let t = build_tree(TreeShape::new(0, 1), 1).unwrap();
    let view = reroot(&t, 0).unwrap();
    let d = vec![0.0; t.len()];
    let dense = decotree::DenseMatrix::from_fn(t.len(), |i, j| {
        if t.neighbors(i).contains(&j) { -1.0 } else { 0.0 }
    });
    for th in [-1.5, -0.5, 0.5, 1.5] {
        assert_eq!(tree_count_below(&view, &d, th).unwrap(), eigen_count_dense(&dense, th).unwrap());
    }
}

#[test]
fn histogram_counts_every_vertex() {
    let t = build_tree(TreeShape::new(1, 3), 5).unwrap();
    let model = PotentialModel::new(Distribution::Uniform { a: -1.0, b: 1.0 }, 0.5, 0.1).unwrap();
    let q = sample_potential(&model, t.len(), 3).unwrap();
    let diag = diagonal(&t, &model, &q, MatrixOptions::new(Convention::Paper)).unwrap();
    let view = reroot(&t, 0).unwrap();
    // Gershgorin: every eigenvalue lies in [min(d) - 3, max(d) + 3].
    let lo = diag.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0;
    let hi = diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0;
    assert_eq!(tree_count_below(&view, &diag, lo - 1e-6).unwrap(), 0);
    let edges: Vec<f64> = (0..=200).map(|i| lo - 0.1 + (hi - lo + 0.2) * i as f64 / 200.0).collect();
    let hist = eigenvalue_histogram(&view, &diag, &edges);
    assert_eq!(hist.iter().sum::<usize>(), t.len());
    let (emin, emax) = extreme_eigenvalues(&view, &diag, 1e-10);
    assert!(lo <= emin && emax <= hi);
}

#[test]
fn finite_truncations_converge_to_infinite_tree() {
    let shapes = [TreeShape::new(0, 0), TreeShape::new(1, 2), TreeShape::new(2, 1)];
    let lambdas = [c(-1.5, 0.2), c(0.4, 0.2), c(1.2, 0.5)];
    let rows = convention_lock(&shapes, &lambdas, 8).unwrap();
    for r in &rows {
        assert!(r.error_deeper < r.error, "{r:?}");
        println!("{} lambda {}: depth {} err {:.3e}, depth {} err {:.3e}", r.shape, r.lambda, r.depth, r.error, r.depth + 2, r.error_deeper);
        assert!(r.infinite.im > 0.0);
    }
}

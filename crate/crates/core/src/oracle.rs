//! Ground truth on finite truncations: dense resolvent solves, the exact
//! leaf-to-root recursion, inertia counting, and the validation suites that
//! compare them with the infinite-tree recursion.

use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::free::{fixed_point, phi_c, Site};
use crate::linalg::{ldlt_inertia, ComplexLu, DenseMatrix};
use crate::rng::substream;
use crate::tree::{
    build_tree, diagonal, hamiltonian_matrix_with, reroot, sample_potential, Convention, Distribution, FiniteTree,
    MatrixOptions, PotentialModel, RootedView, TreeShape,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolventResult {
    pub value: Complex64,
    pub vertex: usize,
    pub lambda: Complex64,
    pub convention: Convention,
}

/// A factored `H - lambda I`, reusable across vertices.
#[derive(Clone, Debug)]
pub struct DenseResolvent {
    lu: ComplexLu,
    lambda: Complex64,
    convention: Convention,
}

impl DenseResolvent {
    pub fn new(
        tree: &FiniteTree,
        model: &PotentialModel,
        sample: &[f64],
        lambda: Complex64,
        opts: impl Into<MatrixOptions>,
    ) -> Result<Self> {
        let opts = opts.into();
        let h = hamiltonian_matrix_with(tree, model, sample, opts)?;
        let mut a = h.to_complex();
        for i in 0..a.dim() {
            a[(i, i)] -= lambda;
        }
        Ok(DenseResolvent { lu: ComplexLu::factor(&a)?, lambda, convention: opts.convention })
    }

    pub fn at(&self, x: usize) -> Result<ResolventResult> {
        if x >= self.lu.dim() {
            return Err(Error::UnknownVertex(x));
        }
        Ok(ResolventResult {
            value: self.lu.inverse_diagonal_entry(x),
            vertex: x,
            lambda: self.lambda,
            convention: self.convention,
        })
    }
}

/// `<delta_x, (H - lambda)^-1 delta_x>` by dense LU with partial pivoting.
pub fn dense_resolvent(
    tree: &FiniteTree,
    model: &PotentialModel,
    sample: &[f64],
    lambda: Complex64,
    x: usize,
    opts: impl Into<MatrixOptions>,
) -> Result<ResolventResult> {
    tree.check_vertex(x)?;
    DenseResolvent::new(tree, model, sample, lambda, opts)?.at(x)
}

/// Forward Green functions of every vertex of a rooted view:
/// `g(v) = 1 / (H_vv - lambda - sum_children g(c))`, leaves first.
pub fn forward_greens(view: &RootedView, diag: &[f64], lambda: Complex64) -> Result<Vec<Complex64>> {
    let mut g = vec![Complex64::new(0.0, 0.0); diag.len()];
    for &v in view.order.iter().rev() {
        let own = diag[v] - lambda;
        let s: Complex64 = view.children[v].iter().map(|&c| g[c]).sum();
        let den = own - s;
        let scale = own.norm() + view.children[v].iter().map(|&c| g[c].norm()).sum::<f64>();
        if !(den.norm() > 1e-13 * scale) {
            return Err(Error::SingularSystem { pivot: den.norm(), row: v });
        }
        g[v] = den.inv();
    }
    Ok(g)
}

/// Diagonal resolvent entry at `x` by rerooting at `x` and running the
/// exact Schur-complement recursion from the leaves.
pub fn recursion_green_finite(
    tree: &FiniteTree,
    model: &PotentialModel,
    sample: &[f64],
    lambda: Complex64,
    x: usize,
    opts: impl Into<MatrixOptions>,
) -> Result<ResolventResult> {
    let opts = opts.into();
    let view = reroot(tree, x)?;
    let diag = diagonal(tree, model, sample, opts)?;
    let g = forward_greens(&view, &diag, lambda)?;
    Ok(ResolventResult { value: g[x], vertex: x, lambda, convention: opts.convention })
}

/// Number of eigenvalues strictly below `threshold`.
pub fn eigen_count_below(
    tree: &FiniteTree,
    model: &PotentialModel,
    sample: &[f64],
    opts: impl Into<MatrixOptions>,
    threshold: f64,
) -> Result<usize> {
    let diag = diagonal(tree, model, sample, opts.into())?;
    let view = reroot(tree, 0)?;
    tree_count_below(&view, &diag, threshold)
}

/// Inertia of `H - t I` for a tree-structured `H` with off-diagonal `-1`, by
/// symmetric elimination from the leaves. A child whose pivot vanishes is
/// paired with its parent into a 2x2 block of inertia (1, 1), which
/// decouples the parent from the rest.
pub fn tree_count_below(view: &RootedView, diag: &[f64], t: f64) -> Result<usize> {
    let scale = diag.iter().fold(1.0f64, |s, d| s.max((d - t).abs())) + 2.0;
    let tol = crate::linalg::INERTIA_PIVOT_TOL * scale;
    let mut a = vec![0.0f64; diag.len()];
    let mut cut = vec![false; diag.len()];
    let mut negative = 0;
    for &v in view.order.iter().rev() {
        let mut s = diag[v] - t;
        let mut paired = false;
        for &c in &view.children[v] {
            if cut[c] {
                continue;
            }
            if a[c].abs() <= tol {
                if paired {
                    return Err(Error::ExactEigenvalueHit { threshold: t });
                }
                paired = true;
            } else {
                s -= 1.0 / a[c];
            }
        }
        if paired {
            // 2x2 block [[0, -1], [-1, s]]: one negative, one positive.
            negative += 1;
            cut[v] = true;
            a[v] = -0.5;
        } else {
            a[v] = s;
        }
    }
    for &v in &view.order {
        if cut[v] {
            continue;
        }
        if a[v].abs() <= tol {
            // A zero pivot below the root was paired with its parent; at the
            // root it means the threshold is an eigenvalue.
            if view.parent[v].is_none() {
                return Err(Error::ExactEigenvalueHit { threshold: t });
            }
        } else if a[v] < 0.0 {
            negative += 1;
        }
    }
    Ok(negative)
}

/// Number of eigenvalues of a dense symmetric matrix below `threshold`.
pub fn eigen_count_dense(h: &DenseMatrix<f64>, threshold: f64) -> Result<usize> {
    Ok(ldlt_inertia(h, threshold)?.negative)
}

/// Count below `t`, nudging the threshold upward on exact hits.
pub fn robust_count_below(view: &RootedView, diag: &[f64], t: f64) -> usize {
    let mut x = t;
    for k in 0..60 {
        match tree_count_below(view, diag, x) {
            Ok(c) => return c,
            Err(_) => x = t + 1e-11 * (1.0 + t.abs()) * 2f64.powi(k),
        }
    }
    tree_count_below(view, diag, x + 1e-6).unwrap_or(0)
}

/// Eigenvalue counts per bin for bin edges `edges` (ascending).
pub fn eigenvalue_histogram(view: &RootedView, diag: &[f64], edges: &[f64]) -> Vec<usize> {
    let counts: Vec<usize> = edges.par_iter().map(|&e| robust_count_below(view, diag, e)).collect();
    counts.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Smallest and largest eigenvalue to within `tol`, by bisection on counts.
pub fn extreme_eigenvalues(view: &RootedView, diag: &[f64], tol: f64) -> (f64, f64) {
    let n = diag.len();
    let r = diag.iter().fold(0.0f64, |s, d| s.max(d.abs())) + 3.0;
    let find = |target: usize| {
        // Smallest x with count_below(x) >= target.
        let (mut lo, mut hi) = (-r, r);
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if robust_count_below(view, diag, mid) >= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    };
    (find(1), find(n))
}

/// One configuration of the oracle equivalence suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCase {
    pub shape: TreeShape,
    pub depth: usize,
    pub k: f64,
    pub lambda: Complex64,
    pub distribution: Distribution,
    pub vertices: usize,
    pub max_rel_err: f64,
    pub herglotz: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub tolerance: f64,
    pub cases: Vec<OracleCase>,
    pub passed: usize,
    pub seconds: f64,
}

impl OracleReport {
    pub fn all_passed(&self) -> bool {
        self.passed == self.cases.len()
    }
}

/// Random configurations for the oracle suite.
pub fn random_oracle_config(seed: u64, index: u64) -> (TreeShape, usize, PotentialModel, Complex64, u64) {
    let mut rng = substream(seed, &[0x6f72_6163, index]);
    let shapes = [TreeShape::new(1, 2), TreeShape::new(2, 1), TreeShape::new(1, 3), TreeShape::new(0, 0)];
    let shape = shapes[rng.random_range(0..shapes.len())];
    let depth = rng.random_range(0..=6);
    let k = rng.random::<f64>();
    let distribution = match rng.random_range(0..4) {
        0 => Distribution::Uniform { a: -1.0, b: 1.0 },
        1 => Distribution::Bernoulli { v: 1.0, prob: 0.5 },
        2 => Distribution::Gaussian { sigma: 1.0 },
        _ => Distribution::Discrete { values: vec![-1.0, 0.0, 2.0], weights: vec![0.25, 0.5, 0.25] },
    };
    let re = -3.5 + 7.0 * rng.random::<f64>();
    let im = (1e-3f64.ln() + rng.random::<f64>() * (1.0f64.ln() - 1e-3f64.ln())).exp();
    let model = PotentialModel { distribution, coupling: k, p: 0.1 };
    (shape, depth, model, Complex64::new(re, im), rng.random())
}

/// Compares the recursion with the dense solve at every vertex of
/// `configs` random truncations.
pub fn oracle_equivalence(configs: usize, seed: u64, tolerance: f64) -> Result<OracleReport> {
    let start = Instant::now();
    let cases: Result<Vec<OracleCase>> = (0..configs as u64)
        .into_par_iter()
        .map(|i| {
            let (shape, depth, model, lambda, sseed) = random_oracle_config(seed, i);
            let tree = build_tree(shape, depth)?;
            let sample = sample_potential(&model, tree.len(), sseed)?;
            let opts = MatrixOptions::new(Convention::Paper);
            let dense = DenseResolvent::new(&tree, &model, &sample, lambda, opts)?;
            let diag = diagonal(&tree, &model, &sample, opts)?;
            let mut max_rel_err = 0.0f64;
            let mut herglotz = true;
            for x in 0..tree.len() {
                let d = dense.at(x)?.value;
                let g = forward_greens(&reroot(&tree, x)?, &diag, lambda)?[x];
                max_rel_err = max_rel_err.max((d - g).norm() / d.norm());
                herglotz &= g.im > 0.0 && d.im > 0.0;
            }
            Ok(OracleCase { shape, depth, k: model.coupling, lambda, distribution: model.distribution, vertices: tree.len(), max_rel_err, herglotz })
        })
        .collect();
    let cases = cases?;
    let passed = cases.iter().filter(|c| c.max_rel_err <= tolerance && c.herglotz).count();
    Ok(OracleReport { tolerance, cases, passed, seconds: start.elapsed().as_secs_f64() })
}

/// Infinite-tree origin value against finite truncations of depth `d` and
/// `d + 2` at zero disorder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LockRow {
    pub shape: TreeShape,
    pub lambda: Complex64,
    pub depth: usize,
    pub infinite: Complex64,
    pub finite: Complex64,
    pub finite_deeper: Complex64,
    /// `|finite - infinite|`.
    pub error: f64,
    /// `|finite_deeper - infinite|`.
    pub error_deeper: f64,
}

/// Infinite-tree Green function at the origin at zero disorder.
pub fn free_origin_green(lambda: Complex64, shape: TreeShape) -> Result<Complex64> {
    let z = fixed_point(lambda, shape)?.z();
    phi_c(z, z, &vec![0.0; shape.big_m()], lambda, shape, Site::Origin)
}

pub fn convention_lock(shapes: &[TreeShape], lambdas: &[Complex64], depth: usize) -> Result<Vec<LockRow>> {
    let free = PotentialModel::free();
    let mut rows = Vec::new();
    for &shape in shapes {
        let trees = [build_tree(shape, depth)?, build_tree(shape, depth + 2)?];
        for &lambda in lambdas {
            let infinite = free_origin_green(lambda, shape)?;
            let vals: Result<Vec<Complex64>> = trees
                .iter()
                .map(|t| Ok(recursion_green_finite(t, &free, &vec![0.0; t.len()], lambda, 0, Convention::Paper)?.value))
                .collect();
            let vals = vals?;
            rows.push(LockRow {
                shape,
                lambda,
                depth,
                infinite,
                finite: vals[0],
                finite_deeper: vals[1],
                error: (vals[0] - infinite).norm(),
                error_deeper: (vals[1] - infinite).norm(),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn single_vertex() {
        let t = build_tree(TreeShape::new(1, 2), 0).unwrap();
        let m = PotentialModel { distribution: Distribution::default(), coupling: 1.0, p: 0.1 };
        // Spectral, truncated degree 0: diagonal is k q = 3.
        let r = dense_resolvent(&t, &m, &[3.0], c(0.0, 1.0), 0, Convention::Spectral).unwrap();
        assert!((r.value - c(0.3, 0.1)).norm() < 1e-15);
        let g = recursion_green_finite(&t, &m, &[3.0], c(0.0, 1.0), 0, Convention::Spectral).unwrap();
        assert!((g.value - c(0.3, 0.1)).norm() < 1e-15);
    }

    #[test]
    fn counting_examples() {
        let t = build_tree(TreeShape::new(0, 0), 1).unwrap();
        let view = reroot(&t, 0).unwrap();
        // Path 1 - 0 - 2 with zero diagonal: eigenvalues -sqrt2, 0, sqrt2.
        let diag = [0.0; 3];
        assert_eq!(tree_count_below(&view, &diag, -2.0).unwrap(), 0);
        assert_eq!(tree_count_below(&view, &diag, -1.0).unwrap(), 1);
        assert_eq!(tree_count_below(&view, &diag, 1.0).unwrap(), 2);
        assert_eq!(tree_count_below(&view, &diag, 2.0).unwrap(), 3);
        // Threshold 0 makes both leaf pivots vanish.
        assert!(tree_count_below(&view, &diag, 0.0).is_err());
    }
}

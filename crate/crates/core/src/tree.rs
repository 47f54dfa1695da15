//! Decorated binary trees: shape, finite truncations, the operator matrix,
//! rerooting and potential sampling.

use std::collections::VecDeque;
use std::io::{self, Write};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution as _, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Default cap on the number of vertices of a truncation.
pub const DEFAULT_VERTEX_CAP: usize = 200_000;

/// Offset between the raw spectral energy and the recursion energy.
pub const SPECTRAL_SHIFT: f64 = 3.0;

/// Decoration parameters: `m` auxiliary vertices on every top edge and `n`
/// on every bottom edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TreeShape {
    pub m: usize,
    pub n: usize,
}

impl TreeShape {
    pub const fn new(m: usize, n: usize) -> Self {
        TreeShape { m, n }
    }

    /// Number of potentials consumed by one principal step, `m + n + 1`.
    pub const fn big_m(&self) -> usize {
        self.m + self.n + 1
    }

    pub const fn is_symmetric(&self) -> bool {
        self.m == self.n
    }

    pub fn principal_count(depth: usize) -> Option<u128> {
        1u128.checked_shl(depth as u32 + 1).map(|p| p - 1).filter(|_| depth < 120)
    }

    pub fn auxiliary_count(&self, depth: usize) -> Option<u128> {
        let edges = Self::principal_count(depth)? - 1;
        edges.checked_mul((self.m + self.n) as u128).map(|x| x / 2)
    }

    pub fn vertex_count(&self, depth: usize) -> Option<u128> {
        Self::principal_count(depth)?.checked_add(self.auxiliary_count(depth)?)
    }
}

impl std::fmt::Display for TreeShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.m, self.n)
    }
}

/// Classification of a vertex. Auxiliary positions count from 1 at the
/// parent (upper) end of the edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "position")]
pub enum VertexRole {
    Origin,
    Principal,
    AuxTop(usize),
    AuxBottom(usize),
}

impl VertexRole {
    pub fn is_principal(&self) -> bool {
        matches!(self, VertexRole::Origin | VertexRole::Principal)
    }

    /// Degree in the infinite tree.
    pub fn full_degree(&self) -> usize {
        match self {
            VertexRole::Principal => 3,
            _ => 2,
        }
    }
}

/// A depth-truncated decorated tree. Vertex 0 is the origin; indices are
/// breadth-first with the top edge before the bottom edge.
#[derive(Clone, Debug)]
pub struct FiniteTree {
    shape: TreeShape,
    depth: usize,
    roles: Vec<VertexRole>,
    parent: Vec<Option<usize>>,
    generation: Vec<u32>,
    adjacency: Vec<Vec<usize>>,
}

pub fn build_tree(shape: TreeShape, depth: usize) -> Result<FiniteTree> {
    build_tree_with_cap(shape, depth, DEFAULT_VERTEX_CAP)
}

pub fn build_tree_with_cap(shape: TreeShape, depth: usize, cap: usize) -> Result<FiniteTree> {
    let count = shape.vertex_count(depth).unwrap_or(u128::MAX);
    if count > cap as u128 {
        return Err(Error::SizeOverflow { count, cap });
    }
    let count = count as usize;
    let mut t = FiniteTree {
        shape,
        depth,
        roles: Vec::with_capacity(count),
        parent: Vec::with_capacity(count),
        generation: Vec::with_capacity(count),
        adjacency: Vec::with_capacity(count),
    };
    t.push(VertexRole::Origin, None, 0);
    let mut queue = VecDeque::from([0usize]);
    while let Some(v) = queue.pop_front() {
        let g = t.generation[v];
        match t.roles[v] {
            VertexRole::Origin | VertexRole::Principal => {
                if g as usize == depth {
                    continue;
                }
                for (len, top) in [(shape.m, true), (shape.n, false)] {
                    let child = if len == 0 {
                        t.push(VertexRole::Principal, Some(v), g + 1)
                    } else if top {
                        t.push(VertexRole::AuxTop(1), Some(v), g)
                    } else {
                        t.push(VertexRole::AuxBottom(1), Some(v), g)
                    };
                    queue.push_back(child);
                }
            }
            VertexRole::AuxTop(j) | VertexRole::AuxBottom(j) => {
                let len = if matches!(t.roles[v], VertexRole::AuxTop(_)) { shape.m } else { shape.n };
                let child = if j == len {
                    t.push(VertexRole::Principal, Some(v), g + 1)
                } else if matches!(t.roles[v], VertexRole::AuxTop(_)) {
                    t.push(VertexRole::AuxTop(j + 1), Some(v), g)
                } else {
                    t.push(VertexRole::AuxBottom(j + 1), Some(v), g)
                };
                queue.push_back(child);
            }
        }
    }
    debug_assert_eq!(t.len(), count);
    Ok(t)
}

impl FiniteTree {
    fn push(&mut self, role: VertexRole, parent: Option<usize>, generation: u32) -> usize {
        let id = self.roles.len();
        self.roles.push(role);
        self.parent.push(parent);
        self.generation.push(generation);
        self.adjacency.push(Vec::new());
        if let Some(p) = parent {
            self.adjacency[p].push(id);
            self.adjacency[id].push(p);
        }
        id
    }

    pub fn shape(&self) -> TreeShape {
        self.shape
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn role(&self, v: usize) -> VertexRole {
        self.roles[v]
    }

    pub fn roles(&self) -> &[VertexRole] {
        &self.roles
    }

    /// Principal generation of a principal vertex, or of the upper end of
    /// the edge an auxiliary vertex sits on.
    pub fn generation(&self, v: usize) -> usize {
        self.generation[v] as usize
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    /// Degree in the truncation.
    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.len()).map(|v| self.degree(v)).collect()
    }

    /// Degree the vertex has in the infinite tree.
    pub fn full_degree(&self, v: usize) -> usize {
        self.roles[v].full_degree()
    }

    pub fn is_leaf(&self, v: usize) -> bool {
        self.roles[v].is_principal() && self.generation(v) == self.depth && self.depth > 0
    }

    /// Undirected edges as sorted pairs, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .parent
            .iter()
            .enumerate()
            .filter_map(|(v, p)| p.map(|p| (p.min(v), p.max(v))))
            .collect();
        e.sort_unstable();
        e
    }

    pub fn check_vertex(&self, v: usize) -> Result<()> {
        if v < self.len() {
            Ok(())
        } else {
            Err(Error::UnknownVertex(v))
        }
    }

    pub fn dump(&self) -> TreeDump {
        TreeDump {
            shape: self.shape,
            depth: self.depth,
            vertices: (0..self.len())
                .map(|v| VertexDump {
                    id: v,
                    role: self.roles[v],
                    generation: self.generation(v),
                    degree: self.degree(v),
                    parent: self.parent[v],
                })
                .collect(),
            adjacency: self.adjacency.clone(),
        }
    }
}

/// JSON-friendly adjacency dump.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TreeDump {
    pub shape: TreeShape,
    pub depth: usize,
    pub vertices: Vec<VertexDump>,
    pub adjacency: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VertexDump {
    pub id: usize,
    pub role: VertexRole,
    pub generation: usize,
    pub degree: usize,
    pub parent: Option<usize>,
}

/// The tree viewed from an arbitrary root.
#[derive(Clone, Debug, PartialEq)]
pub struct RootedView {
    pub root: usize,
    pub parent: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
    /// Breadth-first order from the root.
    pub order: Vec<usize>,
}

impl RootedView {
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .parent
            .iter()
            .enumerate()
            .filter_map(|(v, p)| p.map(|p| (p.min(v), p.max(v))))
            .collect();
        e.sort_unstable();
        e
    }
}

/// Re-parents the tree so that `x` becomes the root.
pub fn reroot(tree: &FiniteTree, x: usize) -> Result<RootedView> {
    tree.check_vertex(x)?;
    let n = tree.len();
    let mut parent = vec![None; n];
    let mut children = vec![Vec::new(); n];
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    seen[x] = true;
    let mut queue = VecDeque::from([x]);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &u in tree.neighbors(v) {
            if !seen[u] {
                seen[u] = true;
                parent[u] = Some(v);
                children[v].push(u);
                queue.push_back(u);
            }
        }
    }
    Ok(RootedView { root: x, parent, children, order })
}

/// Which energy variable a matrix or resolvent refers to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    /// Energies of the recursion, `lambda_spectral - 3`.
    #[default]
    Paper,
    /// Energies of `H = Laplacian + k q` itself.
    Spectral,
}

impl Convention {
    pub fn shift(self) -> f64 {
        match self {
            Convention::Paper => SPECTRAL_SHIFT,
            Convention::Spectral => 0.0,
        }
    }

    /// Converts an energy in this convention to the paper convention.
    pub fn to_paper(self, lambda: Complex64) -> Complex64 {
        match self {
            Convention::Paper => lambda,
            Convention::Spectral => lambda - SPECTRAL_SHIFT,
        }
    }

    /// Converts a paper-convention energy to this convention.
    pub fn from_paper(self, lambda: Complex64) -> Complex64 {
        match self {
            Convention::Paper => lambda,
            Convention::Spectral => lambda + SPECTRAL_SHIFT,
        }
    }

    pub fn default_boundary(self) -> LeafBoundary {
        match self {
            Convention::Paper => LeafBoundary::FullDegree,
            Convention::Spectral => LeafBoundary::TruncatedDegree,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Convention::Paper => "paper",
            Convention::Spectral => "spectral",
        }
    }
}

impl std::str::FromStr for Convention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Convention::Paper),
            "spectral" => Ok(Convention::Spectral),
            other => Err(Error::InvalidArgument(format!("unknown convention {other:?}"))),
        }
    }
}

/// Degree used on the diagonal at truncated vertices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafBoundary {
    /// Every vertex keeps its infinite-tree degree.
    FullDegree,
    /// Degrees are those of the finite graph.
    TruncatedDegree,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixOptions {
    pub convention: Convention,
    pub boundary: LeafBoundary,
}

impl MatrixOptions {
    pub fn new(convention: Convention) -> Self {
        MatrixOptions { convention, boundary: convention.default_boundary() }
    }

    pub fn with_boundary(mut self, boundary: LeafBoundary) -> Self {
        self.boundary = boundary;
        self
    }
}

impl Default for MatrixOptions {
    fn default() -> Self {
        MatrixOptions::new(Convention::Paper)
    }
}

impl From<Convention> for MatrixOptions {
    fn from(c: Convention) -> Self {
        MatrixOptions::new(c)
    }
}

/// Diagonal of the operator: degree + k q, minus 3 in paper convention.
pub fn diagonal(tree: &FiniteTree, model: &PotentialModel, sample: &[f64], opts: MatrixOptions) -> Result<Vec<f64>> {
    if sample.len() != tree.len() {
        return Err(Error::LengthMismatch { expected: tree.len(), got: sample.len() });
    }
    let shift = opts.convention.shift();
    Ok((0..tree.len())
        .map(|v| {
            let deg = match opts.boundary {
                LeafBoundary::FullDegree => tree.full_degree(v),
                LeafBoundary::TruncatedDegree => tree.degree(v),
            };
            deg as f64 + model.coupling * sample[v] - shift
        })
        .collect())
}

/// Dense operator matrix with the convention's default boundary.
pub fn hamiltonian_matrix(
    tree: &FiniteTree,
    model: &PotentialModel,
    sample: &[f64],
    convention: Convention,
) -> Result<DenseMatrix<f64>> {
    hamiltonian_matrix_with(tree, model, sample, MatrixOptions::new(convention))
}

pub fn hamiltonian_matrix_with(
    tree: &FiniteTree,
    model: &PotentialModel,
    sample: &[f64],
    opts: MatrixOptions,
) -> Result<DenseMatrix<f64>> {
    let diag = diagonal(tree, model, sample, opts)?;
    let mut h = DenseMatrix::zeros(tree.len());
    for (v, d) in diag.iter().enumerate() {
        h[(v, v)] = *d;
    }
    for (a, b) in tree.edges() {
        h[(a, b)] = -1.0;
        h[(b, a)] = -1.0;
    }
    Ok(h)
}

/// Writes the operator in MatrixMarket symmetric coordinate format (lower
/// triangle, 1-based).
pub fn write_matrix_market<W: Write>(tree: &FiniteTree, diag: &[f64], mut w: W) -> io::Result<()> {
    let edges = tree.edges();
    let nnz = diag.len() + edges.len();
    writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
    writeln!(w, "{} {} {}", diag.len(), diag.len(), nnz)?;
    for (v, d) in diag.iter().enumerate() {
        writeln!(w, "{} {} {:e}", v + 1, v + 1, d)?;
    }
    for (a, b) in edges {
        writeln!(w, "{} {} -1", b + 1, a + 1)?;
    }
    Ok(())
}

/// Single-site distribution of the potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Distribution {
    Uniform { a: f64, b: f64 },
    /// Takes `+v` with probability `prob` and `-v` otherwise.
    Bernoulli { v: f64, prob: f64 },
    Gaussian { sigma: f64 },
    Discrete { values: Vec<f64>, weights: Vec<f64> },
}

impl Default for Distribution {
    fn default() -> Self {
        Distribution::Uniform { a: -1.0, b: 1.0 }
    }
}

/// A distribution prepared for repeated sampling.
#[derive(Clone, Debug)]
pub enum Sampler {
    Uniform(Uniform<f64>),
    Bernoulli { v: f64, prob: f64 },
    Gaussian(Normal<f64>),
    Discrete { values: Vec<f64>, index: WeightedIndex<f64> },
}

impl Sampler {
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Uniform(u) => u.sample(rng),
            Sampler::Bernoulli { v, prob } => {
                if rng.random::<f64>() < *prob {
                    *v
                } else {
                    -*v
                }
            }
            Sampler::Gaussian(g) => g.sample(rng),
            Sampler::Discrete { values, index } => values[index.sample(rng)],
        }
    }
}

impl Distribution {
    pub fn sampler(&self) -> Result<Sampler> {
        let bad = |msg: &str| Error::InvalidModel(msg.to_string());
        match self {
            Distribution::Uniform { a, b } => {
                if !(a.is_finite() && b.is_finite() && a < b) {
                    return Err(bad("uniform needs finite a < b"));
                }
                Ok(Sampler::Uniform(Uniform::new(*a, *b).map_err(|e| bad(&e.to_string()))?))
            }
            Distribution::Bernoulli { v, prob } => {
                if !(v.is_finite() && *v >= 0.0 && (0.0..=1.0).contains(prob)) {
                    return Err(bad("bernoulli needs v >= 0 and prob in [0, 1]"));
                }
                Ok(Sampler::Bernoulli { v: *v, prob: *prob })
            }
            Distribution::Gaussian { sigma } => {
                if !(sigma.is_finite() && *sigma > 0.0) {
                    return Err(bad("gaussian needs sigma > 0"));
                }
                Ok(Sampler::Gaussian(Normal::new(0.0, *sigma).map_err(|e| bad(&e.to_string()))?))
            }
            Distribution::Discrete { values, weights } => {
                if values.len() != weights.len() || values.is_empty() {
                    return Err(bad("discrete needs equally many values and weights"));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(bad("discrete values must be finite"));
                }
                let index = WeightedIndex::new(weights.iter().copied()).map_err(|e| bad(&e.to_string()))?;
                Ok(Sampler::Discrete { values: values.clone(), index })
            }
        }
    }

    /// True when every draw is zero.
    pub fn is_degenerate_at_zero(&self) -> bool {
        match self {
            Distribution::Bernoulli { v, .. } => *v == 0.0,
            Distribution::Discrete { values, weights } => {
                values.iter().zip(weights).all(|(v, w)| *v == 0.0 || *w == 0.0)
            }
            _ => false,
        }
    }
}

/// Disorder description: distribution, coupling `k`, moment exponent `p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialModel {
    pub distribution: Distribution,
    #[serde(rename = "k")]
    pub coupling: f64,
    pub p: f64,
}

impl PotentialModel {
    pub fn new(distribution: Distribution, coupling: f64, p: f64) -> Result<Self> {
        let m = PotentialModel { distribution, coupling, p };
        m.validate()?;
        Ok(m)
    }

    /// Zero coupling with the default distribution.
    pub fn free() -> Self {
        PotentialModel { distribution: Distribution::default(), coupling: 0.0, p: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        self.distribution.sampler()?;
        if !self.coupling.is_finite() {
            return Err(Error::InvalidModel("coupling must be finite".into()));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::InvalidModel("moment exponent p must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// True when the potential term vanishes identically.
    pub fn is_free(&self) -> bool {
        self.coupling == 0.0 || self.distribution.is_degenerate_at_zero()
    }
}

/// `count` i.i.d. draws from the distribution (not multiplied by `k`).
pub fn sample_potential(model: &PotentialModel, count: usize, seed: u64) -> Result<Vec<f64>> {
    let sampler = model.distribution.sampler()?;
    let mut rng = crate::rng::substream(seed, &[0x706f_7465]);
    Ok((0..count).map(|_| sampler.sample(&mut rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        let s = TreeShape::new(1, 2);
        assert_eq!(build_tree(s, 0).unwrap().len(), 1);
        let t = build_tree(s, 2).unwrap();
        assert_eq!(t.len(), 16);
        assert_eq!(t.roles().iter().filter(|r| r.is_principal()).count(), 7);
        let b = build_tree(TreeShape::new(0, 0), 3).unwrap();
        assert_eq!(b.len(), 15);
        assert!(b.roles().iter().all(|r| r.is_principal()));
    }

    #[test]
    fn overflow() {
        let r = build_tree_with_cap(TreeShape::new(1, 2), 10, 100);
        assert!(matches!(r, Err(Error::SizeOverflow { .. })));
        assert!(matches!(build_tree(TreeShape::new(0, 0), 200), Err(Error::SizeOverflow { .. })));
    }

    #[test]
    fn breadth_first_top_first() {
        let t = build_tree(TreeShape::new(1, 2), 1).unwrap();
        let roles: Vec<_> = t.roles().to_vec();
        assert_eq!(
            roles,
            vec![
                VertexRole::Origin,
                VertexRole::AuxTop(1),
                VertexRole::AuxBottom(1),
                VertexRole::Principal,
                VertexRole::AuxBottom(2),
                VertexRole::Principal,
            ]
        );
        assert_eq!(t.parent(5), Some(4));
    }

    #[test]
    fn matrix_examples() {
        let free = PotentialModel::free();
        let t0 = build_tree(TreeShape::new(1, 2), 0).unwrap();
        let h = hamiltonian_matrix(&t0, &free, &[0.0], Convention::Spectral).unwrap();
        assert_eq!(h.diagonal(), vec![0.0]);
        let t1 = build_tree(TreeShape::new(0, 0), 1).unwrap();
        let h = hamiltonian_matrix(&t1, &free, &[0.0; 3], Convention::Spectral).unwrap();
        assert_eq!(h.diagonal(), vec![2.0, 1.0, 1.0]);
        assert_eq!(h[(0, 1)], -1.0);
        assert_eq!(h[(1, 2)], 0.0);
        let p = hamiltonian_matrix(&t1, &free, &[0.0; 3], Convention::Paper).unwrap();
        assert_eq!(p.diagonal(), vec![-1.0, 0.0, 0.0]);
        assert!(matches!(
            hamiltonian_matrix(&t1, &free, &[0.0; 2], Convention::Paper),
            Err(Error::LengthMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn reroot_at_origin_is_identity() {
        let t = build_tree(TreeShape::new(2, 1), 3).unwrap();
        let v = reroot(&t, 0).unwrap();
        assert_eq!(v.parent, t.parents().to_vec());
        assert!(matches!(reroot(&t, t.len()), Err(Error::UnknownVertex(_))));
    }

    #[test]
    fn sample_potential_basics() {
        let m = PotentialModel::new(Distribution::Bernoulli { v: 1.0, prob: 0.5 }, 1.0, 0.1).unwrap();
        assert!(sample_potential(&m, 0, 1).unwrap().is_empty());
        assert_eq!(sample_potential(&m, 50, 9).unwrap(), sample_potential(&m, 50, 9).unwrap());
        let xs = sample_potential(&m, 1_000_000, 3).unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 3e-3, "{mean}");
    }

    #[test]
    fn model_validation() {
        assert!(PotentialModel::new(Distribution::Uniform { a: 1.0, b: 0.0 }, 1.0, 0.1).is_err());
        assert!(PotentialModel::new(Distribution::Gaussian { sigma: 1.0 }, 1.0, 1.0).is_err());
        let d = Distribution::Discrete { values: vec![1.0, 2.0], weights: vec![1.0] };
        assert!(d.sampler().is_err());
    }

    #[test]
    fn matrix_market_header() {
        let t = build_tree(TreeShape::new(0, 0), 1).unwrap();
        let diag = diagonal(&t, &PotentialModel::free(), &[0.0; 3], MatrixOptions::default()).unwrap();
        let mut out = Vec::new();
        write_matrix_market(&t, &diag, &mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert!(s.starts_with("%%MatrixMarket matrix coordinate real symmetric\n3 3 5\n"));
    }
}

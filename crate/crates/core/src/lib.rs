//! Green functions, spectral supports, contraction functionals and
//! population dynamics for the Anderson model on decorated binary trees.
//!
//! Energies are in the recursion ("paper") convention unless stated
//! otherwise; the operator's own spectrum sits at `lambda + 3`.

// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod free;
pub mod linalg;
pub mod oracle;
pub mod poly;
pub mod population;
pub mod recursion;
pub mod rng;
pub mod stats;
pub mod tree;
pub mod uhp;

pub use error::{Error, Result};
pub use free::{
    cheb_r, eigen_mu, exceptional_s, fixed_point, phi, phi_chain, support_f, transfer_matrix, ChebData,
    Condition, ExceptionalSet, FixedPointResult, FixedPointValue, Site, SupportResult,
};
pub use oracle::{dense_resolvent, eigen_count_below, recursion_green_finite, ResolventResult};
pub use population::{
    ac_diagnostic, dos_curve, estimate_moment, evolve, green_at_origin, init_population, MomentEstimate, MomentQuantity,
    Population,
};
pub use recursion::{branch_quantities, mu_bound_check, mu_p, BranchQuantities, MuContext, MuResult};
pub use linalg::{DenseMatrix, Inertia};
pub use tree::{
    build_tree, hamiltonian_matrix, reroot, sample_potential, Convention, Distribution, FiniteTree,
    LeafBoundary, MatrixOptions, PotentialModel, RootedView, TreeShape, VertexRole,
};
pub use uhp::{hyperbolic_distance, weight, MoebiusMap, UhpPoint};

pub use num_complex::Complex64;

//! Overlapping community detection with Bayesian non-negative matrix
//! factorization.
//!
//! A weighted graph becomes a dense interaction matrix `V` (adjacency plus node
//! strengths on the diagonal), which is factorized as `V ≈ WH` under a Poisson
//! likelihood. Half-normal priors with per-component precisions switch off
//! unneeded components, so the number of communities is inferred rather than
//! fixed. Row-normalizing `W` gives each node a membership distribution over
//! the surviving communities.
//!
//! ```no_run
//! use nmfcomm::{graph, membership, nmf};
//!
//! let (g, _ids) = graph::load_edge_list("0 1\n1 2\n0 2\n3 4\n4 5\n3 5\n".as_bytes())?;
//! let v = graph::build_interaction_matrix(&g);
//! let fit = nmf::fit(v.view(), &nmf::SolverConfig::default())?;
//! let m = membership::memberships(fit.factorization.w.view(), 1e-12);
//! println!("{} communities", m.k_effective);
//! # Ok::<(), nmfcomm::Error>(())
//! ```

pub mod bench;
pub mod error;
pub mod graph;
pub mod membership;
pub mod metrics;
pub mod nmf;

pub use error::{Error, Result};
pub use graph::{Graph, InteractionMatrix, LoadReport, NgParams, PlantedPartition};
pub use membership::Membership;
pub use metrics::HardPartition;
pub use nmf::{Factorization, FitResult, SolverConfig};

//! Heterogeneous one-dimensional elastodynamics: Galerkin reduction, sub-domain manifolds
//! and Gauss-point coupling of sub-domains through averaged stress.

mod coarse_mesh;
mod coupled;
mod experiment;
mod galerkin;
mod medium;
mod store;
mod subdomain;

pub use coarse_mesh::{CoarseMesh, GaussPoint};
pub use coupled::{
    coarse_initial_state, coupled_errors, end_accelerations, fine_reference, fine_step, run_coupled, run_coupled_from,
    subdomain_boundary_estimate, CoupledConfig, CoupledRun, FineReference, GaussFields, HomogeneousClosure,
    StressClosure,
};
pub use experiment::{
    build_coupled_store, local_medium, run_coupled_homogeneous, run_coupled_plim, run_subdomain_experiment,
    CoupledComparison, SubdomainComparison, SubdomainExperiment,
};
pub use galerkin::{assemble_elements, assemble_galerkin, BoundaryCondition, GalerkinOps};
pub use medium::{Medium1D, ModulusLaw};
pub use store::{
    build_store, select_manifold_at_gauss, strain_profile, GaussCache, GaussSelection, ManifoldStore, PlimClosure,
    StoreConfig, StoredSheet,
};
pub use subdomain::{
    averaging_weights, coarse_subdomain_rhs, elastowave_geq, solve_subdomain_manifold, MarchConfig, SubDomain,
    SubdomainSolver,
};

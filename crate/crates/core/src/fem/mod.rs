pub mod assembly;
pub mod cholesky;
pub mod eigen;
pub mod io;
pub mod mesh;
pub mod sparse;

pub use assembly::{
    apply_dirichlet, assemble_subdomain_mass, assemble_subdomain_stiffness, extend_vector, restrict_vector, Coeff,
};
pub use cholesky::{solve_sparse, SparseCholesky};
pub use eigen::{smallest_generalized_eigenpair, smallest_generalized_eigenvalue, EigenEstimate};
pub use mesh::Mesh;
pub use sparse::SparseMatrix;

pub mod benchmark;
pub mod model;
pub mod theta;

pub use benchmark::{build_benchmark, BenchmarkConfig};
pub use model::{AdmissibleSet, AffineFunctional, AffineModel, AffineOperator};
pub use theta::{MultiIndex, ThetaExpr, ThetaFunction, Var};

pub mod affine;
pub mod certification;
pub mod config;
pub mod design;
pub mod error;
pub mod fem;
pub mod pod;
pub mod robust;
pub mod sensitivity;
pub mod sqp;

pub use error::{Error, Result};

//! Criterion benchmarks of the assembly, factorisation, reduced solve and
//! worst-case kernels; see `benches/kernels.rs`.

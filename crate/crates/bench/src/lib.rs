//! Criterion benchmarks for the rigidpack kernels live in `benches/`.

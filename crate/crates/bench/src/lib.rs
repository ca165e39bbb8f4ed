//! Shared workload builders for the pipeline benchmarks.

use espim_core::*;

pub fn workload(rows: usize, cols: usize, sparsity: f64) -> (SparseMatrix, Vector) {
    let d = generate_dense(
        rows,
        cols,
        1,
        Distribution::Uniform { lo: -1.0, hi: 1.0 },
        ElemFormat::Bf16,
    )
    .unwrap();
    let m = prune_magnitude(&d, sparsity).unwrap();
    let v = generate_vector(
        cols,
        2,
        Distribution::Uniform { lo: -1.0, hi: 1.0 },
        ElemFormat::Bf16,
    )
    .unwrap();
    (m, v)
}

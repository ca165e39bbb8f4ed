//! Compiler, static scheduler, cycle-level simulator and analytic models for
//! a sparse processing-in-memory matrix-vector engine.
//!
//! The pipeline: generate or load a 16-bit weight matrix, prune it to a
//! target sparsity, balance rows across banks and build fine-grained
//! interleaved lane streams, statically schedule them into a compressed DRAM
//! image plus a stall-annotated host command stream, then execute that
//! stream cycle by cycle against DRAM timing, checking outputs bit-exactly
//! against replay oracles.

pub mod datapath;
pub mod elem;
pub mod error;
pub mod layout;
pub mod matrix;
pub mod models;
pub mod pimsim;
pub mod sdds;

pub use datapath::SwitchMode;
pub use elem::ElemFormat;
pub use error::{Error, Result};
pub use layout::{
    assign_naive, balance_greedy, build_lane_streams, derive_accum_order, derive_newton_order,
    layout_dense_coarse, Cell, DenseImage, GeometryConfig, LaneStreams, Placement, RowSlot,
};
pub use matrix::{
    generate_dense, generate_vector, prune_magnitude, reference_mv, reference_mv_ordered,
    AccumOrder, DenseMatrix, Distribution, MvPrecision, SparseMatrix, Vector,
};
pub use models::{
    calibrate_r_rest, energy_espim, energy_newton, ideal_espim_cycles, ideal_nonpim_cycles,
    EnergyActivity, EnergyBreakdown, EnergyCoeffs,
};
pub use pimsim::{
    run, run_newton, Image, RefreshConfig, SimReport, TimingConfig,
};
pub use sdds::{
    compile_dense, compile_sparse, emit_command_text, parse_command_text, reorder_lane_window,
    reorder_streams, schedule, schedule_dense, validate_schedule, Column, Command, CommandStream,
    CompressedImage, FeatureFlags, GroupSpan, GroupStats, MetaBits, PackedCell, ScheduleStats,
    SparseCompilation, StreamHeader, Violation,
};
pub use sdds::validate::ViolationKind;

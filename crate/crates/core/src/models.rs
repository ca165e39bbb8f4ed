//! Analytic baselines and the calibrated energy model.
//!
//! The ideal non-PIM host is limited only by external DRAM bandwidth: one
//! 256-bit transfer per tCCD. The ideal ESPIM drops every stall column but
//! keeps the command overheads of the real machine. Energy is reported in
//! units of one full uncompressed-matrix read (the paper's convention) and,
//! alternatively, normalized against the conventional access+IO baseline.

use serde::{Deserialize, Serialize};

use crate::layout::GeometryConfig;
use crate::pimsim::{stream_cycles, TimingConfig};
use crate::sdds::{Command, ScheduleStats};

/// Solved from the 50%-sparsity anchor (total = 1.8) on a uniform random
/// 4096x4096 workload: the access term charges every commanded column, so
/// the measured access (0.901) and compute (0.900) already meet the anchor
/// and the residual rounds to zero.
pub const DEFAULT_R_REST: f64 = 0.0;

/// Documentation constants: datapath area over conventional DRAM.
pub const NEWTON_MACS_AREA_OVERHEAD: f64 = 0.25;
pub const ESPIM_SPARSE_ONLY_AREA_OVERHEAD: f64 = 0.308;
pub const ESPIM_FLEXIBLE_AREA_OVERHEAD: f64 = 0.397;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyCoeffs {
    /// Reading the full uncompressed matrix internally; the unit.
    pub a_access: f64,
    /// Full-density dense compute total, in access units.
    pub c_compute_dense: f64,
    /// Off-chip transfer multiplier of the conventional baseline.
    pub e_io: f64,
    /// Per-compressed-column FIFO/switch overhead coefficient.
    pub r_rest: f64,
}

impl Default for EnergyCoeffs {
    fn default() -> Self {
        EnergyCoeffs {
            a_access: 1.0,
            c_compute_dense: 1.8,
            e_io: 0.786,
            r_rest: DEFAULT_R_REST,
        }
    }
}

impl EnergyCoeffs {
    pub fn validate(&self) -> crate::error::Result<()> {
        let all = [self.a_access, self.c_compute_dense, self.e_io, self.r_rest];
        if all.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(crate::error::Error::invalid(
                "energy coefficients must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub access: f64,
    pub compute: f64,
    pub rest: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn new(access: f64, compute: f64, rest: f64) -> Self {
        EnergyBreakdown {
            access,
            compute,
            rest,
            total: access + compute + rest,
        }
    }

    /// Re-normalizes from access units to the conventional access+IO
    /// baseline (= 1.0).
    pub fn vs_nonpim_baseline(&self, c: &EnergyCoeffs) -> EnergyBreakdown {
        let d = c.a_access + c.e_io;
        EnergyBreakdown {
            access: self.access / d,
            compute: self.compute / d,
            rest: self.rest / d,
            total: self.total / d,
        }
    }
}

/// Activity counts feeding the energy model.
#[derive(Debug, Clone, Copy)]
pub struct EnergyActivity {
    /// Column commands executed (every bank reads each), index-only and
    /// padding included.
    pub columns_per_bank: u64,
    pub banks: u64,
    /// Non-gated multiplies across all banks.
    pub mac_ops: u64,
    /// Uncompressed matrix shape.
    pub rows: u64,
    pub cols: u64,
}

impl EnergyActivity {
    fn dense_columns(&self) -> f64 {
        (self.rows * self.cols) as f64 / 16.0
    }

    fn dense_mac_ops(&self) -> f64 {
        (self.rows * self.cols) as f64
    }
}

/// ESPIM energy in access units (paper convention).
pub fn energy_espim(a: &EnergyActivity, c: &EnergyCoeffs) -> EnergyBreakdown {
    let col_ratio = (a.columns_per_bank * a.banks) as f64 / a.dense_columns();
    let access = c.a_access * col_ratio;
    let compute = c.c_compute_dense * a.mac_ops as f64 / a.dense_mac_ops();
    let rest = c.r_rest * col_ratio;
    EnergyBreakdown::new(access, compute, rest)
}

/// Zero-gated dense baseline energy in access units: full uncompressed
/// access, compute scaled by the non-zero fraction.
pub fn energy_newton(nnz: u64, rows: u64, cols: u64, c: &EnergyCoeffs) -> EnergyBreakdown {
    let access = c.a_access;
    let compute = c.c_compute_dense * nnz as f64 / (rows * cols) as f64;
    EnergyBreakdown::new(access, compute, 0.0)
}

/// Solves the rest coefficient from a measured 50%-sparsity anchor run.
pub fn calibrate_r_rest(a: &EnergyActivity, c: &EnergyCoeffs, target_total: f64) -> f64 {
    let col_ratio = (a.columns_per_bank * a.banks) as f64 / a.dense_columns();
    let access = c.a_access * col_ratio;
    let compute = c.c_compute_dense * a.mac_ops as f64 / a.dense_mac_ops();
    (target_total - access - compute) / col_ratio
}

/// Cycles for an ideal host limited only by the external pin bandwidth:
/// one 256-bit (32-byte) transfer per tCCD.
pub fn ideal_nonpim_cycles(
    matrix_bytes: u64,
    vector_bytes: u64,
    _g: &GeometryConfig,
    t: &TimingConfig,
) -> u64 {
    (matrix_bytes + vector_bytes).div_ceil(32) * t.t_ccd
}

/// Stall-free ESPIM bound: stall columns drop out, but a group still needs a
/// column per broadcast slice and a column per value of its fullest lane,
/// plus the per-group activation/read-out/vector-load overheads of the real
/// machine.
pub fn ideal_espim_cycles(stats: &ScheduleStats, t: &TimingConfig, g: &GeometryConfig) -> u64 {
    let mut cmds: Vec<Command> = Vec::new();
    for gs in &stats.groups {
        if gs.pass == 0 {
            for chunk in 0..g.columns_per_dram_row {
                cmds.push(Command::Lgb(
                    (gs.vector_row as usize * g.columns_per_dram_row + chunk) as u32,
                ));
            }
        }
        let cols = gs.index_only_columns + gs.broadcasts.max(gs.max_lane_cells);
        for i in 0..cols {
            if i % g.columns_per_dram_row as u64 == 0 {
                cmds.push(Command::Act);
            }
            cmds.push(Command::Cbr((i % g.columns_per_dram_row as u64) as u32));
        }
        for b in 0..g.num_banks {
            cmds.push(Command::Rd(b as u32));
        }
    }
    stream_cycles(&cmds, t)
}

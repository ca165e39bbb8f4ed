//! Cycle-level execution of a command stream against DRAM timing and the
//! per-bank datapath.
//!
//! All banks consume every column command in lockstep. A CBR latches the
//! next vector slice and the 4-cycle window extracts matching iFIFO heads
//! into the eFIFOs; value lanes multiply against eFIFO heads at slot start
//! (zero values are no-ops). Dense mode pairs each broadcast element
//! positionally with the column's sixteen values, Newton style.

pub mod timing;

use std::io::Write;

use serde::Serialize;

use crate::datapath::{extraction_slot, LaneFifo, LaneSlot};
use crate::elem::{is_zero_pattern, ElemFormat};
use crate::error::{Error, Result};
use crate::layout::{DenseImage, GeometryConfig, Placement};
use crate::matrix::Vector;
use crate::sdds::{Column, Command, CommandStream, CompressedImage};

pub use timing::{stream_cycles, RefreshConfig, TimingConfig, TimingState};

/// Compiled matrix data in either operating mode.
#[derive(Debug, Clone)]
pub enum Image {
    Sparse(CompressedImage),
    Dense(DenseImage),
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct CommandCounts {
    pub lgb: u64,
    pub act: u64,
    pub lidx: u64,
    pub cnb: u64,
    pub cbr: u64,
    pub rd: u64,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct StallCycles {
    pub broadcast: u64,
    pub efifo_full: u64,
    pub warmup: u64,
    pub drain: u64,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct FifoCounts {
    pub ififo_pushes: u64,
    pub ififo_pops: u64,
    pub efifo_pushes: u64,
    pub efifo_pops: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    /// Host-assembled output vector (wide sums of per-group partials).
    pub output: Vec<f64>,
    pub total_cycles: u64,
    pub commands: CommandCounts,
    pub stall_cycles: StallCycles,
    pub broadcasts: u64,
    /// Column commands executed (each read by every bank).
    pub columns_read: u64,
    /// Non-sentinel multiplies across all banks.
    pub mac_ops: u64,
    pub fifo: FifoCounts,
    pub extracted: u64,
    pub violations: Vec<String>,
}

const MAX_VIOLATIONS: usize = 200;

fn note(violations: &mut Vec<String>, msg: String) {
    if violations.len() < MAX_VIOLATIONS {
        violations.push(msg);
    }
}

/// Runs a command stream. Sparse images need the placement to assemble the
/// output vector; dense images derive the row mapping from the geometry.
pub fn run(
    image: &Image,
    stream: &CommandStream,
    vector: &Vector,
    placement: Option<&Placement>,
    t: &TimingConfig,
    g: &GeometryConfig,
    trace: Option<&mut dyn Write>,
) -> Result<SimReport> {
    t.validate()?;
    g.validate()?;
    match image {
        Image::Sparse(img) => {
            let p = placement.ok_or_else(|| {
                Error::Sim("sparse runs need the placement to map outputs to rows".into())
            })?;
            run_sparse(img, stream, vector, p, t, g, trace)
        }
        Image::Dense(img) => run_dense(img, stream, vector, t, g, trace),
    }
}

/// Dense baseline entry point.
pub fn run_newton(
    image: &DenseImage,
    stream: &CommandStream,
    vector: &Vector,
    t: &TimingConfig,
    g: &GeometryConfig,
    trace: Option<&mut dyn Write>,
) -> Result<SimReport> {
    t.validate()?;
    g.validate()?;
    run_dense(image, stream, vector, t, g, trace)
}

fn run_sparse(
    image: &CompressedImage,
    stream: &CommandStream,
    vector: &Vector,
    placement: &Placement,
    t: &TimingConfig,
    g: &GeometryConfig,
    mut trace: Option<&mut dyn Write>,
) -> Result<SimReport> {
    let f = stream.header.flags;
    let banks = g.num_banks;
    let macs = image.macs;
    let nlanes = banks * macs;
    let slices = g.slices_per_vector_row() as i64;
    let format = vector.format;
    let decoupled = f.prefetch;

    if stream.header.banks != banks {
        return Err(Error::Sim(format!(
            "stream compiled for {} banks, geometry has {banks}",
            stream.header.banks
        )));
    }
    if image.banks.len() != banks {
        return Err(Error::Sim("image bank count does not match geometry".into()));
    }
    if let Some(max_vr) = image.groups.iter().map(|s| s.vector_row).max() {
        let need = max_vr as usize + 1;
        if g.vector_rows(vector.len()) != need {
            return Err(Error::dim(format!(
                "vector of {} elements does not span the image's {need} vector-rows",
                vector.len()
            )));
        }
    }

    let rows = placement.assignments.len();
    let mut report = SimReport {
        output: vec![0.0; rows],
        total_cycles: 0,
        commands: CommandCounts::default(),
        stall_cycles: StallCycles::default(),
        broadcasts: 0,
        columns_read: 0,
        mac_ops: 0,
        fifo: FifoCounts::default(),
        extracted: 0,
        violations: Vec::new(),
    };

    let mut ts = TimingState::new(t);
    let mut fifos: Vec<LaneFifo> = (0..nlanes).map(|_| LaneFifo::new(f.fifo_depth)).collect();
    let mut walks = vec![-1i64; nlanes]; // coupled-mode slice walks
    let mut accs = vec![[0u16; 2]; nlanes];
    let mut outcomes: Vec<LaneSlot> = Vec::new();

    let mut group_idx = 0usize;
    let mut offset = 0usize;
    let mut in_rd_tail = false;
    let mut rd_seen = vec![false; banks];
    let mut cur: i64 = -1;
    let mut latch = [0u16; 16];
    let mut loaded_vr: Option<usize> = None;

    macro_rules! trace_cmd {
        ($at:expr, $($arg:tt)*) => {
            if let Some(w) = trace.as_deref_mut() {
                writeln!(w, "{} {}", $at, format_args!($($arg)*))?;
            }
        };
    }

    for (ci, cmd) in stream.commands.iter().enumerate() {
        // close the previous group once its RD tail ends
        if in_rd_tail && !matches!(cmd, Command::Rd(_)) {
            close_sparse_group(
                image, group_idx, offset, &mut rd_seen, &mut fifos, &mut walks, &mut cur,
                &mut report.violations,
            );
            group_idx += 1;
            offset = 0;
            in_rd_tail = false;
        }
        match *cmd {
            Command::Lgb(chunk) => {
                let at = ts.issue_lgb();
                report.commands.lgb += 1;
                trace_cmd!(at, "LGB {chunk}");
                loaded_vr = Some(chunk as usize / g.columns_per_dram_row);
            }
            Command::Act => {
                let at = ts.issue_act();
                report.commands.act += 1;
                trace_cmd!(at, "ACT");
            }
            Command::Rd(b) => {
                let at = ts.issue_rd();
                report.commands.rd += 1;
                trace_cmd!(at, "RD {b}");
                in_rd_tail = true;
                let b = b as usize;
                if b >= banks {
                    return Err(Error::Sim(format!("RD references bank {b} of {banks}")));
                }
                if rd_seen[b] {
                    note(
                        &mut report.violations,
                        format!("duplicate RD for bank {b} in group {group_idx}"),
                    );
                }
                rd_seen[b] = true;
                let Some(span) = image.groups.get(group_idx) else {
                    return Err(Error::Sim(format!("RD at command {ci} beyond the last group")));
                };
                let pass = span.pass as usize;
                for m in 0..macs {
                    let lane = pass * macs + m;
                    for buf in 0..2 {
                        let acc = accs[b * macs + m][buf];
                        accs[b * macs + m][buf] = 0;
                        let row = placement
                            .bank_pairs
                            .get(b)
                            .and_then(|l| l.get(lane))
                            .and_then(|pair| pair[buf]);
                        if let Some(row) = row {
                            report.output[row] += format.decode(acc) as f64;
                        } else if acc != 0 {
                            note(
                                &mut report.violations,
                                format!("phantom slot bank {b} lane {lane} accumulated a value"),
                            );
                        }
                    }
                }
            }
            Command::Lidx(col) | Command::Cnb(col) | Command::Cbr(col) => {
                let Some(span) = image.groups.get(group_idx) else {
                    return Err(Error::Sim(format!(
                        "column command {ci} beyond the last group"
                    )));
                };
                if offset >= span.num_cols {
                    return Err(Error::Sim(format!(
                        "group {group_idx} reads past its {} columns",
                        span.num_cols
                    )));
                }
                if col as usize != offset % g.columns_per_dram_row {
                    note(
                        &mut report.violations,
                        format!("command {ci}: column id {col} out of order"),
                    );
                }
                let at = ts.issue_col();
                report.columns_read += 1;
                let is_lidx = matches!(cmd, Command::Lidx(_));
                let is_cbr = matches!(cmd, Command::Cbr(_));

                if is_cbr {
                    if decoupled {
                        for (i, fifo) in fifos.iter().enumerate() {
                            if let Some(head) = fifo.ififo.front() {
                                if (head.slice as i64) <= cur {
                                    note(
                                        &mut report.violations,
                                        format!(
                                            "broadcast advanced past slice {cur} with lane {i} still extracting"
                                        ),
                                    );
                                }
                            }
                        }
                    }
                    cur += 1;
                    report.broadcasts += 1;
                    report.commands.cbr += 1;
                    if cur >= slices {
                        note(
                            &mut report.violations,
                            format!("broadcast {cur} beyond the vector-row"),
                        );
                    }
                    let vr = span.vector_row as usize;
                    if loaded_vr != Some(vr) {
                        note(
                            &mut report.violations,
                            format!("broadcast for vector-row {vr} without loading it"),
                        );
                    }
                    for (e, slot) in latch.iter_mut().enumerate() {
                        *slot = vector.get_padded(
                            vr * g.vector_row_elems + cur.max(0) as usize * g.slice_elems + e,
                        );
                    }
                    trace_cmd!(at, "CBR {col}");
                } else if is_lidx {
                    report.commands.lidx += 1;
                    report.stall_cycles.warmup += t.t_ccd;
                    trace_cmd!(at, "LIDX {col}");
                } else {
                    report.commands.cnb += 1;
                    trace_cmd!(at, "CNB {col}");
                    // attribute the stall to its cause
                    if decoupled {
                        let blocked = fifos.iter().any(|fifo| {
                            fifo.ififo
                                .front()
                                .is_some_and(|h| (h.slice as i64) <= cur)
                        });
                        if blocked {
                            report.stall_cycles.broadcast += t.t_ccd;
                        } else if fifos.iter().any(|f| f.efifo_full()) {
                            report.stall_cycles.efifo_full += t.t_ccd;
                        } else {
                            report.stall_cycles.drain += t.t_ccd;
                        }
                    } else {
                        report.stall_cycles.broadcast += t.t_ccd;
                    }
                }

                for b in 0..banks {
                    let column = &image.banks[b][span.col_start + offset];
                    match (is_lidx, column) {
                        (true, Column::IndexOnly(lanes)) => {
                            for (m, entries) in lanes.iter().enumerate() {
                                let i = b * macs + m;
                                for e in entries {
                                    if e.is_placeholder() {
                                        continue;
                                    }
                                    if fifos[i].ififo_full() {
                                        return Err(Error::Sim(format!(
                                            "iFIFO overflow on lane {i} at command {ci}"
                                        )));
                                    }
                                    fifos[i].push_meta(e.index, e.valid, e.start);
                                    report.fifo.ififo_pushes += 1;
                                }
                            }
                        }
                        (false, Column::Normal(cells)) => {
                            for (m, cell) in cells.iter().enumerate() {
                                let i = b * macs + m;
                                if decoupled {
                                    if !cell.meta.is_placeholder() {
                                        if fifos[i].ififo_full() {
                                            return Err(Error::Sim(format!(
                                                "iFIFO overflow on lane {i} at command {ci}"
                                            )));
                                        }
                                        fifos[i].push_meta(
                                            cell.meta.index,
                                            cell.meta.valid,
                                            cell.meta.start,
                                        );
                                        report.fifo.ififo_pushes += 1;
                                    }
                                    if !is_zero_pattern(cell.value) {
                                        let Some(e) = fifos[i].efifo.pop_front() else {
                                            return Err(Error::Sim(format!(
                                                "value with empty eFIFO on lane {i} at command {ci}"
                                            )));
                                        };
                                        report.fifo.efifo_pops += 1;
                                        mac(
                                            &mut accs[i][cell.select as usize],
                                            cell.value,
                                            e,
                                            format,
                                        );
                                        report.mac_ops += 1;
                                    }
                                } else {
                                    // coupled: match directly against the latch
                                    if cell.meta.valid {
                                        let w = walks[i] + cell.meta.start as i64;
                                        walks[i] = w;
                                        if w != cur {
                                            note(
                                                &mut report.violations,
                                                format!(
                                                    "lane {i} cell for slice {w} computed at broadcast {cur}"
                                                ),
                                            );
                                        }
                                        let e = latch[cell.meta.index as usize];
                                        mac(
                                            &mut accs[i][cell.select as usize],
                                            cell.value,
                                            e,
                                            format,
                                        );
                                        report.mac_ops += 1;
                                        report.extracted += 1;
                                    } else if cell.meta.start {
                                        walks[i] += 1;
                                    }
                                }
                            }
                        }
                        _ => {
                            return Err(Error::Sim(format!(
                                "command {ci} kind does not match image column"
                            )));
                        }
                    }
                }

                if decoupled && !is_lidx && cur >= 0 {
                    extraction_slot(
                        &mut fifos,
                        cur as u32,
                        f.switch_mode,
                        |rel| latch[rel as usize],
                        &mut outcomes,
                    );
                    for (i, out) in outcomes.iter().enumerate() {
                        if out.extracted > 0 {
                            report.extracted += out.extracted as u64;
                            report.fifo.efifo_pushes += out.extracted as u64;
                            if let Some(w) = trace.as_deref_mut() {
                                writeln!(
                                    w,
                                    "{at} X {} {} {} {:04x}",
                                    i / macs,
                                    i % macs,
                                    out.extracted,
                                    out.rel_mask
                                )?;
                            }
                        }
                        report.fifo.ififo_pops += (out.extracted + out.invalid_pops) as u64;
                        if out.missed {
                            note(
                                &mut report.violations,
                                format!("lane {i} entry missed its broadcast at command {ci}"),
                            );
                        }
                    }
                }
                offset += 1;
            }
        }
    }
    if in_rd_tail {
        close_sparse_group(
            image, group_idx, offset, &mut rd_seen, &mut fifos, &mut walks, &mut cur,
            &mut report.violations,
        );
        group_idx += 1;
    }
    if !stream.commands.is_empty() && group_idx < image.groups.len() {
        note(
            &mut report.violations,
            format!("stream ends after group {group_idx} of {}", image.groups.len()),
        );
    }
    report.total_cycles = ts.total_cycles();
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn close_sparse_group(
    image: &CompressedImage,
    group_idx: usize,
    offset: usize,
    rd_seen: &mut [bool],
    fifos: &mut [LaneFifo],
    walks: &mut [i64],
    cur: &mut i64,
    violations: &mut Vec<String>,
) {
    if let Some(span) = image.groups.get(group_idx) {
        if offset != span.num_cols {
            note(
                violations,
                format!("group {group_idx} commanded {offset} of {} columns", span.num_cols),
            );
        }
    }
    for (b, seen) in rd_seen.iter_mut().enumerate() {
        if !*seen {
            note(
                violations,
                format!("missing result read for bank {b} in group {group_idx}"),
            );
        }
        *seen = false;
    }
    for (i, fifo) in fifos.iter_mut().enumerate() {
        if !fifo.ififo.is_empty() || !fifo.efifo.is_empty() {
            note(
                violations,
                format!("lane {i} FIFO not drained at end of group {group_idx}"),
            );
        }
        fifo.reset();
    }
    walks.iter_mut().for_each(|w| *w = -1);
    *cur = -1;
}

#[inline]
fn mac(acc: &mut u16, value: u16, elem: u16, format: ElemFormat) {
    let p = format.mul(value, elem);
    *acc = format.add(*acc, p);
}

/// Newton-style dense execution: 16 positional MACs per bank feeding one
/// scalar accumulator, one result read per bank per DRAM row.
fn run_dense(
    image: &DenseImage,
    stream: &CommandStream,
    vector: &Vector,
    t: &TimingConfig,
    g: &GeometryConfig,
    mut trace: Option<&mut dyn Write>,
) -> Result<SimReport> {
    let banks = g.num_banks;
    let format = vector.format;
    if image.banks.len() != banks {
        return Err(Error::Sim("image bank count does not match geometry".into()));
    }
    if vector.len() != image.cols {
        return Err(Error::dim(format!(
            "vector length {} != matrix cols {}",
            vector.len(),
            image.cols
        )));
    }
    let mut report = SimReport {
        output: vec![0.0; image.rows],
        total_cycles: 0,
        commands: CommandCounts::default(),
        stall_cycles: StallCycles::default(),
        broadcasts: 0,
        columns_read: 0,
        mac_ops: 0,
        fifo: FifoCounts::default(),
        extracted: 0,
        violations: Vec::new(),
    };
    let mut ts = TimingState::new(t);
    let mut accs = vec![0u16; banks];
    let mut loaded_vr: Option<usize> = None;
    let mut unit: i64 = -1; // row index within the current vector-row sweep

    macro_rules! trace_cmd {
        ($at:expr, $($arg:tt)*) => {
            if let Some(w) = trace.as_deref_mut() {
                writeln!(w, "{} {}", $at, format_args!($($arg)*))?;
            }
        };
    }

    for (ci, cmd) in stream.commands.iter().enumerate() {
        match *cmd {
            Command::Lgb(chunk) => {
                let at = ts.issue_lgb();
                report.commands.lgb += 1;
                trace_cmd!(at, "LGB {chunk}");
                let vr = chunk as usize / g.columns_per_dram_row;
                if loaded_vr != Some(vr) {
                    unit = -1;
                }
                loaded_vr = Some(vr);
            }
            Command::Act => {
                let at = ts.issue_act();
                report.commands.act += 1;
                trace_cmd!(at, "ACT");
                unit += 1;
                if unit as usize >= image.rows_per_bank {
                    return Err(Error::Sim(format!(
                        "activation {unit} beyond the bank's rows at command {ci}"
                    )));
                }
            }
            Command::Cbr(col) => {
                let at = ts.issue_col();
                report.commands.cbr += 1;
                report.columns_read += 1;
                report.broadcasts += 1;
                trace_cmd!(at, "CBR {col}");
                let (Some(vr), true) = (loaded_vr, unit >= 0) else {
                    return Err(Error::Sim(format!(
                        "column read before LGB/ACT at command {ci}"
                    )));
                };
                let col = col as usize;
                if col >= g.columns_per_dram_row {
                    return Err(Error::Sim(format!("column id {col} out of range")));
                }
                for (b, acc) in accs.iter_mut().enumerate() {
                    let values = &image.banks[b][vr * image.rows_per_bank + unit as usize][col];
                    for (e, &v) in values.iter().enumerate() {
                        if is_zero_pattern(v) {
                            continue; // gated
                        }
                        let elem = vector
                            .get_padded(vr * g.vector_row_elems + col * g.slice_elems + e);
                        mac(acc, v, elem, format);
                        report.mac_ops += 1;
                    }
                }
            }
            Command::Rd(b) => {
                let at = ts.issue_rd();
                report.commands.rd += 1;
                trace_cmd!(at, "RD {b}");
                let b = b as usize;
                if b >= banks || unit < 0 {
                    return Err(Error::Sim(format!("RD out of context at command {ci}")));
                }
                let row = b + unit as usize * banks;
                if row < image.rows {
                    report.output[row] += format.decode(accs[b]) as f64;
                }
                accs[b] = 0;
            }
            Command::Lidx(_) | Command::Cnb(_) => {
                return Err(Error::Sim(format!(
                    "command {ci} is not part of dense operation"
                )));
            }
        }
    }
    report.total_cycles = ts.total_cycles();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elem::ElemFormat;
    use crate::matrix::{
        generate_dense, generate_vector, prune_magnitude, reference_mv, reference_mv_ordered,
        Distribution, MvPrecision,
    };
    use crate::sdds::{compile_dense, compile_sparse, FeatureFlags};

    fn fmt() -> ElemFormat {
        ElemFormat::Bf16
    }

    fn uniform() -> Distribution {
        Distribution::Uniform { lo: -1.0, hi: 1.0 }
    }

    #[test]
    fn empty_stream_zero_cycles_zero_output() {
        let d = generate_dense(8, 64, 1, uniform(), fmt()).unwrap();
        let m = prune_magnitude(&d, 0.5).unwrap();
        let g = GeometryConfig::default();
        let f = FeatureFlags::default();
        let comp = compile_sparse(&m, &g, &f).unwrap();
        let stream = CommandStream {
            header: comp.stream.header.clone(),
            commands: vec![],
        };
        let v = generate_vector(64, 2, uniform(), fmt()).unwrap();
        let r = run(
            &Image::Sparse(comp.image),
            &stream,
            &v,
            Some(&comp.placement),
            &TimingConfig::default(),
            &g,
            None,
        )
        .unwrap();
        assert_eq!(r.total_cycles, 0);
        assert!(r.output.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sparse_run_matches_ordered_oracle() {
        let d = generate_dense(24, 700, 3, uniform(), fmt()).unwrap();
        let v = generate_vector(700, 4, uniform(), fmt()).unwrap();
        let g = GeometryConfig::default();
        let t = TimingConfig::default();
        for sparsity in [0.5, 0.9] {
            let m = prune_magnitude(&d, sparsity).unwrap();
            for f in [FeatureFlags::default(), FeatureFlags::base()] {
                let comp = compile_sparse(&m, &g, &f).unwrap();
                let r = run(
                    &Image::Sparse(comp.image),
                    &comp.stream,
                    &v,
                    Some(&comp.placement),
                    &t,
                    &g,
                    None,
                )
                .unwrap();
                assert!(r.violations.is_empty(), "{:?}", r.violations.first());
                let expect = reference_mv_ordered(&comp.order, &m, &v).unwrap();
                assert_eq!(r.output, expect, "sparsity {sparsity} flags {f:?}");
                assert_eq!(r.mac_ops as usize, m.nnz());
            }
        }
    }

    #[test]
    fn newton_identity_rows_gather_vector() {
        let format = fmt();
        let mut values = vec![0u16; 16 * 512];
        let one = format.encode_f32(1.0);
        for r in 0..16 {
            values[r * 512 + r] = one;
        }
        let m = crate::matrix::DenseMatrix {
            rows: 16,
            cols: 512,
            format,
            values,
        };
        let g = GeometryConfig::default();
        let (img, stream, _) = compile_dense(&m, &g, &FeatureFlags::dense()).unwrap();
        let v = generate_vector(512, 9, uniform(), format).unwrap();
        let r = run_newton(&img, &stream, &v, &TimingConfig::default(), &g, None).unwrap();
        for row in 0..16 {
            assert_eq!(r.output[row], format.decode(v.values[row]) as f64);
        }
    }

    #[test]
    fn newton_column_command_count() {
        let m = generate_dense(32, 1024, 5, uniform(), fmt()).unwrap();
        let g = GeometryConfig::default();
        let (_, stream, _) = compile_dense(&m, &g, &FeatureFlags::dense()).unwrap();
        let cols = stream
            .commands
            .iter()
            .filter(|c| matches!(c, Command::Cbr(_)))
            .count();
        // 2 rows per bank x 2 vector-rows = 4 DRAM rows of 32 columns
        assert_eq!(cols, 32 * 4);
    }

    #[test]
    fn newton_matches_ordered_reference() {
        let m = generate_dense(128, 1024, 6, uniform(), fmt()).unwrap();
        let g = GeometryConfig::default();
        let (img, stream, _) = compile_dense(&m, &g, &FeatureFlags::dense()).unwrap();
        let v = generate_vector(1024, 7, uniform(), fmt()).unwrap();
        let r = run_newton(&img, &stream, &v, &TimingConfig::default(), &g, None).unwrap();
        let order = crate::layout::derive_newton_order(&m, &g);
        let sparse = m.to_sparse();
        let expect = reference_mv_ordered(&order, &sparse, &v).unwrap();
        assert_eq!(r.output, expect);
        // wide reference within loose bf16 accumulation error, scaled by the
        // row's absolute-product mass (the sums themselves largely cancel)
        let wide = reference_mv(&sparse, &v, MvPrecision::Wide).unwrap();
        let format = fmt();
        for (row, (a, b)) in r.output.iter().zip(&wide).enumerate() {
            let mass: f64 = sparse
                .row(row)
                .map(|(c, val)| {
                    (format.decode(val) as f64 * format.decode(v.values[c as usize]) as f64).abs()
                })
                .sum();
            assert!((a - b).abs() / mass.max(1.0) < 0.02, "row {row}: {a} vs {b}");
        }
    }

    #[test]
    fn dense_mode_equals_newton_small() {
        let m = generate_dense(64, 512, 8, uniform(), fmt()).unwrap();
        let g = GeometryConfig::default();
        let (img, stream, _) = compile_dense(&m, &g, &FeatureFlags::dense()).unwrap();
        let v = generate_vector(512, 9, uniform(), fmt()).unwrap();
        let t = TimingConfig::default();
        let a = run(
            &Image::Dense(img.clone()),
            &stream,
            &v,
            None,
            &t,
            &g,
            None,
        )
        .unwrap();
        let b = run_newton(&img, &stream, &v, &t, &g, None).unwrap();
        assert_eq!(a.total_cycles, b.total_cycles);
        assert_eq!(a.output, b.output);
    }

    #[test]
    fn empty_matrix_runs_to_zero_vector() {
        let format = fmt();
        let m = crate::matrix::SparseMatrix {
            rows: 8,
            cols: 700,
            format,
            row_starts: vec![0; 9],
            col_indices: vec![],
            values: vec![],
        };
        let g = GeometryConfig::default();
        let v = generate_vector(700, 3, uniform(), format).unwrap();
        for f in [FeatureFlags::default(), FeatureFlags::base()] {
            let comp = compile_sparse(&m, &g, &f).unwrap();
            let r = run(
                &Image::Sparse(comp.image),
                &comp.stream,
                &v,
                Some(&comp.placement),
                &TimingConfig::default(),
                &g,
                None,
            )
            .unwrap();
            assert!(r.violations.is_empty(), "{:?}", r.violations.first());
            assert_eq!(r.output, vec![0.0; 8]);
            assert_eq!(r.mac_ops, 0);
        }
    }

    #[test]
    fn vector_length_mismatch_rejected() {
        let d = generate_dense(8, 640, 2, uniform(), fmt()).unwrap();
        let m = prune_magnitude(&d, 0.5).unwrap();
        let g = GeometryConfig::default();
        let comp = compile_sparse(&m, &g, &FeatureFlags::default()).unwrap();
        let short = generate_vector(512, 3, uniform(), fmt()).unwrap();
        let res = run(
            &Image::Sparse(comp.image),
            &comp.stream,
            &short,
            Some(&comp.placement),
            &TimingConfig::default(),
            &g,
            None,
        );
        assert!(res.is_err());
    }

    #[test]
    fn fifo_depth_monotone_cycles() {
        let d = generate_dense(16, 512, 10, uniform(), fmt()).unwrap();
        let m = prune_magnitude(&d, 0.9).unwrap();
        let v = generate_vector(512, 11, uniform(), fmt()).unwrap();
        let g = GeometryConfig::default();
        let t = TimingConfig::default();
        let mut prev = u64::MAX;
        for depth in [1usize, 2, 4, 8, 16] {
            let f = FeatureFlags {
                fifo_depth: depth,
                ..FeatureFlags::default()
            };
            let comp = compile_sparse(&m, &g, &f).unwrap();
            let r = run(
                &Image::Sparse(comp.image),
                &comp.stream,
                &v,
                Some(&comp.placement),
                &t,
                &g,
                None,
            )
            .unwrap();
            assert!(
                r.total_cycles <= prev,
                "depth {depth}: {} > {prev}",
                r.total_cycles
            );
            prev = r.total_cycles;
        }
    }

    #[test]
    fn determinism_byte_identical_reports() {
        let d = generate_dense(20, 600, 12, uniform(), fmt()).unwrap();
        let m = prune_magnitude(&d, 0.8).unwrap();
        let v = generate_vector(600, 13, uniform(), fmt()).unwrap();
        let g = GeometryConfig::default();
        let t = TimingConfig::default();
        let f = FeatureFlags::default();
        let mk = || {
            let comp = compile_sparse(&m, &g, &f).unwrap();
            let mut tr = Vec::new();
            let r = run(
                &Image::Sparse(comp.image),
                &comp.stream,
                &v,
                Some(&comp.placement),
                &t,
                &g,
                Some(&mut tr),
            )
            .unwrap();
            (serde_json::to_string(&r).unwrap(), tr)
        };
        let (a, ta) = mk();
        let (b, tb) = mk();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }
}

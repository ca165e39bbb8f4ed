//! Independent replay checker for compiled schedules.
//!
//! Replays the datapath rules over (image, command stream) alone — none of
//! the scheduler's internal state — and reports every correctness breach as
//! data rather than an error.

use std::fmt;

use crate::datapath::{extraction_slot, LaneFifo, LaneSlot};
use crate::elem::is_zero_pattern;
use crate::layout::GeometryConfig;

use super::command::{Command, CommandStream};
use super::image::{Column, CompressedImage};
use super::FeatureFlags;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// A broadcast advanced while an extractable same-slice entry remained.
    UnconsumedSlice,
    /// A cell was computed against a slice it does not belong to.
    WrongSlice,
    IfifoOverflow,
    EfifoUnderflow,
    /// More broadcasts than slices in the vector-row.
    BroadcastOverrun,
    LockstepMismatch,
    MissingResultRead,
    /// Command sequence inconsistent with the image manifest.
    Structural,
}

#[derive(Debug, Clone)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.detail)
    }
}

const MAX_VIOLATIONS: usize = 200;

struct Checker {
    violations: Vec<Violation>,
}

impl Checker {
    fn report(&mut self, kind: ViolationKind, detail: String) {
        if self.violations.len() < MAX_VIOLATIONS {
            self.violations.push(Violation { kind, detail });
        }
    }
}

/// Replays `stream` against `image` and returns every rule breach found.
pub fn validate_schedule(
    image: &CompressedImage,
    stream: &CommandStream,
    g: &GeometryConfig,
    f: &FeatureFlags,
) -> Vec<Violation> {
    let mut ck = Checker {
        violations: Vec::new(),
    };
    let banks = g.num_banks;
    let macs = image.macs;
    let nlanes = banks * macs;
    let slices = g.slices_per_vector_row() as i64;

    let len0 = image.banks.first().map_or(0, |b| b.len());
    if image.banks.len() != banks {
        ck.report(
            ViolationKind::LockstepMismatch,
            format!("image holds {} banks, geometry has {banks}", image.banks.len()),
        );
        return ck.violations;
    }
    for (b, cols) in image.banks.iter().enumerate() {
        if cols.len() != len0 {
            ck.report(
                ViolationKind::LockstepMismatch,
                format!("bank {b} has {} columns, bank 0 has {len0}", cols.len()),
            );
        }
    }

    let mut fifos: Vec<LaneFifo> = (0..nlanes).map(|_| LaneFifo::new(f.fifo_depth)).collect();
    let mut walks = vec![-1i64; nlanes];
    let mut outcomes: Vec<LaneSlot> = Vec::new();

    let mut group_idx = 0usize;
    let mut offset = 0usize; // columns consumed within the current group
    let mut cur: i64 = -1;
    let mut rd_seen = vec![false; banks];
    let mut in_rd_tail = false;
    let mut act_pending = false; // row opened, first column not yet issued
    let mut cols_in_row = 0usize;

    let close_group = |ck: &mut Checker,
                           fifos: &mut [LaneFifo],
                           walks: &mut [i64],
                           rd_seen: &mut [bool],
                           group_idx: usize,
                           offset: usize,
                           cur: &mut i64| {
        if group_idx >= image.groups.len() {
            return;
        }
        let span = &image.groups[group_idx];
        if offset != span.num_cols {
            ck.report(
                ViolationKind::Structural,
                format!(
                    "group {group_idx} commanded {offset} of {} columns",
                    span.num_cols
                ),
            );
        }
        for (b, seen) in rd_seen.iter_mut().enumerate() {
            if !*seen {
                ck.report(
                    ViolationKind::MissingResultRead,
                    format!("missing result read for bank {b} in group {group_idx}"),
                );
            }
            *seen = false;
        }
        for (i, fifo) in fifos.iter_mut().enumerate() {
            if !fifo.ififo.is_empty() || !fifo.efifo.is_empty() {
                ck.report(
                    ViolationKind::UnconsumedSlice,
                    format!("lane {i} FIFO not drained at end of group {group_idx}"),
                );
            }
            fifo.reset();
        }
        walks.iter_mut().for_each(|w| *w = -1);
        *cur = -1;
    };

    for (ci, cmd) in stream.commands.iter().enumerate() {
        match *cmd {
            Command::Lgb(_) => {
                // vector traffic only; no datapath state
                if in_rd_tail {
                    close_group(
                        &mut ck, &mut fifos, &mut walks, &mut rd_seen, group_idx, offset, &mut cur,
                    );
                    group_idx += 1;
                    offset = 0;
                    in_rd_tail = false;
                }
            }
            Command::Act => {
                if in_rd_tail {
                    close_group(
                        &mut ck, &mut fifos, &mut walks, &mut rd_seen, group_idx, offset, &mut cur,
                    );
                    group_idx += 1;
                    offset = 0;
                    in_rd_tail = false;
                }
                act_pending = true;
                cols_in_row = 0;
            }
            Command::Rd(b) => {
                in_rd_tail = true;
                let b = b as usize;
                if b >= banks {
                    ck.report(ViolationKind::Structural, format!("RD of bank {b} out of range"));
                } else if rd_seen[b] {
                    ck.report(
                        ViolationKind::Structural,
                        format!("duplicate RD for bank {b} in group {group_idx}"),
                    );
                } else {
                    rd_seen[b] = true;
                }
            }
            Command::Lidx(col) | Command::Cnb(col) | Command::Cbr(col) => {
                if in_rd_tail {
                    close_group(
                        &mut ck, &mut fifos, &mut walks, &mut rd_seen, group_idx, offset, &mut cur,
                    );
                    group_idx += 1;
                    offset = 0;
                    in_rd_tail = false;
                }
                let Some(span) = image.groups.get(group_idx) else {
                    ck.report(
                        ViolationKind::Structural,
                        format!("command {ci} beyond the last group"),
                    );
                    break;
                };
                if offset >= span.num_cols {
                    ck.report(
                        ViolationKind::Structural,
                        format!("group {group_idx} reads past its {} columns", span.num_cols),
                    );
                    break;
                }
                if !act_pending && cols_in_row >= g.columns_per_dram_row {
                    ck.report(
                        ViolationKind::Structural,
                        format!("column command {ci} without row activation"),
                    );
                }
                if act_pending {
                    act_pending = false;
                    cols_in_row = 0;
                }
                if col as usize != cols_in_row {
                    ck.report(
                        ViolationKind::Structural,
                        format!("command {ci}: column id {col} out of order"),
                    );
                }
                cols_in_row += 1;

                let is_lidx = matches!(cmd, Command::Lidx(_));
                let is_cbr = matches!(cmd, Command::Cbr(_));
                if is_cbr {
                    for (i, fifo) in fifos.iter().enumerate() {
                        if let Some(head) = fifo.ififo.front() {
                            if (head.slice as i64) <= cur {
                                ck.report(
                                    ViolationKind::UnconsumedSlice,
                                    format!(
                                        "broadcast advanced past slice {cur} with lane {i} still extracting"
                                    ),
                                );
                            }
                        }
                    }
                    cur += 1;
                    if cur >= slices {
                        ck.report(
                            ViolationKind::BroadcastOverrun,
                            format!("broadcast {cur} beyond the vector-row"),
                        );
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
                                        ck.report(
                                            ViolationKind::IfifoOverflow,
                                            format!("lane {i} iFIFO overflow at command {ci}"),
                                        );
                                        continue;
                                    }
                                    fifos[i].push_meta(e.index, e.valid, e.start);
                                }
                            }
                        }
                        (false, Column::Normal(cells)) => {
                            for (m, cell) in cells.iter().enumerate() {
                                let i = b * macs + m;
                                if f.prefetch {
                                    if !cell.meta.is_placeholder() {
                                        if fifos[i].ififo_full() {
                                            ck.report(
                                                ViolationKind::IfifoOverflow,
                                                format!("lane {i} iFIFO overflow at command {ci}"),
                                            );
                                        } else {
                                            fifos[i].push_meta(
                                                cell.meta.index,
                                                cell.meta.valid,
                                                cell.meta.start,
                                            );
                                        }
                                    }
                                    if !is_zero_pattern(cell.value) {
                                        if fifos[i].efifo.is_empty() {
                                            ck.report(
                                                ViolationKind::EfifoUnderflow,
                                                format!(
                                                    "lane {i} value with empty eFIFO at command {ci}"
                                                ),
                                            );
                                        } else {
                                            fifos[i].efifo.pop_front();
                                        }
                                    }
                                } else {
                                    // coupled: the cell is matched against the
                                    // latched slice directly
                                    if cell.meta.valid {
                                        let w = walks[i] + cell.meta.start as i64;
                                        walks[i] = w;
                                        if w < cur {
                                            ck.report(
                                                ViolationKind::UnconsumedSlice,
                                                format!(
                                                    "lane {i} cell for slice {w} computed after broadcast {cur}"
                                                ),
                                            );
                                        } else if w > cur {
                                            ck.report(
                                                ViolationKind::WrongSlice,
                                                format!(
                                                    "lane {i} cell for slice {w} computed at broadcast {cur}"
                                                ),
                                            );
                                        }
                                    } else if cell.meta.start {
                                        walks[i] += 1;
                                    }
                                }
                            }
                        }
                        _ => {
                            ck.report(
                                ViolationKind::Structural,
                                format!("command {ci} kind does not match image column"),
                            );
                        }
                    }
                }

                if f.prefetch && !is_lidx && cur >= 0 {
                    extraction_slot(
                        &mut fifos,
                        cur as u32,
                        f.switch_mode,
                        |_| 0,
                        &mut outcomes,
                    );
                    for (i, out) in outcomes.iter().enumerate() {
                        if out.missed {
                            ck.report(
                                ViolationKind::UnconsumedSlice,
                                format!("lane {i} entry missed its broadcast at command {ci}"),
                            );
                        }
                    }
                }
                offset += 1;
            }
        }
    }
    close_group(
        &mut ck, &mut fifos, &mut walks, &mut rd_seen, group_idx, offset, &mut cur,
    );
    if group_idx + 1 < image.groups.len() {
        ck.report(
            ViolationKind::Structural,
            format!(
                "stream ends after group {group_idx} of {}",
                image.groups.len()
            ),
        );
    }
    ck.violations
}

#[cfg(test)]
mod tests {
    use super::super::tests::{two_lane_geometry, two_lane_matrix};
    use super::super::{compile_sparse, Command, FeatureFlags};
    use super::*;
    use crate::elem::ElemFormat;
    use crate::matrix::{generate_dense, prune_magnitude, Distribution};

    #[test]
    fn schedule_outputs_validate_clean() {
        let d = generate_dense(
            48,
            900,
            13,
            Distribution::Uniform { lo: -1.0, hi: 1.0 },
            ElemFormat::Bf16,
        )
        .unwrap();
        let g = GeometryConfig::default();
        for sparsity in [0.0, 0.5, 0.9] {
            let m = prune_magnitude(&d, sparsity).unwrap();
            for f in [
                FeatureFlags::default(),
                FeatureFlags::base(),
                FeatureFlags {
                    switch_mode: crate::datapath::SwitchMode::Full16x11,
                    ..FeatureFlags::default()
                },
                FeatureFlags {
                    fifo_depth: 2,
                    ..FeatureFlags::default()
                },
            ] {
                let comp = compile_sparse(&m, &g, &f).unwrap();
                let v = validate_schedule(&comp.image, &comp.stream, &g, &f);
                assert!(v.is_empty(), "sparsity {sparsity} flags {f:?}: {:?}", v.first());
            }
        }
    }

    #[test]
    fn promoted_stall_is_caught() {
        let m = two_lane_matrix(&[5, 34], &[10, 20, 21, 40], 48);
        let g = two_lane_geometry();
        let f = FeatureFlags {
            prefetch: false,
            reorder: false,
            balance: false,
            ..FeatureFlags::default()
        };
        let comp = compile_sparse(&m, &g, &f).unwrap();
        let mut stream = comp.stream.clone();
        let idx = stream
            .commands
            .iter()
            .position(|c| matches!(c, Command::Cnb(_)))
            .expect("schedule contains a stall");
        let Command::Cnb(col) = stream.commands[idx] else {
            unreachable!()
        };
        stream.commands[idx] = Command::Cbr(col);
        let v = validate_schedule(&comp.image, &stream, &g, &f);
        assert!(
            v.iter().any(|x| x.kind == ViolationKind::UnconsumedSlice),
            "{v:?}"
        );
    }

    #[test]
    fn promoted_stall_is_caught_decoupled() {
        let m = two_lane_matrix(&[2, 3, 5, 6], &[], 16);
        let g = two_lane_geometry();
        let f = FeatureFlags {
            balance: false,
            reorder: false,
            ..FeatureFlags::default()
        };
        let comp = compile_sparse(&m, &g, &f).unwrap();
        let mut stream = comp.stream.clone();
        let idx = stream
            .commands
            .iter()
            .position(|c| matches!(c, Command::Cnb(_)))
            .expect("schedule contains a stall");
        let Command::Cnb(col) = stream.commands[idx] else {
            unreachable!()
        };
        stream.commands[idx] = Command::Cbr(col);
        let v = validate_schedule(&comp.image, &stream, &g, &f);
        assert!(
            v.iter().any(|x| x.kind == ViolationKind::UnconsumedSlice
                || x.kind == ViolationKind::BroadcastOverrun),
            "{v:?}"
        );
    }

    #[test]
    fn removed_rd_is_caught() {
        let m = two_lane_matrix(&[5, 34], &[10, 20, 21, 40], 48);
        let g = two_lane_geometry();
        let f = FeatureFlags::default();
        let comp = compile_sparse(&m, &g, &f).unwrap();
        let mut stream = comp.stream.clone();
        let idx = stream
            .commands
            .iter()
            .position(|c| matches!(c, Command::Rd(_)))
            .unwrap();
        stream.commands.remove(idx);
        let v = validate_schedule(&comp.image, &stream, &g, &f);
        assert!(
            v.iter().any(|x| x.kind == ViolationKind::MissingResultRead),
            "{v:?}"
        );
    }
}

//! The per-lane FIFO pair and the broadcast-slot extraction model.
//!
//! The static scheduler mirrors this state offline to decide stalls; the
//! simulator advances the same state at run time. Keeping the slot semantics
//! in one place is what makes the offline schedule and the datapath agree
//! cycle for cycle.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Vector-element selection hardware between the broadcast latch and the
/// eFIFOs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SwitchMode {
    /// 11 four-to-one multiplexers; cycle `i` of the 4-cycle window services
    /// indices in `[4i, 4i+3]` only.
    Serialized4x11,
    /// Full crossbar: all matching same-slice heads extract in one slot.
    Full16x11,
}

/// One prefetched index sitting in an iFIFO.
///
/// The slice id is positional: the running count of start bits pushed into
/// the lane. An entry may act only when its slice id equals the id of the
/// latched broadcast slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IfifoEntry {
    pub index: u8,
    pub valid: bool,
    pub slice: u32,
}

/// The iFIFO/eFIFO pair of one MAC lane.
#[derive(Debug, Clone)]
pub struct LaneFifo {
    pub ififo: VecDeque<IfifoEntry>,
    pub efifo: VecDeque<u16>,
    pub depth: usize,
    /// Start bits seen so far; assigns slice ids to incoming entries.
    starts_seen: u32,
}

impl LaneFifo {
    pub fn new(depth: usize) -> Self {
        LaneFifo {
            ififo: VecDeque::with_capacity(depth),
            efifo: VecDeque::with_capacity(depth),
            depth,
            starts_seen: 0,
        }
    }

    pub fn reset(&mut self) {
        self.ififo.clear();
        self.efifo.clear();
        self.starts_seen = 0;
    }

    pub fn ififo_full(&self) -> bool {
        self.ififo.len() >= self.depth
    }

    pub fn efifo_full(&self) -> bool {
        self.efifo.len() >= self.depth
    }

    /// Pushes one metadata entry, assigning its positional slice id.
    /// The caller checks capacity first.
    pub fn push_meta(&mut self, index: u8, valid: bool, start: bool) -> IfifoEntry {
        if start {
            self.starts_seen += 1;
        }
        debug_assert!(self.starts_seen > 0, "first entry of a lane must carry start");
        let entry = IfifoEntry {
            index,
            valid,
            slice: self.starts_seen - 1,
        };
        self.ififo.push_back(entry);
        entry
    }
}

/// What one broadcast slot did to one lane.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LaneSlot {
    pub extracted: u32,
    pub invalid_pops: u32,
    /// Bitmask of slice-relative indices this lane pulled from the latch.
    pub rel_mask: u16,
    /// An entry for the latched slice remained unserviced at slot end.
    pub leftover_same_slice: bool,
    /// An entry for an already-passed slice was found (missed its broadcast).
    pub missed: bool,
}

/// Runs the 4-cycle extraction window of one CBR or CNB slot over every lane.
///
/// `element(rel)` supplies the latched slice element; the scheduler, which
/// has no vector, supplies zeros and uses occupancy only. At most one iFIFO
/// pop and one eFIFO push happen per lane per cycle; an entry whose range
/// cycle has passed waits for a later stall slot.
pub fn extraction_slot(
    lanes: &mut [LaneFifo],
    current_slice: u32,
    mode: SwitchMode,
    mut element: impl FnMut(u8) -> u16,
    outcomes: &mut Vec<LaneSlot>,
) {
    outcomes.clear();
    outcomes.resize(lanes.len(), LaneSlot::default());
    match mode {
        SwitchMode::Serialized4x11 => {
            for cycle in 0..4u8 {
                for (lane, out) in lanes.iter_mut().zip(outcomes.iter_mut()) {
                    let Some(&head) = lane.ififo.front() else { continue };
                    if head.slice != current_slice {
                        continue;
                    }
                    if !head.valid {
                        lane.ififo.pop_front();
                        out.invalid_pops += 1;
                    } else if head.index / 4 == cycle && !lane.efifo_full() {
                        lane.ififo.pop_front();
                        lane.efifo.push_back(element(head.index));
                        out.extracted += 1;
                        out.rel_mask |= 1 << head.index;
                    }
                }
            }
        }
        SwitchMode::Full16x11 => {
            for (lane, out) in lanes.iter_mut().zip(outcomes.iter_mut()) {
                while let Some(&head) = lane.ififo.front() {
                    if head.slice != current_slice {
                        break;
                    }
                    if !head.valid {
                        lane.ififo.pop_front();
                        out.invalid_pops += 1;
                    } else if !lane.efifo_full() {
                        lane.ififo.pop_front();
                        lane.efifo.push_back(element(head.index));
                        out.extracted += 1;
                        out.rel_mask |= 1 << head.index;
                    } else {
                        break;
                    }
                }
            }
        }
    }
    for (lane, out) in lanes.iter().zip(outcomes.iter_mut()) {
        if let Some(head) = lane.ififo.front() {
            out.leftover_same_slice = head.slice == current_slice;
            out.missed = head.slice < current_slice;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lane_with(depth: usize, entries: &[(u8, bool, bool)]) -> LaneFifo {
        let mut l = LaneFifo::new(depth);
        for &(idx, valid, start) in entries {
            l.push_meta(idx, valid, start);
        }
        l
    }

    #[test]
    fn slice_ids_follow_start_bits() {
        let l = lane_with(
            8,
            &[(5, true, true), (0, false, true), (0, false, true), (2, true, false)],
        );
        let slices: Vec<u32> = l.ififo.iter().map(|e| e.slice).collect();
        assert_eq!(slices, vec![0, 1, 2, 2]);
    }

    #[test]
    fn serialized_head_of_line_blocking() {
        // i2,i3,i5,i6: broadcast slot takes i2 only (i3 shares range 0),
        // first stall slot takes i3 then i5, second stall takes i6.
        let mut lanes = vec![lane_with(
            8,
            &[(2, true, true), (3, true, false), (5, true, false), (6, true, false)],
        )];
        let mut out = Vec::new();
        extraction_slot(&mut lanes, 0, SwitchMode::Serialized4x11, |_| 1, &mut out);
        assert_eq!(out[0].extracted, 1);
        assert!(out[0].leftover_same_slice);
        extraction_slot(&mut lanes, 0, SwitchMode::Serialized4x11, |_| 1, &mut out);
        assert_eq!(out[0].extracted, 2);
        extraction_slot(&mut lanes, 0, SwitchMode::Serialized4x11, |_| 1, &mut out);
        assert_eq!(out[0].extracted, 1);
        assert!(!out[0].leftover_same_slice);
        assert_eq!(lanes[0].efifo.len(), 4);
    }

    #[test]
    fn reordered_run_needs_one_stall() {
        // i2,i5,i3,i6 pairs distinct ranges per cycle: broadcast slot takes
        // i2+i5, one stall takes i3+i6.
        let mut lanes = vec![lane_with(
            8,
            &[(2, true, true), (5, true, false), (3, true, false), (6, true, false)],
        )];
        let mut out = Vec::new();
        extraction_slot(&mut lanes, 0, SwitchMode::Serialized4x11, |_| 1, &mut out);
        assert_eq!(out[0].extracted, 2);
        extraction_slot(&mut lanes, 0, SwitchMode::Serialized4x11, |_| 1, &mut out);
        assert_eq!(out[0].extracted, 2);
        assert!(lanes[0].ififo.is_empty());
    }

    #[test]
    fn full_switch_drains_in_one_slot() {
        let mut lanes = vec![lane_with(
            8,
            &[(2, true, true), (3, true, false), (5, true, false), (6, true, false)],
        )];
        let mut out = Vec::new();
        extraction_slot(&mut lanes, 0, SwitchMode::Full16x11, |_| 1, &mut out);
        assert_eq!(out[0].extracted, 4);
        assert!(lanes[0].ififo.is_empty());
    }

    #[test]
    fn invalid_pops_and_future_slices_wait() {
        let mut lanes = vec![lane_with(8, &[(0, false, true), (7, true, true)])];
        let mut out = Vec::new();
        extraction_slot(&mut lanes, 0, SwitchMode::Serialized4x11, |_| 9, &mut out);
        // invalid for slice 0 popped, slice-1 entry untouched
        assert_eq!(out[0].invalid_pops, 1);
        assert_eq!(out[0].extracted, 0);
        assert_eq!(lanes[0].ififo.len(), 1);
        assert!(!out[0].leftover_same_slice);
        extraction_slot(&mut lanes, 1, SwitchMode::Serialized4x11, |_| 9, &mut out);
        assert_eq!(out[0].extracted, 1);
        assert_eq!(lanes[0].efifo.front(), Some(&9));
    }

    #[test]
    fn serialized_slot_caps_at_four_pops() {
        // eight same-slice entries, two per range: one slot services at most
        // one entry per cycle
        let entries: Vec<(u8, bool, bool)> = (0..8)
            .map(|i| ((i % 4) * 4 + i / 4, true, i == 0))
            .collect();
        let mut lanes = vec![lane_with(16, &entries)];
        let mut out = Vec::new();
        extraction_slot(&mut lanes, 0, SwitchMode::Serialized4x11, |_| 1, &mut out);
        assert!(out[0].extracted + out[0].invalid_pops <= 4);
        assert_eq!(out[0].extracted, 4);
        extraction_slot(&mut lanes, 0, SwitchMode::Serialized4x11, |_| 1, &mut out);
        assert_eq!(out[0].extracted, 4);
        assert!(lanes[0].ififo.is_empty());
    }

    #[test]
    fn efifo_full_blocks_extraction() {
        let mut lane = lane_with(2, &[(1, true, true)]);
        lane.efifo.push_back(7);
        lane.efifo.push_back(7);
        let mut lanes = vec![lane];
        let mut out = Vec::new();
        extraction_slot(&mut lanes, 0, SwitchMode::Serialized4x11, |_| 1, &mut out);
        assert_eq!(out[0].extracted, 0);
        assert!(out[0].leftover_same_slice);
        lanes[0].efifo.pop_front();
        extraction_slot(&mut lanes, 0, SwitchMode::Serialized4x11, |_| 1, &mut out);
        assert_eq!(out[0].extracted, 1);
    }
}

//! Static data-dependent scheduling.
//!
//! The scheduler replays the datapath rules offline, packing cells into
//! compressed columns and deciding for every column read whether the next
//! vector slice may be broadcast (CBR) or must stall (CNB). In decoupled
//! mode it additionally mirrors every lane's iFIFO/eFIFO occupancy so the
//! emitted stream can never overflow or starve the real FIFOs.

pub mod command;
pub mod image;
pub mod validate;

use serde::{Deserialize, Serialize};

use crate::datapath::{extraction_slot, LaneFifo, LaneSlot, SwitchMode};
use crate::elem::SENTINEL;
use crate::error::{Error, Result};
use crate::layout::{
    balance_greedy, assign_naive, build_lane_streams, derive_accum_order, Cell, DenseImage,
    GeometryConfig, LaneStreams, Placement, DENSE_MACS,
};
use crate::matrix::{AccumOrder, DenseMatrix, SparseMatrix};

pub use command::{emit_command_text, parse_command_text, Command, CommandStream, StreamHeader};
pub use image::{Column, CompressedImage, GroupSpan, MetaBits, PackedCell};
pub use validate::{validate_schedule, Violation};

/// Optimization toggles; the isolation study walks these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureFlags {
    /// Decouple values from indices and prefetch vector elements (iFIFO/eFIFO).
    pub prefetch: bool,
    /// Permute same-slice runs to dodge serialized-switch range conflicts.
    pub reorder: bool,
    /// Greedy density balancing instead of round-robin row ids.
    pub balance: bool,
    pub switch_mode: SwitchMode,
    /// Newton-style dense operation: 16 MACs, no FIFOs or switch.
    pub dense_mode: bool,
    pub fifo_depth: usize,
}

impl Default for FeatureFlags {
    fn default() -> Self {
        FeatureFlags {
            prefetch: true,
            reorder: true,
            balance: true,
            switch_mode: SwitchMode::Serialized4x11,
            dense_mode: false,
            fifo_depth: 8,
        }
    }
}

impl FeatureFlags {
    /// Naive coupled operation: fine-grained interleaving only.
    pub fn base() -> Self {
        FeatureFlags {
            prefetch: false,
            reorder: false,
            balance: false,
            ..FeatureFlags::default()
        }
    }

    pub fn dense() -> Self {
        FeatureFlags {
            prefetch: false,
            reorder: false,
            balance: false,
            dense_mode: true,
            ..FeatureFlags::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fifo_depth < 1 {
            return Err(Error::invalid("fifo_depth must be at least 1"));
        }
        Ok(())
    }

    /// Reordering targets the serialized switch's range conflicts, which only
    /// exist on the decoupled path.
    pub fn reorder_active(&self) -> bool {
        self.reorder
            && self.prefetch
            && self.switch_mode == SwitchMode::Serialized4x11
            && !self.dense_mode
    }

    pub fn to_token_string(&self) -> String {
        if self.dense_mode {
            return "dense".to_string();
        }
        let mut parts = Vec::new();
        if self.prefetch {
            parts.push("prefetch");
        }
        if self.reorder {
            parts.push("reorder");
        }
        if self.balance {
            parts.push("balance");
        }
        if parts.is_empty() {
            parts.push("base");
        }
        parts.push(match self.switch_mode {
            SwitchMode::Serialized4x11 => "switch4",
            SwitchMode::Full16x11 => "switch16",
        });
        parts.join("+")
    }

    pub fn from_token_string(s: &str, lineno: usize) -> Result<Self> {
        let mut f = FeatureFlags {
            prefetch: false,
            reorder: false,
            balance: false,
            ..FeatureFlags::default()
        };
        for tok in s.split('+') {
            match tok {
                "base" | "" => {}
                "prefetch" => f.prefetch = true,
                "reorder" => f.reorder = true,
                "balance" => f.balance = true,
                "switch4" => f.switch_mode = SwitchMode::Serialized4x11,
                "switch16" => f.switch_mode = SwitchMode::Full16x11,
                "dense" => f.dense_mode = true,
                other => return Err(Error::parse(lineno, other, "unknown flag token")),
            }
        }
        if f.dense_mode {
            f.prefetch = false;
        }
        Ok(f)
    }
}

/// Per segment-group schedule counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GroupStats {
    pub vector_row: u32,
    pub pass: u32,
    pub normal_columns: u64,
    pub index_only_columns: u64,
    pub broadcasts: u64,
    /// CNBs forced because the latched slice was not yet fully consumed.
    pub broadcast_stalls: u64,
    /// CNBs forced by a full eFIFO.
    pub efifo_full_stalls: u64,
    /// Trailing CNBs that only drain remaining values.
    pub drain_columns: u64,
    pub invalid_cells: u64,
    pub placeholder_cells: u64,
    /// Zero-value fillers in value lanes.
    pub sentinel_values: u64,
    /// Non-sentinel values scheduled (MAC multiplies).
    pub mac_values: u64,
    pub ififo_pushes: u64,
    pub ififo_pops: u64,
    pub efifo_pushes: u64,
    pub efifo_pops: u64,
    pub extracted: u64,
    /// Real matrix rows mapped to this group's lanes.
    pub active_row_slots: u64,
    /// Slice elements pulled by at least one bank, over broadcast slices.
    pub slice_elems_used: u64,
    pub slice_elems_total: u64,
    /// Largest per-lane cell count: the data-column floor of a stall-free
    /// schedule (one value per lane per column).
    pub max_lane_cells: u64,
}

impl GroupStats {
    pub fn stalls(&self) -> u64 {
        self.broadcast_stalls + self.efifo_full_stalls + self.drain_columns
    }

    fn absorb(&mut self, o: &GroupStats) {
        self.normal_columns += o.normal_columns;
        self.index_only_columns += o.index_only_columns;
        self.broadcasts += o.broadcasts;
        self.broadcast_stalls += o.broadcast_stalls;
        self.efifo_full_stalls += o.efifo_full_stalls;
        self.drain_columns += o.drain_columns;
        self.invalid_cells += o.invalid_cells;
        self.placeholder_cells += o.placeholder_cells;
        self.sentinel_values += o.sentinel_values;
        self.mac_values += o.mac_values;
        self.ififo_pushes += o.ififo_pushes;
        self.ififo_pops += o.ififo_pops;
        self.efifo_pushes += o.efifo_pushes;
        self.efifo_pops += o.efifo_pops;
        self.extracted += o.extracted;
        self.active_row_slots += o.active_row_slots;
        self.slice_elems_used += o.slice_elems_used;
        self.slice_elems_total += o.slice_elems_total;
        self.max_lane_cells += o.max_lane_cells;
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ScheduleStats {
    pub groups: Vec<GroupStats>,
    pub totals: GroupStats,
}

impl ScheduleStats {
    fn push_group(&mut self, gs: GroupStats) {
        self.totals.absorb(&gs);
        self.groups.push(gs);
    }

    /// Mean vector elements extracted per mapped matrix row per broadcast.
    /// With one row per MAC this is the paper's per-MAC figure.
    pub fn mean_extracted_per_row_per_broadcast(&self) -> f64 {
        let opportunities: u64 = self
            .groups
            .iter()
            .map(|g| g.broadcasts * g.active_row_slots)
            .sum();
        if opportunities == 0 {
            return 0.0;
        }
        self.totals.extracted as f64 / opportunities as f64
    }

    /// Fraction of broadcast slice elements used by at least one bank.
    pub fn broadcast_elem_use_fraction(&self) -> f64 {
        if self.totals.slice_elems_total == 0 {
            return 0.0;
        }
        self.totals.slice_elems_used as f64 / self.totals.slice_elems_total as f64
    }
}

/// Stably permutes each maximal same-slice run so consecutive indices fall in
/// distinct mux ranges (range `r = index / 4` is serviced only at broadcast
/// cycle `r`): greedy passes pick, per cycle 0..3, the earliest unpicked
/// index in that cycle's range.
pub fn reorder_lane_window(cells: &[Cell], g: &GeometryConfig) -> Vec<Cell> {
    let mut out = Vec::with_capacity(cells.len());
    let mut i = 0;
    while i < cells.len() {
        let slice = cells[i].slice(g);
        let mut j = i + 1;
        while j < cells.len() && cells[j].slice(g) == slice {
            j += 1;
        }
        let run = &cells[i..j];
        if run.len() > 1 {
            let mut picked = vec![false; run.len()];
            let mut remaining = run.len();
            while remaining > 0 {
                for cycle in 0..4u8 {
                    if let Some(k) = (0..run.len())
                        .find(|&k| !picked[k] && run[k].rel(g) / 4 == cycle)
                    {
                        picked[k] = true;
                        out.push(run[k]);
                        remaining -= 1;
                    }
                }
            }
        } else {
            out.extend_from_slice(run);
        }
        i = j;
    }
    out
}

pub fn reorder_streams(streams: &mut LaneStreams, g: &GeometryConfig) {
    for banks in &mut streams.groups {
        for lanes in banks {
            for cells in lanes {
                if cells.len() > 1 {
                    *cells = reorder_lane_window(cells, g);
                }
            }
        }
    }
}

/// One lane's static metadata stream: invalids pad every slice gap so the
/// positional slice ids (running start-bit count) land each cell on its true
/// slice.
fn build_meta_stream(cells: &[Cell], g: &GeometryConfig) -> Vec<MetaBits> {
    let mut out = Vec::with_capacity(cells.len());
    let mut walk: i64 = -1;
    for cell in cells {
        let s = cell.slice(g) as i64;
        for _ in 0..(s - walk - 1).max(0) {
            out.push(MetaBits::invalid());
        }
        out.push(MetaBits {
            index: cell.rel(g),
            valid: true,
            start: s > walk,
        });
        walk = walk.max(s);
    }
    out
}

fn check_streams_monotone(streams: &LaneStreams, g: &GeometryConfig) -> Result<()> {
    for banks in &streams.groups {
        for lanes in banks {
            for cells in lanes {
                let mut prev = 0u32;
                for (i, c) in cells.iter().enumerate() {
                    let s = c.slice(g);
                    if i > 0 && s < prev {
                        return Err(Error::Schedule(
                            "lane stream slice ids not monotone".into(),
                        ));
                    }
                    prev = s;
                }
            }
        }
    }
    Ok(())
}

/// Key artifacts of compiling one sparse matrix.
pub struct SparseCompilation {
    pub placement: Placement,
    pub streams: LaneStreams,
    pub image: CompressedImage,
    pub stream: CommandStream,
    pub stats: ScheduleStats,
    pub order: AccumOrder,
}

/// Placement, lane streams, optional reorder, schedule and the accumulation
/// order the simulator must reproduce, in one call.
pub fn compile_sparse(
    m: &SparseMatrix,
    g: &GeometryConfig,
    f: &FeatureFlags,
) -> Result<SparseCompilation> {
    let placement = if f.balance {
        balance_greedy(m, g)
    } else {
        assign_naive(m, g)
    };
    let mut streams = build_lane_streams(m, &placement, g)?;
    if f.reorder_active() {
        reorder_streams(&mut streams, g);
    }
    let (image, stream, stats) = schedule(&streams, m.digest(), g, f)?;
    let order = derive_accum_order(&streams, &placement, m, g);
    Ok(SparseCompilation {
        placement,
        streams,
        image,
        stream,
        stats,
        order,
    })
}

/// Compiles lane streams into the compressed image, command stream and
/// schedule statistics.
pub fn schedule(
    streams: &LaneStreams,
    matrix_digest: u64,
    g: &GeometryConfig,
    f: &FeatureFlags,
) -> Result<(CompressedImage, CommandStream, ScheduleStats)> {
    g.validate()?;
    f.validate()?;
    if f.dense_mode {
        return Err(Error::Schedule(
            "dense mode compiles from a dense image, not lane streams".into(),
        ));
    }
    if g.macs_per_bank > 11 {
        return Err(Error::Schedule(
            "at most 11 compressed cells fit one 256-bit column".into(),
        ));
    }
    check_streams_monotone(streams, g)?;

    let banks = g.num_banks;
    let macs = g.macs_per_bank;
    let nlanes = banks * macs;
    let slices = g.slices_per_vector_row() as i64;
    let cpr = g.columns_per_dram_row;

    let mut image_banks: Vec<Vec<Column>> = vec![Vec::new(); banks];
    let mut groups: Vec<GroupSpan> = Vec::new();
    let mut commands: Vec<Command> = Vec::new();
    let mut stats = ScheduleStats::default();

    let mut fifos: Vec<LaneFifo> = (0..nlanes).map(|_| LaneFifo::new(f.fifo_depth)).collect();
    let mut outcomes: Vec<LaneSlot> = Vec::new();

    for (gi, bank_lanes) in streams.groups.iter().enumerate() {
        let (vr, pass) = streams.group_coords(gi);
        let lane_cells: Vec<&[Cell]> = bank_lanes
            .iter()
            .flat_map(|lanes| lanes.iter().map(|c| c.as_slice()))
            .collect();
        debug_assert_eq!(lane_cells.len(), nlanes);

        if pass == 0 {
            for chunk in 0..cpr {
                commands.push(Command::Lgb((vr * cpr + chunk) as u32));
            }
        }

        let col_start = image_banks[0].len();
        let mut gs = GroupStats {
            vector_row: vr as u32,
            pass: pass as u32,
            active_row_slots: streams.active_rows_per_group[gi] as u64,
            max_lane_cells: lane_cells.iter().map(|c| c.len()).max().unwrap_or(0) as u64,
            ..GroupStats::default()
        };

        let lidx_cols = if f.prefetch {
            decoupled_group(
                &lane_cells,
                &mut fifos,
                &mut outcomes,
                banks,
                macs,
                slices,
                cpr,
                f,
                &mut image_banks,
                &mut commands,
                &mut gs,
                g,
            )
        } else {
            coupled_group(
                &lane_cells,
                banks,
                macs,
                slices,
                cpr,
                &mut image_banks,
                &mut commands,
                &mut gs,
                g,
            )
        };

        for b in 0..banks {
            commands.push(Command::Rd(b as u32));
        }
        let num_cols = image_banks[0].len() - col_start;
        groups.push(GroupSpan {
            vector_row: vr as u32,
            pass: pass as u32,
            col_start,
            lidx_cols,
            num_cols,
        });
        stats.push_group(gs);
        for fifo in fifos.iter_mut() {
            debug_assert!(fifo.ififo.is_empty() && fifo.efifo.is_empty());
            fifo.reset();
        }
    }

    let image = CompressedImage {
        macs,
        columns_per_dram_row: cpr,
        banks: image_banks,
        groups,
    };
    let header = StreamHeader {
        banks,
        macs,
        slice: g.slice_elems,
        fifo: f.fifo_depth,
        flags: *f,
        digest: matrix_digest,
    };
    Ok((image, CommandStream { header, commands }, stats))
}

fn commit_slice_usage(gs: &mut GroupStats, mask: &mut u16, cur: i64) {
    if cur >= 0 {
        gs.slice_elems_used += mask.count_ones() as u64;
        gs.slice_elems_total += 16;
        *mask = 0;
    }
}

/// Coupled (no-prefetch) packing: a lane's next cell joins the column iff its
/// slice is the one latched; otherwise an invalid cell walks the lane one
/// slice forward (placeholder once the walk has caught up). The broadcast
/// advances only when every lane's next cell lies beyond the latched slice.
#[allow(clippy::too_many_arguments)]
fn coupled_group(
    lane_cells: &[&[Cell]],
    banks: usize,
    macs: usize,
    slices: i64,
    cpr: usize,
    image_banks: &mut [Vec<Column>],
    commands: &mut Vec<Command>,
    gs: &mut GroupStats,
    g: &GeometryConfig,
) -> usize {
    let n = lane_cells.len();
    let mut ptr = vec![0usize; n];
    let mut walk = vec![-1i64; n];
    let mut cur: i64 = -1;
    let mut group_cols = 0usize;
    let mut cur_mask: u16 = 0;

    loop {
        let mut pending = false;
        let mut consumed = true;
        for (i, cells) in lane_cells.iter().enumerate() {
            if ptr[i] < cells.len() {
                pending = true;
                if (cells[ptr[i]].slice(g) as i64) <= cur {
                    consumed = false;
                }
            }
        }
        if !pending {
            break;
        }
        if consumed {
            commit_slice_usage(gs, &mut cur_mask, cur);
            cur += 1;
            debug_assert!(cur < slices);
            gs.broadcasts += 1;
        } else {
            gs.broadcast_stalls += 1;
        }
        if group_cols % cpr == 0 {
            commands.push(Command::Act);
        }
        let col_id = (group_cols % cpr) as u32;
        for b in 0..banks {
            let mut cells_out = Vec::with_capacity(macs);
            for m in 0..macs {
                let i = b * macs + m;
                let lane = lane_cells[i];
                let cell = if ptr[i] < lane.len() && lane[ptr[i]].slice(g) as i64 == cur {
                    let c = lane[ptr[i]];
                    ptr[i] += 1;
                    let s = c.slice(g) as i64;
                    let start = walk[i] < s;
                    walk[i] = s;
                    gs.mac_values += 1;
                    gs.extracted += 1;
                    cur_mask |= 1 << c.rel(g);
                    PackedCell {
                        value: c.value,
                        select: c.buffer == 1,
                        meta: MetaBits {
                            index: c.rel(g),
                            valid: true,
                            start,
                        },
                    }
                } else if ptr[i] < lane.len() && walk[i] < lane[ptr[i]].slice(g) as i64 {
                    walk[i] += 1;
                    gs.invalid_cells += 1;
                    gs.sentinel_values += 1;
                    PackedCell {
                        value: SENTINEL,
                        select: false,
                        meta: MetaBits::invalid(),
                    }
                } else {
                    gs.placeholder_cells += 1;
                    gs.sentinel_values += 1;
                    PackedCell {
                        value: SENTINEL,
                        select: false,
                        meta: MetaBits::placeholder(),
                    }
                };
                cells_out.push(cell);
            }
            image_banks[b].push(Column::Normal(cells_out));
        }
        commands.push(if consumed {
            Command::Cbr(col_id)
        } else {
            Command::Cnb(col_id)
        });
        gs.normal_columns += 1;
        group_cols += 1;
    }
    commit_slice_usage(gs, &mut cur_mask, cur);
    0
}

/// Decoupled packing. Warm-up LIDX columns fill the iFIFOs toward
/// `min(depth, 9)`, then every normal column carries the lane's next metadata
/// (placeholder when its modeled iFIFO is full) and the next value whose
/// element is guaranteed at the eFIFO head at compute time (zero sentinel
/// otherwise). CBR needs every head to open a new slice and no full eFIFO.
#[allow(clippy::too_many_arguments)]
fn decoupled_group(
    lane_cells: &[&[Cell]],
    fifos: &mut [LaneFifo],
    outcomes: &mut Vec<LaneSlot>,
    banks: usize,
    macs: usize,
    slices: i64,
    cpr: usize,
    f: &FeatureFlags,
    image_banks: &mut [Vec<Column>],
    commands: &mut Vec<Command>,
    gs: &mut GroupStats,
    g: &GeometryConfig,
) -> usize {
    let n = lane_cells.len();
    if lane_cells.iter().all(|c| c.is_empty()) {
        return 0; // nothing to prefetch or compute
    }
    let metas: Vec<Vec<MetaBits>> = lane_cells.iter().map(|c| build_meta_stream(c, g)).collect();
    let mut next_meta = vec![0usize; n];
    let mut next_val = vec![0usize; n];
    let mut group_cols = 0usize;
    let depth = f.fifo_depth;

    // warm-up
    let warm_target = depth.min(9);
    let w_cols = warm_target.div_ceil(3);
    for _ in 0..w_cols {
        if group_cols % cpr == 0 {
            commands.push(Command::Act);
        }
        let col_id = (group_cols % cpr) as u32;
        for b in 0..banks {
            let mut lanes_out = Vec::with_capacity(macs);
            for m in 0..macs {
                let i = b * macs + m;
                let mut entries = [MetaBits::placeholder(); 3];
                for e in &mut entries {
                    if next_meta[i] < metas[i].len() && fifos[i].ififo.len() < warm_target {
                        let item = metas[i][next_meta[i]];
                        next_meta[i] += 1;
                        fifos[i].push_meta(item.index, item.valid, item.start);
                        gs.ififo_pushes += 1;
                        if !item.valid {
                            gs.invalid_cells += 1;
                        }
                        *e = item;
                    } else {
                        gs.placeholder_cells += 1;
                    }
                }
                lanes_out.push(entries);
            }
            image_banks[b].push(Column::IndexOnly(lanes_out));
        }
        commands.push(Command::Lidx(col_id));
        gs.index_only_columns += 1;
        group_cols += 1;
    }
    let lidx_cols = w_cols;

    let mut cur: i64 = -1;
    let mut cur_mask: u16 = 0;
    loop {
        if !next_val
            .iter()
            .zip(lane_cells)
            .any(|(&v, cells)| v < cells.len())
        {
            break;
        }

        // command decision on the modeled state
        let mut blocked = false;
        let mut efull = false;
        let mut future = false;
        for i in 0..n {
            if let Some(head) = fifos[i].ififo.front() {
                if (head.slice as i64) <= cur {
                    blocked = true;
                }
                future = true;
            } else if next_meta[i] < metas[i].len() {
                blocked = true;
                future = true;
            }
            if fifos[i].efifo_full() {
                efull = true;
            }
        }
        let is_cbr = !blocked && !efull && future && cur + 1 < slices;
        if is_cbr {
            commit_slice_usage(gs, &mut cur_mask, cur);
            cur += 1;
            gs.broadcasts += 1;
        } else if blocked {
            gs.broadcast_stalls += 1;
        } else if efull {
            gs.efifo_full_stalls += 1;
        } else {
            gs.drain_columns += 1;
        }

        if group_cols % cpr == 0 {
            commands.push(Command::Act);
        }
        let col_id = (group_cols % cpr) as u32;

        for b in 0..banks {
            let mut cells_out = Vec::with_capacity(macs);
            for m in 0..macs {
                let i = b * macs + m;
                // metadata lane
                let meta = if next_meta[i] < metas[i].len() && !fifos[i].ififo_full() {
                    let item = metas[i][next_meta[i]];
                    next_meta[i] += 1;
                    fifos[i].push_meta(item.index, item.valid, item.start);
                    gs.ififo_pushes += 1;
                    if !item.valid {
                        gs.invalid_cells += 1;
                    }
                    item
                } else {
                    gs.placeholder_cells += 1;
                    MetaBits::placeholder()
                };
                // value lane: compute consumes the eFIFO head at slot start,
                // before this slot's extractions land
                let (value, select) = if next_val[i] < lane_cells[i].len()
                    && !fifos[i].efifo.is_empty()
                {
                    fifos[i].efifo.pop_front();
                    gs.efifo_pops += 1;
                    let c = lane_cells[i][next_val[i]];
                    next_val[i] += 1;
                    gs.mac_values += 1;
                    (c.value, c.buffer == 1)
                } else {
                    gs.sentinel_values += 1;
                    (SENTINEL, false)
                };
                cells_out.push(PackedCell {
                    value,
                    select,
                    meta,
                });
            }
            image_banks[b].push(Column::Normal(cells_out));
        }
        commands.push(if is_cbr {
            Command::Cbr(col_id)
        } else {
            Command::Cnb(col_id)
        });
        gs.normal_columns += 1;
        group_cols += 1;

        if cur >= 0 {
            extraction_slot(fifos, cur as u32, f.switch_mode, |_| 0, outcomes);
            for out in outcomes.iter() {
                gs.extracted += out.extracted as u64;
                gs.efifo_pushes += out.extracted as u64;
                gs.ififo_pops += (out.extracted + out.invalid_pops) as u64;
                cur_mask |= out.rel_mask;
                debug_assert!(!out.missed);
            }
        }
    }
    commit_slice_usage(gs, &mut cur_mask, cur);
    lidx_cols
}

/// Newton-style dense schedule over a coarse-grained image: one LGB pass per
/// vector-row, then per DRAM row an activation, 32 broadcast columns and a
/// result read per bank.
pub fn schedule_dense(
    img: &DenseImage,
    matrix_digest: u64,
    g: &GeometryConfig,
    f: &FeatureFlags,
) -> Result<(CommandStream, ScheduleStats)> {
    g.validate()?;
    if !f.dense_mode {
        return Err(Error::Schedule("schedule_dense requires dense_mode".into()));
    }
    let banks = g.num_banks;
    let cpr = g.columns_per_dram_row;
    let mut commands = Vec::new();
    let mut stats = ScheduleStats::default();
    for vr in 0..img.vector_rows {
        for chunk in 0..cpr {
            commands.push(Command::Lgb((vr * cpr + chunk) as u32));
        }
        for unit in 0..img.rows_per_bank {
            let mut gs = GroupStats {
                vector_row: vr as u32,
                pass: unit as u32,
                active_row_slots: banks as u64,
                max_lane_cells: cpr as u64,
                ..GroupStats::default()
            };
            commands.push(Command::Act);
            for col in 0..cpr {
                commands.push(Command::Cbr(col as u32));
                gs.normal_columns += 1;
                gs.broadcasts += 1;
                let mut mask = 0u16;
                for bank in &img.banks {
                    let values = &bank[vr * img.rows_per_bank + unit][col];
                    for (e, &v) in values.iter().enumerate() {
                        if crate::elem::is_zero_pattern(v) {
                            gs.sentinel_values += 1;
                        } else {
                            gs.mac_values += 1;
                            gs.extracted += 1;
                            mask |= 1 << e;
                        }
                    }
                }
                gs.slice_elems_used += mask.count_ones() as u64;
                gs.slice_elems_total += 16;
            }
            for b in 0..banks {
                commands.push(Command::Rd(b as u32));
            }
            stats.push_group(gs);
        }
    }
    let header = StreamHeader {
        banks,
        macs: DENSE_MACS,
        slice: g.slice_elems,
        fifo: f.fifo_depth,
        flags: *f,
        digest: matrix_digest,
    };
    Ok((CommandStream { header, commands }, stats))
}

/// Dense compile convenience used by the baseline runs.
pub fn compile_dense(
    m: &DenseMatrix,
    g: &GeometryConfig,
    f: &FeatureFlags,
) -> Result<(DenseImage, CommandStream, ScheduleStats)> {
    let img = crate::layout::layout_dense_coarse(m, g)?;
    let digest = m.to_sparse().digest();
    let (stream, stats) = schedule_dense(&img, digest, g, f)?;
    Ok((img, stream, stats))
}

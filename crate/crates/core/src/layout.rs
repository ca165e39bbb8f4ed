//! Row-to-bank/lane assignment and the fine-grained interleaved lane streams
//! the scheduler consumes.
//!
//! Matrix rows are padded with empty phantom rows to a whole number of
//! (bank, lane, buffer) slots, then either dealt greedily by density or
//! naively by row id. Each lane holds two co-located rows whose cells are
//! intermingled in ascending absolute column order. When a bank holds more
//! row pairs than it has MACs, the pairs are processed in passes of
//! `macs_per_bank` lanes; one (vector-row, pass) unit is a segment-group.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::elem::is_zero_pattern;
use crate::error::{Error, Result};
use crate::matrix::{AccumOrder, DenseMatrix, SparseMatrix};

/// DRAM geometry. Defaults follow an HBM2E-like single channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub num_banks: usize,
    /// MAC lanes fed by one compressed column read (16 in dense mode).
    pub macs_per_bank: usize,
    /// Elements per broadcast slice; fixed by the 256-bit column width.
    pub slice_elems: usize,
    /// Elements of the vector held per DRAM row (one vector-row).
    pub vector_row_elems: usize,
    pub columns_per_dram_row: usize,
    pub rows_per_bank: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            num_banks: 16,
            macs_per_bank: 11,
            slice_elems: 16,
            vector_row_elems: 512,
            columns_per_dram_row: 32,
            rows_per_bank: 32768,
        }
    }
}

pub const DENSE_MACS: usize = 16;

impl GeometryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_banks == 0 || self.macs_per_bank == 0 {
            return Err(Error::invalid("banks and MACs must be at least 1"));
        }
        if self.slice_elems * 16 != 256 {
            return Err(Error::invalid(
                "slice must fill the 256-bit column (16 elements of 16 bits)",
            ));
        }
        if self.vector_row_elems != self.columns_per_dram_row * self.slice_elems {
            return Err(Error::invalid(
                "vector_row_elems must equal columns_per_dram_row * slice_elems",
            ));
        }
        if self.macs_per_bank > DENSE_MACS {
            return Err(Error::invalid("at most 16 MACs fit one column read"));
        }
        Ok(())
    }

    pub fn slices_per_vector_row(&self) -> usize {
        self.vector_row_elems / self.slice_elems
    }

    pub fn vector_rows(&self, cols: usize) -> usize {
        cols.div_ceil(self.vector_row_elems)
    }

    /// Row slots per bank after phantom padding.
    pub fn padded_rows(&self, rows: usize) -> usize {
        let unit = self.num_banks * self.macs_per_bank * 2;
        rows.div_ceil(unit) * unit
    }
}

/// One matrix row's home: `(bank, lane, buffer)`. Lane ids may exceed
/// `macs_per_bank`; lane `l` executes in pass `l / macs_per_bank`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowSlot {
    pub bank: u32,
    pub lane: u32,
    pub buffer: u8,
}

/// Complete assignment of matrix rows to (bank, lane, buffer) slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    /// Indexed by matrix row id.
    pub assignments: Vec<RowSlot>,
    /// `bank_pairs[bank][lane] = [row for buffer 0, row for buffer 1]`,
    /// `None` for phantom padding rows.
    pub bank_pairs: Vec<Vec<[Option<usize>; 2]>>,
}

impl Placement {
    pub fn lanes_per_bank(&self) -> usize {
        self.bank_pairs.first().map_or(0, |b| b.len())
    }

    pub fn passes(&self, g: &GeometryConfig) -> usize {
        self.lanes_per_bank().div_ceil(g.macs_per_bank).max(1)
    }

    fn from_bank_lists(rows: usize, banks: Vec<Vec<Vec<Option<usize>>>>) -> Placement {
        // banks[b] is a list of pairs, each a [row0, row1] vec
        let mut assignments = vec![
            RowSlot {
                bank: 0,
                lane: 0,
                buffer: 0
            };
            rows
        ];
        let mut bank_pairs = Vec::with_capacity(banks.len());
        for (b, pairs) in banks.into_iter().enumerate() {
            let mut lanes = Vec::with_capacity(pairs.len());
            for (lane, pair) in pairs.into_iter().enumerate() {
                let slot = [pair[0], pair[1]];
                for (buf, row) in slot.iter().enumerate() {
                    if let Some(r) = row {
                        assignments[*r] = RowSlot {
                            bank: b as u32,
                            lane: lane as u32,
                            buffer: buf as u8,
                        };
                    }
                }
                lanes.push(slot);
            }
            bank_pairs.push(lanes);
        }
        Placement {
            assignments,
            bank_pairs,
        }
    }
}

/// Greedy balance: rows sorted by descending nnz (ties by ascending id) are
/// dealt round-robin across banks; within each bank the densest assigned row
/// is co-located with the sparsest, the second densest with the second
/// sparsest, and so on. Lanes are ordered by descending pair nnz with
/// pair-creation order as the tie break.
pub fn balance_greedy(m: &SparseMatrix, g: &GeometryConfig) -> Placement {
    let padded = g.padded_rows(m.rows);
    let mut order: Vec<usize> = (0..padded).collect();
    let nnz = |r: usize| if r < m.rows { m.row_nnz(r) } else { 0 };
    order.sort_by(|&a, &b| nnz(b).cmp(&nnz(a)).then(a.cmp(&b)));

    let mut per_bank: Vec<Vec<usize>> = vec![Vec::new(); g.num_banks];
    for (i, &r) in order.iter().enumerate() {
        per_bank[i % g.num_banks].push(r);
    }

    let banks = per_bank
        .into_iter()
        .map(|list| {
            let n = list.len();
            let mut pairs: Vec<(usize, Vec<Option<usize>>)> = (0..n / 2)
                .map(|p| {
                    let dense = list[p];
                    let sparse = list[n - 1 - p];
                    let total = nnz(dense) + nnz(sparse);
                    let to_slot = |r: usize| if r < m.rows { Some(r) } else { None };
                    (total, vec![to_slot(dense), to_slot(sparse)])
                })
                .collect();
            // stable sort keeps creation order on equal totals
            pairs.sort_by(|a, b| b.0.cmp(&a.0));
            pairs.into_iter().map(|(_, p)| p).collect()
        })
        .collect();
    Placement::from_bank_lists(m.rows, banks)
}

/// Balance disabled: row id -> bank `id % num_banks`, consecutive assigned
/// rows co-located. Used by the isolation study.
pub fn assign_naive(m: &SparseMatrix, g: &GeometryConfig) -> Placement {
    let padded = g.padded_rows(m.rows);
    let mut per_bank: Vec<Vec<usize>> = vec![Vec::new(); g.num_banks];
    for r in 0..padded {
        per_bank[r % g.num_banks].push(r);
    }
    let banks = per_bank
        .into_iter()
        .map(|list| {
            list.chunks(2)
                .map(|pair| {
                    pair.iter()
                        .map(|&r| if r < m.rows { Some(r) } else { None })
                        .collect()
                })
                .collect()
        })
        .collect();
    Placement::from_bank_lists(m.rows, banks)
}

impl Placement {
    /// Line-oriented `row_id bank lane buffer` text, preceded by a shape
    /// comment so the pair table reconstructs exactly.
    pub fn write_text<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(
            w,
            "# espim-placement v1 rows={} banks={} lanes_per_bank={}",
            self.assignments.len(),
            self.bank_pairs.len(),
            self.lanes_per_bank()
        )?;
        for (r, slot) in self.assignments.iter().enumerate() {
            writeln!(w, "{} {} {} {}", r, slot.bank, slot.lane, slot.buffer)?;
        }
        Ok(())
    }

    pub fn read_text<R: Read>(r: R) -> Result<Placement> {
        let reader = BufReader::new(r);
        let mut rows = None;
        let mut banks = None;
        let mut lanes = None;
        let mut assignments: Vec<RowSlot> = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if t.starts_with('#') {
                for tok in t.split_whitespace() {
                    if let Some((k, v)) = tok.split_once('=') {
                        let n: usize = v
                            .parse()
                            .map_err(|_| Error::parse(lineno, v, "expected integer"))?;
                        match k {
                            "rows" => rows = Some(n),
                            "banks" => banks = Some(n),
                            "lanes_per_bank" => lanes = Some(n),
                            _ => {}
                        }
                    }
                }
                continue;
            }
            let toks: Vec<&str> = t.split_whitespace().collect();
            if toks.len() != 4 {
                return Err(Error::parse(lineno, t, "expected `row bank lane buffer`"));
            }
            let p = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::parse(lineno, s, "expected integer"))
            };
            let (row, bank, lane, buffer) = (p(toks[0])?, p(toks[1])?, p(toks[2])?, p(toks[3])?);
            if row != assignments.len() {
                return Err(Error::parse(lineno, t, "row ids must be dense and ordered"));
            }
            assignments.push(RowSlot {
                bank: bank as u32,
                lane: lane as u32,
                buffer: buffer as u8,
            });
        }
        let rows = rows.ok_or_else(|| Error::parse(0, "", "missing placement header"))?;
        let banks = banks.unwrap_or(0);
        let lanes = lanes.unwrap_or(0);
        if assignments.len() != rows {
            return Err(Error::Format(format!(
                "placement header promises {rows} rows, found {}",
                assignments.len()
            )));
        }
        let mut bank_pairs = vec![vec![[None, None]; lanes]; banks];
        for (r, slot) in assignments.iter().enumerate() {
            let cell = bank_pairs
                .get_mut(slot.bank as usize)
                .and_then(|b| b.get_mut(slot.lane as usize))
                .ok_or_else(|| Error::Format(format!("row {r} maps outside the bank grid")))?;
            if cell[slot.buffer as usize].is_some() {
                return Err(Error::Format(format!("two rows share a buffer slot (row {r})")));
            }
            cell[slot.buffer as usize] = Some(r);
        }
        Ok(Placement {
            assignments,
            bank_pairs,
        })
    }
}

/// One matrix cell inside a lane stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    /// Absolute column in the matrix.
    pub col: u32,
    pub value: u16,
    /// Output buffer (select bit).
    pub buffer: u8,
}

impl Cell {
    pub fn slice(&self, g: &GeometryConfig) -> u32 {
        ((self.col as usize % g.vector_row_elems) / g.slice_elems) as u32
    }

    pub fn rel(&self, g: &GeometryConfig) -> u8 {
        (self.col as usize % g.slice_elems) as u8
    }
}

/// Per-lane ordered cell streams, grouped by segment-group.
///
/// `groups[group][bank][mac]` holds the cells one physical MAC lane consumes
/// during that group; group index = `vector_row * passes + pass`.
#[derive(Debug, Clone)]
pub struct LaneStreams {
    pub vector_rows: usize,
    pub passes: usize,
    /// Real (non-phantom) rows mapped to each group's lanes, for statistics.
    pub active_rows_per_group: Vec<usize>,
    pub groups: Vec<Vec<Vec<Vec<Cell>>>>,
}

impl LaneStreams {
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group_coords(&self, group: usize) -> (usize, usize) {
        (group / self.passes, group % self.passes)
    }

    pub fn total_cells(&self) -> usize {
        self.groups
            .iter()
            .flatten()
            .flatten()
            .map(|lane| lane.len())
            .sum()
    }
}

/// Splits every placed row into vector-row segments and intermingles each
/// lane's two co-located rows in ascending absolute column order.
pub fn build_lane_streams(
    m: &SparseMatrix,
    p: &Placement,
    g: &GeometryConfig,
) -> Result<LaneStreams> {
    g.validate()?;
    if p.assignments.len() != m.rows {
        return Err(Error::invalid(format!(
            "placement covers {} rows, matrix has {}",
            p.assignments.len(),
            m.rows
        )));
    }
    let vector_rows = g.vector_rows(m.cols);
    let passes = p.passes(g);
    let num_groups = vector_rows * passes;
    let mut groups =
        vec![vec![vec![Vec::<Cell>::new(); g.macs_per_bank]; g.num_banks]; num_groups];
    let mut active_rows = vec![0usize; num_groups];

    for (bank, lanes) in p.bank_pairs.iter().enumerate() {
        for (lane, pair) in lanes.iter().enumerate() {
            let pass = lane / g.macs_per_bank;
            let mac = lane % g.macs_per_bank;
            let real_rows = pair.iter().flatten().count();
            for vr in 0..vector_rows {
                active_rows[vr * passes + pass] += real_rows;
            }
            // merge the two rows by ascending absolute column
            let mut streams: Vec<(std::iter::Peekable<_>, u8)> = pair
                .iter()
                .enumerate()
                .filter_map(|(buf, row)| {
                    row.map(|r| (m.row(r).peekable(), buf as u8))
                })
                .collect();
            loop {
                let mut best: Option<(usize, u32)> = None;
                for (i, (it, _)) in streams.iter_mut().enumerate() {
                    if let Some(&(c, _)) = it.peek() {
                        if best.map_or(true, |(_, bc)| c < bc) {
                            best = Some((i, c));
                        }
                    }
                }
                let Some((i, _)) = best else { break };
                let (c, v) = streams[i].0.next().unwrap();
                let buffer = streams[i].1;
                let vr = c as usize / g.vector_row_elems;
                groups[vr * passes + pass][bank][mac].push(Cell {
                    col: c,
                    value: v,
                    buffer,
                });
            }
        }
    }
    Ok(LaneStreams {
        vector_rows,
        passes,
        active_rows_per_group: active_rows,
        groups,
    })
}

/// Derives the per-row accumulation order the simulator must reproduce.
/// Must be called on the same (possibly reordered) streams that were
/// scheduled.
pub fn derive_accum_order(
    streams: &LaneStreams,
    p: &Placement,
    m: &SparseMatrix,
    g: &GeometryConfig,
) -> AccumOrder {
    let mut per_row: Vec<Vec<Vec<(u32, u16)>>> = vec![Vec::new(); m.rows];
    for (group, banks) in streams.groups.iter().enumerate() {
        let (_, pass) = streams.group_coords(group);
        let mut bucket: Vec<Vec<(u32, u16)>> = vec![Vec::new(); m.rows];
        let mut touched: Vec<usize> = Vec::new();
        for (bank, lanes) in banks.iter().enumerate() {
            for (mac, cells) in lanes.iter().enumerate() {
                let lane = pass * g.macs_per_bank + mac;
                for cell in cells {
                    let row = p.bank_pairs[bank][lane][cell.buffer as usize]
                        .expect("cell emitted by a phantom row");
                    if bucket[row].is_empty() {
                        touched.push(row);
                    }
                    bucket[row].push((cell.col, cell.value));
                }
            }
        }
        touched.sort_unstable();
        for row in touched {
            per_row[row].push(std::mem::take(&mut bucket[row]));
        }
    }
    AccumOrder { per_row }
}

/// Accumulation order of the dense baseline: per row, one partial per
/// vector-row, cells ascending. Zero cells are carried (the replay gates
/// them) so the dense image and the order agree positionally.
pub fn derive_newton_order(m: &DenseMatrix, g: &GeometryConfig) -> AccumOrder {
    let vrs = g.vector_rows(m.cols);
    let per_row = (0..m.rows)
        .map(|r| {
            (0..vrs)
                .map(|vr| {
                    let lo = vr * g.vector_row_elems;
                    let hi = ((vr + 1) * g.vector_row_elems).min(m.cols);
                    (lo..hi).map(|c| (c as u32, m.get(r, c))).collect()
                })
                .collect()
        })
        .collect();
    AccumOrder { per_row }
}

/// Dense coarse-grained DRAM image: row `r` lives in bank `r % banks`; each
/// DRAM row holds one vector-row-sized chunk; banks march all chunks for
/// vector-row 0, then vector-row 1, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseImage {
    pub rows: usize,
    pub cols: usize,
    pub vector_rows: usize,
    /// Matrix rows assigned per bank (zero-padded rows included).
    pub rows_per_bank: usize,
    /// `banks[b][unit][col]` = 16 elements; unit = `vr * rows_per_bank + i`.
    pub banks: Vec<Vec<Vec<[u16; 16]>>>,
}

pub fn layout_dense_coarse(m: &DenseMatrix, g: &GeometryConfig) -> Result<DenseImage> {
    g.validate()?;
    let vector_rows = g.vector_rows(m.cols);
    let rows_per_bank = m.rows.div_ceil(g.num_banks);
    let mut banks = vec![Vec::with_capacity(vector_rows * rows_per_bank); g.num_banks];
    for vr in 0..vector_rows {
        for i in 0..rows_per_bank {
            for (b, bank) in banks.iter_mut().enumerate() {
                let row = b + i * g.num_banks;
                let mut unit = Vec::with_capacity(g.columns_per_dram_row);
                for col in 0..g.columns_per_dram_row {
                    let mut elems = [0u16; 16];
                    for (e, slot) in elems.iter_mut().enumerate() {
                        let c = vr * g.vector_row_elems + col * g.slice_elems + e;
                        if row < m.rows && c < m.cols {
                            *slot = m.get(row, c);
                        }
                    }
                    unit.push(elems);
                }
                bank.push(unit);
            }
        }
    }
    Ok(DenseImage {
        rows: m.rows,
        cols: m.cols,
        vector_rows,
        rows_per_bank,
        banks,
    })
}

/// Multiset reconstruction of `(row, col, value)` from lane streams; test
/// oracle for stream construction.
pub fn reconstruct_cells(
    streams: &LaneStreams,
    p: &Placement,
    g: &GeometryConfig,
) -> Vec<(usize, u32, u16)> {
    let mut out = Vec::new();
    for (group, banks) in streams.groups.iter().enumerate() {
        let (_, pass) = streams.group_coords(group);
        for (bank, lanes) in banks.iter().enumerate() {
            for (mac, cells) in lanes.iter().enumerate() {
                let lane = pass * g.macs_per_bank + mac;
                for cell in cells {
                    let row = p.bank_pairs[bank][lane][cell.buffer as usize].unwrap();
                    out.push((row, cell.col, cell.value));
                }
            }
        }
    }
    out.sort_unstable();
    out
}

pub fn cells_of_matrix(m: &SparseMatrix) -> Vec<(usize, u32, u16)> {
    let mut out: Vec<(usize, u32, u16)> = (0..m.rows)
        .flat_map(|r| m.row(r).map(move |(c, v)| (r, c, v)))
        .collect();
    out.sort_unstable();
    out
}

/// Max per-bank nnz under a placement; the balance property tests compare
/// greedy against naive with this.
pub fn max_bank_nnz(m: &SparseMatrix, p: &Placement) -> usize {
    let mut per_bank = vec![0usize; p.bank_pairs.len()];
    for (r, slot) in p.assignments.iter().enumerate() {
        per_bank[slot.bank as usize] += m.row_nnz(r);
    }
    per_bank.into_iter().max().unwrap_or(0)
}

pub fn densify_check(m: &DenseMatrix) -> usize {
    m.values.iter().filter(|&&v| !is_zero_pattern(v)).count()
}

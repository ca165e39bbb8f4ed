//! Bit-packed compressed DRAM image.
//!
//! A normal column carries one 23-bit cell per MAC lane: value[22:7],
//! index[6:3], valid[2], start[1], select[0]. Eleven cells use 253 of the
//! 256 column bits. An index-only column instead carries up to three 7-bit
//! metadata entries per lane. Dense-mode columns are sixteen raw elements.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::layout::{DenseImage, GeometryConfig};

/// Metadata bits of one cell as held by an iFIFO entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MetaBits {
    pub index: u8,
    pub valid: bool,
    pub start: bool,
}

impl MetaBits {
    /// valid=0, start=0: dropped at the iFIFO, never enters it.
    pub fn placeholder() -> Self {
        MetaBits::default()
    }

    /// valid=0, start=1: enters the iFIFO and skips the lane to the next
    /// slice.
    pub fn invalid() -> Self {
        MetaBits {
            index: 0,
            valid: false,
            start: true,
        }
    }

    pub fn is_placeholder(&self) -> bool {
        !self.valid && !self.start
    }
}

/// One 23-bit cell of a normal column. In decoupled mode the value (and its
/// select bit) belong to an earlier matrix cell than the prefetched metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PackedCell {
    pub value: u16,
    pub select: bool,
    pub meta: MetaBits,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Normal(Vec<PackedCell>),
    IndexOnly(Vec<[MetaBits; 3]>),
    Dense([u16; 16]),
}

/// One segment-group's span inside each bank's column sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupSpan {
    pub vector_row: u32,
    pub pass: u32,
    pub col_start: usize,
    /// Leading index-only warm-up columns of the span.
    pub lidx_cols: usize,
    pub num_cols: usize,
}

/// Per-bank compressed columns plus the segment-group manifest. Every bank
/// holds the same column count (lockstep); each group starts a fresh DRAM
/// row.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedImage {
    pub macs: usize,
    pub columns_per_dram_row: usize,
    pub banks: Vec<Vec<Column>>,
    pub groups: Vec<GroupSpan>,
}

impl CompressedImage {
    pub fn columns_per_bank(&self) -> usize {
        self.banks.first().map_or(0, |b| b.len())
    }

    pub fn dram_rows_per_bank(&self) -> usize {
        self.groups
            .iter()
            .map(|g| g.num_cols.div_ceil(self.columns_per_dram_row))
            .sum()
    }

    /// Image footprint in bytes: whole DRAM rows across all banks, the unit
    /// the ideal non-PIM baseline must transfer.
    pub fn matrix_bytes(&self) -> u64 {
        (self.banks.len() * self.dram_rows_per_bank() * self.columns_per_dram_row * 32) as u64
    }
}

// --- 32-byte column records -------------------------------------------------

fn set_bits(buf: &mut [u8; 32], pos: usize, width: usize, value: u32) {
    for i in 0..width {
        if value >> i & 1 != 0 {
            let bit = pos + i;
            buf[bit / 8] |= 1 << (bit % 8);
        }
    }
}

fn get_bits(buf: &[u8; 32], pos: usize, width: usize) -> u32 {
    let mut v = 0u32;
    for i in 0..width {
        let bit = pos + i;
        if buf[bit / 8] >> (bit % 8) & 1 != 0 {
            v |= 1 << i;
        }
    }
    v
}

const CELL_BITS: usize = 23;
const META_BITS: usize = 7;

pub fn encode_column(col: &Column) -> [u8; 32] {
    let mut buf = [0u8; 32];
    match col {
        Column::Normal(cells) => {
            for (lane, cell) in cells.iter().enumerate() {
                let base = lane * CELL_BITS;
                set_bits(&mut buf, base, 1, cell.select as u32);
                set_bits(&mut buf, base + 1, 1, cell.meta.start as u32);
                set_bits(&mut buf, base + 2, 1, cell.meta.valid as u32);
                set_bits(&mut buf, base + 3, 4, cell.meta.index as u32);
                set_bits(&mut buf, base + 7, 16, cell.value as u32);
            }
        }
        Column::IndexOnly(lanes) => {
            for (lane, entries) in lanes.iter().enumerate() {
                for (e, m) in entries.iter().enumerate() {
                    let base = lane * 3 * META_BITS + e * META_BITS;
                    set_bits(&mut buf, base + 1, 1, m.start as u32);
                    set_bits(&mut buf, base + 2, 1, m.valid as u32);
                    set_bits(&mut buf, base + 3, 4, m.index as u32);
                }
            }
        }
        Column::Dense(values) => {
            for (i, v) in values.iter().enumerate() {
                buf[2 * i..2 * i + 2].copy_from_slice(&v.to_le_bytes());
            }
        }
    }
    buf
}

pub fn decode_normal(buf: &[u8; 32], macs: usize) -> Column {
    let cells = (0..macs)
        .map(|lane| {
            let base = lane * CELL_BITS;
            PackedCell {
                select: get_bits(buf, base, 1) != 0,
                meta: MetaBits {
                    start: get_bits(buf, base + 1, 1) != 0,
                    valid: get_bits(buf, base + 2, 1) != 0,
                    index: get_bits(buf, base + 3, 4) as u8,
                },
                value: get_bits(buf, base + 7, 16) as u16,
            }
        })
        .collect();
    Column::Normal(cells)
}

pub fn decode_index_only(buf: &[u8; 32], macs: usize) -> Column {
    let lanes = (0..macs)
        .map(|lane| {
            let mut entries = [MetaBits::default(); 3];
            for (e, m) in entries.iter_mut().enumerate() {
                let base = lane * 3 * META_BITS + e * META_BITS;
                m.start = get_bits(buf, base + 1, 1) != 0;
                m.valid = get_bits(buf, base + 2, 1) != 0;
                m.index = get_bits(buf, base + 3, 4) as u8;
            }
            entries
        })
        .collect();
    Column::IndexOnly(lanes)
}

pub fn decode_dense(buf: &[u8; 32]) -> Column {
    let mut values = [0u16; 16];
    for (i, v) in values.iter_mut().enumerate() {
        *v = u16::from_le_bytes([buf[2 * i], buf[2 * i + 1]]);
    }
    Column::Dense(values)
}

// --- image container ---------------------------------------------------------

const IMG_MAGIC: &[u8; 7] = b"ESPIMG1";

impl CompressedImage {
    /// Manifest (group spans) followed by per-bank DRAM rows of 32-byte
    /// records; each group is padded to whole DRAM rows with zero records.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(IMG_MAGIC)?;
        w.write_all(&[0u8])?; // sparse
        w.write_all(&(self.banks.len() as u32).to_le_bytes())?;
        w.write_all(&(self.macs as u32).to_le_bytes())?;
        w.write_all(&(self.columns_per_dram_row as u32).to_le_bytes())?;
        w.write_all(&(self.groups.len() as u32).to_le_bytes())?;
        for g in &self.groups {
            w.write_all(&g.vector_row.to_le_bytes())?;
            w.write_all(&g.pass.to_le_bytes())?;
            w.write_all(&(g.lidx_cols as u32).to_le_bytes())?;
            w.write_all(&(g.num_cols as u32).to_le_bytes())?;
        }
        let zero = [0u8; 32];
        for bank in &self.banks {
            for g in &self.groups {
                let cols = &bank[g.col_start..g.col_start + g.num_cols];
                for c in cols {
                    w.write_all(&encode_column(c))?;
                }
                let pad = g.num_cols.div_ceil(self.columns_per_dram_row)
                    * self.columns_per_dram_row
                    - g.num_cols;
                for _ in 0..pad {
                    w.write_all(&zero)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic[..7] != IMG_MAGIC {
            return Err(Error::Format("bad magic, not an ESPIM image".into()));
        }
        if magic[7] != 0 {
            return Err(Error::Format("dense image where a sparse one was expected".into()));
        }
        let banks = read_u32(r)? as usize;
        let macs = read_u32(r)? as usize;
        let cpr = read_u32(r)? as usize;
        let ngroups = read_u32(r)? as usize;
        let mut groups = Vec::with_capacity(ngroups);
        let mut col_start = 0usize;
        for _ in 0..ngroups {
            let vector_row = read_u32(r)?;
            let pass = read_u32(r)?;
            let lidx_cols = read_u32(r)? as usize;
            let num_cols = read_u32(r)? as usize;
            groups.push(GroupSpan {
                vector_row,
                pass,
                col_start,
                lidx_cols,
                num_cols,
            });
            col_start += num_cols;
        }
        let mut bank_cols = Vec::with_capacity(banks);
        for _ in 0..banks {
            let mut cols = Vec::with_capacity(col_start);
            for g in &groups {
                let padded = g.num_cols.div_ceil(cpr) * cpr;
                for i in 0..padded {
                    let mut buf = [0u8; 32];
                    r.read_exact(&mut buf)?;
                    if i < g.num_cols {
                        cols.push(if i < g.lidx_cols {
                            decode_index_only(&buf, macs)
                        } else {
                            decode_normal(&buf, macs)
                        });
                    }
                }
            }
            bank_cols.push(cols);
        }
        Ok(CompressedImage {
            macs,
            columns_per_dram_row: cpr,
            banks: bank_cols,
            groups,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_binary(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        Self::read_binary(&mut r)
    }
}

impl DenseImage {
    pub fn write_binary<W: Write>(&self, w: &mut W, g: &GeometryConfig) -> Result<()> {
        w.write_all(IMG_MAGIC)?;
        w.write_all(&[1u8])?; // dense
        w.write_all(&(self.banks.len() as u32).to_le_bytes())?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        w.write_all(&(self.vector_rows as u32).to_le_bytes())?;
        w.write_all(&(self.rows_per_bank as u32).to_le_bytes())?;
        w.write_all(&(g.columns_per_dram_row as u32).to_le_bytes())?;
        for bank in &self.banks {
            for unit in bank {
                for col in unit {
                    w.write_all(&encode_column(&Column::Dense(*col)))?;
                }
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic[..7] != IMG_MAGIC {
            return Err(Error::Format("bad magic, not an ESPIM image".into()));
        }
        if magic[7] != 1 {
            return Err(Error::Format("sparse image where a dense one was expected".into()));
        }
        let banks = read_u32(r)? as usize;
        let rows = read_u64(r)? as usize;
        let cols = read_u64(r)? as usize;
        let vector_rows = read_u32(r)? as usize;
        let rows_per_bank = read_u32(r)? as usize;
        let cpr = read_u32(r)? as usize;
        let mut data = Vec::with_capacity(banks);
        for _ in 0..banks {
            let mut units = Vec::with_capacity(vector_rows * rows_per_bank);
            for _ in 0..vector_rows * rows_per_bank {
                let mut unit = Vec::with_capacity(cpr);
                for _ in 0..cpr {
                    let mut buf = [0u8; 32];
                    r.read_exact(&mut buf)?;
                    match decode_dense(&buf) {
                        Column::Dense(v) => unit.push(v),
                        _ => unreachable!(),
                    }
                }
                units.push(unit);
            }
            data.push(units);
        }
        Ok(DenseImage {
            rows,
            cols,
            vector_rows,
            rows_per_bank,
            banks: data,
        })
    }

    pub fn save(&self, path: &Path, g: &GeometryConfig) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_binary(&mut w, g)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        Self::read_binary(&mut r)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_bit_positions() {
        let mut cells = vec![PackedCell::default(); 11];
        cells[0] = PackedCell {
            value: 0xffff,
            select: false,
            meta: MetaBits { index: 0, valid: false, start: false },
        };
        let buf = encode_column(&Column::Normal(cells.clone()));
        // value occupies bits 7..23 of the first cell
        assert_eq!(get_bits(&buf, 7, 16), 0xffff);
        assert_eq!(get_bits(&buf, 0, 7), 0);

        cells[0] = PackedCell {
            value: 0,
            select: true,
            meta: MetaBits { index: 0b1010, valid: true, start: false },
        };
        let buf = encode_column(&Column::Normal(cells));
        assert_eq!(get_bits(&buf, 0, 1), 1); // select
        assert_eq!(get_bits(&buf, 1, 1), 0); // start
        assert_eq!(get_bits(&buf, 2, 1), 1); // valid
        assert_eq!(get_bits(&buf, 3, 4), 0b1010);
        // 11 cells use 253 bits; the top 3 stay zero
        assert_eq!(get_bits(&buf, 253, 3), 0);
    }

    #[test]
    fn normal_column_round_trip() {
        let cells: Vec<PackedCell> = (0..11)
            .map(|i| PackedCell {
                value: 0x1234u16.wrapping_mul(i as u16 + 1),
                select: i % 2 == 0,
                meta: MetaBits {
                    index: (i % 16) as u8,
                    valid: i % 3 != 0,
                    start: i % 4 == 0,
                },
            })
            .collect();
        let col = Column::Normal(cells);
        let buf = encode_column(&col);
        assert_eq!(decode_normal(&buf, 11), col);
    }

    #[test]
    fn index_only_round_trip() {
        let lanes: Vec<[MetaBits; 3]> = (0..11)
            .map(|i| {
                [
                    MetaBits { index: i as u8 % 16, valid: true, start: true },
                    MetaBits::invalid(),
                    MetaBits::placeholder(),
                ]
            })
            .collect();
        let col = Column::IndexOnly(lanes);
        let buf = encode_column(&col);
        assert_eq!(decode_index_only(&buf, 11), col);
    }

    #[test]
    fn dense_column_round_trip() {
        let mut v = [0u16; 16];
        for (i, x) in v.iter_mut().enumerate() {
            *x = (i as u16) << 8 | 0x3c;
        }
        let col = Column::Dense(v);
        let buf = encode_column(&col);
        assert_eq!(decode_dense(&buf), col);
    }
}

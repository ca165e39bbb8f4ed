//! Matrix and vector generation, magnitude pruning, file formats and the
//! reference matrix-vector oracles against which the simulator is checked.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};

use crate::elem::{is_zero_pattern, ElemFormat};
use crate::error::{Error, Result};

/// Row-major dense matrix of 16-bit elements.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub format: ElemFormat,
    pub values: Vec<u16>,
}

/// Compressed-sparse-rows matrix of 16-bit elements.
///
/// Column indices are strictly increasing within a row and no stored value is
/// an exact zero: the zero pattern is reserved as the datapath's no-op
/// sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub format: ElemFormat,
    pub row_starts: Vec<usize>,
    pub col_indices: Vec<u32>,
    pub values: Vec<u16>,
}

/// Dense input vector of 16-bit elements.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    pub format: ElemFormat,
    pub values: Vec<u16>,
}

/// Random value distribution for workload generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Uniform { lo: f64, hi: f64 },
    Normal { mu: f64, sigma: f64 },
}

impl Distribution {
    fn validate(&self) -> Result<()> {
        match *self {
            Distribution::Uniform { lo, hi } => {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::invalid(format!(
                        "uniform distribution needs finite lo < hi, got [{lo}, {hi})"
                    )));
                }
            }
            Distribution::Normal { sigma, mu } => {
                if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
                    return Err(Error::invalid(format!(
                        "normal distribution needs finite mu and sigma > 0, got ({mu}, {sigma})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Samples one element, resampling until the encoded pattern is finite and
/// nonzero (exact zero is the datapath sentinel).
fn sample_elem(rng: &mut ChaCha8Rng, dist: Distribution, format: ElemFormat) -> u16 {
    loop {
        let x = match dist {
            Distribution::Uniform { lo, hi } => rng.random_range(lo..hi),
            Distribution::Normal { mu, sigma } => {
                Normal::new(mu, sigma).expect("validated").sample(rng)
            }
        };
        let bits = format.encode_f64(x);
        if !is_zero_pattern(bits) && format.decode(bits).is_finite() {
            return bits;
        }
    }
}

pub fn generate_dense(
    rows: usize,
    cols: usize,
    seed: u64,
    dist: Distribution,
    format: ElemFormat,
) -> Result<DenseMatrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("matrix dimensions must be at least 1x1"));
    }
    dist.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..rows * cols)
        .map(|_| sample_elem(&mut rng, dist, format))
        .collect();
    Ok(DenseMatrix {
        rows,
        cols,
        format,
        values,
    })
}

pub fn generate_vector(
    len: usize,
    seed: u64,
    dist: Distribution,
    format: ElemFormat,
) -> Result<Vector> {
    if len == 0 {
        return Err(Error::invalid("vector length must be at least 1"));
    }
    dist.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..len)
        .map(|_| sample_elem(&mut rng, dist, format))
        .collect();
    Ok(Vector { format, values })
}

impl DenseMatrix {
    pub fn get(&self, r: usize, c: usize) -> u16 {
        self.values[r * self.cols + c]
    }

    /// All cells kept as explicit entries; zero-valued cells are dropped
    /// (a dense matrix straight out of [`generate_dense`] has none).
    pub fn to_sparse(&self) -> SparseMatrix {
        let mut row_starts = Vec::with_capacity(self.rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_starts.push(0);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let v = self.get(r, c);
                if !is_zero_pattern(v) {
                    col_indices.push(c as u32);
                    values.push(v);
                }
            }
            row_starts.push(values.len());
        }
        SparseMatrix {
            rows: self.rows,
            cols: self.cols,
            format: self.format,
            row_starts,
            col_indices,
            values,
        }
    }
}

impl SparseMatrix {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_starts[r + 1] - self.row_starts[r]
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (u32, u16)> + '_ {
        let span = self.row_starts[r]..self.row_starts[r + 1];
        span.map(move |i| (self.col_indices[i], self.values[i]))
    }

    /// Materializes the uncompressed matrix (absent cells become zero), which
    /// is what the dense baseline reads.
    pub fn to_dense(&self) -> DenseMatrix {
        let mut values = vec![0u16; self.rows * self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                values[r * self.cols + c as usize] = v;
            }
        }
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            format: self.format,
            values,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::invalid("matrix dimensions must be at least 1x1"));
        }
        if self.row_starts.len() != self.rows + 1
            || self.row_starts[0] != 0
            || *self.row_starts.last().unwrap() != self.values.len()
            || self.col_indices.len() != self.values.len()
        {
            return Err(Error::Format("inconsistent CSR offsets".into()));
        }
        for r in 0..self.rows {
            if self.row_starts[r] > self.row_starts[r + 1] {
                return Err(Error::Format(format!("row_starts decrease at row {r}")));
            }
            let mut prev: Option<u32> = None;
            for (c, v) in self.row(r) {
                if c as usize >= self.cols {
                    return Err(Error::Format(format!("column {c} out of range in row {r}")));
                }
                if let Some(p) = prev {
                    if c <= p {
                        return Err(Error::Format(format!(
                            "column indices not strictly increasing in row {r}"
                        )));
                    }
                }
                if is_zero_pattern(v) {
                    return Err(Error::Format(format!(
                        "stored zero value in row {r}, column {c} (zero is the no-op sentinel)"
                    )));
                }
                prev = Some(c);
            }
        }
        Ok(())
    }

    /// FNV-1a digest of the logical content, recorded in command-stream
    /// headers so stale artifacts are caught at verification.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for x in [self.rows as u64, self.cols as u64, self.nnz() as u64] {
            x.to_le_bytes().into_iter().for_each(&mut eat);
        }
        for &c in &self.col_indices {
            c.to_le_bytes().into_iter().for_each(&mut eat);
        }
        for &v in &self.values {
            v.to_le_bytes().into_iter().for_each(&mut eat);
        }
        for &s in &self.row_starts {
            (s as u64).to_le_bytes().into_iter().for_each(&mut eat);
        }
        h
    }
}

impl Vector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Element at `i`, zero past the end (vector-rows are zero-padded to the
    /// DRAM row size).
    pub fn get_padded(&self, i: usize) -> u16 {
        self.values.get(i).copied().unwrap_or(0)
    }
}

/// Removes exactly `round(target_sparsity * rows * cols)` smallest-magnitude
/// cells. Ties are broken by row-major position, earlier positions removed
/// first, so goldens are reproducible.
pub fn prune_magnitude(m: &DenseMatrix, target_sparsity: f64) -> Result<SparseMatrix> {
    if !(0.0..1.0).contains(&target_sparsity) {
        return Err(Error::invalid(format!(
            "target sparsity must be in [0, 1), got {target_sparsity}"
        )));
    }
    let total = m.rows * m.cols;
    let remove = (target_sparsity * total as f64).round() as usize;

    let mags: Vec<f32> = m.values.iter().map(|&v| m.format.decode(v).abs()).collect();
    let mut order: Vec<u32> = (0..total as u32).collect();
    let key = |i: u32| (mags[i as usize], i);
    if remove > 0 && remove < total {
        order.select_nth_unstable_by(remove - 1, |&a, &b| {
            key(a).partial_cmp(&key(b)).unwrap()
        });
    }

    let mut keep = vec![true; total];
    for &i in &order[..remove] {
        keep[i as usize] = false;
    }

    let mut row_starts = Vec::with_capacity(m.rows + 1);
    let mut col_indices = Vec::with_capacity(total - remove);
    let mut values = Vec::with_capacity(total - remove);
    row_starts.push(0);
    for r in 0..m.rows {
        for c in 0..m.cols {
            if keep[r * m.cols + c] {
                col_indices.push(c as u32);
                values.push(m.get(r, c));
            }
        }
        row_starts.push(values.len());
    }
    Ok(SparseMatrix {
        rows: m.rows,
        cols: m.cols,
        format: m.format,
        row_starts,
        col_indices,
        values,
    })
}

/// Accumulation precision for [`reference_mv`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MvPrecision {
    /// f64 products and accumulation.
    Wide,
    /// Every product and partial sum rounded to the element format, in
    /// ascending-column order per row.
    Element16,
}

/// Reference matrix-vector product. Output stays wide (f64) so callers pick
/// their own comparison tolerance.
pub fn reference_mv(m: &SparseMatrix, v: &Vector, precision: MvPrecision) -> Result<Vec<f64>> {
    if v.len() != m.cols {
        return Err(Error::dim(format!(
            "vector length {} != matrix cols {}",
            v.len(),
            m.cols
        )));
    }
    let fmt = m.format;
    let mut out = vec![0.0f64; m.rows];
    for r in 0..m.rows {
        match precision {
            MvPrecision::Wide => {
                let mut acc = 0.0f64;
                for (c, val) in m.row(r) {
                    acc += fmt.decode(val) as f64 * fmt.decode(v.values[c as usize]) as f64;
                }
                out[r] = acc;
            }
            MvPrecision::Element16 => {
                let mut acc: u16 = 0;
                for (c, val) in m.row(r) {
                    let p = fmt.mul(val, v.values[c as usize]);
                    acc = fmt.add(acc, p);
                }
                out[r] = fmt.decode(acc) as f64;
            }
        }
    }
    Ok(out)
}

/// Per-row replay order for the bit-exact simulator oracle.
///
/// `per_row[r]` lists the row's segment-group partials in read-out order;
/// each partial lists `(column, value)` products in the MAC lane's
/// accumulation order. Partials accumulate at 16-bit per-op precision and are
/// summed per row at wide precision, mirroring the host-side assembly.
#[derive(Debug, Clone, Default)]
pub struct AccumOrder {
    pub per_row: Vec<Vec<Vec<(u32, u16)>>>,
}

pub fn reference_mv_ordered(order: &AccumOrder, m: &SparseMatrix, v: &Vector) -> Result<Vec<f64>> {
    if v.len() != m.cols {
        return Err(Error::dim(format!(
            "vector length {} != matrix cols {}",
            v.len(),
            m.cols
        )));
    }
    if order.per_row.len() != m.rows {
        return Err(Error::invalid(format!(
            "order describes {} rows, matrix has {}",
            order.per_row.len(),
            m.rows
        )));
    }
    // Every nonzero must be covered exactly once. Zero-valued entries (the
    // dense baseline's gated cells) cover nothing and are allowed.
    for r in 0..m.rows {
        let mut seen: Vec<(u32, u16)> = order.per_row[r]
            .iter()
            .flatten()
            .filter(|(_, val)| !is_zero_pattern(*val))
            .copied()
            .collect();
        seen.sort_unstable();
        let mut expect: Vec<(u32, u16)> = m.row(r).collect();
        expect.sort_unstable();
        if seen != expect {
            return Err(Error::invalid(format!(
                "order for row {r} does not cover the row's nonzeros exactly once"
            )));
        }
    }

    let fmt = m.format;
    let mut out = vec![0.0f64; m.rows];
    for (r, groups) in order.per_row.iter().enumerate() {
        let mut row_sum = 0.0f64;
        for group in groups {
            let mut acc: u16 = 0;
            for &(c, val) in group {
                if is_zero_pattern(val) {
                    continue; // gated: no multiply, no accumulate
                }
                let p = fmt.mul(val, v.get_padded(c as usize));
                acc = fmt.add(acc, p);
            }
            row_sum += fmt.decode(acc) as f64;
        }
        out[r] = row_sum;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 5] = b"ESPM1";

impl SparseMatrix {
    /// Little-endian binary format: magic "ESPM1", rows/cols/nnz as u64,
    /// row_starts (u64 each), col_indices (u32 each), raw 16-bit values.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        w.write_all(&(self.nnz() as u64).to_le_bytes())?;
        for &s in &self.row_starts {
            w.write_all(&(s as u64).to_le_bytes())?;
        }
        for &c in &self.col_indices {
            w.write_all(&c.to_le_bytes())?;
        }
        for &v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(r: &mut R, format: ElemFormat) -> Result<Self> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic, not an ESPM1 matrix".into()));
        }
        let rows = read_u64(r)? as usize;
        let cols = read_u64(r)? as usize;
        let nnz = read_u64(r)? as usize;
        let mut row_starts = Vec::with_capacity(rows + 1);
        for _ in 0..=rows {
            row_starts.push(read_u64(r)? as usize);
        }
        let mut col_indices = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            col_indices.push(u32::from_le_bytes(b));
        }
        let mut values = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            let mut b = [0u8; 2];
            r.read_exact(&mut b)?;
            values.push(u16::from_le_bytes(b));
        }
        let m = SparseMatrix {
            rows,
            cols,
            format,
            row_starts,
            col_indices,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_binary(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, format: ElemFormat) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        Self::read_binary(&mut r, format)
    }

    /// MatrixMarket coordinate format, 1-based indices, for interchange.
    pub fn write_matrix_market<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.rows, self.cols, self.nnz())?;
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                // f32 Display round-trips, so the 16-bit pattern survives.
                writeln!(w, "{} {} {}", r + 1, c + 1, self.format.decode(v))?;
            }
        }
        Ok(())
    }

    pub fn read_matrix_market<R: Read>(r: R, format: ElemFormat) -> Result<Self> {
        let reader = BufReader::new(r);
        let mut lines = reader.lines().enumerate();

        let header = lines
            .next()
            .ok_or_else(|| Error::parse(1, "", "empty file"))?
            .1?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.first() != Some(&"%%MatrixMarket")
            || h.get(1) != Some(&"matrix")
            || h.get(2) != Some(&"coordinate")
        {
            return Err(Error::parse(1, header.clone(), "expected MatrixMarket coordinate header"));
        }

        let mut dims: Option<(usize, usize, usize)> = None;
        let mut triples: Vec<(usize, u32, u16)> = Vec::new();
        for (idx, line) in lines {
            let line = line?;
            let lineno = idx + 1;
            let t = line.trim();
            if t.is_empty() || t.starts_with('%') {
                continue;
            }
            let toks: Vec<&str> = t.split_whitespace().collect();
            if dims.is_none() {
                if toks.len() != 3 {
                    return Err(Error::parse(lineno, t, "expected `rows cols nnz`"));
                }
                let p = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| Error::parse(lineno, s, "expected integer"))
                };
                dims = Some((p(toks[0])?, p(toks[1])?, p(toks[2])?));
                continue;
            }
            if toks.len() != 3 {
                return Err(Error::parse(lineno, t, "expected `row col value`"));
            }
            let row: usize = toks[0]
                .parse()
                .map_err(|_| Error::parse(lineno, toks[0], "expected row index"))?;
            let col: u32 = toks[1]
                .parse()
                .map_err(|_| Error::parse(lineno, toks[1], "expected column index"))?;
            let val: f32 = toks[2]
                .parse()
                .map_err(|_| Error::parse(lineno, toks[2], "expected value"))?;
            if row == 0 || col == 0 {
                return Err(Error::parse(lineno, t, "MatrixMarket indices are 1-based"));
            }
            triples.push((row - 1, col - 1, format.encode_f32(val)));
        }
        let (rows, cols, nnz) =
            dims.ok_or_else(|| Error::parse(0, "", "missing size line"))?;
        if triples.len() != nnz {
            return Err(Error::Format(format!(
                "size line promises {nnz} entries, found {}",
                triples.len()
            )));
        }
        triples.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_starts = vec![0usize; rows + 1];
        let mut col_indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for &(r, c, v) in &triples {
            row_starts[r + 1] += 1;
            col_indices.push(c);
            values.push(v);
        }
        for i in 0..rows {
            row_starts[i + 1] += row_starts[i];
        }
        let m = SparseMatrix {
            rows,
            cols,
            format,
            row_starts,
            col_indices,
            values,
        };
        m.validate()?;
        Ok(m)
    }
}

impl Vector {
    /// Binary format: len as u64 then raw little-endian 16-bit values.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for &v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(r: &mut R, format: ElemFormat) -> Result<Self> {
        let len = read_u64(r)? as usize;
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            let mut b = [0u8; 2];
            r.read_exact(&mut b)?;
            values.push(u16::from_le_bytes(b));
        }
        Ok(Vector { format, values })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_binary(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, format: ElemFormat) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        Self::read_binary(&mut r, format)
    }
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fmt() -> ElemFormat {
        ElemFormat::Bf16
    }

    fn sparse_from_triples(
        rows: usize,
        cols: usize,
        triples: &[(usize, u32, f32)],
    ) -> SparseMatrix {
        let format = fmt();
        let mut sorted = triples.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_starts = vec![0usize; rows + 1];
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        for &(r, c, v) in &sorted {
            row_starts[r + 1] += 1;
            col_indices.push(c);
            values.push(format.encode_f32(v));
        }
        for i in 0..rows {
            row_starts[i + 1] += row_starts[i];
        }
        SparseMatrix {
            rows,
            cols,
            format,
            row_starts,
            col_indices,
            values,
        }
    }

    #[test]
    fn generate_single_cell_in_range() {
        let m = generate_dense(1, 1, 7, Distribution::Uniform { lo: -1.0, hi: 1.0 }, fmt())
            .unwrap();
        let v = fmt().decode(m.values[0]);
        assert!(v > -1.0 && v < 1.0 && v != 0.0);
        let again =
            generate_dense(1, 1, 7, Distribution::Uniform { lo: -1.0, hi: 1.0 }, fmt()).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn generate_size_and_determinism() {
        let d = Distribution::Normal { mu: 0.0, sigma: 1.0 };
        let a = generate_dense(64, 32, 1, d, fmt()).unwrap();
        assert_eq!(a.values.len(), 64 * 32);
        let b = generate_dense(64, 32, 1, d, fmt()).unwrap();
        assert_eq!(a, b);
        let c = generate_dense(64, 32, 2, d, fmt()).unwrap();
        assert_ne!(a, c);
        assert!(a.values.iter().all(|&v| !is_zero_pattern(v)));
    }

    #[test]
    fn generate_rejects_bad_distribution() {
        assert!(generate_dense(2, 2, 0, Distribution::Uniform { lo: 1.0, hi: 1.0 }, fmt())
            .is_err());
        assert!(
            generate_dense(2, 2, 0, Distribution::Normal { mu: 0.0, sigma: 0.0 }, fmt()).is_err()
        );
    }

    #[test]
    fn prune_two_smallest() {
        let format = fmt();
        let m = DenseMatrix {
            rows: 2,
            cols: 2,
            format,
            values: vec![
                format.encode_f32(1.0),
                format.encode_f32(-0.1),
                format.encode_f32(0.05),
                format.encode_f32(2.0),
            ],
        };
        let s = prune_magnitude(&m, 0.5).unwrap();
        assert_eq!(s.nnz(), 2);
        let cells: Vec<(usize, u32, f32)> = (0..2)
            .flat_map(|r| s.row(r).map(move |(c, v)| (r, c, format.decode(v))))
            .collect();
        assert_eq!(cells, vec![(0, 0, 1.0), (1, 1, 2.0)]);
    }

    #[test]
    fn prune_zero_sparsity_keeps_all() {
        let m = generate_dense(5, 7, 3, Distribution::Uniform { lo: 0.5, hi: 1.5 }, fmt())
            .unwrap();
        let s = prune_magnitude(&m, 0.0).unwrap();
        assert_eq!(s.nnz(), 35);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn prune_tie_break_row_major() {
        let format = fmt();
        let one = format.encode_f32(1.0);
        let m = DenseMatrix {
            rows: 1,
            cols: 4,
            format,
            values: vec![one, one, one, one],
        };
        let s = prune_magnitude(&m, 0.5).unwrap();
        let cols: Vec<u32> = s.row(0).map(|(c, _)| c).collect();
        assert_eq!(cols, vec![2, 3]); // earliest positions removed first
    }

    #[test]
    fn reference_mv_identity() {
        let triples: Vec<(usize, u32, f32)> = (0..8).map(|i| (i, i as u32, 1.0)).collect();
        let m = sparse_from_triples(8, 8, &triples);
        let v = generate_vector(8, 9, Distribution::Uniform { lo: 0.5, hi: 1.5 }, fmt()).unwrap();
        let out = reference_mv(&m, &v, MvPrecision::Wide).unwrap();
        for i in 0..8 {
            assert_eq!(out[i], fmt().decode(v.values[i]) as f64);
        }
    }

    #[test]
    fn reference_mv_empty_matrix() {
        let m = sparse_from_triples(4, 4, &[]);
        let v = generate_vector(4, 0, Distribution::Uniform { lo: 0.5, hi: 1.5 }, fmt()).unwrap();
        assert_eq!(reference_mv(&m, &v, MvPrecision::Wide).unwrap(), vec![0.0; 4]);
        assert_eq!(
            reference_mv(&m, &v, MvPrecision::Element16).unwrap(),
            vec![0.0; 4]
        );
    }

    #[test]
    fn reference_mv_matches_dense_oracle() {
        // random 8x8 at 50% sparsity against a brute-force double multiply
        let format = fmt();
        let d = generate_dense(8, 8, 42, Distribution::Uniform { lo: -1.0, hi: 1.0 }, format)
            .unwrap();
        let m = prune_magnitude(&d, 0.5).unwrap();
        let v = generate_vector(8, 43, Distribution::Uniform { lo: -1.0, hi: 1.0 }, format)
            .unwrap();
        let got = reference_mv(&m, &v, MvPrecision::Wide).unwrap();

        let dense = m.to_dense();
        for r in 0..8 {
            let mut want = 0.0f64;
            for c in 0..8 {
                want += format.decode(dense.get(r, c)) as f64
                    * format.decode(v.values[c]) as f64;
            }
            assert!((got[r] - want).abs() < 1e-12, "row {r}: {} vs {want}", got[r]);
        }
    }

    #[test]
    fn ordered_single_lane_matches_element16() {
        let format = fmt();
        let d = generate_dense(4, 16, 5, Distribution::Uniform { lo: -1.0, hi: 1.0 }, format)
            .unwrap();
        let m = prune_magnitude(&d, 0.4).unwrap();
        let v = generate_vector(16, 6, Distribution::Uniform { lo: -1.0, hi: 1.0 }, format)
            .unwrap();
        // one group per row, ascending column order
        let order = AccumOrder {
            per_row: (0..4).map(|r| vec![m.row(r).collect()]).collect(),
        };
        let a = reference_mv_ordered(&order, &m, &v).unwrap();
        let b = reference_mv(&m, &v, MvPrecision::Element16).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ordered_permutation_of_equal_values() {
        let format = fmt();
        let m = sparse_from_triples(1, 4, &[(0, 0, 0.75), (0, 1, 0.75), (0, 2, 0.75), (0, 3, 0.75)]);
        let one = format.encode_f32(1.0);
        let v = Vector { format, values: vec![one; 4] };
        let fwd = AccumOrder { per_row: vec![vec![m.row(0).collect()]] };
        let mut rev_cells: Vec<(u32, u16)> = m.row(0).collect();
        rev_cells.reverse();
        let rev = AccumOrder { per_row: vec![vec![rev_cells]] };
        assert_eq!(
            reference_mv_ordered(&fwd, &m, &v).unwrap(),
            reference_mv_ordered(&rev, &m, &v).unwrap()
        );
    }

    #[test]
    fn ordered_matches_scripted_replay() {
        // 16x16 random replay: split each row into two groups and replay by hand.
        let format = fmt();
        let d = generate_dense(16, 16, 11, Distribution::Uniform { lo: -2.0, hi: 2.0 }, format)
            .unwrap();
        let m = prune_magnitude(&d, 0.5).unwrap();
        let v = generate_vector(16, 12, Distribution::Uniform { lo: -2.0, hi: 2.0 }, format)
            .unwrap();
        let order = AccumOrder {
            per_row: (0..16)
                .map(|r| {
                    let cells: Vec<(u32, u16)> = m.row(r).collect();
                    let half = cells.len() / 2;
                    vec![cells[..half].to_vec(), cells[half..].to_vec()]
                })
                .collect(),
        };
        let got = reference_mv_ordered(&order, &m, &v).unwrap();
        for r in 0..16 {
            let mut expected = 0.0f64;
            for part in &order.per_row[r] {
                let mut acc: u16 = 0;
                for &(c, val) in part {
                    acc = format.add(acc, format.mul(val, v.values[c as usize]));
                }
                expected += format.decode(acc) as f64;
            }
            assert_eq!(got[r], expected);
        }
    }

    #[test]
    fn ordered_rejects_missing_or_duplicate() {
        let m = sparse_from_triples(1, 4, &[(0, 0, 1.0), (0, 2, 2.0)]);
        let v = Vector { format: fmt(), values: vec![fmt().encode_f32(1.0); 4] };
        let missing = AccumOrder { per_row: vec![vec![vec![(0, m.values[0])]]] };
        assert!(reference_mv_ordered(&missing, &m, &v).is_err());
        let dup = AccumOrder {
            per_row: vec![vec![vec![
                (0, m.values[0]),
                (2, m.values[1]),
                (2, m.values[1]),
            ]]],
        };
        assert!(reference_mv_ordered(&dup, &m, &v).is_err());
    }

    #[test]
    fn binary_round_trip_is_byte_identical() {
        let d = generate_dense(13, 29, 21, Distribution::Normal { mu: 0.0, sigma: 2.0 }, fmt())
            .unwrap();
        let m = prune_magnitude(&d, 0.7).unwrap();
        let mut buf = Vec::new();
        m.write_binary(&mut buf).unwrap();
        let m2 = SparseMatrix::read_binary(&mut buf.as_slice(), fmt()).unwrap();
        assert_eq!(m, m2);
        let mut buf2 = Vec::new();
        m2.write_binary(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn matrix_market_round_trip() {
        let d = generate_dense(6, 9, 33, Distribution::Uniform { lo: -3.0, hi: 3.0 }, fmt())
            .unwrap();
        let m = prune_magnitude(&d, 0.6).unwrap();
        let mut text = Vec::new();
        m.write_matrix_market(&mut text).unwrap();
        let m2 = SparseMatrix::read_matrix_market(text.as_slice(), fmt()).unwrap();
        assert_eq!(m, m2);
    }

    #[test]
    fn digest_changes_with_content() {
        let d = generate_dense(4, 4, 1, Distribution::Uniform { lo: 0.5, hi: 1.5 }, fmt())
            .unwrap();
        let a = prune_magnitude(&d, 0.25).unwrap();
        let b = prune_magnitude(&d, 0.5).unwrap();
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), a.clone().digest());
    }
}

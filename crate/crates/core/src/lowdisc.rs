//! Digital (t,s)-sequences in base 2.
//!
//! A sequence is defined by one generating matrix per coordinate. The
//! `n`-th point is obtained by multiplying each matrix with the binary
//! digit vector of `n` over F2 and reading the result as a binary
//! fraction. Matrices are stored column-wise as `w`-bit words, row 1 in
//! the most significant position, which is the usual direction-number
//! layout for Sobol generators.

use std::io::BufRead;

use crate::error::{Error, Result};

/// Default number of digits. Every point is then an exact `f64`.
pub const DEFAULT_PRECISION: u32 = 52;

const MAX_PRECISION: u32 = 63;

static EMBEDDED_TABLE: &str = include_str!("../data/direction_numbers.txt");

/// Number of dimensions covered by the embedded direction-number table.
pub const EMBEDDED_DIMENSIONS: usize = 16;

/// A non-singular upper-triangular generating matrix over F2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratingMatrix {
    columns: Vec<u64>,
    precision: u32,
}

impl GeneratingMatrix {
    /// Builds a matrix from its column words, checking the triangular shape.
    pub fn from_columns(columns: Vec<u64>, precision: u32) -> Result<Self> {
        check_precision(precision)?;
        if columns.len() != precision as usize {
            return Err(Error::Precondition(format!(
                "expected {precision} columns, got {}",
                columns.len()
            )));
        }
        for (k, &col) in columns.iter().enumerate() {
            // Column k (0-based) must have its diagonal bit set and nothing below.
            let shift = precision - 1 - k as u32;
            let diag = 1u64 << shift;
            if col & diag == 0 || col & (diag - 1) != 0 || col >> precision != 0 {
                return Err(Error::Precondition(format!(
                    "column {} is not upper triangular with unit diagonal",
                    k + 1
                )));
            }
        }
        Ok(Self { columns, precision })
    }

    /// The identity matrix, i.e. the van der Corput sequence.
    pub fn identity(precision: u32) -> Result<Self> {
        check_precision(precision)?;
        let columns = (0..precision).map(|k| 1u64 << (precision - 1 - k)).collect();
        Ok(Self { columns, precision })
    }

    /// Sobol matrix from a primitive polynomial and initial direction integers.
    ///
    /// `degree` is the polynomial degree, `coeffs` its inner coefficients
    /// packed as in the Joe-Kuo tables, `initial` the integers `m_1..m_degree`.
    pub fn sobol(degree: u32, coeffs: u64, initial: &[u64], precision: u32) -> Result<Self> {
        check_precision(precision)?;
        let s = degree as usize;
        if s == 0 || initial.len() != s {
            return Err(Error::Precondition(format!(
                "degree {degree} needs {degree} initial direction integers, got {}",
                initial.len()
            )));
        }
        let w = precision as usize;
        let mut v = vec![0u64; w];
        for k in 0..s.min(w) {
            v[k] = initial[k] << (w - 1 - k);
        }
        for k in s..w {
            let mut next = v[k - s] ^ (v[k - s] >> s);
            for i in 1..s {
                if (coeffs >> (s - 1 - i)) & 1 == 1 {
                    next ^= v[k - i];
                }
            }
            v[k] = next;
        }
        Self::from_columns(v, precision)
    }

    pub fn precision(&self) -> u32 {
        self.precision
    }

    pub fn columns(&self) -> &[u64] {
        &self.columns
    }

    /// Matrix-vector product with the digits of `n`, as a `w`-bit word.
    fn apply(&self, mut n: u64) -> u64 {
        let mut acc = 0u64;
        let mut k = 0;
        while n != 0 {
            if n & 1 == 1 {
                acc ^= self.columns[k];
            }
            n >>= 1;
            k += 1;
        }
        acc
    }
}

fn check_precision(precision: u32) -> Result<()> {
    if precision == 0 || precision > MAX_PRECISION {
        return Err(Error::Parameter(format!(
            "precision must be in 1..={MAX_PRECISION}, got {precision}"
        )));
    }
    Ok(())
}

/// A point of the unit cube `[0,1)^s`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitPoint {
    pub coords: Vec<f64>,
}

impl UnitPoint {
    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// A digital sequence over F2 with one generating matrix per dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigitalSequence {
    matrices: Vec<GeneratingMatrix>,
    precision: u32,
    // prefix[j][c] = C_j * (2^(c+1) - 1), the update for an increment that
    // flips the lowest c+1 digits.
    prefix: Vec<Vec<u64>>,
}

fn prefix_table(m: &GeneratingMatrix) -> Vec<u64> {
    let mut acc = 0u64;
    m.columns
        .iter()
        .map(|&col| {
            acc ^= col;
            acc
        })
        .collect()
}

impl DigitalSequence {
    pub fn new(matrices: Vec<GeneratingMatrix>) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::Precondition("a sequence needs at least one dimension".into()))?;
        let precision = first.precision;
        if matrices.iter().any(|m| m.precision != precision) {
            return Err(Error::Precondition(
                "all generating matrices must share one precision".into(),
            ));
        }
        let prefix = matrices.iter().map(prefix_table).collect();
        Ok(Self {
            matrices,
            precision,
            prefix,
        })
    }

    /// The first `dim` dimensions of the embedded Sobol table.
    pub fn sobol(dim: usize) -> Result<Self> {
        Self::sobol_with_precision(dim, DEFAULT_PRECISION)
    }

    pub fn sobol_with_precision(dim: usize, precision: u32) -> Result<Self> {
        if dim == 0 || dim > EMBEDDED_DIMENSIONS {
            return Err(Error::Parameter(format!(
                "embedded table covers 1..={EMBEDDED_DIMENSIONS} dimensions, asked for {dim}"
            )));
        }
        let full = load_direction_numbers_with_precision(EMBEDDED_TABLE.as_bytes(), precision)?;
        full.truncate(dim)
    }

    /// Van der Corput sequence (identity matrix) in one dimension.
    pub fn van_der_corput(precision: u32) -> Result<Self> {
        Self::new(vec![GeneratingMatrix::identity(precision)?])
    }

    /// Keeps only the first `dim` coordinates.
    pub fn truncate(mut self, dim: usize) -> Result<Self> {
        if dim == 0 || dim > self.matrices.len() {
            return Err(Error::Parameter(format!(
                "cannot take {dim} of {} dimensions",
                self.matrices.len()
            )));
        }
        self.matrices.truncate(dim);
        self.prefix.truncate(dim);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.matrices.len()
    }

    pub fn precision(&self) -> u32 {
        self.precision
    }

    pub fn matrices(&self) -> &[GeneratingMatrix] {
        &self.matrices
    }

    /// One past the largest valid index.
    pub fn capacity(&self) -> u64 {
        1u64 << self.precision
    }

    fn scale(&self) -> f64 {
        (-(self.precision as f64)).exp2()
    }

    fn check_range(&self, start: u64, count: u64) -> Result<()> {
        let end = start.checked_add(count);
        match end {
            Some(end) if end <= self.capacity() => Ok(()),
            _ => Err(Error::IndexOverflow {
                index: start.saturating_add(count.saturating_sub(1)),
                precision: self.precision,
            }),
        }
    }

    /// The `n`-th point of the sequence.
    pub fn point_at(&self, n: u64) -> Result<UnitPoint> {
        let mut coords = vec![0.0; self.dim()];
        self.point_into(n, &mut coords)?;
        Ok(UnitPoint { coords })
    }

    /// Writes the `n`-th point into `out`, which must have length `dim()`.
    pub fn point_into(&self, n: u64, out: &mut [f64]) -> Result<()> {
        self.check_range(n, 1)?;
        let scale = self.scale();
        for (o, m) in out.iter_mut().zip(&self.matrices) {
            *o = m.apply(n) as f64 * scale;
        }
        Ok(())
    }

    /// Points `start..start+count` in index order.
    pub fn block(&self, start: u64, count: usize) -> Result<Vec<UnitPoint>> {
        if count == 0 {
            return Err(Error::Precondition("block needs a positive count".into()));
        }
        self.check_range(start, count as u64)?;
        let mut out = Vec::with_capacity(count);
        let mut iter = self.iter_from(start)?;
        for _ in 0..count {
            let mut coords = vec![0.0; self.dim()];
            iter.next_into(&mut coords);
            out.push(UnitPoint { coords });
        }
        Ok(out)
    }

    /// Incremental generator starting at index `start`.
    pub fn iter_from(&self, start: u64) -> Result<PointIter<'_>> {
        self.check_range(start, 1)?;
        let state = self.matrices.iter().map(|m| m.apply(start)).collect();
        Ok(PointIter {
            seq: self,
            state,
            next_index: start,
            scale: self.scale(),
        })
    }
}

/// Natural-order point generator using one XOR per coordinate and step.
#[derive(Debug, Clone)]
pub struct PointIter<'a> {
    seq: &'a DigitalSequence,
    state: Vec<u64>,
    next_index: u64,
    scale: f64,
}

impl PointIter<'_> {
    /// Index of the point the next call will produce.
    pub fn index(&self) -> u64 {
        self.next_index
    }

    /// Writes the next point into `out` and advances.
    ///
    /// Panics if the sequence capacity is exhausted.
    pub fn next_into(&mut self, out: &mut [f64]) {
        assert!(
            self.next_index < self.seq.capacity(),
            "digital sequence exhausted at index {}",
            self.next_index
        );
        for (o, &word) in out.iter_mut().zip(&self.state) {
            *o = word as f64 * self.scale;
        }
        let n = self.next_index + 1;
        self.next_index = n;
        if n < self.seq.capacity() {
            let c = n.trailing_zeros() as usize;
            for (word, prefix) in self.state.iter_mut().zip(&self.seq.prefix) {
                *word ^= prefix[c];
            }
        }
    }
}

/// Checks the (t,m,s)-net property of a point set by counting points in
/// every elementary dyadic box of volume `2^(t-m)`.
pub fn is_net(points: &[UnitPoint], m: u32, t: u32) -> Result<bool> {
    if t > m {
        return Err(Error::Precondition(format!("t = {t} exceeds m = {m}")));
    }
    if m >= 32 || points.len() as u64 != 1u64 << m {
        return Err(Error::Precondition(format!(
            "a net with m = {m} needs 2^{m} points, got {}",
            points.len()
        )));
    }
    let s = points.first().map(UnitPoint::dim).unwrap_or(0);
    if s == 0 || points.iter().any(|p| p.dim() != s) {
        return Err(Error::Precondition("points have inconsistent dimensions".into()));
    }
    if points
        .iter()
        .flat_map(|p| &p.coords)
        .any(|&x| !(0.0..1.0).contains(&x))
    {
        return Ok(false);
    }
    let q = (m - t) as usize;
    let per_box = 1usize << t;
    let mut counts = vec![0usize; 1 << q];
    let mut shape = vec![0usize; s];
    shape[s - 1] = q;
    loop {
        counts.iter_mut().for_each(|c| *c = 0);
        for p in points {
            let mut cell = 0usize;
            for (&x, &d) in p.coords.iter().zip(&shape) {
                let a = (x * (1u64 << d) as f64).floor() as usize;
                cell = (cell << d) | a;
            }
            counts[cell] += 1;
        }
        if counts.iter().any(|&c| c != per_box) {
            return Ok(false);
        }
        if !next_composition(&mut shape) {
            return Ok(true);
        }
    }
}

/// Advances `parts` to the next composition of the same total, walking
/// from `[0, .., 0, total]` to `[total, 0, .., 0]`. Returns false when done.
fn next_composition(parts: &mut [usize]) -> bool {
    let s = parts.len();
    let Some(j) = (1..s).rev().find(|&j| parts[j] > 0) else {
        return false;
    };
    let tail = parts[j] - 1;
    parts[j] = 0;
    parts[j - 1] += 1;
    parts[s - 1] = tail;
    true
}

/// Parses a direction-number table and builds the sequence it describes.
///
/// Lines have the form `d s a m_1 .. m_s`; `#` starts a comment. Dimension 1
/// is the identity and never appears in the table. Dimensions must follow
/// each other without gaps, starting at 2.
pub fn load_direction_numbers<R: BufRead>(source: R) -> Result<DigitalSequence> {
    load_direction_numbers_with_precision(source, DEFAULT_PRECISION)
}

pub fn load_direction_numbers_with_precision<R: BufRead>(
    source: R,
    precision: u32,
) -> Result<DigitalSequence> {
    let mut matrices = vec![GeneratingMatrix::identity(precision)?];
    for (lineno, line) in source.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: lineno, message };
        let fields = body
            .split_whitespace()
            .map(|tok| {
                tok.parse::<u64>()
                    .map_err(|_| parse_err(format!("`{tok}` is not a non-negative integer")))
            })
            .collect::<Result<Vec<_>>>()?;
        if fields.len() < 4 {
            return Err(parse_err(format!(
                "expected `d s a m_1 .. m_s`, found {} fields",
                fields.len()
            )));
        }
        let (d, s, a) = (fields[0], fields[1], fields[2]);
        let m = &fields[3..];
        let expected = matrices.len() as u64 + 1;
        if d != expected {
            return Err(parse_err(format!("expected dimension {expected}, found {d}")));
        }
        if s == 0 || s > 31 {
            return Err(parse_err(format!("polynomial degree {s} out of range")));
        }
        if m.len() as u64 != s {
            return Err(parse_err(format!(
                "degree {s} needs {s} direction integers, found {}",
                m.len()
            )));
        }
        if a >> (s - 1) != 0 {
            return Err(parse_err(format!("coefficient {a} has more than {} bits", s - 1)));
        }
        for (k, &mk) in m.iter().enumerate() {
            if mk % 2 == 0 || mk >> (k + 1) != 0 {
                return Err(parse_err(format!(
                    "m_{} = {mk} must be odd and below 2^{}",
                    k + 1,
                    k + 1
                )));
            }
        }
        if !is_primitive(s as u32, a) {
            return Err(parse_err(format!(
                "polynomial of degree {s} with coefficients {a} is not primitive"
            )));
        }
        matrices.push(
            GeneratingMatrix::sobol(s as u32, a, m, precision)
                .map_err(|e| parse_err(e.to_string()))?,
        );
    }
    DigitalSequence::new(matrices)
}

/// Primitivity over F2 of `x^s + a_1 x^(s-1) + .. + a_(s-1) x + 1`.
fn is_primitive(degree: u32, coeffs: u64) -> bool {
    let s = degree;
    let poly: u64 = (1u64 << s) | (coeffs << 1) | 1;
    let order = (1u64 << s) - 1;
    let mulmod = |a: u64, b: u64| -> u64 {
        let mut acc = 0u64;
        let mut a = a;
        let mut b = b;
        while b != 0 {
            if b & 1 == 1 {
                acc ^= a;
            }
            b >>= 1;
            a <<= 1;
            if a >> s & 1 == 1 {
                a ^= poly;
            }
        }
        acc
    };
    let powmod = |mut e: u64| -> u64 {
        let mut base = if s == 1 { 1 } else { 2u64 };
        let mut acc = 1u64;
        while e != 0 {
            if e & 1 == 1 {
                acc = mulmod(acc, base);
            }
            base = mulmod(base, base);
            e >>= 1;
        }
        acc
    };
    if powmod(order) != 1 {
        return false;
    }
    let mut rest = order;
    let mut p = 2u64;
    let mut factors = Vec::new();
    while p * p <= rest {
        if rest % p == 0 {
            factors.push(p);
            while rest % p == 0 {
                rest /= p;
            }
        }
        p += 1;
    }
    if rest > 1 {
        factors.push(rest);
    }
    factors.iter().all(|&q| powmod(order / q) != 1)
}

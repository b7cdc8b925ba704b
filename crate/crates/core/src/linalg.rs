//! Exact sparse linear algebra over the rationals.
//!
//! Rank computations work on primitive integer rows with fraction-free
//! elimination. Entries start as `i64` and a row is promoted to `BigInt`
//! as soon as an intermediate value leaves the machine range.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

/// Sparse row: strictly increasing column indices, no zero entries.
pub type SparseRow = Vec<(usize, BigRational)>;

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("column index {col} out of range for {ncols} columns")]
    ColumnOutOfRange { col: usize, ncols: usize },
    #[error("malformed matrix text at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRationalMatrix {
    ncols: usize,
    rows: Vec<SparseRow>,
}

impl SparseRationalMatrix {
    pub fn new(ncols: usize) -> Self {
        SparseRationalMatrix {
            ncols,
            rows: Vec::new(),
        }
    }

    pub fn from_rows(ncols: usize, rows: Vec<SparseRow>) -> Result<Self, MatrixError> {
        let mut m = Self::new(ncols);
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    pub fn from_dense(rows: &[Vec<BigRational>]) -> Self {
        let ncols = rows.first().map_or(0, |r| r.len());
        let rows = rows
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, x)| !x.is_zero())
                    .map(|(c, x)| (c, x.clone()))
                    .collect()
            })
            .collect();
        SparseRationalMatrix { ncols, rows }
    }

    /// Appends a row given as (column, value) pairs in any order; duplicate
    /// columns are summed.
    pub fn push_row(&mut self, mut row: SparseRow) -> Result<(), MatrixError> {
        row.sort_by_key(|e| e.0);
        let mut out: SparseRow = Vec::with_capacity(row.len());
        for (c, x) in row {
            if c >= self.ncols {
                return Err(MatrixError::ColumnOutOfRange {
                    col: c,
                    ncols: self.ncols,
                });
            }
            match out.last_mut() {
                Some(last) if last.0 == c => last.1 += x,
                _ => out.push((c, x)),
            }
        }
        out.retain(|e| !e.1.is_zero());
        self.rows.push(out);
        Ok(())
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<BigRational>> {
        self.rows
            .iter()
            .map(|r| {
                let mut d = vec![BigRational::zero(); self.ncols];
                for (c, x) in r {
                    d[*c] = x.clone();
                }
                d
            })
            .collect()
    }

    pub fn rank(&self) -> usize {
        let mut ech = RowEchelon::new();
        let mut order: Vec<usize> = (0..self.rows.len()).collect();
        order.sort_by_key(|&i| self.rows[i].len());
        for i in order {
            ech.insert_rational(&self.rows[i]);
        }
        ech.rank()
    }

    /// Whether `v` lies in the span of the rows.
    pub fn in_row_span(&self, v: &[(usize, BigRational)]) -> bool {
        let mut ech = RowEchelon::new();
        for r in &self.rows {
            ech.insert_rational(r);
        }
        ech.reduces_to_zero_rational(v)
    }

    /// Basis of the right kernel `{x : M x = 0}` as dense vectors.
    pub fn kernel_basis(&self) -> Vec<Vec<BigRational>> {
        let (rref, pivots) = dense_rref(self.to_dense(), self.ncols);
        let is_pivot: Vec<Option<usize>> = {
            let mut p = vec![None; self.ncols];
            for (i, &c) in pivots.iter().enumerate() {
                p[c] = Some(i);
            }
            p
        };
        let mut basis = Vec::new();
        for free in 0..self.ncols {
            if is_pivot[free].is_some() {
                continue;
            }
            let mut v = vec![BigRational::zero(); self.ncols];
            v[free] = BigRational::one();
            for (i, &pc) in pivots.iter().enumerate() {
                v[pc] = -rref[i][free].clone();
            }
            basis.push(v);
        }
        basis
    }

    /// Text form: a `rows cols` header followed by one `row col value`
    /// line per nonzero entry, 1-based, values as `p` or `p/q`.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.rows.len(), self.ncols);
        for (i, r) in self.rows.iter().enumerate() {
            for (c, x) in r {
                let _ = writeln!(s, "{} {} {}", i + 1, c + 1, x);
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, MatrixError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (ln, header) = lines.next().ok_or(MatrixError::Parse {
            line: 0,
            reason: "missing header".into(),
        })?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| MatrixError::Parse {
                line: ln,
                reason: e.to_string(),
            })?;
        if dims.len() != 2 {
            return Err(MatrixError::Parse {
                line: ln,
                reason: "header must be `rows cols`".into(),
            });
        }
        let mut rows: Vec<SparseRow> = vec![Vec::new(); dims[0]];
        for (ln, line) in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 3 {
                return Err(MatrixError::Parse {
                    line: ln,
                    reason: "expected `row col value`".into(),
                });
            }
            let bad = |reason: String| MatrixError::Parse { line: ln, reason };
            let r: usize = toks[0]
                .parse()
                .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
            let c: usize = toks[1]
                .parse()
                .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
            if r == 0 || r > dims[0] || c == 0 || c > dims[1] {
                return Err(bad(format!(
                    "index ({r},{c}) outside {}x{}",
                    dims[0], dims[1]
                )));
            }
            let x = parse_rational(toks[2]).ok_or_else(|| bad(format!("bad value {}", toks[2])))?;
            rows[r - 1].push((c - 1, x));
        }
        Self::from_rows(dims[1], rows)
    }
}

pub fn parse_rational(s: &str) -> Option<BigRational> {
    match s.split_once('/') {
        Some((p, q)) => {
            let q: BigInt = q.parse().ok()?;
            if q.is_zero() {
                return None;
            }
            Some(BigRational::new(p.parse().ok()?, q))
        }
        None => Some(BigRational::from_integer(s.parse().ok()?)),
    }
}

/// Reduced row echelon form over the rationals; returns the nonzero rows and
/// their pivot columns.
fn dense_rref(mut m: Vec<Vec<BigRational>>, ncols: usize) -> (Vec<Vec<BigRational>>, Vec<usize>) {
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..ncols {
        let Some(p) = (r..m.len()).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(r, p);
        let inv = m[r][c].recip();
        for x in m[r].iter_mut() {
            *x *= &inv;
        }
        let pivot = m[r].clone();
        for (i, row) in m.iter_mut().enumerate() {
            if i != r && !row[c].is_zero() {
                let f = row[c].clone();
                for (x, p) in row.iter_mut().zip(&pivot) {
                    *x -= p * &f;
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    m.truncate(r);
    (m, pivots)
}

/// Integer row, either machine-sized or arbitrary precision.
#[derive(Clone, Debug)]
enum IntRow {
    Small(Vec<(u32, i64)>),
    Big(Vec<(u32, BigInt)>),
}

impl IntRow {
    fn len(&self) -> usize {
        match self {
            IntRow::Small(v) => v.len(),
            IntRow::Big(v) => v.len(),
        }
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn cols(&self) -> Vec<u32> {
        match self {
            IntRow::Small(v) => v.iter().map(|e| e.0).collect(),
            IntRow::Big(v) => v.iter().map(|e| e.0).collect(),
        }
    }

    fn to_big(&self) -> Vec<(u32, BigInt)> {
        match self {
            IntRow::Small(v) => v.iter().map(|&(c, x)| (c, BigInt::from(x))).collect(),
            IntRow::Big(v) => v.clone(),
        }
    }

    fn get_big(&self, col: u32) -> Option<BigInt> {
        match self {
            IntRow::Small(v) => v
                .binary_search_by_key(&col, |e| e.0)
                .ok()
                .map(|i| BigInt::from(v[i].1)),
            IntRow::Big(v) => v
                .binary_search_by_key(&col, |e| e.0)
                .ok()
                .map(|i| v[i].1.clone()),
        }
    }

    fn from_big(v: Vec<(u32, BigInt)>) -> IntRow {
        let mut small = Vec::with_capacity(v.len());
        for (c, x) in &v {
            match x.to_i64() {
                Some(y) if y.unsigned_abs() < (1u64 << 62) => small.push((*c, y)),
                _ => return IntRow::Big(v),
            }
        }
        IntRow::Small(small)
    }

    /// Divide by the gcd of the entries and make the entry at `lead`
    /// (or the first entry) positive.
    fn make_primitive(&mut self, lead: Option<u32>) {
        match self {
            IntRow::Small(v) => {
                let mut g = 0i64;
                for e in v.iter() {
                    g = g.gcd(&e.1);
                    if g == 1 {
                        break;
                    }
                }
                let sign_entry = match lead {
                    Some(c) => v.iter().find(|e| e.0 == c).map(|e| e.1),
                    None => v.first().map(|e| e.1),
                };
                let s = if sign_entry.unwrap_or(1) < 0 { -g } else { g };
                if s != 1 && s != 0 {
                    for e in v.iter_mut() {
                        e.1 /= s;
                    }
                }
            }
            IntRow::Big(v) => {
                let mut g = BigInt::zero();
                for e in v.iter() {
                    g = g.gcd(&e.1);
                    if g.is_one() {
                        break;
                    }
                }
                let sign_entry = match lead {
                    Some(c) => v.iter().find(|e| e.0 == c).map(|e| e.1.sign()),
                    None => v.first().map(|e| e.1.sign()),
                };
                if sign_entry == Some(num_bigint::Sign::Minus) {
                    g = -g;
                }
                if !g.is_one() && !g.is_zero() {
                    for e in v.iter_mut() {
                        e.1 /= &g;
                    }
                }
                let owned = std::mem::take(v);
                *self = IntRow::from_big(owned);
            }
        }
    }
}

/// Eliminates column `col` of `work` using `pivot`: work <- a*work - b*pivot.
fn eliminate(work: &IntRow, pivot: &IntRow, col: u32) -> IntRow {
    if let (IntRow::Small(w), IntRow::Small(p)) = (work, pivot) {
        if let Some(r) = eliminate_small(w, p, col) {
            return IntRow::Small(r);
        }
    }
    IntRow::from_big(eliminate_big(&work.to_big(), &pivot.to_big(), col))
}

fn eliminate_small(w: &[(u32, i64)], p: &[(u32, i64)], col: u32) -> Option<Vec<(u32, i64)>> {
    let wc = w[w.binary_search_by_key(&col, |e| e.0).ok()?].1;
    let pc = p[p.binary_search_by_key(&col, |e| e.0).ok()?].1;
    let g = wc.gcd(&pc);
    let a = (pc / g) as i128;
    let b = (wc / g) as i128;
    let mut out = Vec::with_capacity(w.len() + p.len());
    let (mut i, mut j) = (0, 0);
    let lim = 1i128 << 62;
    let mut push = |c: u32, x: i128| -> bool {
        if x == 0 {
            return true;
        }
        if x.abs() >= lim {
            return false;
        }
        out.push((c, x as i64));
        true
    };
    while i < w.len() || j < p.len() {
        let ok = if j >= p.len() || (i < w.len() && w[i].0 < p[j].0) {
            i += 1;
            push(w[i - 1].0, a * w[i - 1].1 as i128)
        } else if i >= w.len() || p[j].0 < w[i].0 {
            j += 1;
            push(p[j - 1].0, -b * p[j - 1].1 as i128)
        } else {
            i += 1;
            j += 1;
            push(w[i - 1].0, a * w[i - 1].1 as i128 - b * p[j - 1].1 as i128)
        };
        if !ok {
            return None;
        }
    }
    Some(out)
}

fn eliminate_big(w: &[(u32, BigInt)], p: &[(u32, BigInt)], col: u32) -> Vec<(u32, BigInt)> {
    let wc = &w[w
        .binary_search_by_key(&col, |e| e.0)
        .expect("column present")]
    .1;
    let pc = &p[p
        .binary_search_by_key(&col, |e| e.0)
        .expect("column present")]
    .1;
    let g = wc.gcd(pc);
    let a = pc / &g;
    let b = wc / &g;
    let mut out = Vec::with_capacity(w.len() + p.len());
    let (mut i, mut j) = (0, 0);
    while i < w.len() || j < p.len() {
        let (c, x) = if j >= p.len() || (i < w.len() && w[i].0 < p[j].0) {
            i += 1;
            (w[i - 1].0, &a * &w[i - 1].1)
        } else if i >= w.len() || p[j].0 < w[i].0 {
            j += 1;
            (p[j - 1].0, -(&b * &p[j - 1].1))
        } else {
            i += 1;
            j += 1;
            (w[i - 1].0, &a * &w[i - 1].1 - &b * &p[j - 1].1)
        };
        if !x.is_zero() {
            out.push((c, x));
        }
    }
    out
}

fn rational_row_to_int(row: &[(usize, BigRational)]) -> IntRow {
    let mut l = BigInt::one();
    for (_, x) in row {
        l = l.lcm(x.denom());
    }
    let v: Vec<(u32, BigInt)> = row
        .iter()
        .filter(|e| !e.1.is_zero())
        .map(|(c, x)| (*c as u32, x.numer() * (&l / x.denom())))
        .collect();
    let mut r = IntRow::from_big(v);
    r.make_primitive(None);
    r
}

/// Incrementally built row echelon basis.
///
/// Each stored row is reduced against all rows stored before it, so a new
/// row is reduced by visiting pivots in insertion order.
#[derive(Clone, Debug, Default)]
pub struct RowEchelon {
    rows: Vec<IntRow>,
    pivot_col: Vec<u32>,
    pivot_of_col: HashMap<u32, usize>,
    col_count: HashMap<u32, u32>,
}

impl RowEchelon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    fn reduce(&self, mut work: IntRow) -> IntRow {
        let mut heap: BinaryHeap<Reverse<usize>> = BinaryHeap::new();
        for c in work.cols() {
            if let Some(&k) = self.pivot_of_col.get(&c) {
                heap.push(Reverse(k));
            }
        }
        let mut last = None;
        while let Some(Reverse(k)) = heap.pop() {
            if last == Some(k) {
                continue;
            }
            last = Some(k);
            let col = self.pivot_col[k];
            if work.get_big(col).is_none() {
                continue;
            }
            let pivot = &self.rows[k];
            work = eliminate(&work, pivot, col);
            for c in pivot.cols() {
                if let Some(&k2) = self.pivot_of_col.get(&c) {
                    if k2 > k {
                        heap.push(Reverse(k2));
                    }
                }
            }
            if work.is_empty() {
                break;
            }
            work.make_primitive(None);
        }
        work
    }

    /// Inserts an integer row; returns true when the rank grew.
    pub fn insert_integer(&mut self, row: &[(usize, i64)]) -> bool {
        let mut v: Vec<(u32, i64)> = row
            .iter()
            .filter(|e| e.1 != 0)
            .map(|&(c, x)| (c as u32, x))
            .collect();
        v.sort_by_key(|e| e.0);
        let r = if v.iter().all(|e| e.1.unsigned_abs() < (1 << 62)) {
            IntRow::Small(v)
        } else {
            IntRow::Big(v.into_iter().map(|(c, x)| (c, BigInt::from(x))).collect())
        };
        self.insert_row(r)
    }

    pub fn insert_rational(&mut self, row: &[(usize, BigRational)]) -> bool {
        self.insert_row(rational_row_to_int(row))
    }

    fn insert_row(&mut self, row: IntRow) -> bool {
        let mut work = self.reduce(row);
        if work.is_empty() {
            return false;
        }
        let col = self.choose_pivot(&work);
        work.make_primitive(Some(col));
        for c in work.cols() {
            *self.col_count.entry(c).or_insert(0) += 1;
        }
        self.pivot_of_col.insert(col, self.rows.len());
        self.pivot_col.push(col);
        self.rows.push(work);
        true
    }

    /// Prefers unit entries, then columns that few stored rows touch.
    fn choose_pivot(&self, row: &IntRow) -> u32 {
        let score = |c: u32, unit: bool| (!unit, self.col_count.get(&c).copied().unwrap_or(0), c);
        match row {
            IntRow::Small(v) => {
                v.iter()
                    .map(|&(c, x)| score(c, x.abs() == 1))
                    .min()
                    .unwrap()
                    .2
            }
            IntRow::Big(v) => {
                v.iter()
                    .map(|(c, x)| score(*c, x.abs().is_one()))
                    .min()
                    .unwrap()
                    .2
            }
        }
    }

    pub fn reduces_to_zero_rational(&self, row: &[(usize, BigRational)]) -> bool {
        self.reduce(rational_row_to_int(row)).is_empty()
    }

    pub fn reduces_to_zero_integer(&self, row: &[(usize, i64)]) -> bool {
        let mut v: Vec<(u32, BigInt)> = row
            .iter()
            .filter(|e| e.1 != 0)
            .map(|&(c, x)| (c as u32, BigInt::from(x)))
            .collect();
        v.sort_by_key(|e| e.0);
        self.reduce(IntRow::from_big(v)).is_empty()
    }
}

/// Rank of a list of rational rows.
pub fn rank_of_rows(rows: &[SparseRow]) -> usize {
    let mut ech = RowEchelon::new();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by_key(|&i| rows[i].len());
    for i in order {
        ech.insert_rational(&rows[i]);
    }
    ech.rank()
}

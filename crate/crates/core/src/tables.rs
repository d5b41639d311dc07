//! `(N, M)` tables: construction backends, lookup, the existence condition for
//! balanced tables, and the binary table file format.
//!
//! File layout (little-endian):
//!
//! | offset | size | field                                              |
//! |--------|------|----------------------------------------------------|
//! | 0      | 4    | magic `BTAB`                                       |
//! | 4      | 2    | format version (1)                                 |
//! | 6      | 1    | backend: 0 explicit-random, 1 canonical, 2 keyed   |
//! | 7      | 4    | `n_exp`, `m_exp`, `s_exp`, `d_exp` (one byte each) |
//! | 11     | 16   | seed (u64, zero padded) or key (u128)              |
//! | 27     | ...  | explicit backends only: `N*N` row-major cells,     |
//! |        |      | 1 byte each if `m_exp <= 8`, else 2 bytes (u16)    |

use std::hash::Hasher;
use std::io::{Read, Write};
use std::path::Path;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use siphasher::sip::SipHasher24;
use siphasher::sip128::{Hasher128, SipHasher24 as SipHasher128};

use crate::bits::BitString;
use crate::combin::Combinations;
use crate::error::{Error, Result};
use crate::params::{Rational, TableParams};
use crate::verify::{self, RectMode, VerifyOptions};

pub const MAGIC: &[u8; 4] = b"BTAB";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 27;
const KEYED_DOMAIN: &[u8] = b"BTAB-keyed-v1";

/// Size limits for materialized tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExplicitCap {
    /// Largest row/column exponent stored explicitly.
    pub max_n_exp: u32,
    /// Largest color exponent stored explicitly (cells are at most 16 bits).
    pub max_m_exp: u32,
    /// Largest `N^2 * m_exp` (bits of table description) for canonical search.
    pub canonical_bits: u64,
}

impl Default for ExplicitCap {
    fn default() -> Self {
        ExplicitCap {
            max_n_exp: 12,
            max_m_exp: 16,
            canonical_bits: 24,
        }
    }
}

impl ExplicitCap {
    pub fn admits(&self, params: &TableParams) -> bool {
        params.n_exp <= self.max_n_exp && params.m_exp <= self.max_m_exp.min(16)
    }

    fn check(&self, params: &TableParams) -> Result<()> {
        if self.admits(params) {
            Ok(())
        } else {
            Err(Error::TooLarge(format!(
                "explicit table needs n_exp <= {} and m_exp <= {}, got n_exp={} m_exp={}",
                self.max_n_exp,
                self.max_m_exp.min(16),
                params.n_exp,
                params.m_exp
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    ExplicitRandom { seed: u64 },
    ExplicitCanonical,
    Keyed { key: u128 },
}

impl Backend {
    fn tag(&self) -> u8 {
        match self {
            Backend::ExplicitRandom { .. } => 0,
            Backend::ExplicitCanonical => 1,
            Backend::Keyed { .. } => 2,
        }
    }

    fn key_bytes(&self) -> [u8; 16] {
        match *self {
            Backend::ExplicitRandom { seed } => (seed as u128).to_le_bytes(),
            Backend::ExplicitCanonical => [0; 16],
            Backend::Keyed { key } => key.to_le_bytes(),
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
enum Cells {
    U8(Vec<u8>),
    U16(Vec<u16>),
}

impl Cells {
    fn zeroed(m_exp: u32, count: usize) -> Cells {
        if m_exp <= 8 {
            Cells::U8(vec![0; count])
        } else {
            Cells::U16(vec![0; count])
        }
    }

    #[inline]
    fn get(&self, i: usize) -> u64 {
        match self {
            Cells::U8(v) => v[i] as u64,
            Cells::U16(v) => v[i] as u64,
        }
    }

    fn set(&mut self, i: usize, color: u64) {
        match self {
            Cells::U8(v) => v[i] = color as u8,
            Cells::U16(v) => v[i] = color as u16,
        }
    }

    fn len(&self) -> usize {
        match self {
            Cells::U8(v) => v.len(),
            Cells::U16(v) => v.len(),
        }
    }
}

/// Borrowed view of an explicit table's cells, row-major.
#[derive(Clone, Copy)]
pub enum CellsView<'a> {
    U8(&'a [u8]),
    U16(&'a [u16]),
}

/// A table `T: [N] x [N] -> [M]`, either materialized or computed on demand.
#[derive(Clone, PartialEq, Eq)]
pub struct BalancedTable {
    params: TableParams,
    backend: Backend,
    cells: Option<Cells>,
}

impl std::fmt::Debug for BalancedTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BalancedTable")
            .field("params", &self.params)
            .field("backend", &self.backend)
            .field("cells", &self.cells.as_ref().map(Cells::len))
            .finish()
    }
}

impl BalancedTable {
    pub fn params(&self) -> &TableParams {
        &self.params
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn is_explicit(&self) -> bool {
        self.cells.is_some()
    }

    /// Number of rows (and columns), if it fits in 64 bits.
    pub fn side(&self) -> Option<u64> {
        (self.params.n_exp < 64).then(|| 1u64 << self.params.n_exp)
    }

    pub fn cells(&self) -> Option<CellsView<'_>> {
        self.cells.as_ref().map(|c| match c {
            Cells::U8(v) => CellsView::U8(v),
            Cells::U16(v) => CellsView::U16(v),
        })
    }

    /// Builds an explicit table from row-major colors.
    pub fn from_cells(params: TableParams, backend: Backend, colors: &[u64]) -> Result<Self> {
        params.validate()?;
        if matches!(backend, Backend::Keyed { .. }) {
            return Err(Error::invalid("keyed tables carry no cells"));
        }
        ExplicitCap {
            max_n_exp: 16,
            ..ExplicitCap::default()
        }
        .check(&params)?;
        let side = 1usize << params.n_exp;
        if colors.len() != side * side {
            return Err(Error::invalid(format!(
                "expected {} cells, got {}",
                side * side,
                colors.len()
            )));
        }
        let mut cells = Cells::zeroed(params.m_exp, colors.len());
        for (i, &c) in colors.iter().enumerate() {
            if c >> params.m_exp != 0 {
                return Err(Error::OutOfRange {
                    what: "color",
                    value: c,
                    limit: 1 << params.m_exp,
                });
            }
            cells.set(i, c);
        }
        Ok(BalancedTable {
            params,
            backend,
            cells: Some(cells),
        })
    }

    /// `T(row, col)` for tables whose indices and colors fit in 64 bits.
    pub fn lookup(&self, row: u64, col: u64) -> Result<u64> {
        let n = self.params.n_exp;
        if n > 64 || self.params.m_exp > 64 {
            return Err(Error::TooLarge(format!(
                "64-bit lookup on n_exp={n} m_exp={}; use lookup_bits",
                self.params.m_exp
            )));
        }
        let limit = if n == 64 { u64::MAX } else { 1u64 << n };
        for (what, v) in [("row", row), ("col", col)] {
            if n < 64 && v >= limit {
                return Err(Error::OutOfRange {
                    what,
                    value: v,
                    limit,
                });
            }
        }
        Ok(self.lookup_unchecked(row, col))
    }

    /// Lookup without bounds checks; indices must be `< N`.
    #[inline]
    pub(crate) fn lookup_unchecked(&self, row: u64, col: u64) -> u64 {
        match (&self.cells, self.backend) {
            (Some(cells), _) => cells.get(((row << self.params.n_exp) | col) as usize),
            (None, Backend::Keyed { key }) => {
                let nbytes = (self.params.n_exp as usize).div_ceil(8);
                let r = row.to_be_bytes();
                let c = col.to_be_bytes();
                keyed_color_u64(key, &self.params, &r[8 - nbytes..], &c[8 - nbytes..])
            }
            (None, _) => unreachable!("explicit backend without cells"),
        }
    }

    /// `T(x, y)` with `x`, `y` read most significant bit first; the color is
    /// rendered as exactly `m_exp` bits, most significant first.
    pub fn lookup_bits(&self, row: &BitString, col: &BitString) -> Result<BitString> {
        let n = self.params.n_exp as usize;
        if row.len() != n || col.len() != n {
            return Err(Error::invalid(format!(
                "index strings must have n_exp={n} bits, got {} and {}",
                row.len(),
                col.len()
            )));
        }
        match (&self.cells, self.backend) {
            (Some(_), _) => {
                let color = self.lookup(row.to_u64()?, col.to_u64()?)?;
                BitString::from_u64(color, self.params.m_exp)
            }
            (None, Backend::Keyed { key }) => Ok(keyed_color_bits(
                key,
                &self.params,
                &row.to_index_bytes(),
                &col.to_index_bytes(),
            )),
            (None, _) => unreachable!("explicit backend without cells"),
        }
    }

    /// Serialized table file bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let p = &self.params;
        let exps = [p.n_exp, p.m_exp, p.s_exp, p.d_exp];
        if exps.iter().any(|&e| e > 255) {
            return Err(Error::TooLarge(format!(
                "exponents {exps:?} do not fit the one-byte file fields"
            )));
        }
        let mut out =
            Vec::with_capacity(HEADER_LEN + self.cells.as_ref().map_or(0, |c| 2 * c.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.backend.tag());
        out.extend(exps.iter().map(|&e| e as u8));
        out.extend_from_slice(&self.backend.key_bytes());
        match &self.cells {
            Some(Cells::U8(v)) => out.extend_from_slice(v),
            Some(Cells::U16(v)) => {
                for c in v {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
            None => {}
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "{} bytes is shorter than the header",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {version}"
            )));
        }
        let params = TableParams::new(
            bytes[7] as u32,
            bytes[8] as u32,
            bytes[9] as u32,
            bytes[10] as u32,
        )
        .map_err(|e| Error::Format(e.to_string()))?;
        let key = u128::from_le_bytes(bytes[11..27].try_into().unwrap());
        let backend = match bytes[6] {
            0 => Backend::ExplicitRandom { seed: key as u64 },
            1 => Backend::ExplicitCanonical,
            2 => Backend::Keyed { key },
            t => return Err(Error::Format(format!("unknown backend tag {t}"))),
        };
        let body = &bytes[HEADER_LEN..];
        if let Backend::Keyed { .. } = backend {
            if !body.is_empty() {
                return Err(Error::Format("keyed table with trailing cell data".into()));
            }
            return Ok(keyed_table(params, key));
        }
        if params.n_exp > 16 || params.m_exp > 16 {
            return Err(Error::Format(format!(
                "explicit table too large: {params:?}"
            )));
        }
        let count = 1usize << (2 * params.n_exp);
        let width = if params.m_exp <= 8 { 1 } else { 2 };
        if body.len() != count * width {
            return Err(Error::Format(format!(
                "expected {} cell bytes, found {}",
                count * width,
                body.len()
            )));
        }
        let cells = if width == 1 {
            Cells::U8(body.to_vec())
        } else {
            Cells::U16(
                body.chunks_exact(2)
                    .map(|b| u16::from_le_bytes([b[0], b[1]]))
                    .collect(),
            )
        };
        let limit = 1u64 << params.m_exp;
        if let Some(bad) = (0..count).map(|i| cells.get(i)).find(|&c| c >= limit) {
            return Err(Error::Format(format!(
                "color {bad} out of range for m_exp={}",
                params.m_exp
            )));
        }
        Ok(BalancedTable {
            params,
            backend,
            cells: Some(cells),
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// SHA-256 of the serialized table, hex encoded. Tables whose exponents do
    /// not fit the file header are digested over a wide header instead.
    pub fn digest(&self) -> String {
        let bytes = self.to_bytes().unwrap_or_else(|_| {
            let p = &self.params;
            let mut b = Vec::from(&MAGIC[..]);
            for e in [p.n_exp, p.m_exp, p.s_exp, p.d_exp] {
                b.extend_from_slice(&e.to_le_bytes());
            }
            b.push(self.backend.tag());
            b.extend_from_slice(&self.backend.key_bytes());
            b
        });
        hex::encode(Sha256::digest(&bytes))
    }
}

fn chacha_for(seed: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Fills every cell independently and uniformly from a seeded ChaCha8 stream.
///
/// Reproducibility rule: the ChaCha8 key holds `seed` little-endian in bytes
/// 0..8 (the rest zero); row `r` reads stream `r` from its start, one `u32`
/// per cell, keeping the low `m_exp` bits.
pub fn random_table(params: TableParams, seed: u64) -> Result<BalancedTable> {
    random_table_capped(params, seed, ExplicitCap::default())
}

pub fn random_table_capped(
    params: TableParams,
    seed: u64,
    cap: ExplicitCap,
) -> Result<BalancedTable> {
    params.validate()?;
    cap.check(&params)?;
    let side = 1usize << params.n_exp;
    let mask = ((1u64 << params.m_exp) - 1) as u32;
    let mut cells = Cells::zeroed(params.m_exp, side * side);
    let mut rng = chacha_for(seed);
    for row in 0..side {
        rng.set_stream(row as u64);
        rng.set_word_pos(0);
        let base = row * side;
        match &mut cells {
            Cells::U8(v) => v[base..base + side]
                .iter_mut()
                .for_each(|c| *c = (rng.next_u32() & mask) as u8),
            Cells::U16(v) => v[base..base + side]
                .iter_mut()
                .for_each(|c| *c = (rng.next_u32() & mask) as u16),
        }
    }
    Ok(BalancedTable {
        params,
        backend: Backend::ExplicitRandom { seed },
        cells: Some(cells),
    })
}

/// Colors computed on demand from a keyed hash.
///
/// `color(r, c)`: a 128-bit SipHash-2-4 digest `h` under `key` of
/// `"BTAB-keyed-v1" || n_exp (u32 LE) || m_exp (u32 LE) || r || c`, where `r`
/// and `c` are the indices as big-endian integers of `ceil(n_exp/8)` bytes.
/// Word `j` is the 64-bit SipHash-2-4 under `key` of `h (16 bytes LE) || j (u64 LE)`,
/// and the color is the low `m_exp` bits of `sum_j word_j << 64 j`.
/// No balance guarantee; only sampled verification applies.
pub fn keyed_table(params: TableParams, key: u128) -> BalancedTable {
    BalancedTable {
        params,
        backend: Backend::Keyed { key },
        cells: None,
    }
}

fn keyed_digest(key: u128, params: &TableParams, row: &[u8], col: &[u8]) -> u128 {
    let k = key.to_le_bytes();
    let mut h = SipHasher128::new_with_key(&k);
    h.write(KEYED_DOMAIN);
    h.write(&params.n_exp.to_le_bytes());
    h.write(&params.m_exp.to_le_bytes());
    h.write(row);
    h.write(col);
    h.finish128().as_u128()
}

fn keyed_word(key: u128, digest: u128, j: u64) -> u64 {
    let mut h = SipHasher24::new_with_key(&key.to_le_bytes());
    h.write(&digest.to_le_bytes());
    h.write(&j.to_le_bytes());
    h.finish()
}

fn keyed_color_u64(key: u128, params: &TableParams, row: &[u8], col: &[u8]) -> u64 {
    let w = keyed_word(key, keyed_digest(key, params, row, col), 0);
    if params.m_exp >= 64 {
        w
    } else {
        w & ((1u64 << params.m_exp) - 1)
    }
}

fn keyed_color_bits(key: u128, params: &TableParams, row: &[u8], col: &[u8]) -> BitString {
    let digest = keyed_digest(key, params, row, col);
    let m = params.m_exp as usize;
    let words = m.div_ceil(64);
    // bit k of the color integer is bit k%64 of word k/64; render MSB first
    let ws: Vec<u64> = (0..words as u64)
        .map(|j| keyed_word(key, digest, j))
        .collect();
    (0..m)
        .rev()
        .map(|k| (ws[k / 64] >> (k % 64)) & 1 == 1)
        .collect()
}

/// The lexicographically first table (row-major color sequence) that passes
/// exhaustive `(S, D)`-balance verification.
///
/// Depth-first search in lexicographic order; a branch is cut as soon as some
/// `S x S` rectangle's already-assigned cells exceed the bound, since counts
/// only grow as cells are filled. The result is confirmed by the exhaustive
/// verifier.
pub fn canonical_table(params: TableParams) -> Result<BalancedTable> {
    canonical_table_capped(params, ExplicitCap::default())
}

pub fn canonical_table_capped(params: TableParams, cap: ExplicitCap) -> Result<BalancedTable> {
    params.validate()?;
    let side = 1usize << params.n_exp.min(31);
    let bits = (side as u64)
        .saturating_mul(side as u64)
        .saturating_mul(params.m_exp as u64);
    if params.n_exp > 16 || params.m_exp > 16 || bits > cap.canonical_bits {
        return Err(Error::TooLarge(format!(
            "canonical search over N^2 * m_exp = {bits} bits exceeds cap {}",
            cap.canonical_bits
        )));
    }
    let s = 1usize << params.s_exp;
    let colors = 1usize << params.m_exp;
    let top = 1usize << (params.m_exp - params.d_exp);
    // violation iff top-mass * D > 2 S^2
    let bound = 2 * (s * s) as u128;
    let d = 1u128 << params.d_exp;
    let subsets: Vec<Vec<usize>> = Combinations::new(side, s).collect();
    // rectangles (row subset, col subset) containing each cell
    let containing = |r: usize, c: usize| {
        let rows: Vec<&Vec<usize>> = subsets.iter().filter(|x| x.contains(&r)).collect();
        let cols: Vec<&Vec<usize>> = subsets.iter().filter(|x| x.contains(&c)).collect();
        (rows, cols)
    };
    let per_cell: Vec<_> = (0..side * side)
        .map(|i| containing(i / side, i % side))
        .collect();

    let mut table = vec![usize::MAX; side * side];
    let mut hist = vec![0u32; colors];
    let violates = |table: &[usize], idx: usize, hist: &mut [u32]| -> bool {
        let (rows, cols) = &per_cell[idx];
        for rs in rows {
            for cs in cols {
                hist.iter_mut().for_each(|h| *h = 0);
                for &r in rs.iter() {
                    for &c in cs.iter() {
                        let i = r * side + c;
                        if i <= idx {
                            hist[table[i]] += 1;
                        }
                    }
                }
                if verify::top_mass(hist, top) as u128 * d > bound {
                    return true;
                }
            }
        }
        false
    };

    let total = side * side;
    let mut idx = 0usize;
    let mut next_color = vec![0usize; total];
    loop {
        if idx == total {
            break;
        }
        let mut placed = false;
        while next_color[idx] < colors {
            let c = next_color[idx];
            next_color[idx] += 1;
            table[idx] = c;
            if !violates(&table, idx, &mut hist) {
                placed = true;
                break;
            }
        }
        if placed {
            idx += 1;
        } else {
            table[idx] = usize::MAX;
            next_color[idx] = 0;
            if idx == 0 {
                return Err(Error::NotFound);
            }
            idx -= 1;
        }
    }
    let colors: Vec<u64> = table.iter().map(|&c| c as u64).collect();
    let t = BalancedTable::from_cells(params, Backend::ExplicitCanonical, &colors)?;
    let report = verify::verify(
        &t,
        params.s_exp,
        params.d_exp,
        RectMode::Exhaustive,
        &VerifyOptions::default(),
    )?;
    debug_assert!(
        report.passed,
        "canonical search produced an unbalanced table"
    );
    if !report.passed {
        return Err(Error::NotFound);
    }
    Ok(t)
}

/// Sides of the existence inequality
/// `S^2 > 3M + 3M ln D + 6SD + 6SD ln(N/S)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExistenceCheck {
    pub holds: bool,
    /// `S^2`, exact.
    #[serde(serialize_with = "as_decimal")]
    pub lhs: BigUint,
    /// Rigorous enclosure of the right-hand side.
    pub rhs_lower: Rational,
    pub rhs_upper: Rational,
    /// Midpoint of the enclosure.
    pub rhs_approx: f64,
}

/// Checks the existence condition on raw exponents (`M = 1` is allowed here).
pub fn existence_condition_exps(
    n_exp: u32,
    m_exp: u32,
    s_exp: u32,
    d_exp: u32,
) -> Result<ExistenceCheck> {
    if s_exp > n_exp || d_exp > m_exp {
        return Err(Error::invalid(format!(
            "need s_exp <= n_exp and d_exp <= m_exp, got {n_exp} {m_exp} {s_exp} {d_exp}"
        )));
    }
    let pow2 = |e: u32| BigInt::one() << (e as usize);
    let lhs = pow2(2 * s_exp);
    let m = pow2(m_exp);
    let sd = pow2(s_exp + d_exp);
    // rhs = a + c ln 2 since ln D = d ln 2 and ln(N/S) = (n - s) ln 2
    let a = BigInt::from(3) * &m + BigInt::from(6) * &sd;
    let c = BigInt::from(3) * &m * d_exp + BigInt::from(6) * &sd * (n_exp - s_exp);
    let diff = &lhs - &a;

    let mut terms = 64u32;
    let (holds, lo, hi) = loop {
        let (ln2_lo, ln2_hi) = ln2_enclosure(terms);
        let lo =
            BigRational::from_integer(a.clone()) + BigRational::from_integer(c.clone()) * &ln2_lo;
        let hi =
            BigRational::from_integer(a.clone()) + BigRational::from_integer(c.clone()) * &ln2_hi;
        let lhs_r = BigRational::from_integer(lhs.clone());
        if c.is_zero() {
            break (diff.is_positive(), lo, hi);
        }
        if lhs_r > hi {
            break (true, lo, hi);
        }
        if lhs_r <= lo {
            break (false, lo, hi);
        }
        terms *= 2;
    };
    let mid = (&lo + &hi) / BigRational::from_integer(2.into());
    Ok(ExistenceCheck {
        holds,
        lhs: lhs.to_biguint().expect("non-negative"),
        rhs_approx: mid.to_f64().unwrap_or(f64::INFINITY),
        rhs_lower: lo.into(),
        rhs_upper: hi.into(),
    })
}

fn as_decimal<S: serde::Serializer>(v: &BigUint, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

pub fn existence_condition(params: &TableParams) -> ExistenceCheck {
    existence_condition_exps(params.n_exp, params.m_exp, params.s_exp, params.d_exp)
        .expect("validated params satisfy the exponent ordering")
}

/// `ln 2 = sum_{k>=1} 1/(k 2^k)`; truncating after `terms` terms leaves a tail
/// in `(0, 1/((terms+1) 2^terms)]`.
fn ln2_enclosure(terms: u32) -> (BigRational, BigRational) {
    let mut sum = BigRational::zero();
    for k in 1..=terms {
        sum += BigRational::new(BigInt::one(), BigInt::from(k) << (k as usize));
    }
    let tail = BigRational::new(BigInt::one(), BigInt::from(terms + 1) << (terms as usize));
    let hi = &sum + tail;
    (sum, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tp(n: u32, m: u32, s: u32, d: u32) -> TableParams {
        TableParams::new(n, m, s, d).unwrap()
    }

    fn hand_rhs(n: u32, m: u32, s: u32, d: u32) -> f64 {
        let (nn, mm, ss, dd) = (
            2f64.powi(n as i32),
            2f64.powi(m as i32),
            2f64.powi(s as i32),
            2f64.powi(d as i32),
        );
        3.0 * mm + 3.0 * mm * dd.ln() + 6.0 * ss * dd + 6.0 * ss * dd * (nn / ss).ln()
    }

    #[test]
    fn ln2_enclosure_contains_ln2() {
        let (lo, hi) = ln2_enclosure(40);
        let ln2 = std::f64::consts::LN_2;
        assert!(lo.to_f64().unwrap() <= ln2 && ln2 <= hi.to_f64().unwrap());
        assert!(lo < hi);
    }

    #[test]
    fn existence_examples() {
        let a = existence_condition(&tp(10, 4, 8, 1));
        assert!(a.holds);
        assert_eq!(a.lhs, BigUint::from(65536u32));
        assert!((a.rhs_approx - 7412.1).abs() < 0.2);
        assert!((a.rhs_approx - hand_rhs(10, 4, 8, 1)).abs() < 1e-6 * a.rhs_approx);

        let b = existence_condition(&tp(3, 2, 2, 1));
        assert!(!b.holds);
        assert!((b.rhs_approx - 101.6).abs() < 0.1);
    }

    #[test]
    fn existence_degenerate_m1() {
        for n in 1..=6u32 {
            let e = existence_condition_exps(n, 0, n, 0).unwrap();
            let big_n = 1u64 << n;
            assert_eq!(e.lhs, BigUint::from(big_n * big_n));
            assert_eq!(e.rhs_lower, Rational::integer(3 + 6 * big_n as i64));
            assert_eq!(e.holds, big_n * big_n > 3 + 6 * big_n);
        }
        assert!(!existence_condition_exps(2, 0, 2, 0).unwrap().holds);
        assert!(existence_condition_exps(3, 0, 3, 0).unwrap().holds);
    }

    #[test]
    fn existence_rejects_bad_exponents() {
        assert!(existence_condition_exps(3, 2, 4, 1).is_err());
        assert!(existence_condition_exps(3, 2, 2, 3).is_err());
    }

    #[test]
    fn random_table_deterministic() {
        let p = tp(6, 3, 2, 1);
        let a = random_table(p, 0).unwrap();
        let b = random_table(p, 0).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        let c = random_table(p, 1).unwrap();
        assert_ne!(a.to_bytes().unwrap(), c.to_bytes().unwrap());
    }

    #[test]
    fn random_table_color_frequencies() {
        let p = tp(8, 4, 4, 1);
        let t = random_table(p, 1).unwrap();
        let mut counts = [0u64; 16];
        for r in 0..256 {
            for c in 0..256 {
                counts[t.lookup(r, c).unwrap() as usize] += 1;
            }
        }
        let expect = 65536.0 / 16.0;
        let sd = (65536.0f64 * (1.0 / 16.0) * (15.0 / 16.0)).sqrt();
        for &k in &counts {
            assert!((k as f64 - expect).abs() <= 5.0 * sd, "count {k}");
        }
        let chi2: f64 = counts
            .iter()
            .map(|&k| (k as f64 - expect).powi(2) / expect)
            .sum();
        // 15 degrees of freedom; 0.999999 quantile is about 55
        assert!(chi2 < 55.0, "chi2 = {chi2}");
    }

    #[test]
    fn random_table_cap() {
        let p = tp(20, 4, 4, 1);
        assert!(matches!(random_table(p, 0), Err(Error::TooLarge(_))));
        let p = tp(4, 20, 4, 1);
        assert!(matches!(random_table(p, 0), Err(Error::TooLarge(_))));
    }

    #[test]
    fn wide_colors_use_two_bytes() {
        let p = tp(3, 12, 1, 1);
        let t = random_table(p, 5).unwrap();
        assert!(matches!(t.cells(), Some(CellsView::U16(_))));
        assert_eq!(t.to_bytes().unwrap().len(), HEADER_LEN + 64 * 2);
        let back = BalancedTable::from_bytes(&t.to_bytes().unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn lookup_out_of_range() {
        let t = random_table(tp(3, 2, 1, 1), 0).unwrap();
        assert!(matches!(t.lookup(8, 0), Err(Error::OutOfRange { .. })));
        assert!(matches!(t.lookup(0, 8), Err(Error::OutOfRange { .. })));
        let k = keyed_table(tp(3, 2, 1, 1), 9);
        assert!(matches!(k.lookup(0, 9), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn keyed_is_deterministic_and_key_sensitive() {
        let p = tp(32, 8, 8, 1);
        let a = keyed_table(p, 1);
        let b = keyed_table(p, 2);
        assert_eq!(a.lookup(17, 99).unwrap(), a.lookup(17, 99).unwrap());
        let differ =
            (0..1000u64).any(|i| a.lookup(i, i * 7).unwrap() != b.lookup(i, i * 7).unwrap());
        assert!(differ);
    }

    #[test]
    fn keyed_chi_square() {
        let p = tp(32, 8, 8, 1);
        let t = keyed_table(p, 0xfeed);
        let mut counts = vec![0u64; 256];
        let samples = 1_000_000u64;
        for i in 0..samples {
            let r = i.wrapping_mul(0x9E37_79B9) & 0xffff_ffff;
            let c = (i * 31 + 7) & 0xffff_ffff;
            counts[t.lookup(r, c).unwrap() as usize] += 1;
        }
        let expect = samples as f64 / 256.0;
        let chi2: f64 = counts
            .iter()
            .map(|&k| (k as f64 - expect).powi(2) / expect)
            .sum();
        // 255 degrees of freedom; upper 1e-6 tail starts near 380
        assert!(chi2 < 380.0, "chi2 = {chi2}");
    }

    #[test]
    fn keyed_bits_agree_with_u64_path() {
        let p = tp(12, 10, 6, 1);
        let t = keyed_table(p, 77);
        for (r, c) in [(0u64, 0u64), (1, 2048), (4095, 17)] {
            let bits = t
                .lookup_bits(
                    &BitString::from_u64(r, 12).unwrap(),
                    &BitString::from_u64(c, 12).unwrap(),
                )
                .unwrap();
            assert_eq!(bits.len(), 10);
            assert_eq!(bits.to_u64().unwrap(), t.lookup(r, c).unwrap());
        }
    }

    #[test]
    fn keyed_wide_colors() {
        let t = keyed_table(
            TableParams {
                n_exp: 1024,
                m_exp: 150,
                s_exp: 1,
                d_exp: 1,
            },
            3,
        );
        let x = BitString::from_bits((0..1024).map(|i| i % 3 == 0).collect());
        let y = BitString::from_bits((0..1024).map(|i| i % 5 == 0).collect());
        let a = t.lookup_bits(&x, &y).unwrap();
        assert_eq!(a.len(), 150);
        assert_eq!(a, t.lookup_bits(&x, &y).unwrap());
        // the high words are populated too
        assert!(a.slice(0, 86).as_slice().iter().any(|&b| b));
        assert!(t.lookup(0, 0).is_err());
    }

    #[test]
    fn file_round_trip_and_rejections() {
        let t = random_table(tp(4, 3, 2, 1), 11).unwrap();
        let bytes = t.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"BTAB");
        assert_eq!(bytes.len(), HEADER_LEN + 256);
        let back = BalancedTable::from_bytes(&bytes).unwrap();
        assert_eq!(back, t);

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(
            BalancedTable::from_bytes(&bad),
            Err(Error::Format(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(BalancedTable::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[HEADER_LEN] = 200;
        assert!(BalancedTable::from_bytes(&bad).is_err());
        assert!(BalancedTable::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes;
        bad[6] = 9;
        assert!(BalancedTable::from_bytes(&bad).is_err());

        let k = keyed_table(tp(40, 20, 10, 2), u128::MAX - 5);
        let kb = k.to_bytes().unwrap();
        assert_eq!(kb.len(), HEADER_LEN);
        let kback = BalancedTable::from_bytes(&kb).unwrap();
        for i in 0..1000u64 {
            assert_eq!(kback.lookup(i * 3, i).unwrap(), k.lookup(i * 3, i).unwrap());
        }
    }

    #[test]
    fn canonical_micro_examples() {
        // D = 1: balance is vacuous, so the all-zero table is first
        let t = canonical_table(tp(1, 1, 1, 0)).unwrap();
        assert!((0..2).all(|r| (0..2).all(|c| t.lookup(r, c).unwrap() == 0)));
        assert_eq!(t.backend(), Backend::ExplicitCanonical);
        let t = canonical_table(tp(1, 1, 1, 1)).unwrap();
        assert!((0..2).all(|r| (0..2).all(|c| t.lookup(r, c).unwrap() == 0)));
    }

    #[test]
    fn canonical_n4_m4_single_rectangle() {
        let cap = ExplicitCap {
            canonical_bits: 32,
            ..ExplicitCap::default()
        };
        let t = canonical_table_capped(tp(2, 2, 2, 2), cap).unwrap();
        let cells: Vec<u64> = (0..4)
            .flat_map(|r| (0..4).map(move |c| (r, c)))
            .map(|(r, c)| t.lookup(r, c).unwrap())
            .collect();
        // each color at most 8 times in the whole 4x4 table; lexicographically first
        assert_eq!(cells, vec![0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1]);
        assert!(matches!(
            canonical_table(tp(2, 2, 2, 2)),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn canonical_not_found() {
        // S = 1, D = M = 2: bound 2 * (1/2) * 1 = 1 admits every cell
        assert!(canonical_table(tp(1, 1, 0, 1)).is_ok());
        // S = 1, D = M = 4: bound 1/2 rejects every cell
        assert!(matches!(
            canonical_table(tp(1, 2, 0, 2)),
            Err(Error::NotFound)
        ));
    }

    proptest! {
        #[test]
        fn existence_agrees_with_float_away_from_boundary(n in 1u32..24, m in 1u32..20, s_off in 0u32..24, d_off in 0u32..20) {
            let s = s_off.min(n);
            let d = d_off.min(m);
            let e = existence_condition_exps(n, m, s, d).unwrap();
            let rhs = hand_rhs(n, m, s, d);
            prop_assert!(((e.rhs_approx - rhs) / rhs).abs() < 1e-9);
            let lhs = 4f64.powi(s as i32);
            if (lhs - rhs).abs() > 1e-6 * rhs {
                prop_assert_eq!(e.holds, lhs > rhs);
            }
            prop_assert!(e.rhs_lower <= e.rhs_upper);
        }

        #[test]
        fn existence_monotone_in_s(n in 2u32..20, m in 1u32..12, d_off in 0u32..12) {
            let d = d_off.min(m);
            let mut seen = false;
            for s in 0..=n {
                let h = existence_condition_exps(n, m, s, d).unwrap().holds;
                // once the condition holds it keeps holding as S grows
                prop_assert!(!seen || h, "lost at s={}", s);
                seen |= h;
            }
        }
    }
}

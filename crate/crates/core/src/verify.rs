//! Balance verification.
//!
//! A table is `(S, D)`-balanced when every color set `A` with `|A| = M/D` covers
//! at most `2 |A|/M |B1 x B2|` cells of every rectangle with sides `>= S`.
//! For a fixed rectangle the worst `A` is the `M/D` most frequent colors, so
//! each rectangle is checked through its histogram's top-`M/D` mass. Checking
//! rectangles of side exactly `S` suffices: a larger rectangle's color
//! fraction is the average of the fractions over its `S x S` sub-rectangles.
//!
//! Scores are integers: a rectangle with side sizes `k1`, `k2` violates iff
//! `score > 2 k1 k2`, where `score = mass * D` for the subset check and
//! `count * 2^l` for a length-`l` color prefix.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::combin::{binomial, CombCursor};
use crate::error::{Error, Result};
use crate::tables::{BalancedTable, CellsView};

/// Which rectangles to check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RectMode {
    Exhaustive,
    Sampled { samples: u64, seed: u64 },
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    /// Worker threads; `None` uses the global pool. Results do not depend on it.
    pub threads: Option<usize>,
    /// Stop after the first batch containing a violation.
    pub stop_on_violation: bool,
    /// Largest number of rectangles an exhaustive run may visit.
    pub exhaustive_cap: u128,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            threads: None,
            stop_on_violation: false,
            exhaustive_cap: 100_000_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    fn reduced(num: u128, den: u128) -> Ratio {
        let g = gcd(num, den).max(1);
        Ratio {
            num: (num / g) as u64,
            den: (den / g) as u64,
        }
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn at_most_one(self) -> bool {
        self.num <= self.den
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Rectangle {
    pub rows: Vec<u64>,
    pub cols: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Prefix {
    pub len: u32,
    pub value: u64,
}

/// A violating rectangle together with the color set that overflows it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub rows: Vec<u64>,
    pub cols: Vec<u64>,
    pub colors: Vec<u64>,
    /// Set by the prefix check: `colors` are all extensions of this prefix.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prefix: Option<Prefix>,
    /// Cells of the rectangle colored from `colors`.
    pub count: u64,
}

impl Witness {
    pub fn rectangle(&self) -> Rectangle {
        Rectangle {
            rows: self.rows.clone(),
            cols: self.cols.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReportParams {
    pub n_exp: u32,
    pub m_exp: u32,
    pub s_exp: u32,
    pub d_exp: u32,
    pub row_side: u64,
    pub col_side: u64,
    /// `"subset"` or `"prefix"`.
    pub check: &'static str,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VerificationReport {
    pub mode: RectMode,
    pub passed: bool,
    pub rectangles_checked: u64,
    /// Largest score over `2 |B1| |B2|` among checked rectangles.
    pub worst_ratio: Ratio,
    pub witness: Option<Witness>,
    pub params: ReportParams,
    pub table_digest: String,
}

impl VerificationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Clone, Debug)]
enum Check {
    /// Top `top` colors, scaled by `d`.
    Subset {
        top: u64,
        d: u128,
    },
    Prefix {
        lengths: Vec<u32>,
    },
}

/// Sum of the `k` largest entries.
pub(crate) fn top_mass(hist: &[u32], k: usize) -> u64 {
    if k >= hist.len() {
        return hist.iter().map(|&c| c as u64).sum();
    }
    let mut v = hist.to_vec();
    v.select_nth_unstable_by(k - 1, |a, b| b.cmp(a));
    v[..k].iter().map(|&c| c as u64).sum()
}

/// Nonzero `(color, count)` pairs, sorted by color.
type Counts = Vec<(u64, u32)>;

/// Colors, prefix (prefix check only) and cell count of a violation.
type Overflow = (Vec<u64>, Option<Prefix>, u64);

impl Check {
    /// Returns the score and, when it exceeds `limit`, the overflowing colors.
    fn score(&self, counts: &[(u64, u32)], m_exp: u32, limit: u128) -> (u128, Option<Overflow>) {
        match *self {
            Check::Subset { top, d } => {
                let mut by_count: Vec<(u32, u64)> = counts.iter().map(|&(c, k)| (k, c)).collect();
                let k = (top as usize).min(by_count.len());
                if k < by_count.len() && k > 0 {
                    by_count.select_nth_unstable_by(k - 1, |a, b| b.cmp(a));
                }
                let mass: u64 = by_count[..k].iter().map(|&(n, _)| n as u64).sum();
                let score = mass as u128 * d;
                if score <= limit {
                    return (score, None);
                }
                let mut colors: Vec<u64> = by_count[..k].iter().map(|&(_, c)| c).collect();
                colors.sort_unstable();
                // pad with unused colors so |A| = M/D exactly
                let mut next = 0u64;
                while (colors.len() as u64) < top {
                    if colors.binary_search(&next).is_err() {
                        let pos = colors.partition_point(|&c| c < next);
                        colors.insert(pos, next);
                    }
                    next += 1;
                }
                (score, Some((colors, None, mass)))
            }
            Check::Prefix { ref lengths } => {
                let mut best: (u128, u32, u64, u64) = (0, 0, 0, 0);
                for &len in lengths {
                    let shift = m_exp - len;
                    let mut i = 0;
                    while i < counts.len() {
                        let v = counts[i].0 >> shift;
                        let mut total = 0u64;
                        while i < counts.len() && counts[i].0 >> shift == v {
                            total += counts[i].1 as u64;
                            i += 1;
                        }
                        let score = (total as u128) << len;
                        if score > best.0 {
                            best = (score, len, v, total);
                        }
                    }
                }
                let (score, len, v, total) = best;
                if score <= limit {
                    return (score, None);
                }
                let shift = m_exp - len;
                let colors = if shift <= 16 {
                    ((v << shift)..((v + 1) << shift)).collect()
                } else {
                    Vec::new()
                };
                (score, Some((colors, Some(Prefix { len, value: v }), total)))
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Grid<'a> {
    U8(&'a [u8], u32),
    U16(&'a [u16], u32),
    Keyed(&'a BalancedTable),
}

impl<'a> Grid<'a> {
    fn of(table: &'a BalancedTable) -> Grid<'a> {
        let n = table.params().n_exp;
        match table.cells() {
            Some(CellsView::U8(v)) => Grid::U8(v, n),
            Some(CellsView::U16(v)) => Grid::U16(v, n),
            None => Grid::Keyed(table),
        }
    }

    #[inline(always)]
    fn get(&self, r: u64, c: u64) -> u64 {
        match *self {
            Grid::U8(v, n) => v[((r << n) | c) as usize] as u64,
            Grid::U16(v, n) => v[((r << n) | c) as usize] as u64,
            Grid::Keyed(t) => t.lookup_unchecked(r, c),
        }
    }
}

/// Histogram over a rectangle: dense for narrow colors, sorted runs otherwise.
struct Hist {
    dense: Option<Vec<u32>>,
    sparse: Vec<u64>,
}

impl Hist {
    fn new(m_exp: u32) -> Hist {
        Hist {
            dense: (m_exp <= 16).then(|| vec![0; 1usize << m_exp]),
            sparse: Vec::new(),
        }
    }

    fn clear(&mut self) {
        if let Some(d) = &mut self.dense {
            d.iter_mut().for_each(|x| *x = 0);
        }
        self.sparse.clear();
    }

    #[inline(always)]
    fn add(&mut self, color: u64) {
        match &mut self.dense {
            Some(d) => d[color as usize] += 1,
            None => self.sparse.push(color),
        }
    }

    #[inline(always)]
    fn remove(&mut self, color: u64) {
        match &mut self.dense {
            Some(d) => d[color as usize] -= 1,
            None => {
                let i = self
                    .sparse
                    .iter()
                    .position(|&c| c == color)
                    .expect("color present");
                self.sparse.swap_remove(i);
            }
        }
    }

    fn counts(&mut self, out: &mut Counts) {
        out.clear();
        match &self.dense {
            Some(d) => out.extend(
                d.iter()
                    .enumerate()
                    .filter(|(_, &k)| k > 0)
                    .map(|(c, &k)| (c as u64, k)),
            ),
            None => {
                let mut s = self.sparse.clone();
                s.sort_unstable();
                for c in s {
                    match out.last_mut() {
                        Some((last, k)) if *last == c => *k += 1,
                        _ => out.push((c, 1)),
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
struct Partial {
    checked: u64,
    worst: u128,
    witness: Option<Witness>,
}

impl Partial {
    fn merge(mut self, other: Partial) -> Partial {
        self.checked += other.checked;
        self.worst = self.worst.max(other.worst);
        if self.witness.is_none() {
            self.witness = other.witness;
        }
        self
    }
}

struct Job<'a> {
    table: &'a BalancedTable,
    grid: Grid<'a>,
    check: Check,
    row_k: u64,
    col_k: u64,
    limit: u128,
}

impl<'a> Job<'a> {
    fn record(
        &self,
        p: &mut Partial,
        hist: &mut Hist,
        counts: &mut Counts,
        rows: &[u64],
        cols: &[u64],
    ) {
        hist.counts(counts);
        let (score, over) = self
            .check
            .score(counts, self.table.params().m_exp, self.limit);
        p.checked += 1;
        p.worst = p.worst.max(score);
        if let (Some((colors, prefix, count)), None) = (over, &p.witness) {
            p.witness = Some(Witness {
                rows: rows.to_vec(),
                cols: cols.to_vec(),
                colors,
                prefix,
                count,
            });
        }
    }

    /// All column subsets for one fixed row subset, with O(|rows|) updates per
    /// column swap.
    fn exhaustive_for_rows(&self, rows: &[u64]) -> Partial {
        let side = self.table.side().expect("exhaustive tables are small") as usize;
        let mut hist = Hist::new(self.table.params().m_exp);
        let mut counts = Counts::new();
        let mut p = Partial::default();
        let mut cursor = CombCursor::new(side, self.col_k as usize);
        let (mut removed, mut added) = (Vec::new(), Vec::new());
        for &c in cursor.current() {
            for &r in rows {
                hist.add(self.grid.get(r, c as u64));
            }
        }
        let mut cols: Vec<u64> = cursor.current().iter().map(|&c| c as u64).collect();
        self.record(&mut p, &mut hist, &mut counts, rows, &cols);
        while cursor.advance(&mut removed, &mut added) {
            for &c in &removed {
                for &r in rows {
                    hist.remove(self.grid.get(r, c as u64));
                }
            }
            for &c in &added {
                for &r in rows {
                    hist.add(self.grid.get(r, c as u64));
                }
            }
            cols.clear();
            cols.extend(cursor.current().iter().map(|&c| c as u64));
            self.record(&mut p, &mut hist, &mut counts, rows, &cols);
        }
        p
    }

    fn sampled_one(&self, seed: u64, index: u64, hist: &mut Hist, counts: &mut Counts) -> Partial {
        let mut rng = sample_rng(seed, index);
        let n = self.table.params().n_exp;
        let rows = sample_distinct(&mut rng, n, self.row_k);
        let cols = sample_distinct(&mut rng, n, self.col_k);
        hist.clear();
        for &r in &rows {
            for &c in &cols {
                hist.add(self.grid.get(r, c));
            }
        }
        let mut p = Partial::default();
        self.record(&mut p, hist, counts, &rows, &cols);
        p
    }
}

fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(b"rectsmpl");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// `k` distinct indices in `[0, 2^n_exp)`, sorted. Uses a partial
/// Fisher-Yates shuffle when the index range is materializable, rejection
/// sampling otherwise.
fn sample_distinct(rng: &mut ChaCha8Rng, n_exp: u32, k: u64) -> Vec<u64> {
    let mut out = if n_exp <= 24 {
        let mut all: Vec<u64> = (0..1u64 << n_exp).collect();
        let (chosen, _) = all.partial_shuffle(rng, k as usize);
        chosen.to_vec()
    } else {
        let mut seen = std::collections::HashSet::with_capacity(k as usize);
        let mut v = Vec::with_capacity(k as usize);
        let mask = if n_exp >= 64 {
            u64::MAX
        } else {
            (1u64 << n_exp) - 1
        };
        while (v.len() as u64) < k {
            let x = rng.gen::<u64>() & mask;
            if seen.insert(x) {
                v.push(x);
            }
        }
        v
    };
    out.sort_unstable();
    out
}

// Batch sizes are fixed so early stopping does not depend on the thread count.
const EXHAUSTIVE_BATCH: usize = 128;
const SAMPLE_BATCH: u64 = 2048;

#[allow(clippy::too_many_arguments)]
fn run(
    table: &BalancedTable,
    check: Check,
    row_k: u64,
    col_k: u64,
    check_name: &'static str,
    s_exp: u32,
    d_exp: u32,
    mode: RectMode,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    let params = *table.params();
    if params.n_exp > 64 || (params.m_exp > 64) {
        return Err(Error::TooLarge(format!(
            "verification needs n_exp <= 64 and m_exp <= 64, got {params:?}"
        )));
    }
    let side_exp = params.n_exp;
    let fits = |k: u64| side_exp >= 64 || k <= 1u64 << side_exp;
    if row_k == 0 || col_k == 0 || !fits(row_k) || !fits(col_k) {
        return Err(Error::invalid(format!(
            "rectangle sides {row_k}x{col_k} do not fit N = 2^{side_exp}"
        )));
    }
    let cells = row_k as u128 * col_k as u128;
    if cells > 1 << 32 {
        return Err(Error::TooLarge(format!("{cells} cells per rectangle")));
    }
    let job = Job {
        table,
        grid: Grid::of(table),
        check,
        row_k,
        col_k,
        limit: 2 * cells,
    };

    let body = || -> Result<Partial> {
        match mode {
            RectMode::Exhaustive => {
                let side = table.side().filter(|&s| s <= 1 << 20).ok_or_else(|| {
                    Error::TooLarge(format!("exhaustive verification at n_exp = {side_exp}"))
                })?;
                let total = binomial(side, row_k).saturating_mul(binomial(side, col_k));
                if total > opts.exhaustive_cap {
                    return Err(Error::TooLarge(format!(
                        "{total} rectangles exceed the exhaustive cap {}",
                        opts.exhaustive_cap
                    )));
                }
                let row_sets: Vec<Vec<u64>> =
                    crate::combin::Combinations::new(side as usize, row_k as usize)
                        .map(|v| v.into_iter().map(|x| x as u64).collect())
                        .collect();
                let mut acc = Partial::default();
                for batch in row_sets.chunks(EXHAUSTIVE_BATCH) {
                    let part = batch
                        .par_iter()
                        .map(|rows| job.exhaustive_for_rows(rows))
                        .collect::<Vec<_>>()
                        .into_iter()
                        .fold(Partial::default(), Partial::merge);
                    acc = acc.merge(part);
                    if opts.stop_on_violation && acc.witness.is_some() {
                        break;
                    }
                }
                Ok(acc)
            }
            RectMode::Sampled { samples, seed } => {
                if samples == 0 {
                    return Err(Error::invalid("samples must be at least 1"));
                }
                let mut acc = Partial::default();
                let mut start = 0u64;
                while start < samples {
                    let end = (start + SAMPLE_BATCH).min(samples);
                    let part = (start..end)
                        .into_par_iter()
                        .fold(
                            || (Partial::default(), Hist::new(params.m_exp), Counts::new()),
                            |(p, mut h, mut c), i| {
                                let one = job.sampled_one(seed, i, &mut h, &mut c);
                                (p.merge(one), h, c)
                            },
                        )
                        .map(|(p, _, _)| p)
                        .collect::<Vec<_>>();
                    // fold chunks arrive in index order; merge keeps the first witness
                    let part = part.into_iter().fold(Partial::default(), Partial::merge);
                    acc = acc.merge(part);
                    start = end;
                    if opts.stop_on_violation && acc.witness.is_some() {
                        break;
                    }
                }
                Ok(acc)
            }
        }
    };

    let partial = match opts.threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(body)?,
        None => body()?,
    };

    Ok(VerificationReport {
        mode,
        passed: partial.witness.is_none(),
        rectangles_checked: partial.checked,
        worst_ratio: Ratio::reduced(partial.worst, job.limit),
        witness: partial.witness,
        params: ReportParams {
            n_exp: params.n_exp,
            m_exp: params.m_exp,
            s_exp,
            d_exp,
            row_side: row_k,
            col_side: col_k,
            check: check_name,
        },
        table_digest: table.digest(),
    })
}

fn subset_check(table: &BalancedTable, d_exp: u32) -> Result<Check> {
    let m = table.params().m_exp;
    if d_exp > m {
        return Err(Error::invalid(format!(
            "d_exp = {d_exp} exceeds m_exp = {m}"
        )));
    }
    if d_exp >= 64 {
        return Err(Error::TooLarge(format!("d_exp = {d_exp}")));
    }
    let top = if m - d_exp >= 64 {
        u64::MAX
    } else {
        1u64 << (m - d_exp)
    };
    Ok(Check::Subset {
        top,
        d: 1u128 << d_exp,
    })
}

fn side_of(s_exp: u32, table: &BalancedTable) -> Result<u64> {
    if s_exp > table.params().n_exp || s_exp >= 32 {
        return Err(Error::invalid(format!(
            "s_exp = {s_exp} out of range for n_exp = {}",
            table.params().n_exp
        )));
    }
    Ok(1u64 << s_exp)
}

/// `(S, D)`-balance over `S x S` rectangles chosen by `mode`.
pub fn verify(
    table: &BalancedTable,
    s_exp: u32,
    d_exp: u32,
    mode: RectMode,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    let s = side_of(s_exp, table)?;
    let check = subset_check(table, d_exp)?;
    run(table, check, s, s, "subset", s_exp, d_exp, mode, opts)
}

pub fn verify_exhaustive(
    table: &BalancedTable,
    s_exp: u32,
    d_exp: u32,
) -> Result<VerificationReport> {
    verify(
        table,
        s_exp,
        d_exp,
        RectMode::Exhaustive,
        &VerifyOptions::default(),
    )
}

pub fn verify_sampled(
    table: &BalancedTable,
    s_exp: u32,
    d_exp: u32,
    samples: u64,
    seed: u64,
) -> Result<VerificationReport> {
    verify(
        table,
        s_exp,
        d_exp,
        RectMode::Sampled { samples, seed },
        &VerifyOptions::default(),
    )
}

/// The subset check over every rectangle with exactly `row_side` rows and
/// `col_side` columns (any sizes, not only powers of two).
pub fn verify_exhaustive_sides(
    table: &BalancedTable,
    row_side: u64,
    col_side: u64,
    d_exp: u32,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    let check = subset_check(table, d_exp)?;
    run(
        table,
        check,
        row_side,
        col_side,
        "subset",
        table.params().s_exp,
        d_exp,
        RectMode::Exhaustive,
        opts,
    )
}

/// For every checked rectangle, every prefix length `l` in `1..=m_exp` and
/// every prefix value `v`, the cells whose color starts with `v` number at
/// most `2 * 2^-l * S^2`.
pub fn verify_prefix_balance(
    table: &BalancedTable,
    s_exp: u32,
    mode: RectMode,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    let m = table.params().m_exp;
    verify_prefix_lengths(table, s_exp, &(1..=m).collect::<Vec<_>>(), mode, opts)
}

/// Prefix balance restricted to the given prefix lengths.
pub fn verify_prefix_lengths(
    table: &BalancedTable,
    s_exp: u32,
    lengths: &[u32],
    mode: RectMode,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    let m = table.params().m_exp;
    if lengths.is_empty() || lengths.iter().any(|&l| l == 0 || l > m || l >= 64) {
        return Err(Error::invalid(format!(
            "prefix lengths {lengths:?} not within 1..={m}"
        )));
    }
    let s = side_of(s_exp, table)?;
    run(
        table,
        Check::Prefix {
            lengths: lengths.to_vec(),
        },
        s,
        s,
        "prefix",
        s_exp,
        m,
        mode,
        opts,
    )
}

/// Cells of `rect` whose color lies in `colors`, recomputed directly.
pub fn rectangle_mass(table: &BalancedTable, rect: &Rectangle, colors: &[u64]) -> Result<u64> {
    let mut n = 0;
    for &r in &rect.rows {
        for &c in &rect.cols {
            if colors.contains(&table.lookup(r, c)?) {
                n += 1;
            }
        }
    }
    Ok(n)
}

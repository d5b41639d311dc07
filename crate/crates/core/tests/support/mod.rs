//! Micro tables for the balance tests.
//!
//! Random 8x8 tables over 4 colors almost never satisfy the single-color
//! bound on every 4x4 rectangle, so balanced instances come from a seeded
//! min-conflicts repair of a random table. The result is always re-checked
//! with the exhaustive verifier by the callers.

#![allow(dead_code)]

use kextract::tables::{random_table, Backend};
use kextract::{BalancedTable, TableParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const N: usize = 8;
pub const M: usize = 4;
pub const SIDE: usize = 4;
/// `2 * (1/M) * SIDE^2`.
pub const BOUND: u8 = 8;

pub fn micro_params() -> TableParams {
    TableParams::new(3, 2, 2, 2).unwrap()
}

/// Bitmasks over `0..N` with exactly `SIDE` bits set.
pub fn side_subsets() -> Vec<u8> {
    (0u16..256)
        .filter(|m| m.count_ones() as usize == SIDE)
        .map(|m| m as u8)
        .collect()
}

pub fn cells_of(table: &BalancedTable) -> Vec<u64> {
    let n = table.side().unwrap();
    (0..n * n)
        .map(|i| table.lookup(i / n, i % n).unwrap())
        .collect()
}

struct Repair {
    cells: Vec<usize>,
    subsets: Vec<u8>,
    /// `containing[r]`: indices of subsets holding row (or column) `r`.
    containing: Vec<Vec<usize>>,
    counts: Vec<[u8; M]>,
    excess: u32,
}

impl Repair {
    fn new(cells: Vec<usize>) -> Self {
        let subsets = side_subsets();
        let containing = (0..N)
            .map(|r| {
                (0..subsets.len())
                    .filter(|&i| subsets[i] >> r & 1 == 1)
                    .collect()
            })
            .collect();
        let k = subsets.len();
        let mut counts = vec![[0u8; M]; k * k];
        for (i, &rs) in subsets.iter().enumerate() {
            for (j, &cs) in subsets.iter().enumerate() {
                for r in (0..N).filter(|r| rs >> r & 1 == 1) {
                    for c in (0..N).filter(|c| cs >> c & 1 == 1) {
                        counts[i * k + j][cells[r * N + c]] += 1;
                    }
                }
            }
        }
        let excess = counts
            .iter()
            .flat_map(|h| h.iter())
            .map(|&v| v.saturating_sub(BOUND) as u32)
            .sum();
        Repair {
            cells,
            subsets,
            containing,
            counts,
            excess,
        }
    }

    fn rects_of(&self, r: usize, c: usize) -> impl Iterator<Item = usize> + '_ {
        let k = self.subsets.len();
        self.containing[r]
            .iter()
            .flat_map(move |&i| self.containing[c].iter().map(move |&j| i * k + j))
    }

    fn delta(&self, r: usize, c: usize, to: usize) -> i32 {
        let from = self.cells[r * N + c];
        self.rects_of(r, c)
            .map(|id| {
                let h = &self.counts[id];
                (h[to] >= BOUND) as i32 - (h[from] > BOUND) as i32
            })
            .sum()
    }

    fn set(&mut self, r: usize, c: usize, to: usize) {
        let from = self.cells[r * N + c];
        let ids: Vec<usize> = self.rects_of(r, c).collect();
        for id in ids {
            let h = &mut self.counts[id];
            if h[from] > BOUND {
                self.excess -= 1;
            }
            h[from] -= 1;
            if h[to] >= BOUND {
                self.excess += 1;
            }
            h[to] += 1;
        }
        self.cells[r * N + c] = to;
    }
}

/// A table at `micro_params()` with every color at most `BOUND` times in
/// every 4x4 rectangle, or `None` if the search gives up.
pub fn balanced_micro_table(seed: u64) -> Option<BalancedTable> {
    let start = random_table(micro_params(), seed).unwrap();
    let cells = cells_of(&start).into_iter().map(|c| c as usize).collect();
    let mut rep = Repair::new(cells);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_BA1A);
    let k = rep.subsets.len();
    for _ in 0..200_000 {
        if rep.excess == 0 {
            let colors: Vec<u64> = rep.cells.iter().map(|&c| c as u64).collect();
            return Some(
                BalancedTable::from_cells(
                    micro_params(),
                    Backend::ExplicitRandom { seed },
                    &colors,
                )
                .unwrap(),
            );
        }
        let bad: Vec<(usize, usize)> = (0..k * k)
            .flat_map(|id| (0..M).map(move |col| (id, col)))
            .filter(|&(id, col)| rep.counts[id][col] > BOUND)
            .collect();
        let (id, color) = bad[rng.gen_range(0..bad.len())];
        let (rs, cs) = (rep.subsets[id / k], rep.subsets[id % k]);
        let cand: Vec<(usize, usize)> = (0..N)
            .filter(|r| rs >> r & 1 == 1)
            .flat_map(|r| {
                (0..N)
                    .filter(move |c| cs >> c & 1 == 1)
                    .map(move |c| (r, c))
            })
            .filter(|&(r, c)| rep.cells[r * N + c] == color)
            .collect();
        let (r, c) = cand[rng.gen_range(0..cand.len())];
        let to = if rng.gen_bool(0.1) {
            (color + rng.gen_range(1..M)) % M
        } else {
            let opts: Vec<(i32, usize)> = (0..M)
                .filter(|&t| t != color)
                .map(|t| (rep.delta(r, c, t), t))
                .collect();
            let best = opts.iter().map(|o| o.0).min().unwrap();
            let ties: Vec<usize> = opts.iter().filter(|o| o.0 == best).map(|o| o.1).collect();
            ties[rng.gen_range(0..ties.len())]
        };
        rep.set(r, c, to);
    }
    None
}

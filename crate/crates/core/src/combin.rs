//! k-subsets of `0..n` in lexicographic order.

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Cursor over the k-subsets of `0..n`, reporting which elements left and
/// entered the subset at each step so callers can update state incrementally.
#[derive(Clone, Debug)]
pub struct CombCursor {
    n: usize,
    idx: Vec<usize>,
}

impl CombCursor {
    /// Starts at the first subset `{0, .., k-1}`.
    pub fn new(n: usize, k: usize) -> Self {
        assert!(k <= n, "k = {k} exceeds n = {n}");
        CombCursor {
            n,
            idx: (0..k).collect(),
        }
    }

    pub fn current(&self) -> &[usize] {
        &self.idx
    }

    /// Moves to the next subset. `removed` and `added` receive the elements
    /// that left and entered. Returns false (leaving the cursor unchanged)
    /// after the last subset.
    pub fn advance(&mut self, removed: &mut Vec<usize>, added: &mut Vec<usize>) -> bool {
        removed.clear();
        added.clear();
        let k = self.idx.len();
        let Some(i) = (0..k).rev().find(|&i| self.idx[i] < self.n - k + i) else {
            return false;
        };
        let start = self.idx[i] + 1;
        let old_tail: Vec<usize> = self.idx[i..].to_vec();
        for (off, slot) in self.idx[i..].iter_mut().enumerate() {
            *slot = start + off;
        }
        // both tails are sorted; merge to get the symmetric difference
        let new_tail = &self.idx[i..];
        let (mut a, mut b) = (0, 0);
        while a < old_tail.len() || b < new_tail.len() {
            match (old_tail.get(a), new_tail.get(b)) {
                (Some(&x), Some(&y)) if x == y => {
                    a += 1;
                    b += 1;
                }
                (Some(&x), Some(&y)) if x < y => {
                    removed.push(x);
                    a += 1;
                }
                (Some(_), Some(&y)) => {
                    added.push(y);
                    b += 1;
                }
                (Some(&x), None) => {
                    removed.push(x);
                    a += 1;
                }
                (None, Some(&y)) => {
                    added.push(y);
                    b += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        true
    }
}

/// Iterator over all k-subsets of `0..n`, lexicographically.
pub struct Combinations {
    cursor: CombCursor,
    started: bool,
    scratch: (Vec<usize>, Vec<usize>),
}

impl Combinations {
    pub fn new(n: usize, k: usize) -> Self {
        Combinations {
            cursor: CombCursor::new(n, k),
            started: false,
            scratch: (Vec::new(), Vec::new()),
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if !self.started {
            self.started = true;
            return Some(self.cursor.current().to_vec());
        }
        let (r, a) = &mut self.scratch;
        self.cursor
            .advance(r, a)
            .then(|| self.cursor.current().to_vec())
    }
}

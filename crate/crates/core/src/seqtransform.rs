//! Block-wise sequence transformer.
//!
//! Both input streams are cut into consecutive blocks of length `n_i = B^i`
//! (`i = 1, 2, ..`). Block `i` is fed to its own table `T_i` and contributes
//! `m_i` output bits; blocks whose `m_i` rounds to zero still consume input.
//! Every output bit depends on a fixed, content-independent prefix of each
//! stream, so the map is a truth-table reduction.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::params::{derive_seq_schedule, Rational, SeqSchedule};
use crate::seeds::mix_seed;
use crate::tables::{self, BalancedTable, ExplicitCap};
use crate::verify::{self, RectMode, VerifyOptions};

/// Read-only bit source addressed by position. Reads are repeatable.
pub trait BitStream: Send + Sync {
    /// Number of available bits, `None` if unbounded.
    fn len_bits(&self) -> Option<u64>;

    fn bit(&self, pos: u64) -> Result<bool>;

    /// Bits `start .. start + len`.
    fn read(&self, start: u64, len: u64) -> Result<BitString> {
        (start..start + len).map(|p| self.bit(p)).collect()
    }
}

/// Finite stream backed by an in-memory bit string.
#[derive(Clone, Debug)]
pub struct VecStream {
    bits: BitString,
}

impl VecStream {
    pub fn new(bits: BitString) -> Self {
        VecStream { bits }
    }

    /// Raw bytes, most significant bit first, optionally truncated to `len` bits.
    pub fn from_bytes(bytes: &[u8], len: Option<u64>) -> Result<Self> {
        let avail = bytes.len() as u64 * 8;
        let len = len.unwrap_or(avail);
        if len > avail {
            return Err(Error::StreamExhausted {
                pos: len - 1,
                len: avail,
            });
        }
        Ok(VecStream {
            bits: BitString::from_bytes(bytes, len as usize)?,
        })
    }

    pub fn from_file(path: impl AsRef<Path>, len: Option<u64>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, len)
    }
}

impl BitStream for VecStream {
    fn len_bits(&self) -> Option<u64> {
        Some(self.bits.len() as u64)
    }

    fn bit(&self, pos: u64) -> Result<bool> {
        usize::try_from(pos)
            .ok()
            .and_then(|p| self.bits.get(p))
            .ok_or(Error::StreamExhausted {
                pos,
                len: self.bits.len() as u64,
            })
    }

    fn read(&self, start: u64, len: u64) -> Result<BitString> {
        let end = start + len;
        if end > self.bits.len() as u64 {
            return Err(Error::StreamExhausted {
                pos: end - 1,
                len: self.bits.len() as u64,
            });
        }
        Ok(self.bits.slice(start as usize, end as usize))
    }
}

/// Unbounded pseudorandom stream: bit `p` is bit `31 - p % 32` of 32-bit word
/// `p / 32` of a ChaCha8 keystream keyed by the seed.
#[derive(Clone, Debug)]
pub struct SeededStream {
    seed: u64,
}

impl SeededStream {
    pub fn new(seed: u64) -> Self {
        SeededStream { seed }
    }

    fn rng_at(&self, word: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(b"bitstrm\0");
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_word_pos(word as u128);
        rng
    }
}

impl BitStream for SeededStream {
    fn len_bits(&self) -> Option<u64> {
        None
    }

    fn bit(&self, pos: u64) -> Result<bool> {
        let w = self.rng_at(pos / 32).next_u32();
        Ok(w >> (31 - pos % 32) & 1 == 1)
    }

    fn read(&self, start: u64, len: u64) -> Result<BitString> {
        let mut out = BitString::new();
        if len == 0 {
            return Ok(out);
        }
        let mut rng = self.rng_at(start / 32);
        let mut word = rng.next_u32();
        for p in start..start + len {
            if p % 32 == 0 && p != start {
                word = rng.next_u32();
            }
            out.push(word >> (31 - p % 32) & 1 == 1);
        }
        Ok(out)
    }
}

/// Wrapper that records every position read from the inner stream.
pub struct CountingStream<S> {
    inner: S,
    reads: Mutex<Vec<u64>>,
}

impl<S: BitStream> CountingStream<S> {
    pub fn new(inner: S) -> Self {
        CountingStream {
            inner,
            reads: Mutex::new(Vec::new()),
        }
    }

    /// Total number of bit reads, repeats included.
    pub fn read_count(&self) -> u64 {
        self.reads.lock().unwrap().len() as u64
    }

    pub fn read_set(&self) -> BTreeSet<u64> {
        self.reads.lock().unwrap().iter().copied().collect()
    }

    pub fn reset(&self) {
        self.reads.lock().unwrap().clear();
    }
}

impl<S: BitStream> BitStream for CountingStream<S> {
    fn len_bits(&self) -> Option<u64> {
        self.inner.len_bits()
    }

    fn bit(&self, pos: u64) -> Result<bool> {
        self.reads.lock().unwrap().push(pos);
        self.inner.bit(pos)
    }

    fn read(&self, start: u64, len: u64) -> Result<BitString> {
        self.reads.lock().unwrap().extend(start..start + len);
        self.inner.read(start, len)
    }
}

/// Input and output boundaries of each block.
#[derive(Clone, Debug)]
pub struct BlockLayout {
    schedule: SeqSchedule,
    first_block: u32,
    /// `input_offsets[k]` = sum of `n_j` for `j <= k` (blocks are 1-based).
    input_offsets: Vec<u64>,
    /// `output_offsets[k]` = sum of `m_j` for `j <= k`.
    output_offsets: Vec<u64>,
}

impl BlockLayout {
    pub fn new(schedule: SeqSchedule) -> Result<Self> {
        let first_block = schedule
            .first_block
            .ok_or_else(|| Error::invalid("no block of the schedule emits output"))?;
        let mut input_offsets = vec![0u64];
        let mut output_offsets = vec![0u64];
        for b in &schedule.blocks {
            let last_in = *input_offsets.last().unwrap();
            let last_out = *output_offsets.last().unwrap();
            input_offsets.push(
                last_in
                    .checked_add(b.n)
                    .ok_or_else(|| Error::TooLarge("cumulative input length".into()))?,
            );
            output_offsets.push(
                last_out
                    .checked_add(b.m)
                    .ok_or_else(|| Error::TooLarge("cumulative output length".into()))?,
            );
        }
        Ok(BlockLayout {
            schedule,
            first_block,
            input_offsets,
            output_offsets,
        })
    }

    pub fn schedule(&self) -> &SeqSchedule {
        &self.schedule
    }

    pub fn first_block(&self) -> u32 {
        self.first_block
    }

    pub fn num_blocks(&self) -> u32 {
        self.schedule.blocks.len() as u32
    }

    /// Input bits `start..end` of block `i`.
    pub fn input_range(&self, i: u32) -> std::ops::Range<u64> {
        let i = i as usize;
        self.input_offsets[i - 1]..self.input_offsets[i]
    }

    /// Output bits `start..end` of block `i`.
    pub fn output_range(&self, i: u32) -> std::ops::Range<u64> {
        let i = i as usize;
        self.output_offsets[i - 1]..self.output_offsets[i]
    }

    /// Total input bits of blocks `1..=i`.
    pub fn input_through(&self, i: u32) -> u64 {
        self.input_offsets[i as usize]
    }

    pub fn total_output(&self) -> u64 {
        *self.output_offsets.last().unwrap()
    }

    /// Block whose output contains `pos`.
    pub fn block_for_output(&self, pos: u64) -> Option<u32> {
        if pos >= self.total_output() {
            return None;
        }
        // first k with output_offsets[k] > pos
        let k = self.output_offsets.partition_point(|&o| o <= pos);
        Some(k as u32)
    }
}

/// How the per-block tables are obtained.
#[derive(Clone, Copy, Debug)]
pub struct SeqPolicy {
    /// Global seed; block `i` uses `mix_seed(seed, i)`.
    pub seed: u64,
    /// Use keyed tables for blocks beyond the explicit cap.
    pub allow_keyed: bool,
    pub cap: ExplicitCap,
    /// Rectangles sampled when checking prefix balance of an explicit table.
    pub verify_samples: u64,
}

impl SeqPolicy {
    pub fn new(seed: u64) -> Self {
        SeqPolicy {
            seed,
            allow_keyed: true,
            cap: ExplicitCap::default(),
            verify_samples: 64,
        }
    }
}

/// The transformer: a layout plus lazily built, memoized per-block tables.
pub struct SeqTransformer {
    layout: BlockLayout,
    policy: SeqPolicy,
    tables: Vec<Mutex<Option<Arc<BalancedTable>>>>,
}

impl SeqTransformer {
    pub fn new(schedule: SeqSchedule, policy: SeqPolicy) -> Result<Self> {
        let layout = BlockLayout::new(schedule)?;
        let tables = (0..layout.num_blocks()).map(|_| Mutex::new(None)).collect();
        Ok(SeqTransformer {
            layout,
            policy,
            tables,
        })
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    /// Table of block `i`, built at most once.
    pub fn table(&self, i: u32) -> Result<Arc<BalancedTable>> {
        let block = self
            .layout
            .schedule
            .block(i)
            .filter(|b| b.valid)
            .ok_or_else(|| Error::invalid(format!("block {i} emits no output")))?;
        let mut slot = self.tables[i as usize - 1].lock().unwrap();
        if let Some(t) = slot.as_ref() {
            return Ok(t.clone());
        }
        let seed = mix_seed(self.policy.seed, i as u64);
        let table = match block.table_params() {
            Ok(tp) if self.policy.cap.admits(&tp) => {
                let t = tables::random_table_capped(tp, seed, self.policy.cap)?;
                self.check_prefix_balance(i, &t, seed)?;
                t
            }
            Ok(tp) if self.policy.allow_keyed => tables::keyed_table(tp, seed as u128),
            _ if self.policy.allow_keyed => {
                return Err(Error::TooLarge(format!(
                    "block {i}: n_i = {} exceeds the table range",
                    block.n
                )))
            }
            _ => {
                return Err(Error::BlockTooLarge {
                    block: i,
                    n_exp: block.n,
                })
            }
        };
        let table = Arc::new(table);
        *slot = Some(table.clone());
        Ok(table)
    }

    fn check_prefix_balance(&self, i: u32, table: &BalancedTable, seed: u64) -> Result<()> {
        if self.policy.verify_samples == 0 {
            return Ok(());
        }
        let tp = table.params();
        let mode = RectMode::Sampled {
            samples: self.policy.verify_samples,
            seed,
        };
        let report =
            verify::verify_prefix_balance(table, tp.s_exp, mode, &VerifyOptions::default())?;
        if !report.passed {
            log::warn!(
                "block {i}: sampled prefix-balance check failed (worst ratio {}/{})",
                report.worst_ratio.num,
                report.worst_ratio.den
            );
        }
        Ok(())
    }

    fn block_output(
        &self,
        i: u32,
        x_prefix: &BitString,
        y_prefix: &BitString,
    ) -> Result<BitString> {
        let r = self.layout.input_range(i);
        let xi = x_prefix.slice(r.start as usize, r.end as usize);
        let yi = y_prefix.slice(r.start as usize, r.end as usize);
        self.table(i)?.lookup_bits(&xi, &yi)
    }

    fn block_for(&self, pos: u64) -> Result<u32> {
        self.layout.block_for_output(pos).ok_or_else(|| {
            Error::invalid(format!(
                "output position {pos} beyond the schedule's {} bits",
                self.layout.total_output()
            ))
        })
    }

    /// Bit `pos` of `z`. Reads exactly the input of blocks `1..=i` from each
    /// stream, where `i` is the block holding `pos`.
    pub fn output_bit(&self, x: &dyn BitStream, y: &dyn BitStream, pos: u64) -> Result<bool> {
        let i = self.block_for(pos)?;
        let len = self.layout.input_through(i);
        let xp = x.read(0, len)?;
        let yp = y.read(0, len)?;
        let z = self.block_output(i, &xp, &yp)?;
        let off = pos - self.layout.output_range(i).start;
        Ok(z.get(off as usize).expect("offset inside block output"))
    }

    /// First `out_len` bits of `z`; each stream is read once, up to the end of
    /// the last block needed.
    pub fn transform_prefix(
        &self,
        x: &dyn BitStream,
        y: &dyn BitStream,
        out_len: u64,
    ) -> Result<BitString> {
        if out_len == 0 {
            return Ok(BitString::new());
        }
        let last = self.block_for(out_len - 1)?;
        let len = self.layout.input_through(last);
        let xp = x.read(0, len)?;
        let yp = y.read(0, len)?;
        let mut z = BitString::new();
        for i in self.layout.first_block..=last {
            if !self.layout.output_range(i).is_empty() {
                z.extend_from(&self.block_output(i, &xp, &yp)?);
            }
        }
        Ok(z.truncated(out_len as usize))
    }
}

/// Shortest schedule whose blocks emit at least `out_len` bits.
pub fn schedule_covering(
    tau: &Rational,
    delta: &Rational,
    base: u64,
    out_len: u64,
) -> Result<SeqSchedule> {
    let mut blocks = 1u32;
    loop {
        let s = derive_seq_schedule(tau, delta, base, blocks)?;
        let total: u64 = s.blocks.iter().map(|b| b.m).sum();
        if total >= out_len && s.first_block.is_some() {
            return Ok(s);
        }
        blocks += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(p: i64, q: i64) -> Rational {
        Rational::new(p, q)
    }

    fn small() -> SeqTransformer {
        let s = derive_seq_schedule(&r(1, 2), &r(1, 2), 2, 4).unwrap();
        SeqTransformer::new(s, SeqPolicy::new(42)).unwrap()
    }

    #[test]
    fn layout_offsets() {
        let t = small();
        let l = t.layout();
        assert_eq!(l.first_block(), 2);
        assert_eq!(l.input_range(1), 0..2);
        assert_eq!(l.input_range(4), 14..30);
        assert_eq!(l.output_range(1), 0..0);
        assert_eq!(l.output_range(2), 0..1);
        assert_eq!(l.output_range(3), 1..4);
        assert_eq!(l.output_range(4), 4..11);
        let blocks: Vec<u32> = (0..11).map(|p| l.block_for_output(p).unwrap()).collect();
        assert_eq!(blocks, [2, 3, 3, 3, 4, 4, 4, 4, 4, 4, 4]);
        assert_eq!(l.block_for_output(11), None);
    }

    #[test]
    fn prefix_agrees_with_bits() {
        let t = small();
        let (x, y) = (SeededStream::new(1), SeededStream::new(2));
        let z = t.transform_prefix(&x, &y, 11).unwrap();
        assert_eq!(z.len(), 11);
        for p in 0..11 {
            assert_eq!(Some(t.output_bit(&x, &y, p).unwrap()), z.get(p as usize));
        }
        for k in 0..=11 {
            assert_eq!(
                t.transform_prefix(&x, &y, k).unwrap(),
                z.truncated(k as usize)
            );
        }
        assert!(t.transform_prefix(&x, &y, 12).is_err());
    }

    #[test]
    fn first_block_alone() {
        let t = small();
        let (x, y) = (SeededStream::new(1), SeededStream::new(2));
        let z = t.transform_prefix(&x, &y, 1).unwrap();
        let r2 = t.layout().input_range(2);
        let xi = x.read(r2.start, r2.end - r2.start).unwrap();
        let yi = y.read(r2.start, r2.end - r2.start).unwrap();
        assert_eq!(z, t.table(2).unwrap().lookup_bits(&xi, &yi).unwrap());
    }

    #[test]
    fn block_isolation() {
        let t = small();
        let x = SeededStream::new(5).read(0, 30).unwrap();
        let y = SeededStream::new(6).read(0, 30).unwrap();
        let base = t
            .transform_prefix(&VecStream::new(x.clone()), &VecStream::new(y.clone()), 11)
            .unwrap();
        // flipping a bit in block 4's input leaves blocks 2 and 3 alone
        let mut flipped: Vec<bool> = x.as_slice().to_vec();
        flipped[20] = !flipped[20];
        let z = t
            .transform_prefix(
                &VecStream::new(BitString::from_bits(flipped)),
                &VecStream::new(y),
                11,
            )
            .unwrap();
        assert_eq!(z.truncated(4), base.truncated(4));
    }

    #[test]
    fn read_set_is_the_prefix() {
        let t = small();
        for (pos, need) in [(0u64, 6u64), (2, 14), (9, 30)] {
            let x = CountingStream::new(SeededStream::new(pos));
            let y = CountingStream::new(SeededStream::new(pos + 100));
            t.output_bit(&x, &y, pos).unwrap();
            assert_eq!(x.read_set(), (0..need).collect());
            assert_eq!(y.read_count(), need);
        }
    }

    #[test]
    fn short_stream_is_an_error() {
        let t = small();
        let x = VecStream::new(BitString::zeros(10));
        let y = SeededStream::new(0);
        assert!(matches!(
            t.output_bit(&x, &y, 2),
            Err(Error::StreamExhausted { .. })
        ));
    }

    #[test]
    fn large_block_without_keyed_fallback() {
        let s = derive_seq_schedule(&r(1, 2), &r(1, 2), 2, 5).unwrap();
        let mut p = SeqPolicy::new(0);
        p.allow_keyed = false;
        let t = SeqTransformer::new(s.clone(), p).unwrap();
        let (x, y) = (SeededStream::new(1), SeededStream::new(2));
        // block 5 has n = 32 > 12
        assert!(matches!(
            t.output_bit(&x, &y, 11),
            Err(Error::BlockTooLarge {
                block: 5,
                n_exp: 32
            })
        ));
        let t = SeqTransformer::new(s, SeqPolicy::new(0)).unwrap();
        assert_eq!(t.transform_prefix(&x, &y, 26).unwrap().len(), 26);
    }

    #[test]
    fn seeded_stream_reads_match_bits() {
        let s = SeededStream::new(9);
        let chunk = s.read(37, 70).unwrap();
        for k in 0..70 {
            assert_eq!(chunk.get(k), Some(s.bit(37 + k as u64).unwrap()));
        }
    }

    #[test]
    fn covering_schedule() {
        let s = schedule_covering(&r(1, 2), &r(1, 2), 2, 11).unwrap();
        assert_eq!(s.blocks.len(), 4);
        let s = schedule_covering(&r(1, 2), &r(1, 2), 2, 12).unwrap();
        assert_eq!(s.blocks.len(), 5);
    }
}

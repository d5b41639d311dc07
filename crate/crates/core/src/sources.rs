//! Empirical harness: planted-dependency source pairs, a compression
//! surrogate for complexity, entropy metrics and the extraction experiment.
//!
//! Nothing here certifies complexity. The surrogate only measures how much a
//! fixed compressor saves, and the experiment reports correlations.

use std::collections::HashMap;
use std::hash::Hash;
use std::io::Write;
use std::process::{Command, Stdio};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::extract::{ExtractorConfig, StringExtractor};
use crate::params::{ceil_log2, Rational};
use crate::seeds::mix_seed;
use crate::tables::Backend;

/// `|dep_hat(x, y)|` bound for independent uniform 1024-bit pairs, from the
/// committed calibration run (`examples/calibrate.rs`, output in
/// `calibration/estimator.txt`): the 0.99 quantile over 10^4 pairs.
pub const THETA_INDEP: f64 = 20.0;

/// `|dep_hat(x, y) - dep_hat(y, x)|` bound on the same inputs.
pub const THETA_SYM: f64 = 15.0;

/// Two strings sharing a planted block of random bits.
///
/// `x = r1 || shared || 0*` and `y = r2 || shared || 0*`, where `shared` has
/// `round(alpha n)` bits and `r1`, `r2` fill the random part to `round(sigma n)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PlantedPairSpec {
    pub n: u32,
    pub sigma: Rational,
    pub alpha: Rational,
    pub seed: u64,
}

impl PlantedPairSpec {
    pub fn new(n: u32, sigma: Rational, alpha: Rational, seed: u64) -> Result<Self> {
        let spec = PlantedPairSpec {
            n,
            sigma,
            alpha,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let zero = Rational::integer(0);
        let one = Rational::integer(1);
        if self.alpha < zero || self.alpha > self.sigma || self.sigma > one {
            return Err(Error::invalid(format!(
                "need 0 <= alpha <= sigma <= 1, got alpha = {}, sigma = {}",
                self.alpha, self.sigma
            )));
        }
        Ok(())
    }

    fn scaled(&self, r: &Rational) -> usize {
        let v = (r * &Rational::integer(self.n as i64)).round_half_up();
        usize::try_from(v).expect("at most n")
    }

    /// Bits in the planted shared block.
    pub fn shared_bits(&self) -> usize {
        self.scaled(&self.alpha)
    }

    /// Random bits per string, shared block included.
    pub fn random_bits(&self) -> usize {
        self.scaled(&self.sigma)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        PlantedPairSpec {
            seed,
            ..self.clone()
        }
    }
}

fn planted_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(b"planted\0");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// `len` bits from 32-bit words, most significant bit first.
fn draw_bits(rng: &mut ChaCha8Rng, len: usize) -> BitString {
    let mut out = BitString::new();
    while out.len() < len {
        let w = rng.next_u32();
        for k in (0..32).rev().take(len - out.len()) {
            out.push(w >> k & 1 == 1);
        }
    }
    out
}

/// Deterministic per seed: ChaCha8 stream 0 gives the shared block, streams
/// 1 and 2 the private parts of `x` and `y`.
pub fn gen_planted_pair(spec: &PlantedPairSpec) -> Result<(BitString, BitString)> {
    spec.validate()?;
    let shared_len = spec.shared_bits();
    let private_len = spec.random_bits() - shared_len;
    let shared = draw_bits(&mut planted_rng(spec.seed, 0), shared_len);
    let build = |stream| {
        let mut s = draw_bits(&mut planted_rng(spec.seed, stream), private_len);
        s.extend_from(&shared);
        s.extend_from(&BitString::zeros(spec.n as usize - s.len()));
        s
    };
    Ok((build(1), build(2)))
}

/// Computable stand-in for complexity, in bits.
pub trait ComplexityEstimator: Sync {
    fn name(&self) -> &str;

    /// Non-negative and deterministic.
    fn estimate(&self, x: &BitString) -> Result<f64>;
}

/// Built-in bit-level LZ77 coder; the estimate is the exact encoded length.
///
/// Tokens start with a flag bit. A literal run of `r` bits costs
/// `1 + gamma(r) + r`. A match at position `p` copying `L >= MIN_MATCH` bits
/// from distance `1..=p` (overlap allowed) costs
/// `1 + ceil(log2 p) + gamma(L - MIN_MATCH + 1)`. Parsing is greedy: at each
/// position take the longest previous match (nearest on ties, at most
/// `MAX_CHAIN` candidates found through the `MIN_MATCH`-bit window), and emit
/// it only when it is strictly cheaper than `L` literal bits.
/// `gamma(v) = 2 floor(log2 v) + 1` is the Elias gamma length.
#[derive(Clone, Copy, Debug, Default)]
pub struct LzEstimator;

impl LzEstimator {
    pub const MIN_MATCH: usize = 20;
    pub const MAX_CHAIN: usize = 64;

    fn gamma(v: u64) -> u64 {
        debug_assert!(v >= 1);
        2 * (63 - v.leading_zeros() as u64) + 1
    }

    fn match_cost(pos: usize, len: usize) -> u64 {
        1 + ceil_log2(pos as u64) as u64 + Self::gamma((len - Self::MIN_MATCH + 1) as u64)
    }

    pub fn encoded_bits(bits: &[bool]) -> u64 {
        let n = bits.len();
        let window = |p: usize| {
            bits[p..p + Self::MIN_MATCH]
                .iter()
                .fold(0u32, |a, &b| a << 1 | b as u32)
        };
        let mut heads: HashMap<u32, Vec<usize>> = HashMap::new();
        let mut inserted = 0usize;
        let mut total = 0u64;
        let mut run = 0u64;
        let mut p = 0usize;
        while p < n {
            // positions before p are searchable
            while inserted < p {
                if inserted + Self::MIN_MATCH <= n {
                    heads.entry(window(inserted)).or_default().push(inserted);
                }
                inserted += 1;
            }
            let mut best = (0usize, 0usize);
            if p + Self::MIN_MATCH <= n {
                if let Some(cands) = heads.get(&window(p)) {
                    for &q in cands.iter().rev().take(Self::MAX_CHAIN) {
                        let len = (0..n - p)
                            .take_while(|&l| bits[q + l] == bits[p + l])
                            .count();
                        if len > best.0 {
                            best = (len, q);
                        }
                    }
                }
            }
            let (len, _) = best;
            if len >= Self::MIN_MATCH && Self::match_cost(p, len) < len as u64 {
                if run > 0 {
                    total += 1 + Self::gamma(run) + run;
                    run = 0;
                }
                total += Self::match_cost(p, len);
                p += len;
            } else {
                run += 1;
                p += 1;
            }
        }
        if run > 0 {
            total += 1 + Self::gamma(run) + run;
        }
        total
    }
}

impl ComplexityEstimator for LzEstimator {
    fn name(&self) -> &str {
        "lz-bits"
    }

    fn estimate(&self, x: &BitString) -> Result<f64> {
        Ok(Self::encoded_bits(x.as_slice()) as f64)
    }
}

/// External compressor fed the packed bytes on stdin; the estimate is eight
/// times the length of its stdout.
#[derive(Clone, Debug)]
pub struct CommandEstimator {
    pub program: String,
    pub args: Vec<String>,
}

impl ComplexityEstimator for CommandEstimator {
    fn name(&self) -> &str {
        &self.program
    }

    fn estimate(&self, x: &BitString) -> Result<f64> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let input = x.to_bytes();
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || stdin.write_all(&input));
        let out = child.wait_with_output()?;
        writer.join().expect("writer thread")?;
        if !out.status.success() {
            return Err(Error::Io(std::io::Error::other(format!(
                "{} exited with {}",
                self.program, out.status
            ))));
        }
        Ok(out.stdout.len() as f64 * 8.0)
    }
}

/// `est(x) + est(y) - est(x || y)`; may be negative.
pub fn dep_estimate(x: &BitString, y: &BitString, est: &dyn ComplexityEstimator) -> Result<f64> {
    Ok(est.estimate(x)? + est.estimate(y)? - est.estimate(&x.concat(y))?)
}

fn counts<T: Hash + Eq>(samples: &[T]) -> Result<HashMap<&T, u64>> {
    if samples.is_empty() {
        return Err(Error::invalid("entropy of an empty sample"));
    }
    let mut c = HashMap::new();
    for s in samples {
        *c.entry(s).or_insert(0u64) += 1;
    }
    Ok(c)
}

/// Plug-in min-entropy `-log2(max frequency / count)`.
pub fn min_entropy_empirical<T: Hash + Eq>(samples: &[T]) -> Result<f64> {
    let c = counts(samples)?;
    let max = *c.values().max().expect("nonempty");
    Ok(-(max as f64 / samples.len() as f64).log2())
}

/// Plug-in collision entropy `-log2(sum p^2)`.
pub fn collision_entropy_empirical<T: Hash + Eq>(samples: &[T]) -> Result<f64> {
    let c = counts(samples)?;
    let total = samples.len() as f64;
    let mut sq: Vec<u64> = c.values().map(|&k| k * k).collect();
    // order-independent sum
    sq.sort_unstable();
    let s: u64 = sq.iter().sum();
    Ok(-(s as f64 / (total * total)).log2())
}

#[derive(Clone, Copy, Debug)]
pub struct ExperimentConfig {
    pub extractor: ExtractorConfig,
    /// Trial `t` draws its pair with seed `mix_seed(master_seed, t)`.
    pub master_seed: u64,
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRow {
    pub trial: u64,
    pub seed: u64,
    pub dep_planted: u64,
    pub dep_hat: f64,
    pub z_hex: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DepStats {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub n: u32,
    pub sigma: Rational,
    pub alpha: Rational,
    pub trials: u64,
    pub master_seed: u64,
    pub m_exp: u32,
    pub s_exp: u32,
    pub d_exp: u32,
    pub guarantee_applies: bool,
    /// `(2 sigma - alpha) n - 9 ceil(log2 n)`, exact.
    pub nominal_bound: Rational,
    pub min_entropy: f64,
    pub collision_entropy: f64,
    /// `log2(trials)`: no plug-in estimate can exceed it.
    pub max_measurable_entropy: f64,
    /// Fewer trials than output values, so the plug-in entropies are capped
    /// below `m_exp` by the sample size alone.
    pub insufficient_sampling: bool,
    pub dep_planted: u64,
    pub dep_hat: DepStats,
    pub estimator: String,
    pub table_backend: Backend,
    pub table_digest: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub summary: ExperimentSummary,
    pub rows: Vec<TrialRow>,
}

impl ExperimentReport {
    /// Header `trial,seed,dep_planted,dep_hat,z_hex`, one row per trial.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for row in &self.rows {
            wr.serialize(row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary)?)
    }
}

fn dep_stats(values: &[f64]) -> DepStats {
    if values.is_empty() {
        return DepStats {
            mean: 0.0,
            sd: 0.0,
            min: 0.0,
            max: 0.0,
        };
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k;
    DepStats {
        mean,
        sd: var.sqrt(),
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Runs `trials` planted pairs through one fixed extractor table and reports
/// output entropies and per-trial dependency estimates. Identical for any
/// thread count.
pub fn run_extraction_experiment(
    spec: &PlantedPairSpec,
    trials: u64,
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    run_experiment_with(spec, trials, config, &LzEstimator)
}

pub fn run_experiment_with(
    spec: &PlantedPairSpec,
    trials: u64,
    config: &ExperimentConfig,
    est: &dyn ComplexityEstimator,
) -> Result<ExperimentReport> {
    spec.validate()?;
    let extractor = StringExtractor::new(spec.n, &spec.sigma, &spec.alpha, &config.extractor)?;
    let dep_planted = spec.shared_bits() as u64;
    let run_trial = |t: u64| -> Result<(TrialRow, BitString)> {
        let seed = mix_seed(config.master_seed, t);
        let (x, y) = gen_planted_pair(&spec.with_seed(seed))?;
        let z = extractor.extract(&x, &y)?;
        Ok((
            TrialRow {
                trial: t,
                seed,
                dep_planted,
                dep_hat: dep_estimate(&x, &y, est)?,
                z_hex: z.to_hex(),
            },
            z,
        ))
    };
    let run_all = || {
        (0..trials)
            .into_par_iter()
            .map(run_trial)
            .collect::<Result<Vec<_>>>()
    };
    let results = match config.threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(run_all)?,
        None => run_all()?,
    };
    let (rows, outputs): (Vec<TrialRow>, Vec<BitString>) = results.into_iter().unzip();

    let p = extractor.params();
    let (min_entropy, collision_entropy) = if outputs.is_empty() {
        (0.0, 0.0)
    } else {
        (
            min_entropy_empirical(&outputs)?,
            collision_entropy_empirical(&outputs)?,
        )
    };
    let deps: Vec<f64> = rows.iter().map(|r| r.dep_hat).collect();
    let tp = extractor.table().params();
    let summary = ExperimentSummary {
        n: spec.n,
        sigma: spec.sigma.clone(),
        alpha: spec.alpha.clone(),
        trials,
        master_seed: config.master_seed,
        m_exp: p.m_exp,
        s_exp: tp.s_exp,
        d_exp: tp.d_exp,
        guarantee_applies: p.guarantee_applies,
        nominal_bound: p.nominal_bound(),
        min_entropy,
        collision_entropy,
        max_measurable_entropy: if trials == 0 {
            0.0
        } else {
            (trials as f64).log2()
        },
        insufficient_sampling: p.m_exp >= 64 || trials < 1u64 << p.m_exp,
        dep_planted,
        dep_hat: dep_stats(&deps),
        estimator: est.name().to_string(),
        table_backend: extractor.table().backend(),
        table_digest: extractor.table().digest(),
    };
    Ok(ExperimentReport { summary, rows })
}

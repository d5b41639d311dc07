//! Exact parameter derivation for the string extractors and the sequence
//! transformer.
//!
//! Every length is derived from exact rationals. Sizes that must not exceed
//! their real-valued target (`m`, `m_i`) are floored; thresholds that must not
//! fall below theirs (`s`, `d`, `log n`) are ceiled. `log` is `log2`.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// An exact rational, written `P/Q` (or just `P`) on the command line and in
/// reports.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rational(BigRational);

impl Rational {
    pub fn new(num: i64, den: i64) -> Self {
        Rational(BigRational::new(num.into(), den.into()))
    }

    pub fn integer(v: i64) -> Self {
        Rational(BigRational::from_integer(v.into()))
    }

    pub fn inner(&self) -> &BigRational {
        &self.0
    }

    pub fn floor(&self) -> BigInt {
        self.0.floor().to_integer()
    }

    pub fn ceil(&self) -> BigInt {
        self.0.ceil().to_integer()
    }

    /// Nearest integer, halves rounded up.
    pub fn round_half_up(&self) -> BigInt {
        (&self.0 + BigRational::new(1.into(), 2.into()))
            .floor()
            .to_integer()
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }
}

impl From<BigRational> for Rational {
    fn from(r: BigRational) -> Self {
        Rational(r)
    }
}

impl std::ops::Mul for &Rational {
    type Output = Rational;
    fn mul(self, rhs: &Rational) -> Rational {
        Rational(&self.0 * &rhs.0)
    }
}

impl std::ops::Sub for &Rational {
    type Output = Rational;
    fn sub(self, rhs: &Rational) -> Rational {
        Rational(&self.0 - &rhs.0)
    }
}

impl std::ops::Div for &Rational {
    type Output = Rational;
    fn div(self, rhs: &Rational) -> Rational {
        Rational(&self.0 / &rhs.0)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.denom().is_one() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl FromStr for Rational {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("not a rational P/Q: {s:?}"));
        let (p, q) = match s.split_once('/') {
            Some((p, q)) => (p.trim(), q.trim()),
            None => (s.trim(), "1"),
        };
        let p: BigInt = p.parse().map_err(|_| bad())?;
        let q: BigInt = q.parse().map_err(|_| bad())?;
        if q.is_zero() {
            return Err(bad());
        }
        Ok(Rational(BigRational::new(p, q)))
    }
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn to_u64(v: &BigInt, what: &str) -> Result<u64> {
    v.to_u64()
        .ok_or_else(|| Error::invalid(format!("{what} = {v} is not a representable length")))
}

/// `ceil(log2 n)` for `n >= 1`.
pub fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

/// Exponents of an `(N, M)` table with balance parameters `S`, `D`:
/// `N = 2^n_exp`, `M = 2^m_exp`, `S = 2^s_exp`, `D = 2^d_exp`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TableParams {
    pub n_exp: u32,
    pub m_exp: u32,
    pub s_exp: u32,
    pub d_exp: u32,
}

impl TableParams {
    pub fn new(n_exp: u32, m_exp: u32, s_exp: u32, d_exp: u32) -> Result<Self> {
        let p = TableParams {
            n_exp,
            m_exp,
            s_exp,
            d_exp,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_exp < 1 || self.m_exp < 1 {
            return Err(Error::invalid(format!(
                "need n_exp >= 1 and m_exp >= 1, got n_exp={} m_exp={}",
                self.n_exp, self.m_exp
            )));
        }
        if self.s_exp > self.n_exp {
            return Err(Error::invalid(format!(
                "s_exp={} exceeds n_exp={}",
                self.s_exp, self.n_exp
            )));
        }
        if self.d_exp > self.m_exp {
            return Err(Error::invalid(format!(
                "d_exp={} exceeds m_exp={}",
                self.d_exp, self.m_exp
            )));
        }
        Ok(())
    }

    /// Same table shape, different balance parameters.
    pub fn with_balance(&self, s_exp: u32, d_exp: u32) -> Result<Self> {
        TableParams::new(self.n_exp, self.m_exp, s_exp, d_exp)
    }
}

/// Parameters of the unconditional two-string extractor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StringExtractParams {
    pub n: u32,
    pub sigma: Rational,
    pub alpha: Rational,
    pub m_exp: u32,
    pub s_exp: u32,
    /// `ceil(alpha n) + 8 ceil(log n)`; may reach `m_exp` under [`StringExtractParams::relaxed`].
    pub d_exp: u32,
    /// True when every hypothesis of the complexity guarantee holds
    /// (`0 < alpha < sigma <= 1` and `d_exp < m_exp`).
    pub guarantee_applies: bool,
}

struct StringFormulas {
    m: BigInt,
    s: BigInt,
    d: BigInt,
}

fn string_formulas(n: u32, sigma: &Rational, alpha: &Rational) -> StringFormulas {
    let n_r = Rational::integer(n as i64);
    let logn = BigInt::from(ceil_log2(n as u64));
    let two_sigma_n = &(&Rational::integer(2) * sigma) * &n_r;
    StringFormulas {
        m: two_sigma_n.floor() - &logn,
        s: (sigma * &n_r).ceil(),
        d: (alpha * &n_r).ceil() + BigInt::from(8) * &logn,
    }
}

/// Derives the extractor parameters for `n`-bit inputs with complexity rate
/// `sigma` and dependency rate `alpha`, enforcing every hypothesis of the complexity guarantee.
pub fn derive_string_params(
    n: u32,
    sigma: &Rational,
    alpha: &Rational,
) -> Result<StringExtractParams> {
    if n < 2 {
        return Err(Error::invalid(format!("n = {n} must be at least 2")));
    }
    if !alpha.is_positive() || alpha >= sigma || sigma > &Rational::integer(1) {
        return Err(Error::invalid(format!(
            "need 0 < alpha < sigma <= 1, got sigma={sigma} alpha={alpha}"
        )));
    }
    let f = string_formulas(n, sigma, alpha);
    if f.m < BigInt::one() {
        return Err(Error::invalid(format!("m_exp = {} < 1; n too small", f.m)));
    }
    if f.d >= f.m {
        return Err(Error::invalid(format!(
            "d_exp = {} >= m_exp = {}; n too small for (sigma, alpha)",
            f.d, f.m
        )));
    }
    if f.s > BigInt::from(n) {
        return Err(Error::invalid(format!("s_exp = {} > n = {n}", f.s)));
    }
    Ok(StringExtractParams {
        n,
        sigma: sigma.clone(),
        alpha: alpha.clone(),
        m_exp: to_u64(&f.m, "m_exp")? as u32,
        s_exp: to_u64(&f.s, "s_exp")? as u32,
        d_exp: to_u64(&f.d, "d_exp")? as u32,
        guarantee_applies: true,
    })
}

impl StringExtractParams {
    /// Same formulas as [`derive_string_params`] but only requires a usable
    /// table shape: `0 <= alpha < sigma <= 1`, `m_exp >= 1`, `s_exp <= n`.
    /// Small inputs where `d_exp >= m_exp` are accepted with
    /// `guarantee_applies = false`.
    pub fn relaxed(n: u32, sigma: &Rational, alpha: &Rational) -> Result<Self> {
        if let Ok(p) = derive_string_params(n, sigma, alpha) {
            return Ok(p);
        }
        if n < 1 {
            return Err(Error::invalid("n must be positive"));
        }
        if alpha.inner().is_negative() || alpha >= sigma || sigma > &Rational::integer(1) {
            return Err(Error::invalid(format!(
                "need 0 <= alpha < sigma <= 1, got sigma={sigma} alpha={alpha}"
            )));
        }
        let f = string_formulas(n, sigma, alpha);
        if f.m < BigInt::one() {
            return Err(Error::invalid(format!("m_exp = {} < 1; n too small", f.m)));
        }
        if f.s > BigInt::from(n) {
            return Err(Error::invalid(format!("s_exp = {} > n = {n}", f.s)));
        }
        Ok(StringExtractParams {
            n,
            sigma: sigma.clone(),
            alpha: alpha.clone(),
            m_exp: to_u64(&f.m, "m_exp")? as u32,
            s_exp: to_u64(&f.s, "s_exp")? as u32,
            d_exp: to_u64(&f.d, "d_exp")? as u32,
            guarantee_applies: false,
        })
    }

    /// Table shape used by the extractor; `D` is capped at `M`.
    pub fn table_params(&self) -> TableParams {
        TableParams {
            n_exp: self.n,
            m_exp: self.m_exp,
            s_exp: self.s_exp,
            d_exp: self.d_exp.min(self.m_exp),
        }
    }

    /// `(2 sigma - alpha) n - 9 ceil(log n)`, the nominal complexity bound.
    pub fn nominal_bound(&self) -> Rational {
        let n_r = Rational::integer(self.n as i64);
        let two_sigma = &Rational::integer(2) * &self.sigma;
        let rate = &two_sigma - &self.alpha;
        &(&rate * &n_r) - &Rational::integer(9 * ceil_log2(self.n as u64) as i64)
    }
}

/// Parameters of the conditional extractor (output random given either input).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CondExtractParams {
    pub n: u32,
    pub s_of_n: u32,
    pub alpha_of_n: u32,
    pub m_exp: u32,
    pub s_exp: u32,
    /// `alpha(n) + 11 ceil(log n)`; reported, never enforced.
    pub guarantee_slack: u32,
}

pub fn derive_cond_params(n: u32, s_of_n: u32, alpha_of_n: u32) -> Result<CondExtractParams> {
    let logn = ceil_log2(n as u64) as i64;
    if (s_of_n as i64) <= 6 * logn || s_of_n > n {
        return Err(Error::invalid(format!(
            "need 6 ceil(log n) = {} < s(n) <= n = {n}, got s(n) = {s_of_n}",
            6 * logn
        )));
    }
    let m = (s_of_n / 2) as i64 - 7 * logn;
    if m < 1 {
        return Err(Error::invalid(format!("m_exp = {m} < 1; s(n) too small")));
    }
    Ok(CondExtractParams {
        n,
        s_of_n,
        alpha_of_n,
        m_exp: m as u32,
        s_exp: s_of_n.div_ceil(2),
        guarantee_slack: alpha_of_n + 11 * logn as u32,
    })
}

impl CondExtractParams {
    /// `D = M` for the conditional construction.
    pub fn table_params(&self) -> TableParams {
        TableParams {
            n_exp: self.n,
            m_exp: self.m_exp,
            s_exp: self.s_exp,
            d_exp: self.m_exp,
        }
    }
}

/// Per-block parameters of the sequence transformer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockParams {
    pub index: u32,
    /// Block length `n_i = B^i`; also the row/column exponent of `T_i`.
    pub n: u64,
    /// Output length `floor(0.97 tau n_i)`; also the color exponent.
    pub m: u64,
    pub s_exp: u64,
    pub d_exp: u64,
    /// False when `m < 1`: the block consumes input but emits nothing.
    pub valid: bool,
}

impl BlockParams {
    pub fn table_params(&self) -> Result<TableParams> {
        let conv = |v: u64, what: &str| {
            u32::try_from(v).map_err(|_| Error::TooLarge(format!("block {what} = {v}")))
        };
        TableParams::new(
            conv(self.n, "n")?,
            conv(self.m, "m")?,
            conv(self.s_exp, "s_exp")?,
            conv(self.d_exp, "d_exp")?,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqSchedule {
    pub tau: Rational,
    pub delta: Rational,
    pub base: u64,
    /// `delta / 4`.
    pub epsilon: Rational,
    /// `(1/3) epsilon^2 (0.97 tau) (1/B)`.
    pub alpha: Rational,
    pub blocks: Vec<BlockParams>,
    /// Smallest block index with `m_i >= 1`, if any block emits.
    pub first_block: Option<u32>,
    /// Smallest index `i0` such that `m_i` is strictly increasing for `i >= i0`
    /// over the computed blocks.
    pub increasing_from: Option<u32>,
    /// `epsilon >= 1/4` makes the `1 - 4 epsilon` rate target vacuous.
    pub vacuous: bool,
}

impl SeqSchedule {
    pub fn block(&self, i: u32) -> Option<&BlockParams> {
        self.blocks.get((i as usize).checked_sub(1)?)
    }
}

pub fn derive_seq_schedule(
    tau: &Rational,
    delta: &Rational,
    base: u64,
    max_block: u32,
) -> Result<SeqSchedule> {
    if !tau.is_positive() || tau > &Rational::integer(1) {
        return Err(Error::invalid(format!("need 0 < tau <= 1, got {tau}")));
    }
    if !delta.is_positive() {
        return Err(Error::invalid(format!("need delta > 0, got {delta}")));
    }
    if base < 2 {
        return Err(Error::invalid(format!("need B >= 2, got {base}")));
    }
    if max_block < 1 {
        return Err(Error::invalid("need max_block >= 1"));
    }
    let epsilon = delta / &Rational::integer(4);
    let out_rate = &Rational::new(97, 100) * tau;
    let thr_rate = &Rational::new(98, 100) * tau;
    let alpha = {
        let e2 = &epsilon * &epsilon;
        let third = &Rational::new(1, 3) * &e2;
        &(&third * &out_rate) / &Rational::integer(base as i64)
    };

    let mut blocks = Vec::with_capacity(max_block as usize);
    let mut n_i: u64 = 1;
    for i in 1..=max_block {
        n_i = n_i
            .checked_mul(base)
            .ok_or_else(|| Error::TooLarge(format!("block length B^{i} overflows 64 bits")))?;
        let n_r = Rational::from(BigRational::from_integer(BigInt::from(n_i)));
        let m = to_u64(&(&out_rate * &n_r).floor(), "m_i")?;
        let s = to_u64(&(&thr_rate * &n_r).ceil(), "s_i")?;
        blocks.push(BlockParams {
            index: i,
            n: n_i,
            m,
            s_exp: s,
            d_exp: m,
            valid: m >= 1,
        });
    }
    let first_block = blocks.iter().find(|b| b.valid).map(|b| b.index);
    let mut increasing_from = None;
    for k in (0..blocks.len()).rev() {
        let ok = blocks[k].valid && (k + 1 == blocks.len() || blocks[k].m < blocks[k + 1].m);
        if !ok {
            break;
        }
        increasing_from = Some(blocks[k].index);
    }
    let vacuous = epsilon >= Rational::new(1, 4);
    Ok(SeqSchedule {
        tau: tau.clone(),
        delta: delta.clone(),
        base,
        epsilon,
        alpha,
        blocks,
        first_block,
        increasing_from,
        vacuous,
    })
}

//! Two-string extractors: the output is the color `T(x, y)` of a table sized
//! from the input length and the complexity/dependency parameters.
//!
//! `x` selects the row and `y` the column, both read most significant bit
//! first; the color is returned as exactly `m_exp` bits, most significant first.

use std::sync::Arc;

use serde::Serialize;

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::params::{
    derive_cond_params, derive_string_params, CondExtractParams, Rational, StringExtractParams,
    TableParams,
};
use crate::tables::{self, BalancedTable, ExplicitCap};

/// Where the extractor's table comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TablePolicy {
    /// Lexicographically first balanced table; micro parameters only.
    Canonical,
    /// Explicit seeded random table; fails beyond the explicit cap.
    Random { seed: u64 },
    /// Keyed implicit table.
    Keyed { key: u128 },
    /// Explicit random table when it fits the cap, keyed (`key = seed`) otherwise.
    Auto { seed: u64 },
}

impl Default for TablePolicy {
    fn default() -> Self {
        TablePolicy::Auto { seed: 0 }
    }
}

/// Whether parameters must satisfy every hypothesis of the complexity
/// guarantee, or only describe a usable table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamCheck {
    Strict,
    #[default]
    Relaxed,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ExtractorConfig {
    pub policy: TablePolicy,
    pub check: ParamCheck,
    pub cap: ExplicitCap,
}

impl ExtractorConfig {
    pub fn with_policy(policy: TablePolicy) -> Self {
        ExtractorConfig {
            policy,
            ..Default::default()
        }
    }
}

/// Materializes (or keys) the table for `params` under `policy`.
pub fn build_table(
    params: TableParams,
    policy: TablePolicy,
    cap: ExplicitCap,
) -> Result<BalancedTable> {
    match policy {
        TablePolicy::Canonical => tables::canonical_table_capped(params, cap),
        TablePolicy::Random { seed } => tables::random_table_capped(params, seed, cap),
        TablePolicy::Keyed { key } => Ok(tables::keyed_table(params, key)),
        TablePolicy::Auto { seed } if cap.admits(&params) => {
            tables::random_table_capped(params, seed, cap)
        }
        TablePolicy::Auto { seed } => Ok(tables::keyed_table(params, seed as u128)),
    }
}

fn check_inputs(x: &BitString, y: &BitString, n: u32) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "|x| = {} differs from |y| = {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() != n as usize {
        return Err(Error::invalid(format!(
            "inputs have {} bits, extractor expects {n}",
            x.len()
        )));
    }
    Ok(())
}

/// Extractor with the table built once and reused across calls.
#[derive(Clone, Debug)]
pub struct StringExtractor {
    params: StringExtractParams,
    table: Arc<BalancedTable>,
}

impl StringExtractor {
    pub fn new(
        n: u32,
        sigma: &Rational,
        alpha: &Rational,
        config: &ExtractorConfig,
    ) -> Result<Self> {
        let params = match config.check {
            ParamCheck::Strict => derive_string_params(n, sigma, alpha)?,
            ParamCheck::Relaxed => StringExtractParams::relaxed(n, sigma, alpha)?,
        };
        let table = build_table(params.table_params(), config.policy, config.cap)?;
        Ok(StringExtractor {
            params,
            table: Arc::new(table),
        })
    }

    pub fn params(&self) -> &StringExtractParams {
        &self.params
    }

    pub fn table(&self) -> &BalancedTable {
        &self.table
    }

    pub fn extract(&self, x: &BitString, y: &BitString) -> Result<BitString> {
        check_inputs(x, y, self.params.n)?;
        self.table.lookup_bits(x, y)
    }
}

/// `T(x, y)` for the table sized by `(n, sigma, alpha)` with `n = |x| = |y|`.
pub fn extract_string(
    x: &BitString,
    y: &BitString,
    sigma: &Rational,
    alpha: &Rational,
    config: &ExtractorConfig,
) -> Result<BitString> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "|x| = {} differs from |y| = {}",
            x.len(),
            y.len()
        )));
    }
    let n = u32::try_from(x.len()).map_err(|_| Error::TooLarge("input length".into()))?;
    StringExtractor::new(n, sigma, alpha, config)?.extract(x, y)
}

/// Conditional extractor (`D = M`), with the table built once.
#[derive(Clone, Debug)]
pub struct CondExtractor {
    params: CondExtractParams,
    table: Arc<BalancedTable>,
}

impl CondExtractor {
    pub fn new(n: u32, s_of_n: u32, alpha_of_n: u32, config: &ExtractorConfig) -> Result<Self> {
        let params = derive_cond_params(n, s_of_n, alpha_of_n)?;
        let table = build_table(params.table_params(), config.policy, config.cap)?;
        Ok(CondExtractor {
            params,
            table: Arc::new(table),
        })
    }

    pub fn params(&self) -> &CondExtractParams {
        &self.params
    }

    pub fn table(&self) -> &BalancedTable {
        &self.table
    }

    pub fn extract(&self, x: &BitString, y: &BitString) -> Result<BitString> {
        check_inputs(x, y, self.params.n)?;
        self.table.lookup_bits(x, y)
    }
}

pub fn extract_conditional(
    x: &BitString,
    y: &BitString,
    s_of_n: u32,
    alpha_of_n: u32,
    config: &ExtractorConfig,
) -> Result<BitString> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "|x| = {} differs from |y| = {}",
            x.len(),
            y.len()
        )));
    }
    let n = u32::try_from(x.len()).map_err(|_| Error::TooLarge("input length".into()))?;
    CondExtractor::new(n, s_of_n, alpha_of_n, config)?.extract(x, y)
}

//! Balanced tables and two-source extraction of Kolmogorov complexity.
//!
//! An `(N, M)` table colors the cells of an `N x N` grid with `M` colors. When
//! every large enough rectangle sees each small color set at most twice its
//! fair share, the table is `(S, D)`-balanced, and reading the color at row
//! `x`, column `y` turns two weakly dependent `n`-bit strings into a string of
//! high complexity. This crate builds and verifies such tables, runs the string
//! extractors and the block-wise sequence transformer, and ships an empirical
//! harness (planted-dependency sources, a compression surrogate for
//! complexity, entropy metrics).

pub mod bits;
pub mod cli;
pub mod combin;
pub mod error;
pub mod extract;
pub mod params;
pub mod seeds;
pub mod seqtransform;
pub mod sources;
pub mod tables;
pub mod verify;

pub use bits::BitString;
pub use error::{Error, Result};
pub use params::{
    derive_cond_params, derive_seq_schedule, derive_string_params, CondExtractParams, Rational,
    SeqSchedule, StringExtractParams, TableParams,
};
pub use tables::{Backend, BalancedTable};
pub use verify::{RectMode, VerificationReport, VerifyOptions};
